# backend/main.py
"""
Command-line entry point.

    python -m backend.main --command shape --seed 1 --trials 10 --radii 8,16

Exit codes: 0 success, 1 runtime failure (the log names the failing trial's
seed), 2 configuration error. Nothing is written unless the run succeeds.
"""
import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from fpp_core.errors import ConfigError, FPPError, TrialFailure
from fpp_experiments.studies import run_study

from . import utils
from .models import RunConfig, list_of_ints

logger = logging.getLogger("fpp")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> List[int]:
    try:
        return list_of_ints(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None


def _pair(text: str) -> List[int]:
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpp-lab", description="First-passage percolation experiments on Z^2.")
    p.add_argument("--config", metavar="PATH", help="JSON config file; flags override its fields")
    p.add_argument("--command", help="shape | midpoint | busemann | labels | coalesce | exponents | geodesic | render")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int)
    p.add_argument("--radii", type=_int_list, help="comma-separated radii")
    p.add_argument("--sizes", type=_int_list, help="comma-separated sizes for exponent fits")
    p.add_argument("--distribution", help="exponential(1), uniform(a,b), gamma(k,s) or constant")
    p.add_argument("--threads", type=int)
    p.add_argument("--outdir")
    p.add_argument("--level", type=int, help="Voronoi level i for labels")
    p.add_argument("--epsilon", type=float, help="tolerance of the extended shape check")
    p.add_argument("--observable", help="chi | xi | midpoint")
    p.add_argument("--directions", type=int)
    p.add_argument("--window", type=int, help="pin the window half-width")
    p.add_argument("--separations", type=_int_list)
    p.add_argument("--target-radius", dest="target_radius", type=int)
    p.add_argument("--source", type=_pair, help="x,y")
    p.add_argument("--target", type=_pair, help="x,y")
    p.add_argument("--stroke-scale", dest="stroke_scale", type=float)
    p.add_argument("--palette")
    p.add_argument("--progress", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_RENDER_FLAGS = ("stroke_scale", "palette")
_NOT_CONFIG = ("config", "verbose") + _RENDER_FLAGS


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError("file not found", field=path) from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} column {e.colno}: {e.msg}", field=path) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", field=path)
    return data


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data: Dict[str, Any] = _read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key not in _NOT_CONFIG and value is not None:
            data[key] = value
    render = {k: getattr(args, k) for k in _RENDER_FLAGS if getattr(args, k) is not None}
    if render:
        data["render"] = {**data.get("render", {}), **render}
    if "threads" not in data and os.getenv("FPP_THREADS"):
        data["threads"] = os.getenv("FPP_THREADS")
    if "outdir" not in data and os.getenv("FPP_OUTDIR"):
        data["outdir"] = os.getenv("FPP_OUTDIR")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or None
        raise ConfigError(first["msg"], field=where) from None


def parse_config(argv: Optional[List[str]] = None) -> RunConfig:
    return config_from_args(build_parser().parse_args(argv))


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = config_from_args(args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG

    try:
        output = run_study(config)
        final = utils.write_artifacts(config.outdir, output)
    except TrialFailure as e:
        logger.error("%s; replay with seed %d", e, e.seed)
        return EXIT_RUNTIME
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_CONFIG
    except (FPPError, OSError, ValueError) as e:
        logger.error("run failed: %s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("run failed unexpectedly")
        return EXIT_RUNTIME
    logger.info("done: %s", final)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
