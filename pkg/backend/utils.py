# backend/utils.py
"""
Artifact writers. Everything for one run goes to a hidden temporary
directory first and is renamed to <outdir>/<command>-<hash>/ only when every
file has been written.
"""
import json
import logging
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def header_line(config_hash: str, master_seed: int) -> str:
    return f"# fpp-lab config={config_hash} master_seed={master_seed}"


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, tuples as lists, non-finite floats as None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_csv(path: Path, frame: pd.DataFrame, config_hash: str, master_seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header_line(config_hash, master_seed) + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")


def write_json(path: Path, payload: Any) -> None:
    text = json.dumps(_plain(payload), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text + "\n")


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def run_directory(outdir: str, command: str, config_hash: str) -> Path:
    return Path(outdir) / f"{command}-{config_hash}"


def write_artifacts(outdir: str, output: Any) -> Path:
    """Write a StudyOutput atomically; returns the final run directory."""
    result = output.result
    final = run_directory(outdir, result.command, result.config_hash)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))
    try:
        for name, frame in output.tables.items():
            write_csv(tmp / name, frame, result.config_hash, result.master_seed)
        for name, text in output.documents.items():
            write_text(tmp / name, text)
        for name, payload in output.json_documents.items():
            write_json(tmp / name, payload)
        write_json(tmp / "summary.json", result.summary())
        write_json(tmp / "run.json", result.run_info())
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    logger.info("wrote %d artifact(s) to %s", len(list(final.iterdir())), final)
    return final
