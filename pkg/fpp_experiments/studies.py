# fpp_experiments/studies.py
"""
One function per CLI command: run the experiment described by a RunConfig
and return the tables, documents and summary to write. Nothing here touches
the filesystem.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List

import numpy as np
import pandas as pd

from fpp_analysis.busemann import (
    DirectionEstimate,
    RayApproximation,
    arc_check,
    busemann_sequence,
    direction_estimate,
    fit_linear_functional,
    probe_points,
)
from fpp_analysis.labeling import (
    averaged_labels,
    label_drift,
    leaf_order_consistent,
    phi_monotone,
    unit_flow,
    voronoi_partition,
)
from fpp_core.errors import CostGuardError, DomainError, RetryNeeded
from fpp_core.lattice import Vertex, Window
from fpp_core.metric import geodesic, shortest_path_tree, window_stability_check
from fpp_core.weights import EdgeWeightField, VertexNoise, derive_trial_seed
from frontend.render import render_path, render_tree

from .coalescence import coalescence_study
from .exponents import exponent_fit
from .midpoint import midpoint_probability
from .runner import ExperimentResult, run_trials, trial_seeds
from .shape import ORIGIN, ball_growth, estimate_shape, extended_shape_check, policy_half_width
from .stats import mean_se

if TYPE_CHECKING:
    from backend.models import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class StudyOutput:
    result: ExperimentResult
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    documents: Dict[str, str] = field(default_factory=dict)
    json_documents: Dict[str, Any] = field(default_factory=dict)


def _result(config: "RunConfig", seeds: List[int]) -> ExperimentResult:
    return ExperimentResult(
        command=config.command,
        config_hash=config.config_hash,
        master_seed=config.seed,
        seeds=list(seeds),
        config=config.identity(),
        threads=config.threads,
    )


def _comment(config: "RunConfig") -> str:
    return f"fpp-lab config={config.config_hash} master_seed={config.seed}"


# ---------------- commands ---------------- #


def run_shape(config: "RunConfig") -> StudyOutput:
    dist = config.weight_distribution
    est = estimate_shape(dist, config.radii, config.directions, config.trials, config.seed,
                         config.threads, config.window, config.progress)
    ext = extended_shape_check(dist, config.epsilon, config.inner_radii, config.offsets, config.trials,
                               config.seed, mu=est.norm, threads=config.threads, progress=config.progress)
    r_max = max(config.radii)
    times = [est.mu_hat[0] * r for r in sorted(config.radii)]
    ball = ball_growth(dist, derive_trial_seed(config.seed, 0), r_max, times, config.directions)

    out = StudyOutput(_result(config, trial_seeds(config.seed, config.trials)))
    out.tables = {"shape.csv": est.to_frame(), "extended.csv": ext.to_frame(), "ball.csv": ball}
    out.result.aggregates = {
        "thetas": list(est.thetas),
        "mu_hat": list(est.mu_hat),
        "mu_se": list(est.mu_se),
        "extended_violation_fraction": dict(zip(map(str, ext.inner_radii), ext.violation_fraction)),
    }
    out.result.verdicts = {c.name: c.to_dict() for c in est.checks}
    return out


def run_midpoint(config: "RunConfig") -> StudyOutput:
    curve = midpoint_probability(config.weight_distribution, config.radii, config.trials, config.seed,
                                 config.threads, config.window, config.progress)
    out = StudyOutput(_result(config, trial_seeds(config.seed, config.trials)))
    out.tables = {"midpoint.csv": curve.to_frame()}
    out.result.aggregates = {"p_hat": list(curve.p_hat), "slope": curve.slope, "slope_se": curve.slope_se}
    out.result.verdicts = {"decay_verified": curve.decay_verified, "degenerate": curve.degenerate}
    return out


def _busemann_trial(config: "RunConfig") -> Callable[[int], Dict[str, Any]]:
    dist = config.weight_distribution
    probes = probe_points(ORIGIN, config.theta, config.r0)

    def task(seed: int) -> Dict[str, Any]:
        field = EdgeWeightField(seed, dist)
        cache: Dict = {}
        ray = RayApproximation.along_geodesic(field, ORIGIN, config.theta, config.r0, config.horizons, cache)
        rows, finals = [], []
        bounded = monotone = True
        for z in probes:
            est = busemann_sequence(field, ORIGIN, z, ray, cache)
            rows.extend(est.to_rows(seed))
            finals.append(est.values)
            bounded &= est.within_bounds()
            monotone &= bool(est.witness_x_monotone()) and bool(est.witness_y_monotone())
            for key in [k for k in cache if k[0] == z]:
                del cache[key]
        tree = cache[(ORIGIN, ray.windows[-1])]
        d = direction_estimate(tree, ray.anchors[-1], 0.5)
        return {"rows": rows, "values": finals, "bounded": bounded, "monotone": monotone,
                "direction": (d.theta_min, d.theta_max, d.samples)}

    return task


def run_busemann(config: "RunConfig") -> StudyOutput:
    dist = config.weight_distribution
    probes = probe_points(ORIGIN, config.theta, config.r0)
    batch = run_trials(config.seed, config.trials, _busemann_trial(config), config.threads,
                       config.progress, desc="busemann")
    radii = RayApproximation.horizon_radii(config.r0, config.horizons)

    # values[trial, probe, horizon]
    values = np.array([o["values"] for o in batch.outcomes], dtype=np.float64)
    fit_rows = []
    for k, r in enumerate(radii):
        residuals = [fit_linear_functional(list(zip(probes, values[t, :, k]))).residual
                     for t in range(values.shape[0])]
        mean_fit = fit_linear_functional(list(zip(probes, values[:, :, k].mean(axis=0))))
        m, s = mean_se(residuals)
        fit_rows.append({"k": k + 1, "r_k": r, "a": mean_fit.a, "b": mean_fit.b,
                         "mean_residual": m, "se_residual": s})
    fits = pd.DataFrame(fit_rows, columns=["k", "r_k", "a", "b", "mean_residual", "se_residual"])

    dirs = np.array([o["direction"][:2] for o in batch.outcomes], dtype=np.float64)
    direction = DirectionEstimate(float(dirs[:, 0].mean()), float(dirs[:, 1].mean()),
                                  int(sum(o["direction"][2] for o in batch.outcomes)))
    shape = estimate_shape(dist, (radii[-1],), config.directions, config.trials, config.seed,
                           config.threads, None, config.progress)
    final_fit = fit_linear_functional(list(zip(probes, values[:, :, -1].mean(axis=0))))
    arc = arc_check(final_fit, shape, direction)

    out = StudyOutput(_result(config, list(batch.seeds)))
    out.tables = {
        "busemann.csv": pd.DataFrame([r for o in batch.outcomes for r in o["rows"]],
                                     columns=["seed", "x", "y", "k", "r_k", "b_k", "gap", "bound_T"]),
        "fit.csv": fits,
    }
    out.result.aggregates = {
        "rho": [final_fit.a, final_fit.b],
        "mean_residual_by_horizon": fits["mean_residual"].tolist(),
        "direction": [direction.theta_min, direction.theta_max],
        "arc": arc.to_dict(),
    }
    out.result.verdicts = {
        "bounded": all(o["bounded"] for o in batch.outcomes),
        "witnesses_monotone": all(o["monotone"] for o in batch.outcomes),
        "residual_decreasing": bool(fits["mean_residual"].iloc[-1] < fits["mean_residual"].iloc[0]),
        "rho_below_mu": not arc.violation,
    }
    return out


def _labels_trial(config: "RunConfig") -> Callable[[int], Dict[str, Any]]:
    dist = config.weight_distribution
    window = Window(ORIGIN, config.label_window)

    def task(seed: int) -> Dict[str, Any]:
        field = EdgeWeightField(seed, dist)
        try:
            partition = voronoi_partition(VertexNoise(seed), config.level, window)
            labeling = averaged_labels(field, partition, partition.class_of(ORIGIN), window,
                                       config.class_cap, config.reference_angle)
        except (RetryNeeded, CostGuardError, DomainError) as e:
            logger.warning("labels: trial seed %d skipped: %s", seed, e)
            return {"skipped": True, "rows": []}
        return {
            "skipped": False,
            "rows": labeling.to_rows(seed),
            "sites": partition.realized,
            "members": len(labeling.members),
            "dropped": len(labeling.dropped),
            "conservation": max(m.flow.conservation_error() for m in labeling.members),
            "phi_monotone": all(phi_monotone(m) for m in labeling.members),
            "order_consistent": leaf_order_consistent(labeling),
            "averaging_error": labeling.averaging_error,
            "discrepancy": labeling.coalescence_discrepancy,
        }

    return task


def run_labels(config: "RunConfig") -> StudyOutput:
    batch = run_trials(config.seed, config.trials, _labels_trial(config), config.threads,
                       config.progress, desc="labels")
    done = [o for o in batch.outcomes if not o["skipped"]]
    out = StudyOutput(_result(config, list(batch.seeds)))
    out.tables = {
        "labels.csv": pd.DataFrame(
            [r for o in done for r in o["rows"]],
            columns=["seed", "level", "class_id", "root", "leaf", "mass", "M", "phi_terminal", "F"],
        )
    }
    out.result.aggregates = {
        "labeled_trials": len(done),
        "skipped_trials": len(batch.outcomes) - len(done),
        "mean_sites": float(np.mean([o["sites"] for o in done])) if done else math.nan,
        "dropped_members": int(sum(o["dropped"] for o in done)),
        "max_averaging_error": max((o["averaging_error"] for o in done), default=math.nan),
        "max_coalescence_discrepancy": max((o["discrepancy"] for o in done), default=math.nan),
    }
    out.result.verdicts = {
        "conservation": all(o["conservation"] <= 1e-9 for o in done),
        "phi_monotone": all(o["phi_monotone"] for o in done),
        "order_consistent": all(o["order_consistent"] for o in done),
    }

    # first labeled trial: drift to the next level and the rendered tree
    if done:
        seed = next(s for s, o in zip(batch.seeds, batch.outcomes) if not o["skipped"])
        field = EdgeWeightField(seed, config.weight_distribution)
        noise = VertexNoise(seed)
        window = Window(ORIGIN, config.label_window)
        try:
            drift = label_drift(field, noise, config.level, ORIGIN, window, config.class_cap, config.reference_angle)
            out.result.aggregates["drift"] = {"seed": seed, "max": drift.max_drift, "mean": drift.mean_drift}
        except (RetryNeeded, CostGuardError, DomainError) as e:
            logger.warning("labels: drift unavailable for seed %d: %s", seed, e)
        partition = voronoi_partition(noise, config.level, window)
        labeling = averaged_labels(field, partition, partition.class_of(ORIGIN), window,
                                   config.class_cap, config.reference_angle)
        member = labeling.member(ORIGIN) if any(m.root == ORIGIN for m in labeling.members) else labeling.members[0]
        out.documents["labels.svg"] = render_tree(member.flow.tree, member.flow, member.labels,
                                                  config.render, _comment(config))
    return out


def run_coalesce(config: "RunConfig") -> StudyOutput:
    stats = coalescence_study(config.weight_distribution, config.separations, config.target_radius,
                              config.trials, config.seed, config.threads, config.progress)
    out = StudyOutput(_result(config, trial_seeds(config.seed, config.trials)))
    out.tables = {"coalescence.csv": stats.to_frame()}
    out.result.aggregates = {"median_merge_radius": dict(zip(map(str, stats.separations), stats.medians))}
    out.result.verdicts = {"bounded_by_target": stats.bounded(), "median_nondecreasing": stats.median_nondecreasing()}
    return out


def run_exponents(config: "RunConfig") -> StudyOutput:
    fit = exponent_fit(config.weight_distribution, config.observable, config.sizes, config.trials,
                       config.seed, config.threads, config.window, config.progress)
    out = StudyOutput(_result(config, trial_seeds(config.seed, config.trials)))
    out.tables = {"exponents.csv": fit.to_frame()}
    out.result.aggregates = {"observable": fit.observable, "slope": fit.slope, "slope_se": fit.slope_se,
                             "exponent": fit.exponent, "statistic": list(fit.statistic)}
    out.result.verdicts = {"degenerate": fit.degenerate, "slope_finite": math.isfinite(fit.slope)}
    return out


def run_geodesic(config: "RunConfig") -> StudyOutput:
    seed = derive_trial_seed(config.seed, 0)
    field = EdgeWeightField(seed, config.weight_distribution)
    x, y = Vertex(*config.source), Vertex(*config.target)
    reach = max(1, abs(y.x - x.x) + abs(y.y - x.y))
    small = Window(x, policy_half_width(reach, config.window))
    large = Window(x, 2 * small.half_width)
    seg = geodesic(field, x, y, small)
    report = window_stability_check(field, x, y, small, large)

    out = StudyOutput(_result(config, [seed]))
    doc = {
        "source": list(x),
        "target": list(y),
        "weight": seg.weight,
        "steps": seg.path.steps,
        "path": [list(v) for v in seg.path],
        "window": {"center": list(small.center), "half_width": small.half_width},
        "stability": report.status,
    }
    out.documents["geodesic.svg"] = render_path(seg.path, small, config.render, _comment(config))
    out.json_documents["geodesic.json"] = doc
    out.result.aggregates = {"weight": seg.weight, "steps": seg.path.steps}
    out.result.verdicts = {"stability": report.status, "touches_boundary": report.touches_boundary}
    return out


def run_render(config: "RunConfig") -> StudyOutput:
    seed = derive_trial_seed(config.seed, 0)
    field = EdgeWeightField(seed, config.weight_distribution)
    source = Vertex(*config.source)
    tree = shortest_path_tree(field, source, Window(source, config.label_window))
    flow = unit_flow(tree)
    out = StudyOutput(_result(config, [seed]))
    out.documents["tree.svg"] = render_tree(tree, flow, None, config.render, _comment(config))
    out.result.aggregates = {"leaves": len(flow.leaves), "reached": tree.reached_count}
    return out


COMMANDS: Dict[str, Callable[["RunConfig"], StudyOutput]] = {
    "shape": run_shape,
    "midpoint": run_midpoint,
    "busemann": run_busemann,
    "labels": run_labels,
    "coalesce": run_coalesce,
    "exponents": run_exponents,
    "geodesic": run_geodesic,
    "render": run_render,
}


def run_study(config: "RunConfig") -> StudyOutput:
    logger.info("running %s (config %s, master seed %d)", config.command, config.config_hash, config.seed)
    start = time.perf_counter()
    out = COMMANDS[config.command](config)
    out.result.wall_clock = time.perf_counter() - start
    return out
