"""Runnable desk-scale experiments: rotating disk, two rotating disks, labelled pipeline.

Scenario generators, ground-truth flows, the transfer-error metric, and
drivers that sweep angle/noise grids with fixed seeds and emit plot-ready
tables. Every cell of an experiment grid is a pure function of its config
echo, so any cell can be re-run bit-exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .gw import GwProblem, gw_distortion_restricted, solve_entropic_fgw, solve_entropic_gw
from .measures import (
    DiscreteMeasure,
    LabelledSpace,
    MetricMeasureSpace,
    TransportPlan,
)
from .sinkhorn import SolverConfig, solve_entropic_ot, solve_entropic_uot
from .transfer import (
    ClusterNode,
    SpectralPartition,
    TransferOperator,
    build_transfer,
    leaf_nodes,
    nested_cluster,
    spectral_cluster,
)

__all__ = [
    "RotatingDiskScenario",
    "TwoDiskScenario",
    "sample_unit_disk",
    "rotate",
    "two_disk_flow",
    "sample_two_disks",
    "add_noise",
    "transfer_error",
    "rand_index",
    "run_rotating_disk_cell",
    "run_rotating_disk",
    "run_two_disks",
    "run_labelled_pipeline",
    "DEFAULT_ANGLES",
    "DEFAULT_NOISE_SWEEP",
]

#: Angle grid pi/30, 2*pi/30, ..., pi.
DEFAULT_ANGLES = tuple(k * math.pi / 30 for k in range(1, 31))
#: Noise magnitudes 0.5, 1.0, ..., 4.5 for the fixed-angle sweep.
DEFAULT_NOISE_SWEEP = tuple(0.5 * k for k in range(1, 10))
#: Half-width of the uniform noise box before scaling by the magnitude.
NOISE_BOX = 0.1

TWO_DISK_CENTERS = (np.array([-0.5, 0.0]), np.array([0.5, 0.0]))
TWO_DISK_RADIUS = 0.5


@dataclass(frozen=True)
class RotatingDiskScenario:
    """Uniform samples of the unit disk pushed through a rotation, plus noise."""

    theta: float
    n: int = 50
    noise_magnitude: float = 0.0
    seed: int = 0
    epsilon: float = 0.0008

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0.0 <= self.theta < 2 * math.pi:
            raise ValueError("theta must lie in [0, 2*pi)")
        if self.noise_magnitude < 0:
            raise ValueError("noise magnitude must be nonnegative")


@dataclass(frozen=True)
class TwoDiskScenario:
    """Two half-radius disks, each locally rotated, then globally rotated."""

    n: int = 80
    theta: float = math.pi / 2
    local_angle: float = -math.pi / 4
    seed: int = 0
    epsilon: float = 0.001

    def __post_init__(self):
        if self.n % 2 != 0:
            raise ValueError("n must be even (points are split between the disks)")


def sample_unit_disk(n: int, seed) -> np.ndarray:
    """n points uniform w.r.t. area on the unit disk, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    # radius = sqrt(u) gives exact area uniformity
    r = np.sqrt(rng.random(n))
    phi = 2 * math.pi * rng.random(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def rotate(points, theta: float) -> np.ndarray:
    """Counter-clockwise rotation about the origin: (x, y) -> (x cos - y sin, x sin + y cos)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("rotate expects (n, 2) points")
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T


def add_noise(points, magnitude: float, seed) -> np.ndarray:
    """Add i.i.d. uniform perturbations on [-0.1, 0.1]^2 scaled by ``magnitude``.

    The draw depends only on the seed, so different magnitudes with the same
    seed share the same underlying perturbation.
    """
    pts = np.asarray(points, dtype=float)
    if magnitude < 0:
        raise ValueError("magnitude must be nonnegative")
    if magnitude == 0:
        return pts.copy()
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-NOISE_BOX, NOISE_BOX, size=pts.shape)
    return pts + magnitude * eta


def two_disk_flow(points, scenario: TwoDiskScenario) -> np.ndarray:
    """Local rotation about each disk's own center followed by the global rotation.

    Every input point must lie in one of the two disks. The local rotations
    are applied first: the written composition order would move points off
    the disks before the local maps are defined.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("two_disk_flow expects (n, 2) points")
    out = np.empty_like(pts)
    assigned = np.zeros(len(pts), dtype=bool)
    for center in TWO_DISK_CENTERS:
        inside = np.linalg.norm(pts - center, axis=1) <= TWO_DISK_RADIUS + 1e-12
        inside &= ~assigned
        out[inside] = rotate(pts[inside] - center, scenario.local_angle) + center
        assigned |= inside
    if not assigned.all():
        bad = np.flatnonzero(~assigned)[0]
        raise ValueError(f"point {bad} at {pts[bad]} lies outside both disks")
    return rotate(out, scenario.theta)


def sample_two_disks(scenario: TwoDiskScenario) -> np.ndarray:
    """n/2 uniform samples of each disk, first disk's points first."""
    rng = np.random.default_rng(scenario.seed)
    half = scenario.n // 2
    chunks = []
    for center in TWO_DISK_CENTERS:
        r = TWO_DISK_RADIUS * np.sqrt(rng.random(half))
        phi = 2 * math.pi * rng.random(half)
        chunks.append(center + np.column_stack([r * np.cos(phi), r * np.sin(phi)]))
    return np.vstack(chunks)


def transfer_error(kernel, X, Y, true_map: Union[Callable, np.ndarray]) -> float:
    """Kernel-weighted mean Euclidean deviation from the true transfer.

    ``sum_{x, y} kernel(x, y) * d(true_map(x), y) / (|X| * |Y|)``: for the
    kernel of a balanced uniform plan the weights sum to one, so this is the
    mean distance between where the kernel sends mass and where the true map
    sends it.
    """
    k = np.asarray(kernel, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if k.shape != (len(X), len(Y)):
        raise ValueError(f"kernel shape {k.shape} does not match ({len(X)}, {len(Y)})")
    mapped = np.asarray(true_map(X), dtype=float) if callable(true_map) else np.asarray(true_map, dtype=float)
    if mapped.shape != X.shape:
        raise ValueError("true_map output shape does not match X")
    diff = mapped[:, None, :] - Y[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return float(np.sum(k * dist) / (len(X) * len(Y)))


def rand_index(a, b) -> float:
    """Rand index between two labelings: fraction of agreeing point pairs."""
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("labelings must have equal length")
    n = len(a)
    if n < 2:
        return 1.0
    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    agree = np.sum(same_a == same_b) - n
    return float(agree / (n * (n - 1)))


def _solver_config(epsilon, kappa=None, tolerance=1e-9, max_iterations=100_000,
                   epsilon_scaling=True) -> SolverConfig:
    return SolverConfig(
        epsilon=epsilon,
        kappa=kappa,
        tolerance=tolerance,
        max_iterations=max_iterations,
        epsilon_scaling=epsilon_scaling,
    )


def _squared_euclidean(X, Y) -> np.ndarray:
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rotating_disk_cell_config(
    theta: float,
    rep: int,
    base_seed: int,
    n: int = 50,
    noise_magnitude: float = 0.0,
    epsilon: float = 0.0008,
    tolerance: float = 1e-9,
    max_iterations: int = 100_000,
    outer_tolerance: float = 1e-7,
    outer_max_iterations: int = 200,
) -> dict:
    """Config echo of one (angle, repetition, noise) experiment cell.

    The initial state and the noise draw depend only on the repetition, so
    the same sampled states are reused across angles and the same noise
    pattern is reused (scaled) across magnitudes.
    """
    return {
        "experiment": "rotating-disk-cell",
        "n": int(n),
        "theta": float(theta),
        "noise_magnitude": float(noise_magnitude),
        "x_seed": int(base_seed) + int(rep),
        "noise_seed": int(base_seed) + 100_003 + int(rep),
        "epsilon": float(epsilon),
        "tolerance": float(tolerance),
        "max_iterations": int(max_iterations),
        "outer_tolerance": float(outer_tolerance),
        "outer_max_iterations": int(outer_max_iterations),
    }


def run_rotating_disk_cell(config: dict) -> dict:
    """Solve one rotating-disk cell (OT and GW) from its config echo."""
    n = config["n"]
    theta = config["theta"]
    X = sample_unit_disk(n, config["x_seed"])
    Y = add_noise(rotate(X, theta), config["noise_magnitude"], config["noise_seed"])

    cfg = _solver_config(
        config["epsilon"],
        tolerance=config["tolerance"],
        max_iterations=config["max_iterations"],
    )
    uniform_x = np.full(n, 1.0 / n)
    uniform_y = np.full(n, 1.0 / n)

    ot_plan, _, _ = solve_entropic_ot(uniform_x, uniform_y, _squared_euclidean(X, Y), cfg)
    e_ot = transfer_error(build_transfer(ot_plan).kernel, X, Y, rotate(X, theta))

    problem = GwProblem(
        source=MetricMeasureSpace.from_points(X),
        target=MetricMeasureSpace.from_points(Y),
        epsilon=config["epsilon"],
        cfg=cfg,
        outer_tolerance=config["outer_tolerance"],
        outer_max_iterations=config["outer_max_iterations"],
    )
    gw_plan = solve_entropic_gw(problem)
    e_gw = transfer_error(build_transfer(gw_plan).kernel, X, Y, rotate(X, theta))

    return {
        "config": config,
        "e_ot": e_ot,
        "e_gw": e_gw,
        "ot_converged": bool(ot_plan.converged),
        "gw_converged": bool(gw_plan.converged),
        "gw_outer_iterations": int(gw_plan.iterations),
    }


@dataclass(frozen=True)
class RotatingDiskResult:
    config: dict
    rows: Tuple[dict, ...]
    sweep_rows: Tuple[dict, ...]
    cells: Tuple[dict, ...]


def run_rotating_disk(
    angles: Optional[Sequence[float]] = None,
    repetitions: int = 10,
    n: int = 50,
    epsilon: float = 0.0008,
    base_seed: int = 1,
    include_noisy: bool = True,
    noise_magnitude: float = 1.0,
    noise_sweep: Optional[Sequence[float]] = None,
    sweep_theta: float = math.pi / 2,
    tolerance: float = 1e-9,
    max_iterations: int = 100_000,
    workers: int = 1,
) -> RotatingDiskResult:
    """Angle sweep of OT vs GW transfer errors, with optional noise columns.

    For each angle and repetition, the OT (quadratic Euclidean cost) and GW
    plans are solved at the same epsilon and their transfer errors against
    the true rotation are averaged over repetitions. ``noise_sweep`` adds a
    fixed-angle sweep over noise magnitudes. Cells are independent and can
    run in parallel; aggregation does not depend on completion order.
    """
    if angles is None:
        angles = DEFAULT_ANGLES
    angles = [float(t) for t in angles]
    if not angles:
        raise ValueError("angles must be nonempty")
    if noise_sweep is None:
        noise_sweep = ()

    configs = []
    keys = []
    for theta in angles:
        for rep in range(repetitions):
            magnitudes = [0.0] + ([noise_magnitude] if include_noisy else [])
            for m in magnitudes:
                configs.append(rotating_disk_cell_config(
                    theta, rep, base_seed, n=n, noise_magnitude=m, epsilon=epsilon,
                    tolerance=tolerance, max_iterations=max_iterations,
                ))
                keys.append(("angle", theta, rep, m))
    for m in noise_sweep:
        for rep in range(repetitions):
            configs.append(rotating_disk_cell_config(
                sweep_theta, rep, base_seed, n=n, noise_magnitude=float(m),
                epsilon=epsilon, tolerance=tolerance, max_iterations=max_iterations,
            ))
            keys.append(("sweep", float(m), rep, float(m)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_rotating_disk_cell, configs))
    else:
        results = [run_rotating_disk_cell(c) for c in configs]
    by_key = dict(zip(keys, results))

    rows = []
    for theta in angles:
        row = {
            "theta": theta,
            "theta_deg": math.degrees(theta),
            "mean_e_ot": float(np.mean([by_key[("angle", theta, r, 0.0)]["e_ot"] for r in range(repetitions)])),
            "mean_e_gw": float(np.mean([by_key[("angle", theta, r, 0.0)]["e_gw"] for r in range(repetitions)])),
        }
        if include_noisy:
            row["mean_e_ot_noisy"] = float(np.mean(
                [by_key[("angle", theta, r, noise_magnitude)]["e_ot"] for r in range(repetitions)]
            ))
            row["mean_e_gw_noisy"] = float(np.mean(
                [by_key[("angle", theta, r, noise_magnitude)]["e_gw"] for r in range(repetitions)]
            ))
        row["flagged_cells"] = int(sum(
            not (by_key[k]["ot_converged"] and by_key[k]["gw_converged"])
            for k in keys if k[0] == "angle" and k[1] == theta
        ))
        rows.append(row)

    sweep_rows = []
    for m in noise_sweep:
        m = float(m)
        sweep_rows.append({
            "noise_magnitude": m,
            "theta": sweep_theta,
            "mean_e_ot": float(np.mean([by_key[("sweep", m, r, m)]["e_ot"] for r in range(repetitions)])),
            "mean_e_gw": float(np.mean([by_key[("sweep", m, r, m)]["e_gw"] for r in range(repetitions)])),
            "flagged_cells": int(sum(
                not (by_key[k]["ot_converged"] and by_key[k]["gw_converged"])
                for k in keys if k[0] == "sweep" and k[1] == m
            )),
        })

    run_config = {
        "experiment": "rotating-disk",
        "n": n,
        "epsilon": epsilon,
        "repetitions": repetitions,
        "base_seed": base_seed,
        "angles": list(angles),
        "include_noisy": include_noisy,
        "noise_magnitude": noise_magnitude,
        "noise_sweep": [float(m) for m in noise_sweep],
        "sweep_theta": sweep_theta,
        "tolerance": tolerance,
        "max_iterations": max_iterations,
    }
    return RotatingDiskResult(run_config, tuple(rows), tuple(sweep_rows), tuple(results))


@dataclass(frozen=True)
class TwoDiskResult:
    config: dict
    X: np.ndarray
    Y: np.ndarray
    truth_source: np.ndarray
    truth_target: np.ndarray
    ot_plan: TransportPlan
    gw_plan: TransportPlan
    ot_partition: SpectralPartition
    gw_partition: SpectralPartition
    rand_ot: Tuple[float, float]
    rand_gw: Tuple[float, float]
    gw_shape_scores: np.ndarray
    success: bool


def run_two_disks(
    scenario: TwoDiskScenario,
    tolerance: float = 1e-9,
    max_iterations: int = 100_000,
) -> TwoDiskResult:
    """Two-disk clustering comparison between the OT and GW transfer operators.

    Builds both plans at the scenario's epsilon, spectrally clusters both
    operators, and scores the partitions against the generating disks with
    the Rand index. GW identification of the disks is geometrically
    ambiguous (a near-isometric 180-degree rotation/reflection may swap
    them), so ``success`` reports rather than guarantees recovery.
    """
    X = sample_two_disks(scenario)
    Y = two_disk_flow(X, scenario)
    n = scenario.n
    half = n // 2
    truth = np.array([0] * half + [1] * half)

    cfg = _solver_config(scenario.epsilon, tolerance=tolerance, max_iterations=max_iterations)
    uniform = np.full(n, 1.0 / n)
    ot_plan, _, _ = solve_entropic_ot(uniform, uniform, _squared_euclidean(X, Y), cfg)
    source = MetricMeasureSpace.from_points(X)
    target = MetricMeasureSpace.from_points(Y)
    gw_plan = solve_entropic_gw(GwProblem(source=source, target=target, epsilon=scenario.epsilon, cfg=cfg))

    ot_partition = spectral_cluster(build_transfer(ot_plan))
    gw_partition = spectral_cluster(build_transfer(gw_plan))

    def scores(partition):
        return (
            rand_index(partition.source_partition, truth),
            rand_index(partition.target_partition, truth),
        )

    rand_ot = scores(ot_partition)
    rand_gw = scores(gw_partition)
    shape = np.array([
        gw_distortion_restricted(
            gw_plan.coupling, source.distances, target.distances,
            gw_partition.source_class(k), gw_partition.target_class(k),
        )
        for k in (0, 1)
    ])
    from dataclasses import replace as _replace

    gw_partition = _replace(gw_partition, shape_scores=shape)
    config = {
        "experiment": "two-disks",
        "n": scenario.n,
        "theta": scenario.theta,
        "local_angle": scenario.local_angle,
        "seed": scenario.seed,
        "epsilon": scenario.epsilon,
        "tolerance": tolerance,
        "max_iterations": max_iterations,
    }
    return TwoDiskResult(
        config=config,
        X=X,
        Y=Y,
        truth_source=truth,
        truth_target=truth.copy(),
        ot_plan=ot_plan,
        gw_plan=gw_plan,
        ot_partition=ot_partition,
        gw_partition=gw_partition,
        rand_ot=rand_ot,
        rand_gw=rand_gw,
        gw_shape_scores=shape,
        success=min(rand_gw) >= 0.9,
    )


@dataclass(frozen=True)
class PipelineResult:
    config: dict
    gw_plan: TransportPlan
    ot_plan: TransportPlan
    tree: ClusterNode
    ot_partition: SpectralPartition
    leaf_summary: Tuple[dict, ...]
    source_mass: float
    target_mass: float


def run_labelled_pipeline(
    source: LabelledSpace,
    target: LabelledSpace,
    epsilon: float = 0.0003,
    kappa: float = 0.1,
    label_weight: float = 1.0,
    depth: int = 3,
    normalize_metrics: bool = True,
    tolerance: float = 1e-9,
    max_iterations: int = 100_000,
    marginals: str = "coupling",
) -> PipelineResult:
    """Unbalanced fused GW estimation plus nested coherent-structure extraction.

    Masses are normalized defensively (total masses recorded in the result).
    For comparison an unbalanced OT plan is solved with the squared
    Euclidean cost augmented by the squared label distance. The fused GW
    plan is then clustered in a nested fashion to ``depth`` levels; each
    leaf carries the plan's restricted distortion as its shape score.
    """
    src_measure, src_mass = source.measure.normalized()
    tgt_measure, tgt_mass = target.measure.normalized()
    scale = source.distances.max() if normalize_metrics else 1.0
    if scale <= 0:
        raise ValueError("cannot normalize metrics: source has zero diameter")
    src_space = MetricMeasureSpace(src_measure, source.distances / scale)
    tgt_space = MetricMeasureSpace(tgt_measure, target.distances / scale)
    labelled_src = LabelledSpace(src_space, source.labels)
    labelled_tgt = LabelledSpace(tgt_space, target.labels)
    if labelled_src.label_dim != labelled_tgt.label_dim:
        raise ValueError("label dimensions differ between source and target")

    cost = _squared_euclidean(src_space.points / scale, tgt_space.points / scale)
    label_diff = labelled_src.labels[:, None, :] - labelled_tgt.labels[None, :, :]
    cost = cost + np.einsum("ijk,ijk->ij", label_diff, label_diff)
    uot_cfg = _solver_config(epsilon, kappa=kappa, tolerance=tolerance, max_iterations=max_iterations)
    ot_plan, _, _ = solve_entropic_uot(src_measure.weights, tgt_measure.weights, cost, uot_cfg)

    problem = GwProblem(
        source=labelled_src,
        target=labelled_tgt,
        epsilon=epsilon,
        kappa=kappa,
        label_weight=label_weight,
        cfg=_solver_config(epsilon, tolerance=tolerance, max_iterations=max_iterations),
    )
    gw_plan = solve_entropic_fgw(problem)

    tree = nested_cluster(src_space, tgt_space, gw_plan, depth, marginals=marginals)
    ot_partition = spectral_cluster(build_transfer(ot_plan))

    leaves = []
    for node in leaf_nodes(tree):
        leaves.append({
            "source_indices": node.source_indices.tolist(),
            "target_indices": node.target_indices.tolist(),
            "source_size": int(len(node.source_indices)),
            "target_size": int(len(node.target_indices)),
            "shape_score": float(node.shape_score),
            "stopped": node.stopped,
        })

    config = {
        "experiment": "labelled-pipeline",
        "epsilon": epsilon,
        "kappa": kappa,
        "label_weight": label_weight,
        "depth": depth,
        "normalize_metrics": normalize_metrics,
        "tolerance": tolerance,
        "max_iterations": max_iterations,
        "marginals": marginals,
    }
    return PipelineResult(
        config=config,
        gw_plan=gw_plan,
        ot_plan=ot_plan,
        tree=tree,
        ot_partition=ot_partition,
        leaf_summary=tuple(leaves),
        source_mass=float(src_mass),
        target_mass=float(tgt_mass),
    )
