"""Core data types: discrete measures, metric measure spaces, couplings, divergences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "DiscreteMeasure",
    "MetricMeasureSpace",
    "LabelledSpace",
    "TransportPlan",
    "kl_divergence",
    "quadratic_kl",
    "marginals",
    "pairwise_distance_matrix",
]

#: Tolerance on |total mass - 1| below which a measure counts as probability-normalized.
PROBABILITY_ATOL = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _frozen_array(obj, name, value):
    value = np.ascontiguousarray(value)
    value.setflags(write=False)
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set: atoms ``points[i]`` carrying nonnegative mass ``weights[i]``.

    Weights are stored as given (not normalized); use :meth:`normalized` to
    obtain a unit-mass copy together with the applied scale factor.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(
                f"weights length {len(w)} does not match points length {len(pts)}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(w > 0):
            raise ValueError("at least one weight must be positive")
        _frozen_array(self, "points", pts)
        _frozen_array(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= PROBABILITY_ATOL

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = _as_points(points)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    def normalized(self) -> Tuple["DiscreteMeasure", float]:
        """Unit-mass copy and the scale that was divided out."""
        scale = self.total_mass
        return DiscreteMeasure(self.points, self.weights / scale), scale


def pairwise_distance_matrix(points) -> np.ndarray:
    """Symmetric zero-diagonal matrix of Euclidean distances between points.

    Exactly symmetric entrywise: d(i, j) and d(j, i) are computed by the
    identical floating-point expression.
    """
    pts = _as_points(points)
    n, d = pts.shape
    if n * n * d <= 50_000_000:
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    else:
        sq = np.einsum("ij,ij->i", pts, pts)
        gram = pts @ pts.T
        dist = sq[:, None] + sq[None, :] - 2.0 * gram
        np.maximum(dist, 0.0, out=dist)
        np.sqrt(dist, out=dist)
        dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True)
class MetricMeasureSpace:
    """A discrete measure together with a cached symmetric pairwise-distance matrix.

    The distance matrix is precomputed once and reused by all solvers; an
    arbitrary user-supplied symmetric nonnegative matrix is accepted, with no
    metric-axiom guarantee beyond symmetry and a zero diagonal.
    """

    measure: DiscreteMeasure
    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        n = len(self.measure)
        if d.shape != (n, n):
            raise ValueError(f"distances must be ({n}, {n}), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite")
        if np.any(d < 0):
            raise ValueError("distances must be nonnegative")
        scale = max(float(d.max()), 1.0)
        if np.abs(d - d.T).max() > 1e-12 * scale:
            raise ValueError("distances must be symmetric")
        if n and np.abs(np.diagonal(d)).max() > 1e-12 * scale:
            raise ValueError("distances must have zero diagonal")
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        _frozen_array(self, "distances", d)

    def __len__(self) -> int:
        return len(self.measure)

    @property
    def points(self) -> np.ndarray:
        return self.measure.points

    @property
    def weights(self) -> np.ndarray:
        return self.measure.weights

    @classmethod
    def from_points(cls, points, weights=None) -> "MetricMeasureSpace":
        pts = _as_points(points)
        if weights is None:
            measure = DiscreteMeasure.uniform(pts)
        else:
            measure = DiscreteMeasure(pts, weights)
        return cls(measure, pairwise_distance_matrix(pts))

    def restrict(self, indices, renormalize: bool = True) -> "MetricMeasureSpace":
        """Sub-space on ``indices``; weights renormalized to unit mass by default."""
        idx = np.asarray(indices, dtype=int)
        w = self.weights[idx]
        if renormalize:
            w = w / w.sum()
        sub = DiscreteMeasure(self.points[idx], w)
        return MetricMeasureSpace(sub, self.distances[np.ix_(idx, idx)])


@dataclass(frozen=True)
class LabelledSpace:
    """Metric measure space whose points carry vectors in a Euclidean label space."""

    space: MetricMeasureSpace
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=float)
        if lab.ndim == 1:
            lab = lab[:, None]
        if lab.ndim != 2 or lab.shape[0] != len(self.space):
            raise ValueError(
                f"labels must have one row per point ({len(self.space)}), got {lab.shape}"
            )
        if not np.all(np.isfinite(lab)):
            raise ValueError("labels must be finite")
        _frozen_array(self, "labels", lab)

    def __len__(self) -> int:
        return len(self.space)

    @property
    def measure(self) -> DiscreteMeasure:
        return self.space.measure

    @property
    def distances(self) -> np.ndarray:
        return self.space.distances

    @property
    def label_dim(self) -> int:
        return self.labels.shape[1]

    def restrict(self, indices, renormalize: bool = True) -> "LabelledSpace":
        idx = np.asarray(indices, dtype=int)
        return LabelledSpace(self.space.restrict(idx, renormalize), self.labels[idx])


def label_distance_matrix(source: LabelledSpace, target: LabelledSpace) -> np.ndarray:
    """Euclidean distances between source and target label vectors."""
    if source.label_dim != target.label_dim:
        raise ValueError("label dimensions differ between source and target")
    diff = source.labels[:, None, :] - target.labels[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling matrix together with solver metadata.

    Balanced plans have row/column sums matching the input marginals within
    the solver tolerance; unbalanced plans (``kappa`` set) may deviate.

    ``cost``/``cost_epsilon``/``potentials``, when present, record the
    entropic problem the coupling solves, so that
    ``coupling == exp((f + g - cost) / cost_epsilon) * outer(mu, nu)``
    entrywise on the support of the marginals.
    """

    coupling: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    epsilon: float
    kappa: Optional[float] = None
    iterations: int = 0
    converged_residual: float = float("nan")
    converged: bool = True
    oscillating: bool = False
    cost: Optional[np.ndarray] = field(default=None, repr=False)
    cost_epsilon: Optional[float] = None
    potentials: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    objective_trace: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coupling, dtype=float)
        mu = np.asarray(self.source_weights, dtype=float).reshape(-1)
        nu = np.asarray(self.target_weights, dtype=float).reshape(-1)
        if c.ndim != 2 or c.shape != (len(mu), len(nu)):
            raise ValueError(
                f"coupling shape {c.shape} does not match marginals ({len(mu)}, {len(nu)})"
            )
        if np.any(c < 0):
            raise ValueError("coupling entries must be nonnegative")
        if not np.isfinite(c.sum()):
            raise ValueError("coupling total mass must be finite")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be positive when present")
        _frozen_array(self, "coupling", c)
        _frozen_array(self, "source_weights", mu)
        _frozen_array(self, "target_weights", nu)
        if self.cost is not None:
            _frozen_array(self, "cost", np.asarray(self.cost, dtype=float))
        if self.objective_trace is not None:
            _frozen_array(self, "objective_trace", np.asarray(self.objective_trace, dtype=float))
        if self.potentials is not None:
            f, g = self.potentials
            object.__setattr__(
                self,
                "potentials",
                (np.array(f, dtype=float), np.array(g, dtype=float)),
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.coupling.shape

    @property
    def total_mass(self) -> float:
        return float(self.coupling.sum())

    @property
    def is_balanced(self) -> bool:
        return self.kappa is None


def marginals(plan) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column sums (first and second marginal) of a coupling."""
    coupling = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    return coupling.sum(axis=1), coupling.sum(axis=0)


def kl_divergence(a, b) -> float:
    """Kullback-Leibler divergence sum(a log(a/b)) + sum(b) - sum(a).

    Uses the convention 0 * log(0/b) = 0 and returns +inf whenever some
    entry has a > 0 but b = 0.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("kl_divergence requires nonnegative inputs")
    pos = a > 0
    if np.any(b[pos] == 0):
        return float("inf")
    val = np.sum(a[pos] * np.log(a[pos] / b[pos]))
    return float(val + b.sum() - a.sum())


def quadratic_kl(a, b) -> float:
    """KL divergence between self tensor products, KL(a (x) a, b (x) b).

    Expands to 2 * mass(a) * KL(a, b) + (mass(a) - mass(b))^2, which avoids
    forming the tensorized arrays.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    kl = kl_divergence(a, b)
    ma = a.sum()
    mb = b.sum()
    if np.isinf(kl):
        return float("inf")
    return float(2.0 * ma * kl + (ma - mb) ** 2)
