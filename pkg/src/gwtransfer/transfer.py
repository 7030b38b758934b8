"""Transfer operators from transport plans and spectral coherent-structure extraction.

A coupling ``pi`` with marginals (mu, nu) induces the transfer kernel
``k = D_mu^-1 pi D_nu^-1`` and the operator ``K = D_nu^-1 pi^T`` mapping
source functions to target functions. Coherent structures are pairs of
source/target classes obtained by sign-thresholding the singular functions
of K for its second largest singular value, computed with respect to the
mu- and nu-weighted inner products.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.sparse.linalg

from .gw import gw_distortion_restricted
from .measures import DiscreteMeasure, MetricMeasureSpace, TransportPlan

__all__ = [
    "TransferOperator",
    "SpectralPartition",
    "CoherenceReport",
    "ClusterNode",
    "build_transfer",
    "apply_operator",
    "spectral_cluster",
    "nested_cluster",
    "coherence_report",
    "leaf_nodes",
]

#: Maximum size for dense SVD; larger operators use truncated iterative SVD.
DENSE_SVD_LIMIT = 512


def _weights(w) -> np.ndarray:
    if isinstance(w, DiscreteMeasure):
        return w.weights
    return np.asarray(w, dtype=float).reshape(-1)


@dataclass(frozen=True)
class TransferOperator:
    """Transfer kernel and operator matrix of a coupling.

    All inputs are normalized to unit mass before the diagonal scalings, so
    the construction is invariant under rescaling (mu, nu, pi) by a common
    constant; the divided-out masses are recorded in ``*_scale``.
    """

    kernel: np.ndarray
    operator_matrix: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    source_scale: float = 1.0
    target_scale: float = 1.0
    plan_scale: float = 1.0
    from_balanced_plan: bool = True

    @property
    def shape(self) -> Tuple[int, int]:
        return self.kernel.shape

    def coupling(self) -> np.ndarray:
        """Unit-mass coupling the operator was built from."""
        return self.kernel * np.outer(self.source_weights, self.target_weights)


def build_transfer(plan: TransportPlan, mu=None, nu=None, marginals: str = "auto") -> TransferOperator:
    """Build the transfer kernel/operator of a plan.

    ``marginals`` selects the weights that normalize the kernel: "inputs"
    uses the plan's stored input marginals, "coupling" the coupling's own
    row/column sums, and "auto" (default) picks "inputs" for balanced plans
    and "coupling" for unbalanced ones. Explicit ``mu``/``nu`` override.

    Raises when an atom of zero weight carries coupled mass.
    """
    pi = plan.coupling
    if marginals not in ("auto", "inputs", "coupling"):
        raise ValueError("marginals must be 'auto', 'inputs', or 'coupling'")
    if mu is None or nu is None:
        use_coupling = marginals == "coupling" or (marginals == "auto" and not plan.is_balanced)
        if use_coupling:
            mu = pi.sum(axis=1) if mu is None else mu
            nu = pi.sum(axis=0) if nu is None else nu
        else:
            mu = plan.source_weights if mu is None else mu
            nu = plan.target_weights if nu is None else nu
    mu = _weights(mu)
    nu = _weights(nu)

    row, col = pi.sum(axis=1), pi.sum(axis=0)
    if np.any(row[mu == 0] > 0) or np.any(col[nu == 0] > 0):
        raise ValueError("zero-weight atom carries coupled mass")

    mass_mu = mu.sum()
    mass_nu = nu.sum()
    mass_pi = pi.sum()
    if mass_pi <= 0:
        raise ValueError("plan has no mass")
    mu_n = mu / mass_mu
    nu_n = nu / mass_nu
    pi_n = pi / mass_pi

    inv_mu = np.where(mu_n > 0, 1.0 / np.where(mu_n > 0, mu_n, 1.0), 0.0)
    inv_nu = np.where(nu_n > 0, 1.0 / np.where(nu_n > 0, nu_n, 1.0), 0.0)
    kernel = inv_mu[:, None] * pi_n * inv_nu[None, :]
    operator = pi_n.T * inv_nu[:, None]
    return TransferOperator(
        kernel,
        operator,
        mu_n,
        nu_n,
        source_scale=float(mass_mu),
        target_scale=float(mass_nu),
        plan_scale=float(mass_pi),
        from_balanced_plan=plan.is_balanced,
    )


def apply_operator(op: TransferOperator, psi) -> np.ndarray:
    """Push a source function forward: ``(K psi)(y) = int k(x, y) psi(x) dmu(x)``."""
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if len(psi) != op.shape[0]:
        raise ValueError(f"psi length {len(psi)} does not match source size {op.shape[0]}")
    return op.operator_matrix @ psi


@dataclass(frozen=True)
class CoherenceReport:
    """Per-class residuals of the coherence conditions.

    ``coherence[k] = || K 1_{X_k} - 1_{Y_k} ||_nu`` and
    ``mass_balance[k] = | mu(X_k) - nu(Y_k) |``.
    """

    coherence: np.ndarray
    mass_balance: np.ndarray


@dataclass(frozen=True)
class SpectralPartition:
    """Second singular pair of a transfer operator and its sign-thresholded classes.

    ``source_partition``/``target_partition`` hold class indices 0/1 per
    point; class 0 always contains the first source point, and zero entries
    of the singular functions are assigned to class 0.
    """

    phi: np.ndarray
    psi: np.ndarray
    sigma: float
    sigma1: float
    source_partition: np.ndarray
    target_partition: np.ndarray
    mass_balance: np.ndarray
    coherence_residual: np.ndarray
    shape_scores: Optional[np.ndarray] = None
    warnings: Tuple[str, ...] = ()

    def source_class(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.source_partition == k)

    def target_class(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.target_partition == k)


def _weighted_svd(op: TransferOperator, k: int = 2):
    """Top singular triples of K w.r.t. the weighted inner products.

    Symmetrization: the SVD of ``B = D_mu^(1/2) kernel D_nu^(1/2)``
    (entrywise ``pi / sqrt(mu_i nu_j)`` on the support) has the same
    singular values as K on L^2_mu -> L^2_nu, and diagonal scaling maps its
    singular vectors back to the singular functions.
    """
    mu, nu = op.source_weights, op.target_weights
    sqrt_mu = np.sqrt(mu)
    sqrt_nu = np.sqrt(nu)
    B = sqrt_mu[:, None] * op.kernel * sqrt_nu[None, :]
    n, m = B.shape
    if max(n, m) <= DENSE_SVD_LIMIT:
        u, s, vt = np.linalg.svd(B, full_matrices=False)
        u, s, v = u[:, :k], s[:k], vt[:k, :].T
    else:
        # deterministic start vector; svds returns ascending order
        v0 = np.ones(min(n, m))
        u, s, vt = scipy.sparse.linalg.svds(B, k=k, v0=v0)
        order = np.argsort(s)[::-1]
        u, s, v = u[:, order], s[order], vt[order, :].T
    with np.errstate(divide="ignore", invalid="ignore"):
        phis = np.where(sqrt_mu[:, None] > 0, u / sqrt_mu[:, None], 0.0)
        psis = np.where(sqrt_nu[:, None] > 0, v / sqrt_nu[:, None], 0.0)
    return phis, s, psis


def coherence_report(op: TransferOperator, partition) -> CoherenceReport:
    """Evaluate the coherence and mass-preservation residuals of a partition.

    ``partition`` is a :class:`SpectralPartition` or a pair of 0/1 class
    arrays (source, target).
    """
    if isinstance(partition, SpectralPartition):
        src, tgt = partition.source_partition, partition.target_partition
    else:
        src, tgt = (np.asarray(p, dtype=int) for p in partition)
    mu, nu = op.source_weights, op.target_weights
    coherence = np.empty(2)
    mass = np.empty(2)
    for cls in (0, 1):
        ind_x = (src == cls).astype(float)
        ind_y = (tgt == cls).astype(float)
        diff = apply_operator(op, ind_x) - ind_y
        coherence[cls] = np.sqrt(float(nu @ (diff * diff)))
        mass[cls] = abs(float(mu @ ind_x) - float(nu @ ind_y))
    return CoherenceReport(coherence, mass)


def spectral_cluster(op: TransferOperator, degeneracy_tol: float = 1e-10) -> SpectralPartition:
    """Bipartition source and target by the second singular pair of K.

    For balanced plans the leading triple is verified to be
    ``(1, 1_X, 1_Y)`` within 1e-8 (a warning is recorded otherwise; for
    operators built from unbalanced or restricted plans the check is
    advisory only). A second singular value numerically equal to the first
    is reported as degenerate but a partition is still emitted.
    """
    phis, s, psis = _weighted_svd(op, k=2)
    warnings = []
    sigma1 = float(s[0])
    sigma2 = float(s[1]) if len(s) > 1 else float("nan")

    lead_tol = 1e-8
    phi1, psi1 = phis[:, 0], psis[:, 0]
    mu_pos = op.source_weights > 0
    nu_pos = op.target_weights > 0
    constant_lead = (
        np.ptp(phi1[mu_pos]) <= 1e-6 * max(1.0, np.abs(phi1[mu_pos]).max())
        and np.ptp(psi1[nu_pos]) <= 1e-6 * max(1.0, np.abs(psi1[nu_pos]).max())
    )
    if abs(sigma1 - 1.0) > lead_tol or not constant_lead:
        msg = (
            f"leading singular triple deviates from (1, 1_X, 1_Y): sigma1={sigma1!r}"
        )
        if op.from_balanced_plan:
            warnings.append(msg)
        else:
            warnings.append(msg + " (plan not balanced; expected approximately)")
    if sigma2 >= sigma1 - degeneracy_tol:
        warnings.append(
            f"second singular value degenerate with the first (sigma2={sigma2!r}); "
            "partition is one of several equally coherent splits"
        )

    phi, psi = phis[:, 1], psis[:, 1]
    if phi[0] < 0:
        phi, psi = -phi, -psi
    source_partition = np.where(phi >= 0, 0, 1)
    target_partition = np.where(psi >= 0, 0, 1)

    report = coherence_report(op, (source_partition, target_partition))
    return SpectralPartition(
        phi=phi,
        psi=psi,
        sigma=sigma2,
        sigma1=sigma1,
        source_partition=source_partition,
        target_partition=target_partition,
        mass_balance=report.mass_balance,
        coherence_residual=report.coherence,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class ClusterNode:
    """Node of the nested bipartition hierarchy.

    Indices are global (into the original spaces). ``partition`` is None at
    leaves; ``shape_score`` is the full plan's GW distortion restricted to
    this node's block (the shape-coherence assessment). ``stopped``
    explains an early stop ("too-few-points") or is None.
    """

    source_indices: np.ndarray
    target_indices: np.ndarray
    depth: int
    shape_score: float
    partition: Optional[SpectralPartition] = None
    children: Tuple["ClusterNode", ...] = ()
    stopped: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


def leaf_nodes(node: ClusterNode):
    """Leaves of the hierarchy, left-to-right (class 0 before class 1)."""
    if node.is_leaf:
        return [node]
    out = []
    for child in node.children:
        out.extend(leaf_nodes(child))
    return out


def nested_cluster(
    source_space: MetricMeasureSpace,
    target_space: MetricMeasureSpace,
    plan: TransportPlan,
    depth: int,
    marginals: str = "coupling",
) -> ClusterNode:
    """Recursive bipartitioning of a plan into a depth-level hierarchy.

    Each level clusters the restricted transfer operator, then recurses on
    the two class blocks with sub-measures renormalized to unit mass;
    depth ``d`` yields ``2**d`` leaf partitions when no branch stops early.
    A class with fewer than 2 points on either side stops its branch
    (recorded on the node). Shape scores are computed from the full plan
    restricted to each node's block.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    dx = source_space.distances
    dy = target_space.distances
    full = plan.coupling

    def recurse(si, ti, level) -> ClusterNode:
        score = gw_distortion_restricted(full, dx, dy, si, ti)
        if len(si) < 2 or len(ti) < 2:
            return ClusterNode(si, ti, level, score, stopped="too-few-points")
        block = full[np.ix_(si, ti)]
        sub_plan = TransportPlan(
            block,
            plan.source_weights[si],
            plan.target_weights[ti],
            epsilon=plan.epsilon,
            kappa=plan.kappa,
        )
        op = build_transfer(sub_plan, marginals=marginals)
        part = spectral_cluster(op)
        scores = np.array(
            [
                gw_distortion_restricted(
                    full, dx, dy, si[part.source_class(k)], ti[part.target_class(k)]
                )
                for k in (0, 1)
            ]
        )
        part = replace(part, shape_scores=scores)
        children = ()
        if level < depth:
            children = tuple(
                recurse(si[part.source_class(k)], ti[part.target_class(k)], level + 1)
                for k in (0, 1)
            )
        else:
            children = tuple(
                ClusterNode(
                    si[part.source_class(k)],
                    ti[part.target_class(k)],
                    level + 1,
                    scores[k],
                )
                for k in (0, 1)
            )
        return ClusterNode(si, ti, level, score, partition=part, children=children)

    n, m = full.shape
    return recurse(np.arange(n), np.arange(m), 1)
