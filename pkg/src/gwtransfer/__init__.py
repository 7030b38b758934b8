"""Transfer-operator estimation from entropic Gromov-Wasserstein transport plans.

Estimates the transfer operator of a dynamical system from two observed
states using entropic (optionally unbalanced and fused) Gromov-Wasserstein
transport, extracts coherent structures by spectral clustering of the
operator, and scores the shape-coherence of the extracted structures with
restricted GW distortions.
"""

from .measures import (
    DiscreteMeasure,
    LabelledSpace,
    MetricMeasureSpace,
    TransportPlan,
    kl_divergence,
    marginals,
    pairwise_distance_matrix,
    quadratic_kl,
)
from .sinkhorn import (
    DualPotentials,
    SolverConfig,
    kernel_form,
    ot_objective,
    reconstruct_coupling,
    solve_entropic_ot,
    solve_entropic_uot,
    uot_objective,
)
from .gw import (
    GwProblem,
    gw_distortion,
    gw_distortion_restricted,
    gw_objective,
    linearized_cost,
    solve_entropic_fgw,
    solve_entropic_gw,
    solve_entropic_ugw,
)
from .transfer import (
    ClusterNode,
    CoherenceReport,
    SpectralPartition,
    TransferOperator,
    apply_operator,
    build_transfer,
    coherence_report,
    leaf_nodes,
    nested_cluster,
    spectral_cluster,
)
from .experiments import (
    RotatingDiskScenario,
    TwoDiskScenario,
    add_noise,
    rand_index,
    rotate,
    run_labelled_pipeline,
    run_rotating_disk,
    run_rotating_disk_cell,
    run_two_disks,
    sample_two_disks,
    sample_unit_disk,
    transfer_error,
    two_disk_flow,
)
from .io import load_point_cloud, load_result, save_result

__version__ = "0.1.0"

__all__ = [
    "DiscreteMeasure",
    "MetricMeasureSpace",
    "LabelledSpace",
    "TransportPlan",
    "kl_divergence",
    "quadratic_kl",
    "marginals",
    "pairwise_distance_matrix",
    "DualPotentials",
    "SolverConfig",
    "solve_entropic_ot",
    "solve_entropic_uot",
    "ot_objective",
    "uot_objective",
    "kernel_form",
    "reconstruct_coupling",
    "GwProblem",
    "gw_distortion",
    "gw_objective",
    "linearized_cost",
    "solve_entropic_gw",
    "solve_entropic_ugw",
    "solve_entropic_fgw",
    "gw_distortion_restricted",
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
    "RotatingDiskScenario",
    "TwoDiskScenario",
    "sample_unit_disk",
    "sample_two_disks",
    "rotate",
    "two_disk_flow",
    "add_noise",
    "transfer_error",
    "rand_index",
    "run_rotating_disk",
    "run_rotating_disk_cell",
    "run_two_disks",
    "run_labelled_pipeline",
    "load_point_cloud",
    "save_result",
    "load_result",
]
