"""Command-line interface.

Exit codes: 0 on success, 1 on usage/input errors, 2 when a solver did not
converge and ``--strict`` was given. When ``--output`` is set, results go
to the file and stdout carries a single summary line.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io as gio
from .experiments import (
    TwoDiskScenario,
    run_labelled_pipeline,
    run_rotating_disk,
    run_two_disks,
)
from .gw import (
    GwProblem,
    gw_distortion,
    solve_entropic_fgw,
    solve_entropic_gw,
    solve_entropic_ugw,
)
from .measures import DiscreteMeasure, LabelledSpace, MetricMeasureSpace
from .sinkhorn import SolverConfig, solve_entropic_ot, solve_entropic_uot
from .transfer import build_transfer, nested_cluster, spectral_cluster

__all__ = ["cli_dispatch", "main", "build_parser"]


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _common_flags(parser):
    parser.add_argument("--epsilon", type=float, default=None, help="entropic regularization")
    parser.add_argument("--kappa", type=float, default=None, help="marginal relaxation weight")
    parser.add_argument("--label-weight", type=float, default=1.0, help="fused label term weight")
    parser.add_argument("--tolerance", type=float, default=1e-9, help="solver tolerance")
    parser.add_argument("--max-iter", type=int, default=100_000, help="inner iteration cap")
    parser.add_argument("--seed", type=int, default=1, help="base random seed")
    parser.add_argument("--depth", type=int, default=3, help="nested clustering depth")
    parser.add_argument("--normalize-metrics", action="store_true",
                        help="rescale both distance matrices by the source diameter")
    parser.add_argument("--output", type=str, default=None, help="output file path")
    parser.add_argument("--strict", action="store_true",
                        help="exit with code 2 when a solver does not converge")
    parser.add_argument("--epsilon-scaling", action="store_true",
                        help="annealed warm start for small regularization")
    parser.add_argument("--delimiter", type=str, default=None, help="input field delimiter")


def build_parser() -> _Parser:
    parser = _Parser(prog="gwtransfer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in [
        ("solve-ot", "balanced entropic OT between two point clouds"),
        ("solve-uot", "unbalanced entropic OT (requires --kappa)"),
        ("solve-gw", "balanced entropic GW between two point clouds"),
        ("solve-ugw", "unbalanced entropic GW (requires --kappa)"),
        ("solve-fgw", "fused entropic GW (labelled point clouds)"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("source", type=str)
        p.add_argument("target", type=str)
        p.add_argument("--cost", type=str, default=None,
                       help="dense cost matrix file (OT only; default squared Euclidean)")
        p.add_argument("--cluster", action="store_true",
                       help="also spectrally cluster the transfer operator")
        _common_flags(p)

    p = sub.add_parser("transfer", help="build transfer operator from a saved plan")
    p.add_argument("result", type=str, help="result document containing a plan")
    p.add_argument("--cluster", action="store_true")
    p.add_argument("--marginals", choices=["auto", "inputs", "coupling"], default="auto")
    _common_flags(p)

    p = sub.add_parser("cluster", help="nested clustering of a saved plan")
    p.add_argument("source", type=str)
    p.add_argument("target", type=str)
    p.add_argument("--plan", type=str, required=True, help="result document containing the plan")
    p.add_argument("--marginals", choices=["auto", "inputs", "coupling"], default="coupling")
    _common_flags(p)

    exp = sub.add_parser("exp", help="paper-scale experiments")
    exp_sub = exp.add_subparsers(dest="experiment", required=True)

    p = exp_sub.add_parser("rotating-disk", help="angle sweep of OT vs GW transfer error")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--angles-deg", type=str, default=None,
                   help="comma-separated angle list in degrees (default: 6,12,...,180)")
    p.add_argument("--no-noisy", action="store_true", help="skip the noisy columns")
    p.add_argument("--noise-magnitude", type=float, default=1.0)
    p.add_argument("--noise-sweep", action="store_true",
                   help="also sweep noise magnitudes 0.5..4.5 at theta = pi/2")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cells-dir", type=str, default=None,
                   help="directory for one result document per cell")
    _common_flags(p)

    p = exp_sub.add_parser("two-disks", help="coherent-disk extraction comparison")
    p.add_argument("--n", type=int, default=80)
    _common_flags(p)

    p = exp_sub.add_parser("labelled-pipeline", help="unbalanced fused GW + nested clustering")
    p.add_argument("source", type=str)
    p.add_argument("target", type=str)
    p.add_argument("--marginals", choices=["auto", "inputs", "coupling"], default="coupling")
    p.add_argument("--raw-metrics", action="store_true",
                   help="keep the raw Euclidean metrics (default: normalize by source diameter)")
    _common_flags(p)

    return parser


def _load_cloud(path, delimiter):
    return gio.load_point_cloud(path, delimiter=delimiter)


def _as_space(obj) -> MetricMeasureSpace:
    if isinstance(obj, LabelledSpace):
        return obj.space
    if isinstance(obj, MetricMeasureSpace):
        return obj
    return MetricMeasureSpace.from_points(obj.points, obj.weights)


def _normalized_measure(obj) -> DiscreteMeasure:
    measure = obj.measure if isinstance(obj, (LabelledSpace, MetricMeasureSpace)) else obj
    normalized, _ = measure.normalized()
    return normalized


def _squared_euclidean(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _emit(doc, args, summary_line):
    if args.output:
        gio.save_result(doc, args.output)
        print(summary_line + f" output={args.output}")
    else:
        print(summary_line, file=sys.stderr)
        json.dump(doc, sys.stdout, indent=1)
        print()
    return 0


def _finish(plan, args, doc, label):
    code = _emit(doc, args, label)
    if args.strict and not plan.converged:
        return 2
    return code


def _cmd_solve_ot(args):
    src = _load_cloud(args.source, args.delimiter)
    tgt = _load_cloud(args.target, args.delimiter)
    mu = _normalized_measure(src) if args.kappa is None else (
        src.measure if isinstance(src, (LabelledSpace, MetricMeasureSpace)) else src)
    nu = _normalized_measure(tgt) if args.kappa is None else (
        tgt.measure if isinstance(tgt, (LabelledSpace, MetricMeasureSpace)) else tgt)
    if args.cost is not None:
        cost = np.loadtxt(args.cost, delimiter=",")
    else:
        cost = _squared_euclidean(mu.points, nu.points)
    epsilon = args.epsilon if args.epsilon is not None else 0.01
    cfg = SolverConfig(
        epsilon=epsilon,
        kappa=args.kappa,
        tolerance=args.tolerance,
        max_iterations=args.max_iter,
        epsilon_scaling=args.epsilon_scaling,
    )
    if args.kappa is None:
        plan, _, trace = solve_entropic_ot(mu, nu, cost, cfg)
    else:
        plan, _, trace = solve_entropic_uot(mu, nu, cost, cfg)

    config = {
        "command": args.command,
        "source": args.source,
        "target": args.target,
        "epsilon": epsilon,
        "kappa": args.kappa,
        "tolerance": args.tolerance,
        "max_iterations": args.max_iter,
        "epsilon_scaling": args.epsilon_scaling,
    }
    op = partition = None
    if args.cluster:
        op = build_transfer(plan)
        partition = spectral_cluster(op)
    doc = gio.result_document(
        args.command, config, plan=plan, operator=op, partition=partition,
        summary={"objective_cost": float(np.sum(cost * plan.coupling))},
        trace_summary=trace.summary(),
    )
    label = (
        f"{args.command}: converged={plan.converged} iterations={plan.iterations}"
        f" residual={plan.converged_residual:.3e}"
    )
    return _finish(plan, args, doc, label)


def _cmd_solve_gw(args):
    src = _load_cloud(args.source, args.delimiter)
    tgt = _load_cloud(args.target, args.delimiter)
    fused = args.command == "solve-fgw"
    if fused and not (isinstance(src, LabelledSpace) and isinstance(tgt, LabelledSpace)):
        raise CliUsageError("solve-fgw requires label columns in both inputs")

    def prepare(obj):
        space = _as_space(obj)
        measure = _normalized_measure(obj)
        space = MetricMeasureSpace(measure, space.distances)
        if fused:
            return LabelledSpace(space, obj.labels)
        return space

    source = prepare(src)
    target = prepare(tgt)
    epsilon = args.epsilon if args.epsilon is not None else 0.001
    kappa = args.kappa if args.command in ("solve-ugw", "solve-fgw") else None
    if args.command == "solve-ugw" and kappa is None:
        raise CliUsageError("solve-ugw requires --kappa")
    problem = GwProblem(
        source=source,
        target=target,
        epsilon=epsilon,
        kappa=kappa,
        label_weight=args.label_weight,
        cfg=SolverConfig(
            epsilon=epsilon,
            tolerance=args.tolerance,
            max_iterations=args.max_iter,
            epsilon_scaling=args.epsilon_scaling,
        ),
        normalize_metrics=args.normalize_metrics,
    )
    if args.command == "solve-gw":
        plan = solve_entropic_gw(problem)
    elif args.command == "solve-ugw":
        plan = solve_entropic_ugw(problem)
    else:
        plan = solve_entropic_fgw(problem)

    mu, nu, dx, dy = problem.arrays()
    distortion = gw_distortion(plan.coupling, dx, dy)
    op = partition = None
    if args.cluster:
        op = build_transfer(plan)
        partition = spectral_cluster(op)
    config = {
        "command": args.command,
        "source": args.source,
        "target": args.target,
        "epsilon": epsilon,
        "kappa": kappa,
        "label_weight": args.label_weight,
        "tolerance": args.tolerance,
        "max_iterations": args.max_iter,
        "normalize_metrics": args.normalize_metrics,
        "epsilon_scaling": args.epsilon_scaling,
    }
    doc = gio.result_document(
        args.command, config, plan=plan, operator=op, partition=partition,
        summary={"distortion": distortion, "plan_mass": plan.total_mass},
    )
    label = (
        f"{args.command}: converged={plan.converged} outer_iterations={plan.iterations}"
        f" distortion={distortion:.6e}"
    )
    return _finish(plan, args, doc, label)


def _cmd_transfer(args):
    doc = gio.load_result(args.result)
    if not doc.get("plan"):
        raise CliUsageError(f"{args.result} contains no plan")
    plan = gio.plan_from_document(doc["plan"])
    op = build_transfer(plan, marginals=args.marginals)
    partition = spectral_cluster(op) if args.cluster else None
    config = {"command": "transfer", "result": args.result, "marginals": args.marginals,
              "cluster": args.cluster}
    out = gio.result_document("transfer", config, plan=plan, operator=op, partition=partition)
    label = "transfer: operator built"
    if partition is not None:
        label += f" sigma2={partition.sigma:.6f}"
    return _emit(out, args, label)


def _cmd_cluster(args):
    src = _as_space(_load_cloud(args.source, args.delimiter))
    tgt = _as_space(_load_cloud(args.target, args.delimiter))
    doc = gio.load_result(args.plan)
    if not doc.get("plan"):
        raise CliUsageError(f"{args.plan} contains no plan")
    plan = gio.plan_from_document(doc["plan"])
    if plan.shape != (len(src), len(tgt)):
        raise CliUsageError("plan shape does not match the point clouds")
    tree = nested_cluster(src, tgt, plan, args.depth, marginals=args.marginals)
    config = {"command": "cluster", "source": args.source, "target": args.target,
              "plan": args.plan, "depth": args.depth, "marginals": args.marginals}
    out = gio.result_document("cluster", config, plan=plan, tree=tree)
    leaves = sum(1 for _ in _walk_leaves(out["tree"]))
    return _emit(out, args, f"cluster: depth={args.depth} leaves={leaves}")


def _walk_leaves(tree_doc):
    if not tree_doc["children"]:
        yield tree_doc
        return
    for child in tree_doc["children"]:
        yield from _walk_leaves(child)


def _cmd_exp_rotating_disk(args):
    if args.output is None:
        raise CliUsageError("exp rotating-disk requires --output for the table")
    angles = None
    if args.angles_deg:
        angles = [math.radians(float(t)) for t in args.angles_deg.split(",")]
    epsilon = args.epsilon if args.epsilon is not None else 0.0008
    from .experiments import DEFAULT_NOISE_SWEEP

    result = run_rotating_disk(
        angles=angles,
        repetitions=args.repetitions,
        n=args.n,
        epsilon=epsilon,
        base_seed=args.seed,
        include_noisy=not args.no_noisy,
        noise_magnitude=args.noise_magnitude,
        noise_sweep=DEFAULT_NOISE_SWEEP if args.noise_sweep else (),
        tolerance=args.tolerance,
        max_iterations=args.max_iter,
        workers=args.workers,
    )
    gio.save_table(args.output, list(result.rows), result.config)
    extra = ""
    if result.sweep_rows:
        sweep_path = args.output.rsplit(".", 1)[0] + "_noise_sweep.csv"
        gio.save_table(sweep_path, list(result.sweep_rows), result.config)
        extra = f" sweep={sweep_path}"
    if args.cells_dir:
        import os

        os.makedirs(args.cells_dir, exist_ok=True)
        for i, cell in enumerate(result.cells):
            gio.save_result(
                gio.result_document("rotating-disk-cell", cell["config"],
                                    summary={k: v for k, v in cell.items() if k != "config"}),
                os.path.join(args.cells_dir, f"cell_{i:04d}.json"),
            )
    flagged = sum(row["flagged_cells"] for row in result.rows)
    print(f"exp rotating-disk: angles={len(result.rows)} repetitions={args.repetitions}"
          f" flagged={flagged} output={args.output}{extra}")
    if args.strict and flagged:
        return 2
    return 0


def _cmd_exp_two_disks(args):
    epsilon = args.epsilon if args.epsilon is not None else 0.001
    scenario = TwoDiskScenario(n=args.n, seed=args.seed, epsilon=epsilon)
    result = run_two_disks(scenario, tolerance=args.tolerance, max_iterations=args.max_iter)
    summary = {
        "rand_gw_source": result.rand_gw[0],
        "rand_gw_target": result.rand_gw[1],
        "rand_ot_source": result.rand_ot[0],
        "rand_ot_target": result.rand_ot[1],
        "success": result.success,
    }
    doc = gio.result_document(
        "two-disks", result.config, plan=result.gw_plan,
        partition=result.gw_partition, summary=summary,
    )
    doc["ot_partition"] = gio.partition_document(result.ot_partition)
    label = (f"exp two-disks: rand_gw={min(result.rand_gw):.3f}"
             f" rand_ot={min(result.rand_ot):.3f} success={result.success}")
    code = _emit(doc, args, label)
    if args.strict and not (result.gw_plan.converged and result.ot_plan.converged):
        return 2
    return code


def _cmd_exp_labelled_pipeline(args):
    src = _load_cloud(args.source, args.delimiter)
    tgt = _load_cloud(args.target, args.delimiter)
    if not (isinstance(src, LabelledSpace) and isinstance(tgt, LabelledSpace)):
        raise CliUsageError("labelled-pipeline requires label columns in both inputs")
    epsilon = args.epsilon if args.epsilon is not None else 0.0003
    kappa = args.kappa if args.kappa is not None else 0.1
    result = run_labelled_pipeline(
        src, tgt,
        epsilon=epsilon,
        kappa=kappa,
        label_weight=args.label_weight,
        depth=args.depth,
        normalize_metrics=not args.raw_metrics,
        tolerance=args.tolerance,
        max_iterations=args.max_iter,
        marginals=args.marginals,
    )
    config = dict(result.config)
    config.update({"source": args.source, "target": args.target})
    doc = gio.result_document(
        "labelled-pipeline", config, plan=result.gw_plan, tree=result.tree,
        summary={"leaves": list(result.leaf_summary),
                 "source_mass": result.source_mass,
                 "target_mass": result.target_mass},
    )
    doc["ot_partition"] = gio.partition_document(result.ot_partition)
    label = (f"exp labelled-pipeline: depth={args.depth}"
             f" leaves={len(result.leaf_summary)}"
             f" converged={result.gw_plan.converged}")
    code = _emit(doc, args, label)
    if args.strict and not result.gw_plan.converged:
        return 2
    return code


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("solve-ot", "solve-uot"):
            if args.command == "solve-uot" and args.kappa is None:
                raise CliUsageError("solve-uot requires --kappa")
            return _cmd_solve_ot(args)
        if args.command in ("solve-gw", "solve-ugw", "solve-fgw"):
            return _cmd_solve_gw(args)
        if args.command == "transfer":
            return _cmd_transfer(args)
        if args.command == "cluster":
            return _cmd_cluster(args)
        if args.command == "exp":
            if args.experiment == "rotating-disk":
                return _cmd_exp_rotating_disk(args)
            if args.experiment == "two-disks":
                return _cmd_exp_two_disks(args)
            return _cmd_exp_labelled_pipeline(args)
        raise CliUsageError(f"unknown command {args.command!r}")
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
