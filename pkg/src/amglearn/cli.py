"""Command-line interface: problem generation, training, evaluation, single
solves, the Fourier/dense equivalence report and gradient checking.

A config file in `key = value` form may supply any long-option default;
explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import mmio
from .checkpoint import load_model, serialize_model
from .cycle import CycleConfig, build_hierarchy, solve, write_residual_history
from .errors import AmgError
from .evaluation import (
    EvalCell,
    baseline_prolongation,
    evaluate_suite,
    render_factor_chart_svg,
    write_report_csv,
)
from .fourier import dense_loss_tiled
from .model import (
    ModelConfig,
    gradient_check,
    init_parameters,
    loss_dense,
    loss_fourier,
    prepare_fourier_case,
)
from .problems import (
    WeightDistribution,
    generate_delaunay_laplacian,
    generate_fem_diffusion,
    generate_knn_affinity_laplacian,
    generate_periodic_delaunay,
)
from .sparse import MatrixKind, from_scipy
from .classical import split_and_pattern
from .model import forward, learned_tiled_prolongation
from .training import TrainConfig, problem_seed, run_training

_CONFIG_KEYS = {
    "seed": int,
    "out": str,
    "loss_head": str,
    "cycle": str,
    "s1": int,
    "s2": int,
    "theta": float,
    "mp_layers": int,
    "mlp_depth": int,
    "no_encoder_concat": lambda s: s.lower() in ("1", "true", "yes"),
    "no_indicators": lambda s: s.lower() in ("1", "true", "yes"),
}


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", type=str, default=None, help="key = value config file")
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--loss-head", choices=["fourier", "dense"], default=None)
    parser.add_argument("--cycle", choices=["v", "w", "V", "W"], default=None)
    parser.add_argument("--s1", type=int, default=None)
    parser.add_argument("--s2", type=int, default=None)
    parser.add_argument("--theta", type=float, default=None)
    parser.add_argument("--mp-layers", type=int, default=None, choices=[2, 3])
    parser.add_argument("--mlp-depth", type=int, default=None, choices=[2, 4])
    parser.add_argument("--no-encoder-concat", action="store_true", default=None)
    parser.add_argument("--no-indicators", action="store_true", default=None)


def _merge(args):
    """Resolve option values: explicit flag > config file > default."""
    cfg = {}
    if args.config:
        raw = mmio.read_manifest(args.config)
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key in _CONFIG_KEYS:
                cfg[key] = _CONFIG_KEYS[key](value)

    def pick(name, default):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        return cfg.get(name, default)

    merged = argparse.Namespace(
        seed=pick("seed", 0),
        out=Path(pick("out", ".")),
        loss_head=pick("loss_head", "fourier"),
        cycle=str(pick("cycle", "W")).upper(),
        s1=pick("s1", 1),
        s2=pick("s2", 1),
        theta=pick("theta", 0.25),
        mp_layers=pick("mp_layers", 3),
        mlp_depth=pick("mlp_depth", 4),
        encoder_concat=not pick("no_encoder_concat", False),
        indicators=not pick("no_indicators", False),
    )
    return merged


def _model_config(opts) -> ModelConfig:
    return ModelConfig(
        message_passing_layers=opts.mp_layers,
        mlp_depth=opts.mlp_depth,
        encoder_concat=opts.encoder_concat,
        indicator_features=opts.indicators,
    )


def _distribution(name, p1, p2):
    if name == "lognormal":
        return WeightDistribution.lognormal(p1, p2)
    return WeightDistribution.uniform(p1, p2)


def cmd_generate(args):
    opts = _merge(args)
    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    dist = _distribution(args.dist, args.dist_p1, args.dist_p2)
    for i in range(args.count):
        seed = problem_seed(opts.seed, 77, i)
        tag = f"{args.family}_{i:04d}"
        manifest = {"family": args.family, "seed": seed, "distribution": args.dist}
        if args.family == "periodic":
            p = generate_periodic_delaunay(args.b, args.c, dist, seed)
            A = p.A
            manifest.update(kind="spsd-laplacian", b=args.b, c=args.c)
            mmio.write_points_csv(out / f"{tag}.points.csv", p.base_points)
        elif args.family == "delaunay":
            A, pts = generate_delaunay_laplacian(args.n, dist, seed)
            manifest.update(kind="spsd-laplacian", n=args.n)
            mmio.write_points_csv(out / f"{tag}.points.csv", pts)
        elif args.family == "fem":
            mesh = generate_fem_diffusion(args.n, None, seed)
            A = mesh.A
            manifest.update(kind="spd", n=args.n)
            mmio.write_points_csv(out / f"{tag}.points.csv", mesh.points)
        elif args.family == "knn":
            A = generate_knn_affinity_laplacian(
                args.points_spec, k=args.k, seed=seed, n=args.n, jitter=args.jitter
            )
            manifest.update(
                kind="spd" if args.jitter else "spsd",
                n=args.n,
                k=args.k,
                points_spec=args.points_spec,
                jitter=args.jitter,
            )
        else:
            raise ValueError(args.family)
        mmio.write_matrix_market(out / f"{tag}.mtx", A, symmetric=True)
        mmio.write_manifest(out / f"{tag}.manifest.txt", manifest)
    print(f"wrote {args.count} problems to {out}")
    return 0


def cmd_train(args):
    opts = _merge(args)
    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(
        stage1_count=args.stage1_count,
        stage2_fresh_count=args.stage2_fresh_count,
        stage2_coarsened_source_count=args.stage2_coarsened_count,
        batch_size=args.batch_size,
        b=args.b,
        c=args.c,
        c_stage2_source=args.c_stage2_source,
        seed=opts.seed,
        loss_head=opts.loss_head,
        s1=opts.s1,
        s2=opts.s2,
        theta=opts.theta,
        model=_model_config(opts),
    )
    params, history = run_training(config)
    serialize_model(params, out / "model.ckpt")
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "batch", "mean_loss"])
        for stage in ("stage1", "stage2"):
            for i, loss in enumerate(history[stage]["batch_losses"]):
                writer.writerow([stage, i, f"{loss:.17g}"])
    print(
        f"trained: {len(history['stage1']['batch_losses'])} + "
        f"{len(history['stage2']['batch_losses'])} batches, "
        f"checkpoint at {out / 'model.ckpt'}"
    )
    return 0


def cmd_eval(args):
    opts = _merge(args)
    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    params = load_model(args.model)
    sizes = [int(s) for s in args.sizes.split(",")]
    cells = [
        EvalCell(args.topology, size, opts.cycle, count=args.count) for size in sizes
    ]
    cfg = CycleConfig(s1=opts.s1, s2=opts.s2, cycle=opts.cycle, theta=opts.theta)
    report = evaluate_suite(params, cells, cfg, seed=opts.seed)
    write_report_csv(report, out / "report.csv")
    render_factor_chart_svg(report, out / "factors.svg")
    print(
        f"evaluated {len(report.records)} problems ({report.failures} failures); "
        f"success rate {100 * report.success_rate:.1f}%, "
        f"mean baseline {report.mean_baseline:.4f}, mean learned {report.mean_learned:.4f}"
    )
    return 0


def cmd_solve(args):
    opts = _merge(args)
    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    A = mmio.read_matrix_market(args.matrix)
    kind = MatrixKind.SPD if args.kind == "spd" else MatrixKind.SPSD_LAPLACIAN
    rng = np.random.default_rng(opts.seed)
    if args.rhs:
        b = np.loadtxt(args.rhs)
    else:
        b = rng.standard_normal(A.n_rows)
        if kind is MatrixKind.SPSD_LAPLACIAN:
            b -= b.mean()
    cfg = CycleConfig(
        s1=opts.s1, s2=opts.s2, cycle=opts.cycle, delta=args.delta, theta=opts.theta
    )
    h = build_hierarchy(A, cfg, baseline_prolongation, kind)
    x, history = solve(h, b, np.zeros(A.n_rows), cfg)
    write_residual_history(out / "residuals.csv", history)
    converged = history[-1] < args.delta
    print(
        f"{'converged' if converged else 'NOT converged'} in {len(history) - 1} cycles; "
        f"final residual {history[-1]:.3e} (delta {args.delta:.1e})"
    )
    return 0 if converged else 1


def cmd_fourier_check(args):
    opts = _merge(args)
    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    dist = WeightDistribution.standard_lognormal()
    config = _model_config(opts)
    params = init_parameters(config, seed=opts.seed)
    rows = []
    worst = 0.0
    for i in range(args.count):
        seed = problem_seed(opts.seed, 99, i)
        p = generate_periodic_delaunay(args.b, args.c, dist, seed)
        case = prepare_fourier_case(p, opts.theta, opts.seed, config)
        taped = loss_fourier(params, case, opts.s1, opts.s2, taped=False)
        raw = forward(params, case.graph)
        tiled = learned_tiled_prolongation(raw, case)
        dense = dense_loss_tiled(p, tiled, opts.s1, opts.s2, MatrixKind.SPSD_LAPLACIAN)
        rel = abs(taped.value - dense) / max(abs(dense), 1e-300)
        worst = max(worst, rel)
        rows.append((seed, taped.value, dense, rel))
    with open(out / "fourier_check.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "fourier_loss", "dense_tiled_loss", "rel_error"])
        for row in rows:
            writer.writerow([row[0], f"{row[1]:.17g}", f"{row[2]:.17g}", f"{row[3]:.3e}"])
    print(f"max relative error over {args.count} problems: {worst:.3e}")
    return 0 if worst <= 1e-8 else 1


def cmd_gradcheck(args):
    opts = _merge(args)
    config = _model_config(opts)
    params = init_parameters(config, seed=opts.seed)
    rng = np.random.default_rng(opts.seed + 1)
    if args.head == "dense":
        import scipy.sparse as sp

        A, _ = generate_delaunay_laplacian(args.n, WeightDistribution.standard_lognormal(), opts.seed)
        Aj = from_scipy(A.to_scipy() + sp.diags(rng.uniform(0.05, 0.2, A.n_rows)))
        _, splitting, pattern = split_and_pattern(Aj, opts.theta, opts.seed)

        def loss_fn(p, taped):
            return loss_dense(p, Aj, splitting, pattern, opts.s1, opts.s2, taped=taped)

    else:
        p = generate_periodic_delaunay(args.b, args.c, WeightDistribution.standard_lognormal(), opts.seed)
        case = prepare_fourier_case(p, opts.theta, opts.seed, config)

        def loss_fn(q, taped):
            return loss_fourier(q, case, opts.s1, opts.s2, taped=taped)

    worst = 0.0
    for t in range(args.directions):
        d = rng.standard_normal(params.flat().size)
        d /= np.linalg.norm(d)
        analytic, numeric, rel = gradient_check(params, loss_fn, d, h=args.h)
        worst = max(worst, rel)
        print(f"direction {t}: analytic={analytic:.9e} numeric={numeric:.9e} rel={rel:.3e}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst <= 1e-4 else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="amglearn",
        description="Algebraic multigrid with learned prolongation operators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate problem corpora")
    g.add_argument("--family", choices=["periodic", "delaunay", "fem", "knn"], required=True)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--n", type=int, default=1024)
    g.add_argument("--b", type=int, default=4)
    g.add_argument("--c", type=int, default=64)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--points-spec", default="two-gaussians")
    g.add_argument("--jitter", action="store_true")
    g.add_argument("--dist", choices=["lognormal", "uniform"], default="lognormal")
    g.add_argument("--dist-p1", type=float, default=0.0)
    g.add_argument("--dist-p2", type=float, default=1.0)
    _add_common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--stage1-count", type=int, default=4000)
    t.add_argument("--stage2-fresh-count", type=int, default=2000)
    t.add_argument("--stage2-coarsened-count", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--b", type=int, default=4)
    t.add_argument("--c", type=int, default=16)
    t.add_argument("--c-stage2-source", type=int, default=32)
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluation suites")
    e.add_argument("--model", required=True)
    e.add_argument("--sizes", default="1024,4096")
    e.add_argument("--count", type=int, default=20)
    e.add_argument("--topology", choices=["delaunay", "fem"], default="delaunay")
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("solve", help="solve a saved system to tolerance")
    s.add_argument("--matrix", required=True)
    s.add_argument("--rhs", default=None)
    s.add_argument("--kind", choices=["spd", "spsd"], default="spd")
    s.add_argument("--delta", type=float, default=1e-8)
    _add_common(s)
    s.set_defaults(func=cmd_solve)

    f = sub.add_parser("fourier-check", help="Fourier vs dense loss equivalence report")
    f.add_argument("--count", type=int, default=20)
    f.add_argument("--b", type=int, default=4)
    f.add_argument("--c", type=int, default=8)
    _add_common(f)
    f.set_defaults(func=cmd_fourier_check)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--head", choices=["dense", "fourier"], default="fourier")
    gc.add_argument("--directions", type=int, default=10)
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--n", type=int, default=64)
    gc.add_argument("--b", type=int, default=4)
    gc.add_argument("--c", type=int, default=8)
    _add_common(gc)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AmgError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
