"""Train a small prolongation network and race it against classical AMG.

A scaled-down version of the two-stage protocol (a few hundred problems
instead of thousands) is enough to see the learned weights pull ahead of
direct interpolation on held-out Delaunay Laplacians.
"""

import numpy as np

from amglearn.cycle import CycleConfig
from amglearn.evaluation import EvalCell, evaluate_suite
from amglearn.model import gradient_check, init_parameters, loss_fourier, prepare_fourier_case
from amglearn.problems import generate_periodic_delaunay
from amglearn.training import TrainConfig, run_training

config = TrainConfig(
    stage1_count=320,
    stage2_fresh_count=120,
    stage2_coarsened_source_count=120,
    batch_size=32,
    b=4,
    c=16,
    c_stage2_source=32,
    seed=0,
)

# sanity: the tape gradient matches finite differences before we trust it
params0 = init_parameters(config.model, seed=0)
case = prepare_fourier_case(
    generate_periodic_delaunay(4, 8, config.distribution, seed=99), config=config.model
)
rng = np.random.default_rng(1)
d = rng.standard_normal(params0.flat().size)
d /= np.linalg.norm(d)
analytic, numeric, rel = gradient_check(
    params0, lambda p, taped: loss_fourier(p, case, taped=taped), d
)
print(f"gradient check: analytic {analytic:.6e}, numeric {numeric:.6e}, rel err {rel:.1e}")

print("training (two stages, Fourier loss head)...")
params, history = run_training(config)
l1 = history["stage1"]["batch_losses"]
l2 = history["stage2"]["batch_losses"]
print(f"stage 1: {len(l1)} batches, mean loss {np.mean(l1[:3]):.3f} -> {np.mean(l1[-3:]):.3f}")
print(f"stage 2: {len(l2)} batches ({history['coarsened_count']} coarsened problems mixed in)")

print("evaluating on held-out lognormal Delaunay Laplacians, W-cycles...")
report = evaluate_suite(
    params,
    [EvalCell("delaunay", 1024, "W", count=20)],
    CycleConfig(cycle="W"),
    seed=5,
)
print(f"success rate: {100 * report.success_rate:.0f}% of {len(report.records)} problems")
print(f"mean factor:  baseline {report.mean_baseline:.4f}, learned {report.mean_learned:.4f}")
for r in report.records[:5]:
    flag = "+" if r.learned_factor < r.baseline_factor else "-"
    print(f"  {flag} baseline {r.baseline_factor:.4f}  learned {r.learned_factor:.4f}")
