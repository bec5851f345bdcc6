"""Adam optimization and the two-stage training protocol: one epoch on fresh
block-periodic problems, then one epoch on a shuffled mix of fresh problems
and once-coarsened problems produced by the stage-1 network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .classical import split_and_pattern
from .errors import AmgError
from .fourier import extract_couplings
from .model import (
    ModelConfig,
    ModelParameters,
    forward,
    init_parameters,
    learned_tiled_prolongation,
    loss_dense,
    loss_fourier,
    prepare_fourier_case,
)
from .problems import (
    BlockCirculantProblem,
    WeightDistribution,
    couplings_to_sparse,
    generate_periodic_delaunay,
    validate_block_circulant,
)
from .sparse import from_scipy

__all__ = [
    "OptimizerState",
    "TrainConfig",
    "adam_step",
    "init_optimizer",
    "train_stage",
    "build_coarsened_set",
    "run_training",
    "problem_seed",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OptimizerState:
    step: int
    first_moment: dict
    second_moment: dict
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_optimizer(params: ModelParameters, lr: float = 3e-3) -> OptimizerState:
    zeros = lambda: {k: np.zeros_like(w) for k, w in params.weights.items()}
    return OptimizerState(0, zeros(), zeros(), lr=lr)


def adam_step(state: OptimizerState, params: ModelParameters, grads: dict):
    """Bias-corrected Adam update; returns (new_state, new_params)."""
    t = state.step + 1
    m, v, new_w = {}, {}, {}
    for k, w in params.weights.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {k!r}")
        m[k] = state.beta1 * state.first_moment[k] + (1 - state.beta1) * g
        v[k] = state.beta2 * state.second_moment[k] + (1 - state.beta2) * g**2
        m_hat = m[k] / (1 - state.beta1**t)
        v_hat = v[k] / (1 - state.beta2**t)
        new_w[k] = w - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = OptimizerState(
        t, m, v, lr=state.lr, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon
    )
    return new_state, ModelParameters(params.config, params.seed, new_w)


@dataclass(frozen=True)
class TrainConfig:
    stage1_count: int = 4000
    stage2_fresh_count: int = 2000
    stage2_coarsened_source_count: int = 2000
    batch_size: int = 32
    b: int = 4
    c: int = 16
    c_stage2_source: int = 32
    distribution: WeightDistribution = field(
        default_factory=WeightDistribution.standard_lognormal
    )
    seed: int = 0
    loss_head: str = "fourier"  # or "dense"
    lr: float = 3e-3
    s1: int = 1
    s2: int = 1
    theta: float = 0.25
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.stage1_count, self.stage2_fresh_count, self.stage2_coarsened_source_count) < 0:
            raise ValueError("problem counts must be >= 0")
        if self.loss_head not in ("fourier", "dense"):
            raise ValueError("loss_head must be 'fourier' or 'dense'")


def problem_seed(master_seed: int, stage: int, index: int) -> int:
    """Deterministic per-problem seed derived from the run seed."""
    ss = np.random.SeedSequence([int(master_seed), int(stage), int(index)])
    return int(ss.generate_state(1)[0])


def _problem_loss(params, problem, config, taped=True):
    if config.loss_head == "fourier":
        case = prepare_fourier_case(problem, config.theta, config.seed, config.model)
        return loss_fourier(params, case, config.s1, config.s2, taped=taped)
    # dense head: jitter the Laplacian diagonal (block-replicated, so the
    # operator would stay circulant) to keep the coarse matrix invertible
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD1A6]))
    jitter = np.tile(rng.uniform(0.0, 0.2, size=problem.c), problem.b * problem.b)
    Aj = from_scipy(problem.A.to_scipy() + sp.diags(jitter))
    _, splitting, pattern = split_and_pattern(Aj, config.theta, config.seed)
    return loss_dense(params, Aj, splitting, pattern, config.s1, config.s2, taped=taped)


def train_stage(params: ModelParameters, problems, config: TrainConfig, opt_state=None):
    """One epoch over `problems` in batches; the batch loss is the mean of the
    independent per-problem losses (graphs are never merged). Problems whose
    loss fails are skipped and counted.

    Returns (params, opt_state, stats) where stats has per-batch mean losses
    and the skip count.
    """
    if opt_state is None:
        opt_state = init_optimizer(params, lr=config.lr)
    batch_losses = []
    skipped = 0
    batch_grads = None
    batch_vals = []

    def flush():
        nonlocal batch_grads, batch_vals, params, opt_state
        if not batch_vals:
            return
        mean_grads = {k: g / len(batch_vals) for k, g in batch_grads.items()}
        opt_state_new, params_new = adam_step(opt_state, params, mean_grads)
        batch_losses.append(float(np.mean(batch_vals)))
        params = params_new
        opt_state = opt_state_new
        batch_grads = None
        batch_vals = []

    for problem in problems:
        try:
            taped = _problem_loss(params, problem, config)
            grads = taped.gradients()
        except (AmgError, np.linalg.LinAlgError) as err:
            skipped += 1
            log.warning("skipping problem: %s", err)
            continue
        if batch_grads is None:
            batch_grads = {k: g.copy() for k, g in grads.items()}
        else:
            for k, g in grads.items():
                batch_grads[k] += g
        batch_vals.append(taped.value)
        if len(batch_vals) == config.batch_size:
            flush()
    flush()
    return params, opt_state, {"batch_losses": batch_losses, "skipped": skipped}


def _coarse_couplings(p_restricted: dict, a_coup: dict, b: int):
    """(P^T A P) in coupling space: offsets add modulo the block grid."""
    out = {}
    for (u1, u2), pu in p_restricted.items():
        for (v1, v2), av in a_coup.items():
            pa = pu.T @ av  # (P^T)_{-u} A_v contribution at offset v - u
            for (w1, w2), pw in p_restricted.items():
                s = ((v1 - u1 + w1), (v2 - u2 + w2))
                s = (_wrap(s[0], b), _wrap(s[1], b))
                out.setdefault(s, np.zeros((pu.shape[1], pw.shape[1])))
                out[s] += pa @ pw
    return out


def _wrap(d, b):
    d = d % b
    if d > b // 2:
        d -= b
    return d


def build_coarsened_set(params: ModelParameters, config: TrainConfig):
    """Once-coarsened training problems: apply the net to larger-cell sources,
    form A_c = P^T A P in coupling space (exactly block-circulant), and
    repackage with positions of the surviving coarse nodes. Sources that fail
    tiling or produce non-adjacent couplings are skipped and logged."""
    out = []
    skipped = 0
    for i in range(config.stage2_coarsened_source_count):
        seed = problem_seed(config.seed, 20, i)
        problem = generate_periodic_delaunay(
            config.b, config.c_stage2_source, config.distribution, seed
        )
        try:
            case = prepare_fourier_case(problem, config.theta, config.seed, config.model)
            raw = forward(params, case.graph)
            tiled = learned_tiled_prolongation(raw, case)
            p_tiled = {s: m for s, (m, _) in tiled.restricted_couplings().items()}
            a_coup = extract_couplings(problem.A, problem.b, problem.c, problem.c)
            coarse = _coarse_couplings(p_tiled, a_coup, problem.b)
            if any(abs(s1) > 1 or abs(s2) > 1 for (s1, s2) in coarse if np.any(coarse[(s1, s2)])):
                raise AmgError("coarse couplings reach non-adjacent blocks")
            coarse = {s: m for s, m in coarse.items() if np.any(m)}
            ncc = case.tiled.n_coarse
            A_c = couplings_to_sparse(coarse, problem.b, ncc, ncc)
            coarse_problem = BlockCirculantProblem(
                A_c,
                problem.b,
                ncc,
                problem.base_points[case.tiled.coarse_positions],
            )
            if not validate_block_circulant(coarse_problem):
                raise AmgError("coarsened operator lost circulance")
            out.append(coarse_problem)
        except (AmgError, np.linalg.LinAlgError) as err:
            skipped += 1
            log.warning("skipping coarsening source %d: %s", i, err)
    return out, skipped


def run_training(config: TrainConfig, params: ModelParameters = None):
    """Two-stage protocol; returns (params, history dict)."""
    if params is None:
        params = init_parameters(config.model, seed=config.seed)
    opt_state = init_optimizer(params, lr=config.lr)

    def stage1_problems():
        for i in range(config.stage1_count):
            yield generate_periodic_delaunay(
                config.b, config.c, config.distribution, problem_seed(config.seed, 10, i)
            )

    params, opt_state, stats1 = train_stage(params, stage1_problems(), config, opt_state)
    log.info("stage 1 done: %d batches, %d skipped", len(stats1["batch_losses"]), stats1["skipped"])

    coarsened, n_skip = build_coarsened_set(params, config)
    fresh = [
        generate_periodic_delaunay(
            config.b, config.c, config.distribution, problem_seed(config.seed, 30, i)
        )
        for i in range(config.stage2_fresh_count)
    ]
    mixed = fresh + coarsened
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 40]))
    order = rng.permutation(len(mixed))
    mixed = [mixed[i] for i in order]
    params, opt_state, stats2 = train_stage(params, mixed, config, opt_state)
    log.info("stage 2 done: %d batches, %d skipped", len(stats2["batch_losses"]), stats2["skipped"])
    history = {
        "stage1": stats1,
        "stage2": stats2,
        "coarsening_skipped": n_skip,
        "coarsened_count": len(coarsened),
    }
    return params, history
