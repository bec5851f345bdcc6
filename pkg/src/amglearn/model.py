"""Learned prolongation model: graph features, encode-process-decode message
passing, prolongation assembly with row-sum scaling, and the dense and
Fourier loss heads differentiated through the tape."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .classical import (
    SparsityPattern,
    Splitting,
    direct_interpolation,
    row_sums,
    split_and_pattern,
)
from .errors import DegenerateRowError, LossError
from .fourier import (
    TiledProlongation,
    block_diagonalize,
    block_signatures,
    relaxation_symbol,
    tile_prolongation,
)
from .problems import BlockCirculantProblem
from .sparse import MatrixKind, SparseMatrix, build_relaxation_dense, from_csr_arrays

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "GraphProblem",
    "init_parameters",
    "encode_features",
    "forward",
    "assemble_prolongation",
    "TapedLoss",
    "loss_dense",
    "loss_fourier",
    "backward",
    "gradient_check",
    "learned_prolongation",
    "learned_tiled_prolongation",
    "save_graph_problem",
    "load_graph_problem",
]

HIDDEN = 64
ROW_SUM_CLAMP = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; the non-default values mirror the ablation grid."""

    message_passing_layers: int = 3  # 2 or 3
    mlp_depth: int = 4  # 2 or 4 affine layers per MLP
    encoder_concat: bool = True
    indicator_features: bool = True
    average_replicas: bool = False  # Fourier head: average raw outputs over replicas

    def __post_init__(self):
        if self.message_passing_layers < 1 or self.mlp_depth < 1:
            raise ValueError("architecture sizes must be positive")

    @property
    def node_feature_dim(self):
        return 2 if self.indicator_features else 1

    @property
    def edge_feature_dim(self):
        return 3 if self.indicator_features else 1

    def mlp_dims(self):
        """name -> list of affine (in, out) pairs, in a fixed order."""
        h = HIDDEN
        edge_in = h * (4 if self.encoder_concat else 3)
        node_in = h * (3 if self.encoder_concat else 2)

        def chain(i, o):
            if self.mlp_depth == 1:
                return [(i, o)]
            dims = [(i, h)] + [(h, h)] * (self.mlp_depth - 2) + [(h, o)]
            return dims

        layout = {
            "encoder_node": chain(self.node_feature_dim, h),
            "encoder_edge": chain(self.edge_feature_dim, h),
        }
        for l in range(self.message_passing_layers):
            layout[f"mp{l}_edge"] = chain(edge_in, h)
            layout[f"mp{l}_node"] = chain(node_in, h)
        layout["decoder_edge"] = chain(h, 1)
        return layout

    def architecture_hash(self) -> str:
        payload = {
            "message_passing_layers": self.message_passing_layers,
            "mlp_depth": self.mlp_depth,
            "encoder_concat": self.encoder_concat,
            "indicator_features": self.indicator_features,
            "hidden": HIDDEN,
            "dims": {k: v for k, v in self.mlp_dims().items()},
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class ModelParameters:
    config: ModelConfig
    seed: int
    weights: dict  # name -> float64 array, insertion-ordered

    def names(self):
        return list(self.weights)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in self.weights])

    def with_flat(self, vec) -> "ModelParameters":
        out = {}
        pos = 0
        for k, w in self.weights.items():
            out[k] = np.asarray(vec[pos : pos + w.size], dtype=np.float64).reshape(w.shape)
            pos += w.size
        if pos != len(vec):
            raise ValueError("flat vector length mismatch")
        return ModelParameters(self.config, self.seed, out)


def init_parameters(config: ModelConfig, seed: int = 0) -> ModelParameters:
    """Glorot-uniform weights, zero biases, drawn in fixed name order."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x610]))
    weights = {}
    for name, dims in config.mlp_dims().items():
        for layer, (fan_in, fan_out) in enumerate(dims):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights[f"{name}.{layer}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            weights[f"{name}.{layer}.b"] = np.zeros(fan_out)
    return ModelParameters(config, seed, weights)


@dataclass(frozen=True, eq=False)
class GraphProblem:
    """Directed graph view of A: one edge per stored entry (anti-parallel
    pairs for off-diagonals, a self edge per node), features per the input
    encoding, and the pattern-edge map onto P's slots."""

    n_nodes: int
    edge_src: np.ndarray
    edge_tgt: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray
    pattern_mask: np.ndarray
    pattern_edge_index: np.ndarray  # indices into the edge list, P-slot order
    pattern_rows: np.ndarray  # = edge_src[pattern_edge_index]
    pattern_cols: np.ndarray  # global C-node ids
    pattern_col_index: np.ndarray  # column of P per slot

    @property
    def n_edges(self):
        return len(self.edge_src)


def encode_features(
    A: SparseMatrix,
    splitting: Splitting,
    pattern: SparsityPattern,
    config: ModelConfig = ModelConfig(),
) -> GraphProblem:
    """Node features one-hot the C/F role; edge features carry A_ij plus the
    in-pattern indicator. Edges are stored entries of A in CSR order with a
    self edge injected for any node missing its diagonal."""
    n = A.n_rows
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.row_offsets))
    tgt = A.col_indices.astype(np.int64)
    vals = A.values.copy()
    has_diag = np.zeros(n, dtype=bool)
    has_diag[src[src == tgt]] = True
    missing = np.flatnonzero(~has_diag)
    if len(missing):
        src = np.concatenate([src, missing])
        tgt = np.concatenate([tgt, missing])
        vals = np.concatenate([vals, np.zeros(len(missing))])
        order = np.lexsort((tgt, src))
        src, tgt, vals = src[order], tgt[order], vals[order]

    edge_keys = src * n + tgt
    pattern_keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr)) * n + pattern.cols
    in_pattern = np.isin(edge_keys, pattern_keys)
    pattern_edge_index = np.flatnonzero(in_pattern)
    pattern_rows = src[pattern_edge_index]
    pattern_cols = tgt[pattern_edge_index]
    if len(pattern_edge_index) != len(pattern.cols):
        raise ValueError("pattern slots must correspond one-to-one with edges")

    if config.indicator_features:
        node_features = np.zeros((n, 2))
        node_features[splitting.is_coarse, 0] = 1.0
        node_features[~splitting.is_coarse, 1] = 1.0
        edge_features = np.zeros((len(src), 3))
        edge_features[:, 0] = vals
        edge_features[in_pattern, 1] = 1.0
        edge_features[~in_pattern, 2] = 1.0
    else:
        node_features = np.ones((n, 1))
        edge_features = vals[:, None].copy()
    return GraphProblem(
        n,
        src,
        tgt,
        node_features,
        edge_features,
        in_pattern,
        pattern_edge_index,
        pattern_rows,
        pattern_cols,
        splitting.coarse_index[pattern_cols],
    )


def _mlp(leaves, name, x, depth):
    for layer in range(depth):
        x = T.affine(x, leaves[f"{name}.{layer}.W"], leaves[f"{name}.{layer}.b"])
        if layer + 1 < depth:
            x = T.relu(x)
    return x


def _forward_tensors(leaves, gp: GraphProblem, config: ModelConfig):
    """Encode, message-pass, decode; returns the (n_pattern, 1) raw outputs."""
    d = config.mlp_depth
    v0 = _mlp(leaves, "encoder_node", T.Tensor(gp.node_features), d)
    e0 = _mlp(leaves, "encoder_edge", T.Tensor(gp.edge_features), d)
    v, e = v0, e0
    for l in range(config.message_passing_layers):
        edge_in = [e, T.gather_rows(v, gp.edge_src), T.gather_rows(v, gp.edge_tgt)]
        if config.encoder_concat:
            edge_in.append(e0)
        e = _mlp(leaves, f"mp{l}_edge", T.concat(edge_in, axis=1), d)
        agg = T.segment_sum(e, gp.edge_tgt, gp.n_nodes)
        node_in = [v, agg]
        if config.encoder_concat:
            node_in.append(v0)
        v = _mlp(leaves, f"mp{l}_node", T.concat(node_in, axis=1), d)
    out = _mlp(leaves, "decoder_edge", e, d)
    return T.gather_rows(out, gp.pattern_edge_index)


def _constant_leaves(params: ModelParameters):
    return {k: T.Tensor(w) for k, w in params.weights.items()}


def forward(params: ModelParameters, gp: GraphProblem) -> np.ndarray:
    """Raw per-slot outputs (one scalar per pattern edge), untaped."""
    out = _forward_tensors(_constant_leaves(params), gp, params.config)
    return out.value[:, 0].copy()


def assemble_prolongation(
    raw: np.ndarray,
    pattern: SparsityPattern,
    splitting: Splitting,
    target_row_sums: np.ndarray,
) -> SparseMatrix:
    """P from raw pattern-slot values: C-rows are unit rows, each F-row is
    rescaled so its sum matches the classical baseline's row sum."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (len(pattern.cols),):
        raise ValueError("raw values must cover the pattern slots")
    values = np.empty(len(raw))
    n = pattern.n
    for i in range(n):
        lo, hi = pattern.indptr[i], pattern.indptr[i + 1]
        if splitting.is_coarse[i]:
            values[lo:hi] = 1.0
            continue
        s = raw[lo:hi].sum()
        if abs(s) < 1e-300:
            raise DegenerateRowError(f"raw weights of row {i} sum to zero")
        values[lo:hi] = raw[lo:hi] * (target_row_sums[i] / s)
    col_index = splitting.coarse_index[pattern.cols]
    return from_csr_arrays(n, splitting.n_coarse, pattern.indptr, col_index, values)


@dataclass(eq=False)
class TapedLoss:
    loss: T.Tensor
    tape: T.Tape | None
    leaves: dict
    params: ModelParameters
    aux: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.loss.value)

    def gradients(self) -> dict:
        if self.tape is None:
            raise ValueError("loss was evaluated untaped")
        self.tape.backward(self.loss)
        return {k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
                for k, leaf in self.leaves.items()}


def backward(taped: TapedLoss) -> dict:
    """Reverse pass: gradient of the loss for every model parameter."""
    return taped.gradients()


def _scaled_slot_values(raw, gp_or_rows, pattern, splitting, targets, clamp):
    """Taped row-sum scaling of raw slot values; C-slots get constant 1."""
    rows = gp_or_rows
    n = pattern.n
    is_f_slot = ~splitting.is_coarse[rows]
    f_slots = np.flatnonzero(is_f_slot)
    raw_f = T.gather_rows(raw, f_slots)
    totals = T.segment_sum(raw_f, rows[f_slots], n)
    # C-rows have no F-slots; give them a harmless unit total so the division
    # below stays finite (their scale is never consumed)
    totals = T.add(totals, T.Tensor(splitting.is_coarse[:, None].astype(np.float64)))
    if clamp:
        totals = T.clamp_away_from_zero(totals, ROW_SUM_CLAMP)
    else:
        bad = np.abs(totals.value[~splitting.is_coarse, 0]) < 1e-300
        if np.any(bad):
            raise DegenerateRowError("raw weights of an F-row sum to zero")
    scale = T.div(T.Tensor(targets[:, None]), totals)
    slot_scale = T.gather_rows(scale, rows[f_slots])
    return f_slots, T.mul(raw_f, slot_scale)


def loss_dense(
    params: ModelParameters,
    A: SparseMatrix,
    splitting: Splitting,
    pattern: SparsityPattern,
    s1: int = 1,
    s2: int = 1,
    taped: bool = True,
    target_row_sums: np.ndarray = None,
) -> TapedLoss:
    """Squared Frobenius norm of the two-level matrix M(A, P(A)), composed
    densely on the tape. A must make P^T A P invertible (SPD, or SPSD with
    a diagonal jitter)."""
    gp = encode_features(A, splitting, pattern, params.config)
    if target_row_sums is None:
        target_row_sums = row_sums(direct_interpolation(A, splitting, pattern))
    tape = T.Tape() if taped else None
    leaves = (
        {k: tape.leaf(w) for k, w in params.weights.items()}
        if taped
        else _constant_leaves(params)
    )
    raw = _forward_tensors(leaves, gp, params.config)
    f_slots, scaled = _scaled_slot_values(
        raw, gp.pattern_rows, pattern, splitting, target_row_sums, clamp=taped
    )
    n, nc = A.n_rows, splitting.n_coarse
    base = np.zeros((n, nc))
    c_slots = np.flatnonzero(splitting.is_coarse[gp.pattern_rows])
    base[gp.pattern_rows[c_slots], gp.pattern_col_index[c_slots]] = 1.0
    P = T.scatter2d(
        (n, nc),
        gp.pattern_rows[f_slots],
        gp.pattern_col_index[f_slots],
        T.reshape(scaled, (len(f_slots),)),
        base=base,
    )
    Ad = A.to_dense()
    S = build_relaxation_dense(A)
    Pt = T.transpose(P)
    AP = T.matmul(T.Tensor(Ad), P)
    coarse = T.matmul(Pt, AP)
    try:
        inv = T.inverse(coarse)
    except np.linalg.LinAlgError as err:
        raise LossError(f"singular coarse matrix: {err}") from err
    PtA = T.matmul(Pt, T.Tensor(Ad))
    M = T.sub(T.Tensor(np.eye(n)), T.matmul(P, T.matmul(inv, PtA)))
    for _ in range(s1):
        M = T.matmul(M, T.Tensor(S))
    for _ in range(s2):
        M = T.matmul(T.Tensor(S), M)
    loss = T.frobenius_sq(M)
    return TapedLoss(loss, tape, leaves, params, aux={"graph": gp})


@dataclass(frozen=True, eq=False)
class FourierCase:
    """Everything constant about one block-circulant training problem."""

    problem: BlockCirculantProblem
    splitting: Splitting
    pattern: SparsityPattern
    graph: GraphProblem
    tiled: TiledProlongation
    slot_edges: np.ndarray  # per tiled slot: index into graph pattern slots
    slot_offsets: np.ndarray  # (n_slots, 2)
    slot_rows: np.ndarray  # local row i per slot
    slot_cols: np.ndarray  # local coarse column per slot
    targets: np.ndarray  # per-local-row target row sums (chosen block)
    replica_edges: np.ndarray | None  # (n_replicas, n_slots) or None
    a_blocks: list
    s_blocks: list
    ks: np.ndarray
    kind: MatrixKind


def prepare_fourier_case(
    problem: BlockCirculantProblem,
    theta: float = 0.25,
    seed: int = 0,
    config: ModelConfig = ModelConfig(),
) -> FourierCase:
    """Classical splitting/pattern/baseline, tiling, symbols and slot maps for
    the Fourier loss head."""
    A, b, c = problem.A, problem.b, problem.c
    _, splitting, pattern = split_and_pattern(A, theta, seed)
    baseline = direct_interpolation(A, splitting, pattern)
    tiled = tile_prolongation(baseline, splitting, b, c)
    gp = encode_features(A, splitting, pattern, config)
    targets = row_sums(baseline)[tiled.block * c : (tiled.block + 1) * c]

    slot_lookup = {
        (int(r), int(g)): idx
        for idx, (r, g) in enumerate(zip(gp.pattern_rows, gp.pattern_cols))
    }
    coarse_pos = {int(p): k for k, p in enumerate(tiled.coarse_positions)}
    offsets, rows_l, cols_l, edge_idx = [], [], [], []
    for (s1_, s2_), mask in sorted(tiled.masks.items()):
        ii, jj = np.nonzero(mask)
        for i, j in zip(ii, jj):
            offsets.append((s1_, s2_))
            rows_l.append(int(i))
            cols_l.append(coarse_pos[int(j)])
            edge_idx.append(
                _slot_edge(slot_lookup, tiled.block, (s1_, s2_), int(i), int(j), b, c)
            )
    replica_edges = None
    if config.average_replicas:
        replica_blocks = _signature_replicas(problem, splitting, baseline, tiled)
        replica_edges = np.array(
            [
                [
                    _slot_edge(slot_lookup, blk, off, i, _col_of(tiled, k), b, c)
                    for off, i, k in zip(offsets, rows_l, cols_l)
                ]
                for blk in replica_blocks
            ],
            dtype=np.int64,
        )
    a_syms = block_diagonalize(problem)
    s_syms = relaxation_symbol(problem)
    return FourierCase(
        problem,
        splitting,
        pattern,
        gp,
        tiled,
        np.array(edge_idx, dtype=np.int64),
        np.array(offsets, dtype=np.int64),
        np.array(rows_l, dtype=np.int64),
        np.array(cols_l, dtype=np.int64),
        targets,
        replica_edges,
        [blk.to_complex() for blk in a_syms.blocks],
        [blk.to_complex() for blk in s_syms.blocks],
        a_syms.ks,
        problem.kind,
    )


def _col_of(tiled, k):
    return int(tiled.coarse_positions[k])


def _slot_edge(slot_lookup, blk, off, i, j, b, c):
    bx, by = divmod(blk, b)
    tblk = ((bx + off[0]) % b) * b + (by + off[1]) % b
    key = (blk * c + i, tblk * c + j)
    if key not in slot_lookup:
        raise LossError(f"pattern slot {key} missing from the graph")
    return slot_lookup[key]


def _signature_replicas(problem, splitting, baseline, tiled):
    """Blocks sharing the chosen block's full coupling signature."""
    sigs = block_signatures(baseline, splitting, problem.b, problem.c)
    want = sigs[tiled.block]
    return [blk for blk, sig in enumerate(sigs) if sig == want]


def loss_fourier(
    params: ModelParameters, case: FourierCase, s1: int = 1, s2: int = 1, taped: bool = True
) -> TapedLoss:
    """Per-mode squared Frobenius norms of M(theta) summed over non-singular
    modes, with the prolongation tiled from the chosen block's raw outputs."""
    tape = T.Tape() if taped else None
    leaves = (
        {k: tape.leaf(w) for k, w in params.weights.items()}
        if taped
        else _constant_leaves(params)
    )
    raw = _forward_tensors(leaves, case.graph, params.config)
    total = fourier_loss_from_raw(raw, case, s1, s2, clamp=taped)
    return TapedLoss(total, tape, leaves, params, aux={"case": case})


def fourier_loss_from_raw(raw, case: FourierCase, s1: int = 1, s2: int = 1, clamp: bool = True):
    """Mode-sum loss given the (n_pattern, 1) raw outputs as a tensor; the
    gather below touches only the chosen block's pattern edges (or its
    replicas when averaging is on), so no other input carries gradient."""
    taped = clamp
    if case.replica_edges is not None and len(case.replica_edges) > 1:
        parts = [T.gather_rows(raw, idx) for idx in case.replica_edges]
        acc = parts[0]
        for p in parts[1:]:
            acc = T.add(acc, p)
        slot_raw = T.mul(acc, np.array(1.0 / len(parts)))
    else:
        slot_raw = T.gather_rows(raw, case.slot_edges)

    c = case.problem.c
    ncc = case.tiled.n_coarse
    splitting_local = Splitting.from_mask(
        np.isin(np.arange(c), case.tiled.coarse_positions)
    )
    is_f_slot = ~splitting_local.is_coarse[case.slot_rows]
    f_slots = np.flatnonzero(is_f_slot)
    raw_f = T.gather_rows(slot_raw, f_slots)
    totals = T.segment_sum(raw_f, case.slot_rows[f_slots], c)
    totals = T.add(
        totals, T.Tensor(splitting_local.is_coarse[:, None].astype(np.float64))
    )
    if taped:
        totals = T.clamp_away_from_zero(totals, ROW_SUM_CLAMP)
    else:
        f_rows = np.flatnonzero(~splitting_local.is_coarse)
        if np.any(np.abs(totals.value[f_rows, 0]) < 1e-300):
            raise DegenerateRowError("raw weights of an F-row sum to zero")
    scale = T.div(T.Tensor(case.targets[:, None]), totals)
    scaled = T.mul(raw_f, T.gather_rows(scale, case.slot_rows[f_slots]))

    offsets = sorted({tuple(o) for o in case.slot_offsets})
    p_parts = {}
    cpos_index = {int(p): k for k, p in enumerate(case.tiled.coarse_positions)}
    for off in offsets:
        sel = np.flatnonzero(
            (case.slot_offsets[:, 0] == off[0]) & (case.slot_offsets[:, 1] == off[1])
        )
        sel_f = sel[is_f_slot[sel]]
        base = np.zeros((c, ncc))
        if off == (0, 0):
            for i in case.tiled.coarse_positions:
                base[i, cpos_index[int(i)]] = 1.0
        if len(sel_f):
            order = {int(s): k for k, s in enumerate(f_slots)}
            vals = T.gather_rows(scaled, np.array([order[int(s)] for s in sel_f]))
            p_parts[off] = T.scatter2d(
                (c, ncc),
                case.slot_rows[sel_f],
                case.slot_cols[sel_f],
                T.reshape(vals, (len(sel_f),)),
                base=base,
            )
        else:
            p_parts[off] = T.Tensor(base)

    total = None
    b = case.problem.b
    for m in range(len(case.ks)):
        k = tuple(case.ks[m])
        if case.kind is MatrixKind.SPSD_LAPLACIAN and k == (0, 0):
            continue
        theta = 2.0 * np.pi * np.asarray(k) / b
        p_re, p_im = None, None
        for off, part in p_parts.items():
            cosv = float(np.cos(theta[0] * off[0] + theta[1] * off[1]))
            sinv = float(np.sin(theta[0] * off[0] + theta[1] * off[1]))
            re = T.mul(part, np.array(cosv))
            im = T.mul(part, np.array(sinv))
            p_re = re if p_re is None else T.add(p_re, re)
            p_im = im if p_im is None else T.add(p_im, im)
        P = (p_re, p_im)
        Ak = (T.Tensor(case.a_blocks[m].real.copy()), T.Tensor(case.a_blocks[m].imag.copy()))
        Sk = (T.Tensor(case.s_blocks[m].real.copy()), T.Tensor(case.s_blocks[m].imag.copy()))
        Pc = T.cconj_transpose(P)
        AP = T.cmatmul(Ak, P)
        coarse = T.cmatmul(Pc, AP)
        try:
            inv = T.cinverse(coarse)
        except np.linalg.LinAlgError as err:
            raise LossError(f"singular coarse block at mode {k}", mode=k) from err
        PtA = T.cmatmul(Pc, Ak)
        proj = T.cmatmul(P, T.cmatmul(inv, PtA))
        eye = (T.Tensor(np.eye(c)), T.Tensor(np.zeros((c, c))))
        M = T.csub(eye, proj)
        for _ in range(s1):
            M = T.cmatmul(M, Sk)
        for _ in range(s2):
            M = T.cmatmul(Sk, M)
        term = T.cfrobenius_sq(M)
        total = term if total is None else T.add(total, term)
    if total is None:
        raise LossError("no modes contribute to the loss")
    return total


def gradient_check(params: ModelParameters, loss_fn, direction: np.ndarray, h: float = 1e-5):
    """Central finite difference along `direction` vs the tape gradient.

    `loss_fn(p, taped)` evaluates the loss for parameters p. Returns
    (analytic, numeric, rel_err); a zero direction returns (0, 0, 0).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        return 0.0, 0.0, 0.0
    taped = loss_fn(params, True)
    grads = taped.gradients()
    flat_grad = np.concatenate([grads[k].ravel() for k in params.weights])
    analytic = float(flat_grad @ direction)
    base = params.flat()
    lo = loss_fn(params.with_flat(base - h * direction), False).value
    hi = loss_fn(params.with_flat(base + h * direction), False).value
    numeric = (hi - lo) / (2.0 * h)
    rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300)
    return analytic, numeric, rel


def learned_prolongation(params: ModelParameters):
    """Prolongation provider closure for build_hierarchy."""

    def provider(A, splitting, pattern):
        gp = encode_features(A, splitting, pattern, params.config)
        raw = forward(params, gp)
        targets = row_sums(direct_interpolation(A, splitting, pattern))
        return assemble_prolongation(raw, pattern, splitting, targets)

    return provider


def learned_tiled_prolongation(raw: np.ndarray, case: FourierCase) -> TiledProlongation:
    """Square-form tiled prolongation with the network's weights, replicating
    the exact scaling used by the Fourier loss head (untaped)."""
    c = case.problem.c
    slot_raw = raw[case.slot_edges]
    is_c = np.isin(np.arange(c), case.tiled.coarse_positions)
    fmask = ~is_c[case.slot_rows]
    totals = np.zeros(c)
    np.add.at(totals, case.slot_rows[fmask], slot_raw[fmask])
    totals[is_c] += 1.0
    if np.any(np.abs(totals[~is_c]) < 1e-300):
        raise DegenerateRowError("raw weights of an F-row sum to zero")
    scale = case.targets / totals
    vals = np.where(fmask, slot_raw * scale[case.slot_rows], 1.0)
    couplings, masks = {}, {}
    for off in sorted({tuple(o) for o in case.slot_offsets}):
        sel = np.flatnonzero(
            (case.slot_offsets[:, 0] == off[0]) & (case.slot_offsets[:, 1] == off[1])
        )
        mat = np.zeros((c, c))
        msk = np.zeros((c, c), dtype=bool)
        j_local = case.tiled.coarse_positions[case.slot_cols[sel]]
        mat[case.slot_rows[sel], j_local] = vals[sel]
        msk[case.slot_rows[sel], j_local] = True
        couplings[off] = mat
        masks[off] = msk
    return TiledProlongation(
        case.problem.b,
        c,
        couplings,
        masks,
        case.tiled.coarse_positions,
        case.tiled.block,
        case.tiled.modal_fraction,
    )


def save_graph_problem(path, gp: GraphProblem):
    np.savez(
        path,
        n_nodes=gp.n_nodes,
        edge_src=gp.edge_src,
        edge_tgt=gp.edge_tgt,
        node_features=gp.node_features,
        edge_features=gp.edge_features,
        pattern_mask=gp.pattern_mask,
        pattern_edge_index=gp.pattern_edge_index,
        pattern_rows=gp.pattern_rows,
        pattern_cols=gp.pattern_cols,
        pattern_col_index=gp.pattern_col_index,
    )


def load_graph_problem(path) -> GraphProblem:
    with np.load(path) as data:
        return GraphProblem(
            int(data["n_nodes"]),
            data["edge_src"],
            data["edge_tgt"],
            data["node_features"],
            data["edge_features"],
            data["pattern_mask"],
            data["pattern_edge_index"],
            data["pattern_rows"],
            data["pattern_cols"],
            data["pattern_col_index"],
        )
