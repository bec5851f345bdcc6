"""Evaluation harness: convergence factors of baseline and learned solvers on
shared splittings/patterns, success rates, CSV reports and SVG charts."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .classical import direct_interpolation
from .cycle import CycleConfig, asymptotic_convergence_factor, build_hierarchy
from .errors import AmgError
from .model import ModelParameters, learned_prolongation
from .problems import WeightDistribution, generate_delaunay_laplacian, generate_fem_diffusion
from .sparse import MatrixKind

__all__ = [
    "EvalCell",
    "ProblemRecord",
    "EvalReport",
    "baseline_prolongation",
    "evaluate_suite",
    "write_report_csv",
    "render_factor_chart_svg",
]

log = logging.getLogger(__name__)


def baseline_prolongation(A, splitting, pattern):
    return direct_interpolation(A, splitting, pattern)


@dataclass(frozen=True)
class EvalCell:
    topology: str  # "delaunay" or "fem"
    size: int
    cycle: str  # "V" or "W"
    count: int = 100
    distribution: WeightDistribution = field(
        default_factory=WeightDistribution.standard_lognormal
    )


@dataclass(frozen=True)
class ProblemRecord:
    topology: str
    size: int
    cycle: str
    seed: int
    baseline_factor: float
    learned_factor: float


@dataclass(eq=False)
class EvalReport:
    records: list
    failures: int = 0

    @property
    def success_rate(self) -> float:
        """Fraction of records where the learned factor is strictly lower."""
        if not self.records:
            return 0.0
        wins = sum(1 for r in self.records if r.learned_factor < r.baseline_factor)
        return wins / len(self.records)

    @property
    def mean_baseline(self) -> float:
        return float(np.mean([r.baseline_factor for r in self.records]))

    @property
    def mean_learned(self) -> float:
        return float(np.mean([r.learned_factor for r in self.records]))

    def cell_records(self, topology, size, cycle):
        return [
            r
            for r in self.records
            if r.topology == topology and r.size == size and r.cycle == cycle
        ]


def _generate(cell: EvalCell, seed: int):
    if cell.topology == "delaunay":
        A, _ = generate_delaunay_laplacian(cell.size, cell.distribution, seed)
        return A, MatrixKind.SPSD_LAPLACIAN
    if cell.topology == "fem":
        mesh = generate_fem_diffusion(cell.size, None, seed)
        return mesh.A, MatrixKind.SPD
    raise ValueError(f"unknown topology {cell.topology!r}")


def evaluate_suite(
    params: ModelParameters,
    cells,
    config: CycleConfig = CycleConfig(),
    seed: int = 0,
    n_cycles: int = 80,
    learned_provider=None,
) -> EvalReport:
    """Measure asymptotic factors of the classical baseline and the learned
    solver for each cell; both solvers share the per-level splitting, pattern
    and row-sum targets by construction. Failing problems are logged,
    excluded and counted. `learned_provider` overrides the model-backed
    provider (diagnostics)."""
    learned = learned_provider if learned_provider is not None else learned_prolongation(params)
    records = []
    failures = 0
    for cell in cells:
        cycle_cfg = CycleConfig(
            s1=config.s1,
            s2=config.s2,
            cycle=cell.cycle,
            max_levels=config.max_levels,
            max_coarse_size=config.max_coarse_size,
            theta=config.theta,
            seed=config.seed,
        )
        for run in range(cell.count):
            topo_tag = zlib.crc32(cell.topology.encode())
            pseed = int(
                np.random.SeedSequence([seed, topo_tag, cell.size, run]).generate_state(1)[0]
            )
            try:
                A, kind = _generate(cell, pseed)
                h_base = build_hierarchy(A, cycle_cfg, baseline_prolongation, kind)
                h_learn = build_hierarchy(A, cycle_cfg, learned, kind)
                f_base = asymptotic_convergence_factor(h_base, cycle_cfg, seed=pseed, n_cycles=n_cycles)
                f_learn = asymptotic_convergence_factor(h_learn, cycle_cfg, seed=pseed, n_cycles=n_cycles)
            except (AmgError, np.linalg.LinAlgError) as err:
                failures += 1
                log.warning("evaluation failure (%s n=%d run=%d): %s", cell.topology, cell.size, run, err)
                continue
            records.append(
                ProblemRecord(cell.topology, cell.size, cell.cycle, pseed, f_base, f_learn)
            )
    return EvalReport(records, failures)


def write_report_csv(report: EvalReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["topology", "size", "cycle", "seed", "baseline_factor", "learned_factor"]
        )
        for r in report.records:
            writer.writerow(
                [r.topology, r.size, r.cycle, r.seed, f"{r.baseline_factor:.17g}", f"{r.learned_factor:.17g}"]
            )


def render_factor_chart_svg(report: EvalReport, path, width=640, height=400):
    """Minimal hand-emitted SVG: mean factor vs problem size, one polyline per
    (cycle, solver) series."""
    sizes = sorted({r.size for r in report.records})
    cycles = sorted({r.cycle for r in report.records})
    series = []
    for cyc in cycles:
        for name, attr in (("baseline", "baseline_factor"), ("learned", "learned_factor")):
            pts = []
            for s in sizes:
                recs = [r for r in report.records if r.size == s and r.cycle == cyc]
                if recs:
                    pts.append((s, float(np.mean([getattr(r, attr) for r in recs]))))
            if pts:
                series.append((f"{name}-{cyc}", pts))
    margin = 50
    fmax = max((f for _, pts in series for _, f in pts), default=1.0)
    fmax = max(fmax, 1e-6) * 1.1
    xs = {s: margin + i * (width - 2 * margin) / max(len(sizes) - 1, 1) for i, s in enumerate(sizes)}

    def ypix(f):
        return height - margin - f / fmax * (height - 2 * margin)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 10}" text-anchor="middle" font-size="12">problem size</text>',
        f'<text x="14" y="{height // 2}" font-size="12" transform="rotate(-90 14 {height // 2})" text-anchor="middle">asymptotic factor</text>',
    ]
    for s in sizes:
        parts.append(
            f'<text x="{xs[s]:.1f}" y="{height - margin + 16}" text-anchor="middle" font-size="10">{s}</text>'
        )
    for tick in np.linspace(0.0, fmax, 5):
        parts.append(
            f'<text x="{margin - 6}" y="{ypix(tick):.1f}" text-anchor="end" font-size="10">{tick:.2f}</text>'
        )
    for idx, (label, pts) in enumerate(series):
        color = colors[idx % len(colors)]
        path_pts = " ".join(f"{xs[s]:.1f},{ypix(f):.1f}" for s, f in pts)
        parts.append(
            f'<polyline points="{path_pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * idx + 10}" font-size="10" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
