"""Exception types raised across the solver stack."""


class AmgError(Exception):
    """Base class for all amglearn errors."""


class ConstructionError(AmgError):
    """Invalid data passed to a matrix constructor (e.g. index out of range)."""


class SingularRelaxationError(AmgError):
    """Gauss-Seidel requested on a matrix with a zero diagonal entry."""


class PatternError(AmgError):
    """An F-node has no strong C-neighbor to interpolate from.

    Carries the offending node ids so callers may promote them to C.
    """

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class DegenerateRowError(AmgError):
    """A prolongation row cannot be formed (zero weight sum)."""


class HierarchyError(AmgError):
    """Coarsening produced an unusable level (e.g. rank-deficient P)."""


class DivergenceError(AmgError):
    """Residual grew beyond the divergence guard during solve."""


class SingularCoarseError(AmgError):
    """A coarse-level matrix P^T A P is singular where it must not be."""


class StructureError(AmgError):
    """An operator violates the expected block-circulant structure."""


class TilingError(AmgError):
    """No usable block found when tiling a prolongation operator."""


class SymbolError(AmgError):
    """A per-mode relaxation symbol could not be formed."""


class LossError(AmgError):
    """Loss evaluation failed (e.g. singular coarse block at a nonzero mode)."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class CheckpointError(AmgError):
    """Model checkpoint is corrupt or does not match the architecture."""
