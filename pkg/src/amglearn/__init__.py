"""Algebraic multigrid with graph-network-learned prolongation operators.

The package splits into a classical AMG stack (sparse kernels, Ruge-Stuben
coarsening, V/W cycles), problem generators, Fourier analysis of
block-periodic operators, and a message-passing model trained to emit
prolongation weights that shrink the two-level error propagation norm.
"""

from .sparse import (
    ComplexDense,
    MatrixKind,
    SparseMatrix,
    build_relaxation_dense,
    check_kind,
    from_coordinates,
    gauss_seidel_sweep,
    split_lower,
    spmv,
    triple_product,
)
from .classical import (
    SparsityPattern,
    Splitting,
    StrengthGraph,
    build_pattern,
    direct_interpolation,
    row_sums,
    ruge_stuben_split,
    split_and_pattern,
    strength_of_connection,
)
from .cycle import (
    CycleConfig,
    Hierarchy,
    asymptotic_convergence_factor,
    build_hierarchy,
    coarse_correction_matrix,
    cycle,
    error_propagation_matrix,
    preconditioner_apply,
    solve,
    spectral_radius,
)
from .problems import (
    BlockCirculantProblem,
    MeshProblem,
    WeightDistribution,
    generate_delaunay_laplacian,
    generate_fem_diffusion,
    generate_knn_affinity_laplacian,
    generate_periodic_delaunay,
    sample_point_cloud,
    validate_block_circulant,
)
from .fourier import (
    FourierSymbolSet,
    TiledProlongation,
    block_diagonalize,
    fourier_loss,
    relaxation_symbol,
    tile_prolongation,
)
from .model import (
    GraphProblem,
    ModelConfig,
    ModelParameters,
    assemble_prolongation,
    encode_features,
    forward,
    gradient_check,
    init_parameters,
    learned_prolongation,
    loss_dense,
    loss_fourier,
    prepare_fourier_case,
)
from .checkpoint import load_model, serialize_model
from .training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    build_coarsened_set,
    init_optimizer,
    run_training,
    train_stage,
)
from .evaluation import EvalCell, EvalReport, evaluate_suite

__version__ = "0.1.0"
