"""Training and certification of orthonormality-constrained deep linear networks.

The library couples a dense linear-algebra core with Stiefel-manifold
geometry, a dual-rate constrained optimizer, a rotation-invariant distance
between factor stacks, and an experiment harness that certifies the
optimizer's contraction behavior on seeded synthetic instances.
"""

from .linalg import (
    NumericalError,
    RankDeficiencyError,
    ShapeError,
    SvdResult,
    condition_number,
    matmul,
    random_orthonormal,
    sigma_min,
    spectral_norm,
    svd,
    whitened_input,
    zca_whiten,
)
from .losses import LossModel, loss_grad, loss_value, probe_rcg, scaled_mse, softmax_ce
from .metrics import (
    AlignmentResult,
    DistanceBoundsReport,
    RegularityReport,
    align_and_distance,
    basin_radius,
    check_distance_bounds,
    check_regularity,
)
from .network import (
    Network,
    NetworkShape,
    TeacherInstance,
    forward,
    init_student,
    layer_gradients,
    load_network,
    make_teacher,
    save_network,
)
from .optim import (
    OptimizerConfig,
    RunTrace,
    TrainingData,
    contraction_factor,
    gd_step,
    rgd_step,
    run,
)
from .stiefel import (
    RetractionSingularityError,
    StiefelPoint,
    TangentVector,
    perturb_on_manifold,
    polar_retract,
    project_normal,
    project_tangent,
)

__version__ = "0.1.0"
