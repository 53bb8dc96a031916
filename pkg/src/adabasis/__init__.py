"""Adaptive-basis toolkit for dense networks.

Treats a network's hidden layers as a trainable basis and its trailing
linear layer as coefficients: a global least-squares solve fixes the
coefficients while gradient steps move only the basis (``train_lsgd``).
Includes box initialization schemes that keep every ReLU unit alive at any
depth, regression / multi-target / transport-collocation benchmarks, and
diagnostics for basis collapse.
"""

from .backends import BACKEND_NAME, available_backends
from .diagnostics import (
    COLLAPSE_THRESHOLD,
    EigProfile,
    ImageTrace,
    collapse_score,
    eig_ratio_profile,
    export_basis,
    export_cutplanes,
    propagate_box,
    unit_ranges,
)
from .initializers import (
    INIT_SCHEMES,
    CutPlane,
    box_init_plain,
    box_init_resnet,
    glorot_uniform,
    he_uniform,
    init_network,
    max_corner,
)
from .linalg import (
    covariance,
    lstsq_minnorm,
    make_rng,
    rng_normal,
    rng_uniform,
    split_rng,
    sym_eig_desc,
)
from .network import (
    ArchitectureSpec,
    BasisEval,
    HiddenGrads,
    NetworkParams,
    forward_basis,
    forward_output,
    input_jacobian_basis,
    load_params,
    param_vjp,
    save_params,
)
from .optimize import (
    DIVERGE_LIMIT,
    AdamState,
    LsSystem,
    TrainRecord,
    adam_step,
    assemble_ls,
    ls_update,
    quadratic_toy,
    timing_compare,
    toy_loss,
    train_gd,
    train_lsgd,
)
from .problems import (
    TARGETS,
    PointEval,
    ProblemSpec,
    ProblemTerm,
    TransportConfig,
    TransportResidual,
    analytic_transport,
    exact_tent_network,
    legendre_family,
    legendre_normalized,
    make_pinn,
    make_regression,
    minmax_metric,
    rms_error,
    target_u1,
    target_u2,
    tent,
)

__version__ = "0.1.0"
