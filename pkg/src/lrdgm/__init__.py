"""Time-varying sparse precision matrices with low-rank-plus-diagonal structure.

Each time window t carries a precision matrix Theta_t = Y_t Y_t^T + diag(D_t)
fitted to that window's samples under an elliptical likelihood, with a smooth
sparsity penalty on the entries of Theta_t and a geodesic coupling that keeps
consecutive precisions close on the SPD cone.  The optimizer is a Riemannian
conjugate gradient method on the quotient geometry of the factors (Y, D).
"""

__version__ = "0.1.0"

from .manifold import (
    RANK_RTOL,
    SYM_RTOL,
    FactorPoint,
    HorizontalTangent,
    RankDeficientError,
    StructuredGradient,
    TangentVector,
    egrad_to_rgrad,
    is_horizontal,
    metric_inner,
    metric_norm,
    project_horizontal,
    retract,
    solve_sylvester,
    transport,
)
from .spd import (
    NotPositiveDefiniteError,
    SpdMatrix,
    factor_inverse_dense,
    factor_logdet,
    geodesic_distance,
    geodesic_distance_factored,
    geodesic_grad_first,
    geodesic_grad_second,
    inv_sqrt,
    materialize,
    matrix_log_spd,
    quadratic_form,
    sqrt_and_inv_sqrt,
    woodbury_inverse_apply,
)
from .model import (
    EllipticalFamily,
    ModelConfig,
    PrecisionSequence,
    WindowedDataset,
    nll,
    nll_egrad,
    nll_egrad_structured,
    objective_rgrad,
    objective_value,
    objective_value_and_rgrad,
    penalty,
    penalty_egrad,
    rho,
    u_influence,
)
from .solver import (
    LineSearchError,
    SolverConfig,
    SolverTrace,
    fit,
    init_sequence,
    wolfe_line_search,
)
from .graph import (
    DEFAULT_EDGE_THRESHOLD,
    conditional_correlation,
    threshold_edges,
)
from .graphgen import (
    BarabasiAlbert,
    ErdosRenyi,
    GaussianRGG,
    GroundTruth,
    WattsStrogatz,
    gen_graph,
    gen_lrad_truth,
    graph_truth_sequence,
    laplacian_precision,
    lrad_truth_sequence,
    perturb_graph,
    perturb_lrad,
    sample_dataset,
    sample_gaussian,
    sample_student_t,
)
from .metrics import (
    EvalReport,
    evaluate_sequence,
    f1_at_threshold,
    mean_geodesic_error,
    pair_scores,
    roc_auc,
    temporal_variation,
)
