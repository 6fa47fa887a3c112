"""Point and interval estimation for Krippendorff's alpha."""

__version__ = "0.1.0"

from .anova import AnovaSummary, classical_sums, n_star, nonparametric_sums, summarize, unit_sums
from .data import (
    INTERVAL,
    NOMINAL,
    RATIO,
    DataMatrix,
    DistanceFunction,
    DistanceTable,
    build_distance_table,
    custom_distance,
    distance,
    drop_units,
    get_distance,
    load_csv,
    prune_units,
)
from .errors import AlphaError, DataFormatError, DegenerateDataError, PreconditionError
from .estimators import (
    AlphaEstimate,
    alpha_analytical,
    alpha_bc1,
    alpha_bc2,
    alpha_customary,
    alpha_mle,
    alpha_variant,
    gamma_unbiased,
    var_gamma,
)
from .intervals import (
    ConfidenceInterval,
    JackknifeState,
    bootstrap_customary,
    bootstrap_improved,
    hinkley_df,
    jackknife_interval,
)
