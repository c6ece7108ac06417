"""Post-selection least squares and linear-hypothesis tests for sparse regression."""

from .datagen import (
    CoefficientSpec,
    CoefficientVector,
    Dataset,
    DesignSpec,
    RegimeReport,
    check_regime,
    make_coefficients,
    rn_proxy,
    sample_dataset,
)
from .errors import DegenerateNullWarning, HdpsError, InvalidSpecError, RegimeError, SingularDesignError
from .harness import (
    ExperimentConfig,
    ReplicationRecord,
    empirical_size,
    ks_distance,
    run_experiment,
    run_replications,
    selection_frequency,
    write_report,
)
from .lasso import SparseEstimate, default_lambda, fit_lasso, fit_lasso_path, soft_threshold
from .lintest import (
    Hypothesis,
    NullSpectrum,
    TestResult,
    decide,
    linear_test,
    mc_quantile,
    nonzero_eigenvalues,
    plugin_sigma_A,
    satterthwaite_quantile,
    test_statistic,
)
from .postsel import (
    PostFit,
    SupportSet,
    default_tau,
    fit_post_ols,
    gram_full_submatrix,
    rescaled_error,
    select_support,
)

__version__ = "0.1.0"
