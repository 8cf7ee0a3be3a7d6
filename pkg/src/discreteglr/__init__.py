"""Generalized likelihood ratio tests for discrete and categorical predictors
in additive models with nonparametric covariates.

Typical use::

    from discreteglr import Dataset, HypothesisSpec, run_test
    result = run_test(dataset, None, HypothesisSpec.zero(["x1"]))
    result.lambda_n, result.p_value
"""

from .backfitting import (
    AdditiveFit,
    Component,
    Constraint,
    HypothesisSpec,
    ModelSpec,
    backfit,
    hypothesis_models,
    parametric_design,
    partial_effect_table,
    rss_under_hypothesis,
)
from .chisq_mix import (
    AccuracyWarning,
    ChiSquareMixture,
    chi2_cdf,
    chi2_sf,
    mixture_cdf,
    mixture_quantile,
    mixture_sf,
    noncentral_chi2_cdf,
    noncentral_chi2_sf,
)
from .data_model import Dataset, LevelStats, VariableSpec, encode_levels, load_schema, read_dataset
from .exceptions import (
    BandwidthError,
    CodingError,
    ConvergenceWarning,
    DegenerateLevelError,
    GLRError,
    InputError,
    NumericalError,
    PerfectFitError,
    SchemaError,
    SingularDesignError,
)
from .glr import (
    Alternative,
    GlrResult,
    build_sigma1,
    build_sigma2,
    glr_statistic,
    noncentrality,
    null_eigenvalues,
    p_value,
    run_test,
    theoretical_power,
)
from .smoothers import BinSmoother, LocalPolySmoother, default_bandwidth

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
