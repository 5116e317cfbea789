"""Design-weighted survey regression with external-information calibration.

The package estimates regression coefficients from a probability sample
while borrowing strength from external sources that publish only
summary statistics for a working reduced model.  External information
enters through calibration weighting: sample weights are adjusted, by
information projection, so the reduced-model score at a benchmark
coefficient has zero weighted total; the full model is then fitted with
the calibrated weights.  Design-based sandwich variances, GLS pooling of
internal and external summaries, propensity debiasing for opt-in big
data, a constrained-likelihood baseline, and a Monte Carlo harness round
out the toolkit.
"""

from .benchmark import (
    PooledBenchmark,
    estimate_alpha_internal,
    gls_pool,
    score_total_covariance,
    variance_linearized,
)
from .calibration import (
    CalibrationProblem,
    CalibrationResult,
    calibrated_estimate,
    multi_source_calibrate,
    solve_dual_lambda,
)
from .cml import CmlFit, CmlState, ReducedParams, cml_fit, cml_score
from .errors import (
    AsymmetricCovariance,
    DegenerateTargets,
    DimensionMismatch,
    InfeasibleConstraints,
    MalformedHeader,
    NoConvergence,
    NonFiniteInput,
    NonNumericCell,
    RankDeficientConstraints,
    SchemaError,
    SingularBlock,
    SingularCovariance,
    SingularJacobian,
    SvycalError,
    WeightNonPositive,
)
from .estimating import (
    eval_score,
    eval_score_jacobian,
    ht_total,
    normalized_weights,
    solve_weighted_z,
)
from .inference import (
    EstimateReport,
    VarianceDecomposition,
    VarianceMode,
    assemble_decomposition,
    sandwich_estimated_alpha,
    sandwich_known_alpha,
    uncalibrated_sandwich,
    wald_report,
)
from .propensity import (
    DensityRatioModel,
    RatioFeatures,
    debiased_alpha2,
    propensity_inverse,
    solve_density_ratio,
)
from .samples import (
    DesignKind,
    EstimatingSpec,
    Family,
    SampleDesign,
    SummaryStatistic,
    SurveySample,
    UnitRecord,
    Which,
)
from .simulate import (
    CovariateMode,
    Estimator,
    MetricsTable,
    Scenario,
    VarianceKind,
    draw_poisson,
    draw_srs,
    gen_population,
    run_monte_carlo,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
