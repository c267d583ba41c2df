"""Incremental spline quantile functions: monotone distribution-free
conditional quantile curves with closed-form CRPS training."""

from .curves import (
    HALF_EPS,
    ExponentialTail,
    GpdTail,
    IsqfCurve,
    QuantileKnots,
    SplineSegment,
    TailRegionError,
    eval_cdf,
    eval_exponential_tail,
    eval_gpd_tail,
    eval_quantile,
    eval_spline,
    fit_iqf_exponential_tails,
    interpolate_linear,
    iqf_curve,
    sample,
    sqf_from_isqf,
)
from .crps import (
    CrpsBreakdown,
    OracleError,
    crps,
    crps_gpd_tail,
    crps_left_tail_exp,
    crps_quadrature_oracle,
    crps_right_tail_exp,
    crps_spline_segment,
    l1_curve_distance,
)
from .head import (
    DivergenceError,
    GradientCheckReport,
    HeadConfig,
    SgdConfig,
    crps_loss_and_grads,
    decode,
    decode_batch,
    eval_decoded_quantiles,
    fit,
    gradient_check,
    init_head_params,
    load_params,
    save_params,
)
from .forecaster import (
    ForecastConfig,
    ForecastModel,
    SeriesPanel,
    TrainingSplit,
    load_model,
    make_training_split,
    new_model,
    predict_quantiles,
    sample_paths,
    save_model,
    seasonal_naive,
    train,
)
from .metrics import (
    EvalReport,
    UndefinedMetricError,
    build_report,
    crossing_percent,
    mean_wql,
    msis,
    seasonal_error,
    wql,
)
from .synth import (
    PanelFormatError,
    SynthSpec,
    default_mixture_spec,
    generate,
    load_panel,
    save_panel,
    true_cdf,
    true_pdf,
    true_quantile,
)
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
