"""Film stylization engine: Laplacian pyramid, small conv nets, and trainable 3D LUTs."""

from .errors import (
    ChannelError,
    CubeFormatError,
    DimensionError,
    FilmgradeError,
    FitDivergedError,
    PngFormatError,
    WeightFormatError,
)
from .image_core import (
    AlphaStrippedWarning,
    ImagePlane,
    LabColor,
    lab_to_srgb,
    load_png,
    resize_bilinear,
    save_png,
    srgb_to_lab,
)
from .pyramid import PyramidDecomposition, decompose, pyr_down, pyr_up, reconstruct
from .weights import WeightContainer, load_weights, save_weights
from .blocks import (
    ConvParams,
    apply_mask,
    conv2d,
    layer_norm,
    mask_net_forward,
    msrm_forward,
    nsr_forward,
    sca,
    simple_gate,
)
from .lut import (
    AdjusterWeights,
    Lut3D,
    adjuster_forward,
    apply_lut,
    combine_luts,
    identity_lut,
    read_cube,
    ttr_apply,
    write_cube,
)
from .fit import (
    FitConfig,
    GradCheckReport,
    LossReport,
    TraceRow,
    combine_weights_gradient,
    fit_lut,
    grad_check,
    lut_gradient,
    mse_loss,
    ssim,
    total_loss,
    write_trace_csv,
)
from .metrics import MetricReport, compute_metrics, delta_e, psnr, ssim_windowed
from .pipeline import FilmPipelineConfig, identity_weights, init_weights, stylize

__version__ = "0.1.0"
