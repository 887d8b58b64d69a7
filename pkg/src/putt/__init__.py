"""Quantized tensor trains fitted coarse-to-fine with a prolongation MPO."""

from .baselines import CpModel, TuckerModel, cp_eval, model_grad_mse, train_baseline, tucker_eval
from .data import (
    Grid,
    GridFormatError,
    NoiseSpec,
    add_noise,
    build_pyramid,
    bundled_image_path,
    downsample_avg,
    load_grid,
    masked_avg_pool,
    random_mask,
    save_grid,
)
from .metrics import MetricReport, compression_ratio, mse, psnr, ssim
from .optim import (
    AdamState,
    LrSchedule,
    TrainConfig,
    adam_step,
    adapt_base_lr,
    grad_mse,
    grow_rank,
    lr_at,
    train_level,
    train_putt,
)
from .prolong import apply_mpo, prolong, prolong_dense, prolongation_mpo_1d, prolongation_mpo_nd
from .tt import (
    Mpo,
    QttLayout,
    ResourceLimitError,
    TensorTrain,
    coords_to_qtt,
    eval_batch,
    init_sigma,
    load_qtt,
    param_count,
    qtt_to_coords,
    quantize_grid,
    random_tt,
    save_qtt,
    to_dense,
    trapezoid_ranks,
    truncate,
    tt_svd,
    unquantize,
)

__version__ = "0.1.0"
