"""Super-resolution on top of a reconstruction model: refined
high-resolution targets, pad/crop geometry, corruption schedule, and the
two-phase training loop."""
from .core import (HrSet, Placement, SrConfig, SrResult, SrTarget,
                   guided_denoise_direction, pad_or_crop_pair, sr_train,
                   tmax_schedule, write_sr_metrics_csv)
from .perceptual import (perceptual_backends, perceptual_loss,
                         perceptual_loss_with_grad, register_perceptual)
from .refiner import (DiffusionRefiner, IdentityRefiner, OracleRefiner,
                      Refiner, RefinerError)

__all__ = [
    "HrSet", "Placement", "SrConfig", "SrResult", "SrTarget",
    "guided_denoise_direction", "pad_or_crop_pair", "sr_train",
    "tmax_schedule", "write_sr_metrics_csv", "perceptual_backends",
    "perceptual_loss", "perceptual_loss_with_grad", "register_perceptual",
    "DiffusionRefiner", "IdentityRefiner", "OracleRefiner", "Refiner",
    "RefinerError",
]
