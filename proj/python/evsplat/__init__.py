"""Event-assisted Gaussian splatting of moving humans."""

from ._core import (
    Camera,
    DataError,
    accumulate,
    default_config,
    delta_log_luma,
    evaluate,
    event_loss,
    make_synthetic,
    psnr,
    read_events,
    read_image,
    render,
    simulate_events,
    ssim,
    synthesize_blur,
    train,
    write_events,
)

__all__ = [
    "Camera",
    "DataError",
    "accumulate",
    "default_config",
    "delta_log_luma",
    "evaluate",
    "event_loss",
    "make_synthetic",
    "psnr",
    "read_events",
    "read_image",
    "render",
    "simulate_events",
    "ssim",
    "synthesize_blur",
    "train",
    "write_events",
]
