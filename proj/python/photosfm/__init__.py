"""Self-supervised structure from motion on synthetic scenes.

Dense depth, camera motion and pinhole intrinsics are recovered jointly by
minimizing a photometric reconstruction objective with reverse-mode
differentiation; this package wraps the C++ core.
"""

from ._core import (
    conv2d,
    depth_metrics,
    disparity_to_depth,
    generate_sequence,
    grad_check_probe,
    icnr_kernel,
    kaiming_uniform_kernel,
    nearest_upsample,
    optimize,
    photometric_error,
    pixel_shuffle,
    pixel_unshuffle,
    read_pfm,
    read_ppm,
    resize_bilinear,
    run_cli,
    snippet_ate,
    so3_exp,
    ssim,
    write_pfm,
    write_ppm,
)

__all__ = [
    "conv2d",
    "depth_metrics",
    "disparity_to_depth",
    "generate_sequence",
    "grad_check_probe",
    "icnr_kernel",
    "kaiming_uniform_kernel",
    "nearest_upsample",
    "optimize",
    "photometric_error",
    "pixel_shuffle",
    "pixel_unshuffle",
    "read_pfm",
    "read_ppm",
    "resize_bilinear",
    "run_cli",
    "snippet_ate",
    "so3_exp",
    "ssim",
    "write_pfm",
    "write_ppm",
]
