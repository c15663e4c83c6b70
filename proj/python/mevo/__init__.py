"""Motion transfer with ODE-refined dense motion fields.

Thin Python surface over the C++ core: differentiable warping primitives,
the evaluation metric battery, the synthetic sprite dataset generator, and
checkpoint-backed inference.
"""

from ._core import (
    Model,
    csim,
    downsample_pyramid,
    fid_from_embeddings,
    gaussian_heatmap,
    generate_sprite_clip,
    identity_grid,
    l1,
    make_dataset,
    ms_ssim,
    psnr,
    soft_argmax,
    ssim,
    train,
    warp,
)

__all__ = [
    "Model",
    "csim",
    "downsample_pyramid",
    "fid_from_embeddings",
    "gaussian_heatmap",
    "generate_sprite_clip",
    "identity_grid",
    "l1",
    "make_dataset",
    "ms_ssim",
    "psnr",
    "soft_argmax",
    "ssim",
    "train",
    "warp",
]
