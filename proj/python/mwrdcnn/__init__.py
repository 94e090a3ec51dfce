"""Multi-wavelet residual dense CNN for grayscale image denoising."""

from mwrdcnn._core import (
    Model,
    add_gaussian_noise,
    conv2d,
    dwt,
    expected_noisy_psnr,
    idwt,
    load_image,
    mse,
    psnr,
    relu,
    save_image,
    ssim,
)

__all__ = [
    "Model",
    "add_gaussian_noise",
    "conv2d",
    "dwt",
    "expected_noisy_psnr",
    "idwt",
    "load_image",
    "mse",
    "psnr",
    "relu",
    "save_image",
    "ssim",
]
