"""Reconstruction quality metrics for signals in ``[0, 1]``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError

PSNR_CAP = 99.0


def mse(x, ref) -> float:
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError(f"mse: shapes {x.shape} and {ref.shape} differ")
    return float(np.mean((x - ref) ** 2))


def psnr(x, ref, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / mse)``; identical inputs give ``PSNR_CAP``."""
    if peak <= 0:
        raise ContractError("peak must be positive")
    err = mse(x, ref)
    if err == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / err))


def ssim(x, ref, window: int = 7, peak: float = 1.0) -> float:
    """Single-scale SSIM averaged over all valid ``window x window`` patches.

    Local statistics are unweighted population moments; ``C1 = (0.01 peak)^2``
    and ``C2 = (0.03 peak)^2``.  1-D signals use windows of ``window`` samples.
    """
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError(f"ssim: shapes {x.shape} and {ref.shape} differ")
    if x.ndim not in (1, 2):
        raise DimensionError("ssim needs 1-D signals or 2-D images")
    if min(x.shape) < window:
        raise ContractError(f"signal {x.shape} is smaller than the window ({window})")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    win = (window,) * x.ndim
    axes = tuple(range(-x.ndim, 0))
    px = sliding_window_view(x, win)
    pr = sliding_window_view(ref, win)
    mx, mr = px.mean(axis=axes), pr.mean(axis=axes)
    vx = (px * px).mean(axis=axes) - mx * mx
    vr = (pr * pr).mean(axis=axes) - mr * mr
    cov = (px * pr).mean(axis=axes) - mx * mr
    num = (2 * mx * mr + c1) * (2 * cov + c2)
    den = (mx * mx + mr * mr + c1) * (vx + vr + c2)
    return float(np.mean(num / den))
