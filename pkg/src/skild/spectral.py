"""DCT-II / DCT-III transforms, the frequency grid and radial binning.

Conventions
-----------
Forward (type II) with amplitude ``4/(HW)``::

    X[u, v] = 4/(HW) * sum_ij x[i, j] cos(pi/H (i + 1/2) u) cos(pi/W (j + 1/2) v)

Inverse (type III) with ``gamma_0 = 1/2`` and ``gamma_{k>0} = 1``::

    x[i, j] = sum_uv g_u g_v X[u, v] cos(pi/H (i + 1/2) u) cos(pi/W (j + 1/2) v)

Arrays are ``(..., H, W)``: the last two axes are transformed and any leading
axes (channels, batch) are handled independently.

The frequency vector of mode ``(u, v)`` is ``k = (pi u, pi v)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from skild.errors import ValidationError

__all__ = ["FrequencyGrid", "dct2", "idct2", "frequency_grid", "radial_average"]


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim < 2:
        raise ValidationError(f"{what} must have at least 2 dimensions (H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise ValidationError(f"{what} has a non-finite value at index {bad}")
    return arr


def dct2(field: np.ndarray) -> np.ndarray:
    """Type-II DCT over the last two axes with the ``4/(HW)`` amplitude."""
    x = _check_finite(field, "pixel field")
    h, w = x.shape[-2:]
    return scipy.fft.dctn(x, type=2, axes=(-2, -1)) / (h * w)


def idct2(spec: np.ndarray) -> np.ndarray:
    """Type-III inverse of :func:`dct2` (gamma-weighted cosine sum)."""
    X = _check_finite(spec, "spectral field")
    # scipy's unnormalised type III is x_0 + 2*sum_{k>0}, i.e. twice the gamma sum per axis
    return scipy.fft.dctn(X, type=3, axes=(-2, -1)) / 4.0


@dataclass(frozen=True)
class FrequencyGrid:
    """Per-mode wavevector magnitudes for an ``H x W`` DCT grid.

    ``k_eff = max(k_mag, k_c)`` is the magnitude the diffusion schedule sees;
    the cutoff keeps the DC region attenuated and noised.
    """

    height: int
    width: int
    k_c: float
    ku: np.ndarray
    kv: np.ndarray
    k_mag: np.ndarray
    k_eff: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def k_eff_sq(self) -> np.ndarray:
        return self.k_eff**2

    def with_cutoff(self, k_c: float) -> "FrequencyGrid":
        return frequency_grid(self.height, self.width, k_c)


def frequency_grid(height: int, width: int, k_c: float = 0.0) -> FrequencyGrid:
    if int(height) != height or int(width) != width or height < 1 or width < 1:
        raise ValidationError(f"grid dimensions must be positive integers, got {height}x{width}")
    if not np.isfinite(k_c) or k_c < 0:
        raise ValidationError(f"k_c must be finite and >= 0, got {k_c}")
    height, width = int(height), int(width)
    ku = np.pi * np.arange(height, dtype=np.float64)
    kv = np.pi * np.arange(width, dtype=np.float64)
    k_mag = np.sqrt(ku[:, None] ** 2 + kv[None, :] ** 2)
    k_eff = np.maximum(k_mag, float(k_c))
    for arr in (ku, kv, k_mag, k_eff):
        arr.setflags(write=False)
    return FrequencyGrid(height, width, float(k_c), ku, kv, k_mag, k_eff)


def radial_average(
    power: np.ndarray, grid: FrequencyGrid, bins: int
) -> tuple[np.ndarray, np.ndarray]:
    """Average per-mode values in uniform ``|k|`` shells.

    Bins split ``[0, max k_mag]`` uniformly; the last bin is closed on the
    right so every mode lands in exactly one bin. Empty bins are dropped.

    Returns
    -------
    centers, means : ndarray
        Bin midpoints and the mean of ``power`` over each non-empty bin. If
        ``power`` has leading axes the means have shape ``(..., n_bins)``.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-2:] != grid.shape:
        raise ValidationError(f"power shape {power.shape} does not match grid {grid.shape}")
    kmax = float(grid.k_mag.max())
    edges = np.linspace(0.0, kmax, bins + 1)
    if kmax == 0.0:
        idx = np.zeros(grid.shape, dtype=np.intp)
    else:
        idx = np.clip(np.floor(grid.k_mag / kmax * bins).astype(np.intp), 0, bins - 1)
    flat_idx = idx.ravel()
    counts = np.bincount(flat_idx, minlength=bins)
    lead = power.shape[:-2]
    flat = power.reshape(-1, grid.height * grid.width)
    sums = np.stack([np.bincount(flat_idx, weights=row, minlength=bins) for row in flat])
    keep = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])[keep]
    means = (sums[:, keep] / counts[keep]).reshape(lead + (int(keep.sum()),))
    return centers, means
