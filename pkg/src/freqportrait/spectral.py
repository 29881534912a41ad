"""Differentiable 2-D FFT helpers and spectrum statistics.

Convention: the forward transform is unnormalized and the inverse is scaled
by 1/(H*W), so ``ifft2(fft2(x)) == x`` and Parseval reads
``sum|x|^2 == sum|X|^2 / (H*W)``.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, InvalidInputError


@dataclass(frozen=True)
class Spectrum:
    """Complex 2-D spectrum over the last two axes of ``data``.

    ``data`` is a complex tensor shaped ``[..., C, H, W]``; leading batch axes
    are allowed so the same type serves single frames and mini-batches.
    """

    data: torch.Tensor

    def __post_init__(self):
        if not torch.is_complex(self.data):
            raise InvalidInputError("Spectrum data must be complex")
        if self.data.dim() < 2:
            raise InvalidInputError("Spectrum needs at least two axes")

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def height(self):
        return self.data.shape[-2]

    @property
    def width(self):
        return self.data.shape[-1]

    @classmethod
    def from_real_filter(cls, filt):
        """Wrap a real-valued filter as a spectrum with zero imaginary part."""
        filt = torch.as_tensor(filt)
        return cls(torch.complex(filt, torch.zeros_like(filt)))

    def __mul__(self, other):
        if isinstance(other, Spectrum):
            return Spectrum(self.data * other.data)
        return Spectrum(self.data * other)

    __rmul__ = __mul__

    def energy(self):
        return (self.data.abs() ** 2).sum()


def _check_real(x):
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x))
    if torch.is_complex(x):
        raise InvalidInputError("fft2 expects a real-valued input")
    if x.dim() < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise InvalidInputError(f"fft2 needs a [..., H, W] input, got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise InvalidInputError("fft2 input contains NaN or Inf")
    if not torch.is_floating_point(x):
        x = x.to(torch.get_default_dtype())
    return x


def fft2(x):
    """Unnormalized 2-D FFT over the last two axes."""
    x = _check_real(x)
    return Spectrum(torch.fft.fft2(x, norm="backward"))


def ifft2(s):
    """Inverse of :func:`fft2`; returns the real part of the result.

    Multiplying a spectrum by a real filter breaks conjugate symmetry, so the
    inverse may carry an imaginary residue. It is dropped.
    """
    data = s.data if isinstance(s, Spectrum) else torch.as_tensor(s)
    if not torch.is_complex(data):
        raise InvalidInputError("ifft2 expects a complex spectrum")
    return torch.fft.ifft2(data, norm="backward").real


def frequency_loss(a, b):
    """Mean over bins of ``|fft2(a) - fft2(b)|`` (complex magnitude)."""
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    # FFT is linear, so one transform of the difference suffices.
    diff = torch.fft.fft2(a - b, norm="backward")
    # |z| has an undefined gradient at z = 0; route through a safe sqrt.
    sq = diff.real ** 2 + diff.imag ** 2
    nonzero = sq > 0
    mag = torch.where(nonzero, torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq))),
                      torch.zeros_like(sq))
    return mag.mean()


def radial_bin_index(height, width, n_bins):
    """Bin index for every bin of a DC-centered ``height x width`` spectrum.

    The radius is normalized so the corner of the centered grid sits at 1.
    """
    if n_bins < 1:
        raise ContractError("n_bins must be >= 1")
    cy, cx = height // 2, width // 2
    ky = (np.arange(height) - cy) / max(height / 2.0, 0.5)
    kx = (np.arange(width) - cx) / max(width / 2.0, 0.5)
    r = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2) / np.sqrt(2.0)
    idx = np.floor(r * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def radial_energy_profile(s, n_bins):
    """Spectral energy ``|X|^2`` summed into ``n_bins`` radial bins.

    DC is moved to the center first; bin 0 always contains DC. Energy from
    every leading axis (channels, batch) is pooled.
    """
    data = s.data if isinstance(s, Spectrum) else torch.as_tensor(s)
    power = (data.abs() ** 2).detach().cpu().numpy().astype(np.float64)
    power = power.reshape(-1, power.shape[-2], power.shape[-1]).sum(axis=0)
    power = np.fft.fftshift(power)
    idx = radial_bin_index(power.shape[0], power.shape[1], n_bins)
    return np.bincount(idx.ravel(), weights=power.ravel(), minlength=n_bins)
