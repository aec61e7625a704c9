"""Poisson photon statistics of the light source.

At low intensity the source delivers a random photon count f per observation
window; the instantaneous intensity is f * X with X calibrated so the mean
intensity equals the nominal on-level.  SNR follows the shot-noise law
sqrt(lambda), so raising SNR shrinks the fluctuations without moving the
average drive.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PhotonModel:
    """Mean photons per window plus the nominal on-intensity they represent."""

    lam: float
    x_on: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be nonnegative and finite, got {self.lam!r}")
        if not math.isfinite(self.x_on) or self.x_on < 0:
            raise ValueError(f"x_on must be nonnegative, got {self.x_on!r}")

    @property
    def per_photon_intensity(self) -> float:
        """Lumens per photon; zero-mean sources carry no light."""
        return self.x_on / self.lam if self.lam > 0 else 0.0


def sample_intensity(model: PhotonModel, bit: int, rng: np.random.Generator, size=None):
    """Intensity seen during one window: 0 for bit 0, f*X with f ~ Poisson otherwise."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    if bit == 0:
        return 0.0 if size is None else np.zeros(size)
    f = rng.poisson(model.lam, size=size)
    return f * model.per_photon_intensity


def snr_of_lambda(lam: float) -> float:
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam!r}")
    return math.sqrt(lam)


def lambda_of_snr(snr: float) -> float:
    if snr < 0:
        raise ValueError(f"snr must be nonnegative, got {snr!r}")
    return snr * snr


def pmf_window(lam: float, tail: float = 1e-12, max_terms: int | None = None) -> np.ndarray | None:
    """Normalized photon-count pmf truncated where the upper tail drops below ``tail``.

    Returns None when the truncation would need more than ``max_terms`` values,
    signalling the caller to skip exact noise averaging.
    """
    if lam == 0.0:
        return np.array([1.0])
    hi = int(stats.poisson.ppf(1.0 - tail, lam)) + 1
    if max_terms is not None and hi + 1 > max_terms:
        return None
    pmf = stats.poisson.pmf(np.arange(hi + 1), lam)
    return pmf / pmf.sum()


def sampling_cdf(lam: float, tail: float = 1e-15) -> np.ndarray:
    """Photon-count CDF for inverse-transform sampling; the far tail collapses
    onto the last bin (mass below ``tail``)."""
    if lam == 0.0:
        return np.array([1.0])
    hi = int(stats.poisson.ppf(1.0 - tail, lam)) + 1
    return stats.poisson.cdf(np.arange(hi + 1), lam)
