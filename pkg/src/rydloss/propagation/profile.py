"""Axial atomic density profiles and the collective coupling g(z)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from ..errors import ValidationError
from ..medium import HOMOGENEOUS_LENGTH_SIGMAS, MediumParams


@dataclass(frozen=True)
class DensityProfile:
    """Shape of the atomic density along z.

    ``g(z)^2`` is proportional to the density and normalized so that the bare
    resonant two-level intensity transmission is exp(-OD), i.e.
    4 int g^2 dz / (c Gamma) = OD.

    Parameters
    ----------
    kind : {"gaussian", "homogeneous"}
    sigma_z : float
        rms size of the gaussian cloud (um).  Also sets the default length of
        the homogeneous cloud, L = 4.2 sigma_z.
    length : float, optional
        Length of the homogeneous cloud (um).
    """

    kind: str
    sigma_z: float
    length: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "homogeneous"):
            raise ValidationError("profile", f"unknown profile kind {self.kind!r}")
        if self.sigma_z <= 0:
            raise ValidationError("sigma_z", "must be positive")
        if self.length is not None and self.length <= 0:
            raise ValidationError("length", "must be positive")

    @classmethod
    def from_params(cls, params: MediumParams) -> "DensityProfile":
        return cls(kind=params.profile, sigma_z=params.sigma_z)

    @property
    def cloud_length(self) -> float:
        return self.length if self.length is not None else HOMOGENEOUS_LENGTH_SIGMAS * self.sigma_z

    def shape(self, z) -> np.ndarray:
        """Unit-peak density shape n(z)/n_peak."""
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-0.5 * (z / self.sigma_z) ** 2)
        return (np.abs(z) <= 0.5 * self.cloud_length).astype(float)

    def shape_integral(self, a=-np.inf, b=np.inf):
        """Integral of :meth:`shape` over [a, b] (vectorized in ``b``)."""
        b = np.asarray(b, dtype=float)
        if self.kind == "gaussian":
            s = self.sigma_z * math.sqrt(2.0)
            return self.sigma_z * math.sqrt(math.pi / 2.0) * (erf(b / s) - erf(a / s))
        half = 0.5 * self.cloud_length
        return np.clip(b, -half, half) - np.clip(a, -half, half)

    def peak_coupling_sq(self, params: MediumParams) -> float:
        """g_peak^2 reproducing the optical depth of ``params``."""
        return params.od * params.light_speed * params.gamma_p / (4.0 * self.shape_integral())

    def coupling(self, z, params: MediumParams) -> np.ndarray:
        """g(z) in rad/us."""
        return np.sqrt(self.peak_coupling_sq(params) * self.shape(z))

    def coupling_sq_integral(self, z, params: MediumParams) -> np.ndarray:
        """Cumulative int_{-inf}^{z} g^2 dz' (rad^2/us^2 um)."""
        return self.peak_coupling_sq(params) * self.shape_integral(-np.inf, z)

    def optical_depth(self, params: MediumParams) -> float:
        """4 int g^2 dz / (c Gamma); equals params.od by construction."""
        return 4.0 * self.peak_coupling_sq(params) * self.shape_integral() / (
            params.light_speed * params.gamma_p)

    def extent(self) -> float:
        """Half-width that encloses the cloud: 4 sigma_z or L/2 plus a margin."""
        if self.kind == "gaussian":
            return 4.0 * self.sigma_z
        return 0.5 * self.cloud_length + 0.25 * self.sigma_z
