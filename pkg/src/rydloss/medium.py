"""Physical parameters of the Rydberg-EIT medium and the scales derived from them.

Internal units are micrometres, microseconds and angular frequencies in
rad/us.  Every external surface (config files, CLI flags, CSV/JSON output)
quotes frequencies as nu = omega / 2 pi in MHz; the helpers here are the only
place where that conversion happens.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ResonanceError, ValidationError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

TWO_PI = 2.0 * math.pi
LIGHT_SPEED = 299792.458  # um/us

# C6/2pi in MHz um^6.  Chosen so that r_b = 10 um at delta/2pi = 30 MHz for the
# measured linewidths; r_b then stays inside 7-10 um over delta/2pi = 15-30 MHz.
DEFAULT_C6_MHZ = 1.07e7

PROFILES = ("gaussian", "homogeneous")
# Cloud length of the homogeneous profile in units of sigma_z.
HOMOGENEOUS_LENGTH_SIGMAS = 4.2

_REQUIRED_KEYS = ("omega_c_MHz", "gamma_MHz", "gamma_s_MHz", "delta_MHz", "OD", "sigma_z_um")
_OPTIONAL_KEYS = ("g_MHz", "delta_s_MHz", "C6", "profile", "light_speed")


def mhz_to_angular(nu):
    """Convert nu = omega/2pi in MHz to omega in rad/us."""
    return TWO_PI * nu


def angular_to_mhz(omega):
    """Convert omega in rad/us to nu = omega/2pi in MHz."""
    return omega / TWO_PI


def profile_shape_integral(profile: str, sigma_z: float) -> float:
    """Integral of the unit-peak density shape along z (um)."""
    if profile == "gaussian":
        return math.sqrt(TWO_PI) * sigma_z
    if profile == "homogeneous":
        return HOMOGENEOUS_LENGTH_SIGMAS * sigma_z
    raise ValidationError("profile", f"unknown profile {profile!r}; expected one of {PROFILES}")


def coupling_from_od(od: float, gamma_p: float, sigma_z: float, profile: str = "gaussian",
                     light_speed: float = LIGHT_SPEED) -> float:
    """Peak collective coupling g (rad/us) that reproduces a given optical depth.

    Uses the resonant two-level calibration 4 * int g(z)^2 dz / (c Gamma) = OD.
    """
    return math.sqrt(od * light_speed * gamma_p / (4.0 * profile_shape_integral(profile, sigma_z)))


@dataclass(frozen=True)
class MediumParams:
    """Physical inputs, all frequencies angular (rad/us).

    ``gamma_p = gamma_s = 0`` is accepted as the explicit zero-loss limit and
    ``omega_c_rabi = 0`` as the bare two-level limit; negative values are
    rejected.
    """

    g_peak: float
    omega_c_rabi: float
    gamma_p: float
    gamma_s: float
    delta: float
    delta_s: float
    c6: float
    od: float
    sigma_z: float
    light_speed: float = LIGHT_SPEED
    profile: str = "gaussian"

    def __post_init__(self):
        for name in ("g_peak", "od", "sigma_z", "light_speed"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValidationError(name, f"must be positive and finite, got {value!r}")
        for name in ("gamma_p", "gamma_s", "omega_c_rabi"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(name, f"must be non-negative, got {value!r}")
        for name in ("delta", "delta_s", "c6"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(name, "must be finite")
        if self.profile not in PROFILES:
            raise ValidationError("profile", f"unknown profile {self.profile!r}")

    @property
    def cap_delta(self) -> complex:
        """Delta = delta + i Gamma/2."""
        return complex(self.delta, 0.5 * self.gamma_p)

    @property
    def cap_delta_s(self) -> complex:
        """Delta_s = delta_s + i gamma_s/2."""
        return complex(self.delta_s, 0.5 * self.gamma_s)

    @property
    def cap_delta_tilde(self) -> complex:
        """Delta~ = delta + i Gamma/2 - i gamma_s/2."""
        return complex(self.delta, 0.5 * (self.gamma_p - self.gamma_s))

    def replace(self, **changes) -> "MediumParams":
        return dataclasses.replace(self, **changes)

    def lossless(self) -> "MediumParams":
        """Same medium with Gamma = gamma_s = 0 (couplings unchanged)."""
        return dataclasses.replace(self, gamma_p=0.0, gamma_s=0.0)

    def with_detunings(self, delta_mhz: float, delta_s_mhz: float) -> "MediumParams":
        return dataclasses.replace(self, delta=mhz_to_angular(delta_mhz),
                                   delta_s=mhz_to_angular(delta_s_mhz))


@dataclass(frozen=True)
class DerivedScales:
    cap_delta: complex
    cap_delta_s: complex
    cap_delta_tilde: complex
    mass_m: complex
    omega_c_scale: float
    k_c: float
    od_b: float
    phi: float
    r_b: float


def from_experiment_units(values: Mapping) -> MediumParams:
    """Build :class:`MediumParams` from a mapping in laboratory units.

    Frequencies are nu = omega/2pi in MHz, lengths in um and ``C6`` in
    MHz um^6 (i.e. C6/2pi).  ``g_MHz`` may be omitted or set to ``"auto"``, in
    which case the peak coupling is derived from ``OD`` through the resonant
    two-level calibration.  ``delta_s_MHz`` defaults to 0 and ``C6`` to
    :data:`DEFAULT_C6_MHZ`.
    """
    unknown = set(values) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown configuration key")
    for key in _REQUIRED_KEYS:
        if key not in values:
            raise ValidationError(key, "required key missing")

    def number(key, default=None):
        raw = values.get(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ValidationError(key, f"expected a number, got {raw!r}") from None

    gamma = number("gamma_MHz")
    gamma_s = number("gamma_s_MHz")
    od = number("OD")
    sigma_z = number("sigma_z_um")
    if gamma <= 0:
        raise ValidationError("gamma_p", f"Gamma/2pi must be positive, got {gamma} MHz")
    if gamma_s < 0:
        raise ValidationError("gamma_s", f"gamma_s/2pi must be non-negative, got {gamma_s} MHz")
    if od <= 0:
        raise ValidationError("od", f"OD must be positive, got {od}")
    if sigma_z <= 0:
        raise ValidationError("sigma_z", f"sigma_z must be positive, got {sigma_z} um")
    profile = str(values.get("profile", "gaussian"))
    light_speed = number("light_speed", LIGHT_SPEED)

    g_raw = values.get("g_MHz", "auto")
    if isinstance(g_raw, str) and g_raw.strip().lower() == "auto":
        g_peak = coupling_from_od(od, mhz_to_angular(gamma), sigma_z, profile, light_speed)
    else:
        g_peak = mhz_to_angular(number("g_MHz"))

    return MediumParams(
        g_peak=g_peak,
        omega_c_rabi=mhz_to_angular(number("omega_c_MHz")),
        gamma_p=mhz_to_angular(gamma),
        gamma_s=mhz_to_angular(gamma_s),
        delta=mhz_to_angular(number("delta_MHz")),
        delta_s=mhz_to_angular(number("delta_s_MHz", 0.0)),
        c6=mhz_to_angular(number("C6", DEFAULT_C6_MHZ)),
        od=od,
        sigma_z=sigma_z,
        light_speed=light_speed,
        profile=profile,
    )


def to_experiment_units(params: MediumParams) -> dict:
    """Inverse of :func:`from_experiment_units` (always emits an explicit g)."""
    return {
        "g_MHz": angular_to_mhz(params.g_peak),
        "omega_c_MHz": angular_to_mhz(params.omega_c_rabi),
        "gamma_MHz": angular_to_mhz(params.gamma_p),
        "gamma_s_MHz": angular_to_mhz(params.gamma_s),
        "delta_MHz": angular_to_mhz(params.delta),
        "delta_s_MHz": angular_to_mhz(params.delta_s),
        "C6": angular_to_mhz(params.c6),
        "OD": params.od,
        "sigma_z_um": params.sigma_z,
        "profile": params.profile,
        "light_speed": params.light_speed,
    }


def load_config(path) -> dict:
    """Read a TOML config file into a flat key/value mapping.

    A ``[medium]`` table is used if present, otherwise the top level.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return dict(data.get("medium", data))


def preset_path(name: str) -> Path:
    path = Path(__file__).with_name("presets") / f"{name}.toml"
    if not path.exists():
        raise ValidationError("preset", f"no bundled preset named {name!r}")
    return path


def load_preset(name: str, **overrides) -> MediumParams:
    """Load a bundled preset (``paper`` or ``experiment``) with optional overrides."""
    values = load_config(preset_path(name))
    values.update(overrides)
    return from_experiment_units(values)


def derive_scales(params: MediumParams, chi0: complex) -> DerivedScales:
    """Derived scalars given chi_bar evaluated at zero energy.

    Parameters
    ----------
    params : MediumParams
    chi0 : complex
        chi_bar(omega=0), computed by the caller (see ``interactions.chi_bar``).

    Raises
    ------
    ResonanceError
        If ``chi0`` vanishes (the delta_0 resonance), where r_b and phi are
        undefined.
    """
    chi0 = complex(chi0)
    if chi0 == 0 or not math.isfinite(abs(chi0)):
        raise ResonanceError("chi_bar(0) vanishes: parameters sit at the delta_0 resonance; "
                             "use interactions.resonance_detunings to locate it",
                             location={"delta_MHz": angular_to_mhz(params.delta),
                                       "delta_s_MHz": angular_to_mhz(params.delta_s)})
    c = params.light_speed
    g2 = params.g_peak ** 2
    om2 = params.omega_c_rabi ** 2
    cap_delta = params.cap_delta
    mass_m = -2.0 * g2 ** 2 / (cap_delta * om2 * c ** 2)
    r_b = abs(params.c6 * chi0) ** (1.0 / 6.0)
    omega_c_scale = om2 / (4.0 * abs(cap_delta))
    v_g = c * om2 / (om2 + 4.0 * g2)
    od_b = params.od * r_b / (math.sqrt(TWO_PI) * params.sigma_z)
    phi = abs(r_b / (chi0 / mass_m) ** 0.5)
    return DerivedScales(
        cap_delta=cap_delta,
        cap_delta_s=params.cap_delta_s,
        cap_delta_tilde=params.cap_delta_tilde,
        mass_m=mass_m,
        omega_c_scale=omega_c_scale,
        k_c=omega_c_scale / v_g,
        od_b=od_b,
        phi=phi,
        r_b=r_b,
    )
