"""Saturated two-polariton interaction.

chi_bar(omega) sets the saturation of the effective potential
V_e = V / (1 - chi_bar V) with V = C6 / r^6, which is equivalent to
C6 / (r^6 + a^6) with a^6 = -chi_bar C6.  The blockade radius is
r_b = |C6 chi_bar|^(1/6).  The detunings delta_0 and delta_+ are where
chi_bar(0) and chi_bar(-omega_+) vanish, which makes the interaction
vertices resonant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .errors import PoleError, ResonanceError, ValidationError, WindowError
from .medium import MediumParams, mhz_to_angular
from .polaritons import omega_plus

SQRT33 = math.sqrt(33.0)
DELTA_PLUS_OMEGA_COEFF = 0.5 * math.sqrt((SQRT33 + 6.0) / 6.0)
DELTA_PLUS_DS_COEFF = (SQRT33 + 209.0) / 264.0


@dataclass(frozen=True)
class ChiArguments:
    omega: complex
    nu: complex
    delta_tilde: complex

    @classmethod
    def from_params(cls, omega, params: MediumParams, use_delta_tilde: bool = True):
        d = params.cap_delta_tilde if use_delta_tilde else params.cap_delta
        return cls(omega=omega, nu=omega + 2 * params.cap_delta_s, delta_tilde=d)


@dataclass(frozen=True)
class PotentialSample:
    r: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class ResonanceCurves:
    """Resonance detunings in rad/us.

    ``broadened_delta0`` / ``broadened_delta_plus`` hold the finite-loss
    minima of |chi_bar(0)| and |chi_bar(-omega_+)| when computed.
    """

    delta0: float
    delta_plus: float
    method: str
    broadened_delta0: Optional[float] = None
    broadened_delta_plus: Optional[float] = None


def _chi_parts(omega, params, use_delta_tilde):
    args = ChiArguments.from_params(np.asarray(omega, dtype=complex), params, use_delta_tilde)
    d, nu = args.delta_tilde, args.nu
    om2 = params.omega_c_rabi ** 2
    num = -om2 + 4 * d * d + 6 * d * nu + 2 * nu * nu
    den = 2 * (d + nu) * (nu * (2 * d + nu) - om2)
    den_scale = 2 * np.abs(d + nu) * (np.abs(nu) * np.abs(2 * d + nu) + om2)
    return num, den, den_scale


def chi_bar(omega, params: MediumParams, use_delta_tilde: bool = True):
    """Saturation function chi_bar(omega) (us/rad).

    Parameters
    ----------
    omega : complex or array_like
        Two-polariton energy (rad/us).
    use_delta_tilde : bool
        Use Delta~ = delta + i(Gamma - gamma_s)/2 (default).  ``False`` swaps in
        Delta for comparison.

    Raises
    ------
    PoleError
        If the denominator vanishes relative to its scale.
    """
    num, den, scale = _chi_parts(omega, params, use_delta_tilde)
    if np.any((scale == 0) | (np.abs(den) < 1e-12 * scale)):
        raise PoleError("chi_bar denominator vanishes", location={"omega": omega})
    val = num / den
    return val if np.ndim(val) else complex(val)


def chi_numerator(omega, params: MediumParams, use_delta_tilde: bool = True):
    """Numerator of chi_bar; its zeros are the vertex resonances."""
    num, _, _ = _chi_parts(omega, params, use_delta_tilde)
    return num if np.ndim(num) else complex(num)


def effective_potential(omega, r, params: MediumParams) -> PotentialSample:
    """Saturated potential V_e(omega, r) = C6 / (r^6 - chi_bar C6) in rad/us."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValidationError("r", "distances must be positive")
    chi = chi_bar(omega, params)
    den = r ** 6 - chi * params.c6
    if np.any(den == 0):
        raise PoleError("effective potential pole on the sampled grid", location={"omega": omega})
    return PotentialSample(r=r, value=params.c6 / den)


def blockade_radius(omega, params: MediumParams) -> float:
    """r_b = |C6 chi_bar(omega)|^(1/6) in um.

    Raises
    ------
    ResonanceError
        If chi_bar(omega) vanishes.
    """
    chi = chi_bar(omega, params)
    if chi == 0:
        raise ResonanceError("chi_bar vanishes: blockade radius is zero at this resonance",
                             location={"omega": omega})
    return abs(params.c6 * chi) ** (1.0 / 6.0)


def sixth_root(omega, params: MediumParams) -> complex:
    """Principal a = exp(log(-chi_bar C6) / 6), so that V_e = C6 / (r^6 + a^6)."""
    a6 = -chi_bar(omega, params) * params.c6
    if a6 == 0:
        raise ResonanceError("chi_bar vanishes; potential is unsaturated", location={"omega": omega})
    return np.exp(np.log(complex(a6)) / 6.0)


def _poles(omega, params):
    a = sixth_root(omega, params)
    roots = a * np.exp(1j * np.pi * (2 * np.arange(6) + 1) / 6)
    if np.any(np.abs(roots.imag) < 1e-8 * abs(a)):
        raise PoleError("potential pole within 1e-8 of the real axis; the contour is not valid",
                        location={"omega": omega})
    return a, roots


def potential_ft_zero(omega, params: MediumParams) -> complex:
    """Closed form of the q = 0 transform, (2 pi / 3) C6 / a^5."""
    a = sixth_root(omega, params)
    return 2 * np.pi / 3 * params.c6 / a ** 5


def potential_ft(q, omega, params: MediumParams, method: str = "residues"):
    """Fourier transform int dr exp(-i q r) V_e(omega, r) (rad/us * um).

    Parameters
    ----------
    q : float or array_like
        Momentum (1/um).
    omega : complex
        Energy argument of chi_bar.
    method : {"residues", "quadrature"}
        ``residues`` sums the residues of the three poles in the half plane
        where exp(-i q r) decays.  ``quadrature`` integrates 2 int_0^inf cos(q r) V_e
        numerically to a relative target of 1e-10.
    """
    if method == "residues":
        return _ft_residues(q, omega, params)
    if method == "quadrature":
        qa = np.asarray(q, dtype=float)
        out = np.array([_ft_quadrature(float(x), omega, params) for x in qa.ravel()])
        return out.reshape(qa.shape) if qa.ndim else complex(out[0])
    raise ValidationError("method", f"unknown method {method!r}")


def _ft_residues(q, omega, params):
    a, roots = _poles(omega, params)
    a6 = a ** 6
    upper = roots[roots.imag > 0]
    lower = roots[roots.imag < 0]
    qa = np.asarray(q, dtype=float)
    qf = qa[..., None]
    # Residue of C6/(r^6 + a^6) at r_k is C6 / (6 r_k^5) = -C6 r_k / (6 a^6).
    res_up = -params.c6 * upper / (6 * a6)
    res_lo = -params.c6 * lower / (6 * a6)
    with np.errstate(over="ignore", invalid="ignore"):
        up = 2j * np.pi * np.sum(np.exp(-1j * np.where(qf <= 0, qf, 0.0) * upper) * res_up, axis=-1)
        lo = -2j * np.pi * np.sum(np.exp(-1j * np.where(qf > 0, qf, 0.0) * lower) * res_lo, axis=-1)
    out = np.where(qa <= 0, up, lo)
    return out if out.ndim else complex(out)


def _ft_quadrature(q, omega, params, epsrel=1e-10):
    chi = chi_bar(omega, params)
    c6 = params.c6
    a = sixth_root(omega, params)
    cut = 40.0 * abs(a)

    def f(r):
        return c6 / (r ** 6 - chi * c6)

    parts = []
    for fn in (lambda r: f(r).real, lambda r: f(r).imag):
        if q == 0:
            inner = quad(fn, 0, cut, limit=400, epsabs=0, epsrel=epsrel)[0]
            tail = quad(fn, cut, np.inf, limit=400, epsabs=0, epsrel=epsrel)[0]
        else:
            inner = quad(fn, 0, cut, weight="cos", wvar=q, limit=400, epsabs=0, epsrel=epsrel)[0]
            scale = abs(c6) / cut ** 5
            tail = quad(fn, cut, np.inf, weight="cos", wvar=q, limit=400,
                        epsabs=1e-14 * scale)[0]
        parts.append(inner + tail)
    return 2.0 * complex(parts[0], parts[1])


def inv_chi_at_minus_omega_plus(params: MediumParams, reduced: bool = False) -> complex:
    """Closed form of 1/chi_bar(-omega_+).

    The general expression holds for any Delta_s; ``reduced=True`` evaluates
    its Delta_s -> 0 limit.  Delta is replaced by Delta~ for gamma_s > 0.
    """
    d = params.cap_delta_tilde
    om2 = params.omega_c_rabi ** 2
    if reduced:
        r = np.sqrt(d * d + om2)
        num = (r - 3 * d) * (3 * d * r - 3 * d * d + 1.5 * om2)
        den = 2 * (4 * d * r - 8 * d * d + 0.5 * om2)
        return -num / den
    ds = params.cap_delta_s
    r = np.sqrt((d + ds) ** 2 + om2)
    num = (-3 * d + r - 3 * ds) * (-3 * d * d + 3 * d * r + 3 * ds * r - 10 * d * ds
                                   - 5 * ds * ds + 1.5 * om2)
    den = 2 * (-8 * d * d + 4 * d * r + 3 * ds * r - 13 * d * ds - 5 * ds * ds + 0.5 * om2)
    return -num / den


def resonance_factor(params: MediumParams) -> complex:
    """sqrt(Delta^2 + Omega^2) - 3 Delta, which vanishes at Delta = Omega / (2 sqrt 2).

    Its square cancels the divergence of the density of states at delta_s = 0.
    """
    d = params.cap_delta_tilde
    return np.sqrt(d * d + params.omega_c_rabi ** 2) - 3 * d


def _closed_form(params):
    om, ds = params.omega_c_rabi, params.delta_s
    return 0.5 * om - 1.5 * ds, DELTA_PLUS_OMEGA_COEFF * om - DELTA_PLUS_DS_COEFF * ds


def _bracket_root(fun, lo, hi, n, target):
    grid = np.linspace(lo, hi, n)
    vals = np.array([fun(x) for x in grid])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if idx.size == 0:
        return None
    roots = [brentq(fun, grid[i], grid[i + 1], xtol=1e-13, rtol=1e-14) if vals[i] != 0 else grid[i]
             for i in idx]
    return min(roots, key=lambda r: abs(r - target))


def resonance_detunings(params: MediumParams, method: str = "closed_form",
                        window=None, samples: int = 400,
                        broadened: bool = True) -> ResonanceCurves:
    """Detunings delta_0 and delta_+ at the current delta_s (rad/us).

    ``closed_form`` uses delta_0 = Omega/2 - 3 delta_s/2 and
    delta_+ = (1/2) sqrt((sqrt 33 + 6)/6) Omega - (sqrt 33 + 209)/264 delta_s, valid
    for |delta_s| << Omega.  ``numeric_root`` brackets and bisects the zero-loss
    zeros of chi_bar(0) and chi_bar(-omega_+) in delta inside ``window``
    (default (0.05, 3) Omega).  With ``broadened=True`` it also reports the
    finite-loss minima of |chi_bar|.

    Raises
    ------
    WindowError
        If a numeric root is not bracketed in the window.
    """
    d0_cf, dp_cf = _closed_form(params)
    if method == "closed_form":
        return ResonanceCurves(delta0=d0_cf, delta_plus=dp_cf, method=method)
    if method != "numeric_root":
        raise ValidationError("method", f"unknown method {method!r}")

    om = params.omega_c_rabi
    lo, hi = window if window is not None else (0.05 * om, 3.0 * om)
    ideal = params.lossless()

    def f0(delta):
        return chi_numerator(0.0, ideal.replace(delta=delta)).real

    def fp(delta):
        p = ideal.replace(delta=delta)
        return chi_numerator(-omega_plus(p), p).real

    d0 = _bracket_root(f0, lo, hi, samples, d0_cf)
    dp = _bracket_root(fp, lo, hi, samples, dp_cf)
    if d0 is None:
        raise WindowError(f"delta_0 not bracketed in window [{lo}, {hi}] rad/us")
    if dp is None:
        raise WindowError(f"delta_+ not bracketed in window [{lo}, {hi}] rad/us")

    b0 = bp = None
    if broadened:
        def abs_chi0(delta):
            return abs(chi_numerator(0.0, params.replace(delta=delta)))

        def abs_chip(delta):
            p = params.replace(delta=delta)
            return abs(chi_numerator(-omega_plus(p), p))

        b0 = _local_min(abs_chi0, d0, om)
        bp = _local_min(abs_chip, dp, om)
    return ResonanceCurves(delta0=d0, delta_plus=dp, method=method,
                           broadened_delta0=b0, broadened_delta_plus=bp)


def _local_min(fun, centre, width):
    res = minimize_scalar(fun, bounds=(centre - 0.5 * width, centre + 0.5 * width),
                          method="bounded", options={"xatol": 1e-6 * width})
    return float(res.x)


def calibrate_c6(params: MediumParams, r_b: float = 10.0, delta_mhz: float = 30.0) -> float:
    """C6 (rad/us um^6) giving blockade radius ``r_b`` at detuning ``delta_mhz``.

    Uses chi_bar(0) with the linewidths and delta_s of ``params``.
    """
    p = params.replace(delta=mhz_to_angular(delta_mhz))
    chi0 = chi_bar(0.0, p)
    return math.copysign(r_b ** 6 / abs(chi0), params.c6 if params.c6 != 0 else 1.0)
