"""Fermi's-Golden-Rule rate for three dark polaritons scattering into the DDU channel.

Three incoming dark polaritons at momentum q0 (zero energy) scatter into two
dark polaritons (q1, q3) and one upper-bright polariton (q2) through two
second-order diagrams built from the Fourier-transformed effective potential
and the Rydberg propagator G_ss.

The energy-conservation manifold is taken from the zero-loss (real)
dispersions.  Vertices, overlaps and propagators use the full complex
parameters, i.e. the zero-loss result is analytically continued to finite
Gamma and gamma_s.
"""
from __future__ import annotations

import functools
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .errors import ConvergenceError, RydlossError, ValidationError, WindowError
from .interactions import blockade_radius, chi_bar, potential_ft
from .medium import MediumParams, derive_scales
from .polaritons import (PropagatorQuery, dark_momentum, g_ss, hamiltonian,
                         inverse_group_velocity, omega_plus, saturation_energies)

log = logging.getLogger(__name__)

N_DIAGRAM_PERMUTATIONS = 6
ACCEPT_REL_ERROR = 1e-3
_BRANCH_COLUMN = {"L": 0, "D": 1, "U": 2}  # eigh ordering of the zero-loss spectrum


def permutation_multiplicity() -> int:
    """Number of distinct DDU diagrams per topology.

    Any of the three incoming polaritons can be the one that joins at the
    second vertex, and either of the two outgoing dark polaritons can be the
    one emitted there.
    """
    incoming = range(3)
    outgoing_dark = range(2)
    return sum(1 for _ in itertools.product(incoming, outgoing_dark))


def rate_prefactor() -> float:
    """2 pi n^2 / (2 pi)^2 with n diagram permutations, i.e. 18/pi."""
    n = permutation_multiplicity()
    return 2 * math.pi * n ** 2 / (2 * math.pi) ** 2


@dataclass
class RateResult:
    """Complex rate ``beta`` with magnitude, method tag and diagnostics."""

    beta: complex
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def magnitude(self) -> float:
        return abs(self.beta)

    @property
    def accepted(self) -> bool:
        err = self.diagnostics.get("error_estimate", 0.0)
        return self.magnitude == 0 or err / self.magnitude < ACCEPT_REL_ERROR


@dataclass
class RateMap:
    """|beta| over a (delta_s, delta) grid; ``values[i, j]`` is at (delta_s_grid[i], delta_grid[j]).

    Failed points hold NaN and are listed in ``holes`` as (i, j, message).
    """

    delta_grid: np.ndarray
    delta_s_grid: np.ndarray
    values: np.ndarray
    beta: np.ndarray
    method: str
    holes: list = field(default_factory=list)

    def ridge(self) -> np.ndarray:
        """delta at the maximum of |beta| for every delta_s row (NaN-aware)."""
        out = np.full(self.delta_s_grid.size, np.nan)
        for i, row in enumerate(self.values):
            if np.any(np.isfinite(row)):
                out[i] = self.delta_grid[int(np.nanargmax(row))]
        return out


def incoming_momentum(params: MediumParams, window: Optional[float] = None) -> float:
    """Momentum q0 at which the zero-loss dark branch has zero energy (1/um).

    The dispersion inverts exactly, so q0 = q_D(0) whenever zero energy lies
    inside the dark band (omega_-, omega_+).

    Raises
    ------
    WindowError
        If zero energy is outside the dark band or |q0| exceeds ``window``
        (default 10 g/c).
    """
    zl = params.lossless()
    lo, hi = (w.real for w in saturation_energies(zl))
    if not lo < 0.0 < hi:
        raise WindowError("zero energy is outside the dark band; no incoming dark polariton")
    q0 = dark_momentum(0.0, zl).real
    if window is None:
        window = 10.0 * params.g_peak / params.light_speed
    if abs(q0) > window:
        raise WindowError(f"incoming momentum {q0} 1/um outside scan window {window}")
    return q0


def _complex_eigenpair(q, branch, params, zero_loss):
    """Complex eigenpair on ``branch`` matched to the zero-loss eigenvector at the same q."""
    _, v0 = np.linalg.eigh(hamiltonian(q, zero_loss))
    ref = v0[:, _BRANCH_COLUMN[branch]]
    w, v = np.linalg.eig(hamiltonian(q, params))
    v = v / np.linalg.norm(v, axis=0)
    k = int(np.argmax(np.abs(ref.conj() @ v)))
    return w[k], v[:, k]


@dataclass(frozen=True)
class ManifoldGrid:
    """Integration controls for :func:`beta_full`.

    window_rb : U momenta are integrated over |q2 - q0| <= window_rb / r_b.
    energy_samples : sampling density used to bracket conservation roots.
    epsrel : relative target of the outer adaptive quadrature.
    """

    window_rb: float = 40.0
    energy_samples: int = 400
    epsrel: float = 1e-5


class _Manifold:
    """Zero-loss conservation manifold omega_U(q2) + omega_D(q1) + omega_D(q3) = 0."""

    def __init__(self, params, q0, samples):
        self.zl = params.lossless()
        self.lo, self.hi = (w.real for w in saturation_energies(self.zl))
        self.q0 = q0
        t = np.linspace(0.0, 1.0, samples + 2)[1:-1]
        self.unit = 0.5 * (1.0 - np.cos(np.pi * t))

    def upper_energy(self, q2):
        return np.linalg.eigvalsh(hamiltonian(q2, self.zl).real)[-1]

    def dark_q(self, e):
        return dark_momentum(e, self.zl).real

    def velocity(self, e):
        return 1.0 / inverse_group_velocity(e, self.zl).real

    def roots(self, q2):
        """Conservation roots (e1, e3) for a given U momentum, and the U energy."""
        e2 = self.upper_energy(q2)
        lo = max(self.lo, -e2 - self.hi)
        hi = min(self.hi, -e2 - self.lo)
        if lo >= hi:
            return e2, []

        def mismatch(e1):
            return self.dark_q(e1) + q2 + self.dark_q(-e1 - e2) - 3 * self.q0

        e = lo + (hi - lo) * self.unit
        vals = mismatch(e)
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        found = []
        for i in idx:
            e1 = brentq(mismatch, e[i], e[i + 1], xtol=1e-13 * max(1.0, abs(e[i])), rtol=1e-14)
            found.append((e1, -e1 - e2))
        return e2, found


@dataclass
class ConservationPoint:
    """One root of the zero-loss energy-conservation constraint with its amplitudes."""

    q1: float
    q2: float
    q3: float
    energies: tuple  # zero-loss (e1, e2, e3), rad/us
    amp_a: complex
    amp_b: complex
    weight: float
    jacobian: float  # 1 / |v_D(q1) - v_D(q3)|


class _Evaluator:
    """Amplitudes on the conservation manifold for fixed parameters."""

    def __init__(self, params, samples):
        self.params = params
        self.q0 = incoming_momentum(params)
        self.manifold = _Manifold(params, self.q0, samples)
        _, v_in = _complex_eigenpair(self.q0, "D", params, self.manifold.zl)
        self.s_in = abs(v_in[2]) ** 2
        self.near_degenerate = 0

    def points(self, q2):
        params, m, q0 = self.params, self.manifold, self.q0
        e2, roots = m.roots(q2)
        if not roots:
            return []
        w_u, v_u = _complex_eigenpair(q2, "U", params, m.zl)
        out = []
        for e1, e3 in roots:
            q1, q3 = m.dark_q(e1), m.dark_q(e3)
            v1, v3 = m.velocity(e1), m.velocity(e3)
            dv = abs(v1 - v3)
            if dv < 1e-10 * (abs(v1) + abs(v3)):
                self.near_degenerate += 1
                continue
            _, vec1 = _complex_eigenpair(q1, "D", params, m.zl)
            w3, vec3 = _complex_eigenpair(q3, "D", params, m.zl)
            amp_a = (potential_ft(q2 - q0, 0.0, params)
                     * g_ss(PropagatorQuery(2 * q0 - q2, -w_u), params)
                     * potential_ft(q1 - q0, -w_u, params))
            amp_b = (potential_ft(q3 - q0, 0.0, params)
                     * g_ss(PropagatorQuery(2 * q0 - q3, -w3), params)
                     * potential_ft(q2 - q0, -w3, params))
            weight = self.s_in ** 3 * abs(vec1[2]) ** 2 * abs(vec3[2]) ** 2 * abs(v_u[2]) ** 2
            out.append(ConservationPoint(q1=q1, q2=float(q2), q3=q3, energies=(e1, e2, e3),
                                         amp_a=complex(amp_a), amp_b=complex(amp_b),
                                         weight=weight, jacobian=1.0 / dv))
        return out


def conservation_points(params: MediumParams, q2_values, energy_samples: int = 400) -> list:
    """All conservation roots (with amplitudes A and B) for the given U momenta."""
    ev = _Evaluator(params, energy_samples)
    return [pt for q2 in np.atleast_1d(q2_values) for pt in ev.points(float(q2))]


def beta_full(params: MediumParams, q_grid_spec: Optional[ManifoldGrid] = None,
              terms: str = "both") -> RateResult:
    """Full two-diagram Golden-Rule rate.

    For each U momentum q2 the energy delta is resolved in the dark momentum
    q1 (with q3 = 3 q0 - q1 - q2): every real root of the zero-loss constraint
    contributes with Jacobian 1 / |v_D(q1) - v_D(q3)|.  The amplitudes are

    * A = V_{q2-q0}[0] G_ss[2q0 - q2, -w_U(q2)] V_{q1-q0}[-w_U(q2)]
    * B = V_{q3-q0}[0] G_ss[2q0 - q3, -w_D(q3)] V_{q2-q0}[-w_D(q3)]

    weighted by |S_D(q0)|^6 |S_D(q1)|^2 |S_D(q3)|^2 |S_U(q2)|^2.

    Parameters
    ----------
    terms : {"both", "A", "B"}
        Restrict the amplitude to one diagram (diagnostics).
    """
    if terms not in ("both", "A", "B"):
        raise ValidationError("terms", f"expected 'both', 'A' or 'B', got {terms!r}")
    spec = q_grid_spec or ManifoldGrid()
    q0 = incoming_momentum(params)
    if params.c6 == 0:
        return RateResult(0j, "full", {"reason": "interactions switched off", "error_estimate": 0.0,
                                       "n_roots": 0, "q0": q0})
    r_b = blockade_radius(0.0, params)
    ev = _Evaluator(params, spec.energy_samples)
    stats = {"n_roots": 0, "max_roots": 0, "root_samples": []}
    use_a, use_b = terms in ("both", "A"), terms in ("both", "B")

    def integrand(q2):
        pts = ev.points(q2)
        stats["max_roots"] = max(stats["max_roots"], len(pts))
        stats["n_roots"] += len(pts)
        total = 0.0
        for pt in pts:
            amp = (pt.amp_a if use_a else 0j) + (pt.amp_b if use_b else 0j)
            total += abs(amp) ** 2 * pt.weight * pt.jacobian
            if len(stats["root_samples"]) < 8:
                stats["root_samples"].append({"q2": pt.q2, "q1": float(pt.q1), "q3": float(pt.q3)})
        return total

    half = spec.window_rb / r_b
    lo, hi = q0 - half, q0 + half
    val, err = quad(integrand, lo, hi, points=[q0], limit=800, epsrel=spec.epsrel, epsabs=0.0)
    edge = max(integrand(lo), integrand(hi))
    pref = rate_prefactor()
    beta = pref * val
    diagnostics = {
        "error_estimate": pref * err,
        "n_roots": stats["n_roots"],
        "max_roots_per_q2": stats["max_roots"],
        "near_degenerate_roots": ev.near_degenerate,
        "q_bounds": [lo, hi],
        "tail_bound": pref * edge * r_b,
        "q0": q0,
        "r_b": r_b,
        "root_samples": stats["root_samples"],
        "incoming_generalized": q0 != 0.0,
    }
    if stats["n_roots"] == 0:
        diagnostics["reason"] = "no energy-conservation roots"
    return RateResult(complex(beta), "full", diagnostics)


def simplified_integrand(q, params: MediumParams):
    """|V_q[0] G_ss[inf, -w+] V_q[-w+]|^2 as a function of q."""
    wp = omega_plus(params)
    g_inf = g_ss(PropagatorQuery("infinite", -wp), params)
    return np.abs(potential_ft(q, 0.0, params) * g_inf * potential_ft(q, -wp, params)) ** 2


def beta_simplified(params: MediumParams, window_rb: float = 40.0,
                    epsrel: float = 1e-8) -> RateResult:
    """Flat-dispersion rate (18/pi) (1/v_g(-2 w+)) int dq |V_q[0] G_ss[inf, -w+] V_q[-w+]|^2.

    The q integral runs over the real line (twice the half line, the integrand
    being even) truncated at |q| = window_rb / r_b with a tail bound reported.
    1/v_g is the exact dark-branch inversion at energy -2 w+.

    Raises
    ------
    ConvergenceError
        If the quadrature misses its target by more than 1e-6 relative.
    """
    if params.c6 == 0:
        return RateResult(0j, "simplified", {"reason": "interactions switched off",
                                             "error_estimate": 0.0})
    r_b = blockade_radius(0.0, params)
    wp = omega_plus(params)
    inv_vg = inverse_group_velocity(-2 * wp, params)
    g_inf = g_ss(PropagatorQuery("infinite", -wp), params)

    def f(q):
        return abs(potential_ft(q, 0.0, params) * g_inf * potential_ft(q, -wp, params)) ** 2

    upper = window_rb / r_b
    val, err = quad(f, 0.0, upper, limit=400, epsrel=epsrel, epsabs=0.0)
    tail = f(upper) * r_b
    if val > 0 and err / val > 1e-6:
        raise ConvergenceError(f"simplified-rate quadrature reached only {err / val:.2e} relative "
                               f"(tail bound {tail:.2e})")
    pref = rate_prefactor()
    beta = pref * inv_vg * 2.0 * val
    scales = derive_scales(params, chi_bar(0.0, params))
    return RateResult(complex(beta), "simplified", {
        "error_estimate": pref * abs(inv_vg) * 2.0 * err,
        "tail_bound": pref * abs(inv_vg) * 2.0 * tail,
        "q_bounds": [-upper, upper],
        "omega_plus": complex(wp),
        "inverse_group_velocity": complex(inv_vg),
        "flat_regime": bool(1.0 / r_b > scales.k_c),
        "k_c": scales.k_c,
        "r_b": r_b,
    })


def _asymptotic_raw(params):
    scales = derive_scales(params, chi_bar(0.0, params))
    return scales.phi * scales.r_b ** 2 * params.omega_c_rabi ** 2 / abs(params.delta)


@functools.lru_cache(maxsize=64)
def _asymptotic_normalization(reference: MediumParams) -> float:
    return beta_simplified(reference).magnitude / _asymptotic_raw(reference)


def asymptotic_reference(params: MediumParams) -> MediumParams:
    """Reference point for the asymptotic normalization: delta = 8 Omega, delta_s = 0."""
    return params.replace(delta=8.0 * params.omega_c_rabi, delta_s=0.0)


def beta_asymptotic(params: MediumParams) -> RateResult:
    """Scaling law K phi r_b^2 Omega^2 / delta.

    K is fixed once per medium by matching :func:`beta_simplified` at
    delta = 8 Omega, delta_s = 0 (cached).  A regime warning is attached when
    Omega / |delta| > 0.5.
    """
    k = _asymptotic_normalization(asymptotic_reference(params))
    raw = _asymptotic_raw(params)
    diag = {"normalization": k, "error_estimate": 0.0}
    if params.omega_c_rabi / abs(params.delta) > 0.5:
        diag["regime_warning"] = "Omega_c/|delta| > 0.5: outside the asymptotic regime"
        log.warning(diag["regime_warning"])
    return RateResult(complex(k * raw), "asymptotic", diag)


RATE_METHODS = {
    "full": beta_full,
    "simplified": beta_simplified,
    "asymptotic": beta_asymptotic,
}


def rate(params: MediumParams, method: str = "simplified") -> RateResult:
    try:
        fn = RATE_METHODS[method]
    except KeyError:
        raise ValidationError("method", f"unknown rate method {method!r}") from None
    return fn(params)


def _map_point(job):
    i, j, params, method = job
    try:
        res = rate(params, method)
        return i, j, res.beta.real, res.beta.imag, None
    except (RydlossError, ArithmeticError, ValueError) as exc:
        return i, j, math.nan, math.nan, f"{type(exc).__name__}: {exc}"


def _read_checkpoint(path):
    done = {}
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # a truncated final line from an interrupted run
                done[(rec["i"], rec["j"])] = rec
    return done


def beta_map(delta_grid, delta_s_grid, params: MediumParams, method: str = "simplified",
             checkpoint: Optional[str] = None, workers: int = 1) -> RateMap:
    """|beta| over a detuning grid (both grids in rad/us).

    Points are evaluated in row-major (delta_s, delta) order.  With
    ``checkpoint`` every finished point is appended to a JSON-lines file, and
    points already present there are not recomputed.  Failures become NaN
    holes.
    """
    if method not in RATE_METHODS:
        raise ValidationError("method", f"unknown rate method {method!r}")
    delta_grid = np.asarray(delta_grid, dtype=float)
    delta_s_grid = np.asarray(delta_s_grid, dtype=float)
    if delta_grid.size == 0 or delta_s_grid.size == 0:
        raise ValidationError("grid", "empty detuning grid")
    beta = np.full((delta_s_grid.size, delta_grid.size), np.nan + 0j)
    errors = {}
    done = _read_checkpoint(checkpoint)
    jobs = []
    for i, ds in enumerate(delta_s_grid):
        for j, d in enumerate(delta_grid):
            if (i, j) in done:
                rec = done[(i, j)]
                beta[i, j] = complex(rec["re"], rec["im"])
                if rec.get("error"):
                    errors[(i, j)] = rec["error"]
                continue
            jobs.append((i, j, params.replace(delta=float(d), delta_s=float(ds)), method))

    fh = open(checkpoint, "a", encoding="utf-8") if checkpoint else None
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_map_point, jobs, chunksize=max(1, len(jobs) // (4 * workers)))
                for out in results:
                    _store(out, beta, errors, fh)
        else:
            for job in jobs:
                _store(_map_point(job), beta, errors, fh)
    finally:
        if fh:
            fh.close()
    holes = [(i, j, msg) for (i, j), msg in sorted(errors.items())]
    return RateMap(delta_grid=delta_grid, delta_s_grid=delta_s_grid, values=np.abs(beta),
                   beta=beta, method=method, holes=holes)


def _store(out, beta, errors, fh):
    i, j, re, im, err = out
    beta[i, j] = complex(re, im)
    if err:
        errors[(i, j)] = err
    if fh:
        fh.write(json.dumps({"i": i, "j": j, "re": re, "im": im, "error": err}) + "\n")
        fh.flush()


@dataclass
class LocusPoint:
    """Maximum of |beta(delta)| at fixed delta_s (rad/us).

    ``delta_star`` is the global maximum; ``maxima`` lists every refined local
    maximum and ``multimodal`` flags more than one.
    """

    delta_s: float
    delta_star: float
    maxima: list
    multimodal: bool


def beta_max_locus(delta_s_grid, params: MediumParams, window=None, coarse_points: int = 57,
                   method: str = "simplified", tol: float = 1e-3) -> list:
    """delta*(delta_s) maximizing |beta| at each delta_s.

    A coarse scan over ``window`` (default 0.3 to 1.7 Omega) locates local
    maxima, each refined by golden-section search to ``tol`` * Omega.
    """
    om = params.omega_c_rabi
    lo, hi = window if window is not None else (0.3 * om, 1.7 * om)
    coarse = np.linspace(lo, hi, coarse_points)
    out = []
    for ds in np.atleast_1d(np.asarray(delta_s_grid, dtype=float)):
        base = params.replace(delta_s=float(ds))

        def neg(d, base=base):
            return -rate(base.replace(delta=float(d)), method).magnitude

        vals = -np.array([neg(d) for d in coarse])
        peaks = [k for k in range(1, coarse.size - 1)
                 if vals[k] > vals[k - 1] and vals[k] >= vals[k + 1]]
        if not peaks:
            raise WindowError(f"no interior maximum of |beta| in [{lo}, {hi}] at delta_s = {ds}")
        refined = []
        for k in peaks:
            res = minimize_scalar(neg, bracket=(coarse[k - 1], coarse[k], coarse[k + 1]),
                                  method="golden", tol=tol * om / max(abs(coarse[k]), 1e-12) / 10)
            refined.append((float(res.x), -float(res.fun)))
        refined.sort(key=lambda t: -t[1])
        out.append(LocusPoint(delta_s=float(ds), delta_star=refined[0][0],
                              maxima=[d for d, _ in sorted(refined)], multimodal=len(refined) > 1))
    return out
