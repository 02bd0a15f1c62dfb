"""Correlation maps over detuning grids and delayed-detection continuations."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from ..errors import RydlossError, TruncationError, ValidationError
from ..medium import MediumParams
from .profile import DensityProfile
from .solver import E, P, S, Grid, WavefunctionGrid, solve_three

HORIZON_LIFETIMES = 50.0


@dataclass
class CorrelationMap:
    """g2(0), g3(0,0) and eta3(0,0) on a (delta_s, delta) grid (rows follow delta_s).

    Failed points are NaN and listed in ``holes`` as (i, j, message).
    """

    delta_grid: np.ndarray
    delta_s_grid: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    eta3: np.ndarray
    holes: list = field(default_factory=list)
    convergence: Optional[np.ndarray] = None


def _map_job(job):
    i, j, params, profile, grid, extrapolate = job
    try:
        _, res = solve_three(params, profile, grid, extrapolate=extrapolate)
        est = res.convergence.get("g3_estimate", math.nan)
        return i, j, res.g2_0, res.g3_00, est, None
    except (RydlossError, ArithmeticError, ValueError) as exc:
        return i, j, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}"


def correlation_map(delta_grid, delta_s_grid, params: MediumParams, profile: DensityProfile,
                    grid: Grid, extrapolate: bool = True, workers: int = 1) -> CorrelationMap:
    """Equal-time correlations over detuning grids given in rad/us.

    eta3 = 3 g2 - g3 - 2 is applied pointwise to the stored g2 and g3.
    """
    delta_grid = np.asarray(delta_grid, dtype=float)
    delta_s_grid = np.asarray(delta_s_grid, dtype=float)
    if delta_grid.size == 0 or delta_s_grid.size == 0:
        raise ValidationError("grid", "empty detuning grid")
    shape = (delta_s_grid.size, delta_grid.size)
    g2 = np.full(shape, np.nan)
    g3 = np.full(shape, np.nan)
    conv = np.full(shape, np.nan)
    holes = []
    jobs = [(i, j, params.replace(delta=float(d), delta_s=float(ds)), profile, grid, extrapolate)
            for i, ds in enumerate(delta_s_grid) for j, d in enumerate(delta_grid)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_map_job, jobs))
    else:
        results = [_map_job(job) for job in jobs]
    for i, j, a, b, est, err in results:
        g2[i, j], g3[i, j], conv[i, j] = a, b, est
        if err:
            holes.append((i, j, err))
    return CorrelationMap(delta_grid=delta_grid, delta_s_grid=delta_s_grid, g2=g2, g3=g3,
                          eta3=3.0 * g2 - g3 - 2.0, holes=holes, convergence=conv)


class _Continuation:
    """Free single-excitation dynamics of the photon left in the medium after a detection.

    The photon field is eliminated adiabatically, E_j = drive + sum_{k<=j} (-i h/c) g_k P_k,
    and (P, S) obey i dX/dt = A X + b.
    """

    def __init__(self, z, params: MediumParams, profile: DensityProfile, drive: complex):
        m = z.size
        h = z[1] - z[0]
        g = profile.coupling(z, params)
        c = params.light_speed
        kmat = np.tril(np.ones((m, m))) * (-1j * h / c) * g[None, :]
        a = np.zeros((2 * m, 2 * m), dtype=complex)
        a[:m, :m] = g[:, None] * kmat
        a[np.arange(m), np.arange(m)] += -params.cap_delta - params.delta_s
        a[np.arange(m), m + np.arange(m)] = 0.5 * params.omega_c_rabi
        a[m + np.arange(m), np.arange(m)] = 0.5 * params.omega_c_rabi
        a[m + np.arange(m), m + np.arange(m)] = -params.cap_delta_s
        b = np.zeros(2 * m, dtype=complex)
        b[:m] = g * drive
        self.m = m
        self.a = a
        self.exit_row = kmat[-1]
        self.steady = np.linalg.solve(a, -b)
        rates = -np.linalg.eigvals(a).imag
        slowest = rates.min()
        self.horizon = HORIZON_LIFETIMES / slowest if slowest > 0 else math.inf

    def exit_field(self, x0, taus):
        """E at the last grid point for each delay, relative to its value at tau = 0."""
        taus = np.asarray(taus, dtype=float)
        if np.any(taus < 0):
            raise ValidationError("tau", "delays must be non-negative")
        if np.any(taus > self.horizon):
            raise TruncationError(f"delay {taus.max():.4g} us exceeds the horizon "
                                  f"{self.horizon:.4g} us ({HORIZON_LIFETIMES:g} lifetimes of the "
                                  "slowest mode)")
        # the mode basis is far too non-normal for an eigendecomposition, so step
        # through the sorted delays with cached exponentials (one for uniform grids)
        order = np.argsort(taus)
        states = np.empty((taus.size, 2 * self.m), dtype=complex)
        cache = {}
        dev = x0 - self.steady
        now = 0.0
        for idx in order:
            step = float(taus[idx]) - now
            if step > 0:
                key = round(step, 12)
                if key not in cache:
                    cache[key] = scipy.linalg.expm(-1j * self.a * step)
                dev = cache[key] @ dev
                now = float(taus[idx])
            states[idx] = self.steady + dev
        p_part = states[:, :self.m] - x0[None, :self.m]
        return p_part @ self.exit_row


def g2_tau_profile(two_body: WavefunctionGrid, tau_grid, params: MediumParams,
                   profile: DensityProfile) -> np.ndarray:
    """g2(tau) from the solved two-body grid.

    After the first photon leaves at the exit, the second excitation starts
    from the exit row psi_{E,alpha}(z_max, z) and evolves with the
    non-interacting single-body equations under the continuing input
    (amplitude t).  The detected field is offset so that tau = 0 reproduces
    the equal-time two-body amplitude exactly.

    Raises
    ------
    TruncationError
        For delays beyond the horizon of 50 lifetimes of the slowest mode.
    """
    if two_body.order != 2:
        raise ValidationError("two_body", "expected a two-body wavefunction")
    psi = two_body.amplitudes
    row = psi[-1]
    x0 = np.concatenate([row[:, 3 * E + P], row[:, 3 * E + S]])
    cont = _Continuation(two_body.z, params, profile, drive=two_body.t)
    e_out = psi[-1, -1, 3 * E + E] + cont.exit_field(x0, tau_grid)
    return np.abs(e_out) ** 2 / abs(two_body.t) ** 4


def g3_tau_profile(three_body: WavefunctionGrid, tau_grid, params: MediumParams,
                   profile: DensityProfile) -> np.ndarray:
    """g3(0, tau): two photons detected together, the third after a delay tau.

    Uses the three-body exit face psi(z, z_max, z_max) as the initial state and
    the equal-time two-photon exit amplitude as the drive.
    """
    if three_body.order != 3 or three_body.lower is None:
        raise ValidationError("three_body", "expected a three-body wavefunction with its two-body solution")
    face = three_body.amplitudes
    x0 = np.concatenate([face[:, 9 * P], face[:, 9 * S]])
    drive = three_body.lower.amplitudes[-1, -1, 0]
    cont = _Continuation(three_body.z, params, profile, drive=drive)
    e_out = face[-1, 0] + cont.exit_field(x0, tau_grid)
    return np.abs(e_out) ** 2 / abs(three_body.t) ** 6
