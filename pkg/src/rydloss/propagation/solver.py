"""Steady-state propagation of one, two and three excitations through the medium.

Each excitation carries an atomic label in {E, P, S}.  Only photon (E) slots
are transported: the single-particle operator is the single-excitation
Hamiltonian with cq replaced by -i c d/dz.  At zero energy the system is
marched with first-order implicit upwind differences along slabs of constant
index sum, so every grid point depends only on the previous slab and is solved
locally from a small dense linear system (3^N unknowns).

Faces where a photon enters the grid carry the lower-order solution (the
input is a coherent state with unit amplitude per photon).  With the
transmission amplitude t computed by the same scheme, the non-interacting
problem factorizes exactly, so g2 = g3 = 1 at C6 = 0 to rounding error.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import MemoryBudgetError, PoleError, ValidationError
from ..interactions import blockade_radius, chi_bar
from ..medium import MediumParams
from .profile import DensityProfile

E, P, S = 0, 1, 2
POTENTIAL_CAP = 1e3  # |V| <= POTENTIAL_CAP / |chi_bar(0)|
DEFAULT_MEMORY_BUDGET = 2 * 1024 ** 3
_SOLVE_CHUNK = 4096


@dataclass(frozen=True)
class Grid:
    """Uniform axial grid with ``points`` nodes spanning the cloud extent."""

    points: int
    half_width: Optional[float] = None

    def __post_init__(self):
        if self.points < 3:
            raise ValidationError("grid", "at least 3 grid points are required")

    def positions(self, profile: DensityProfile) -> np.ndarray:
        half = self.half_width if self.half_width is not None else profile.extent()
        return np.linspace(-half, half, self.points)

    def coarsened(self) -> "Grid":
        """Grid with twice the spacing (requires an odd number of points)."""
        if (self.points - 1) % 2:
            raise ValidationError("grid", "coarsening needs an odd number of points")
        return Grid((self.points - 1) // 2 + 1, self.half_width)


def default_grid(params: MediumParams, profile: DensityProfile) -> Grid:
    """Grid with spacing min(r_b/12, sigma_z/60), rounded up to an odd size."""
    r_b = blockade_radius(0.0, params)
    dz = min(r_b / 12.0, profile.sigma_z / 60.0)
    m = int(math.ceil(2 * profile.extent() / dz)) + 1
    return Grid(m + (1 - m % 2))


@dataclass
class SingleSolution:
    """Single-photon solution: transmission amplitude and the three components."""

    z: np.ndarray
    t: complex
    psi: np.ndarray  # (M, 3): E, P, S


@dataclass
class WavefunctionGrid:
    """N-excitation amplitudes on the grid.

    For N = 2, ``amplitudes`` has shape (M, M, 9) on the full grid.  For N = 3
    only sorted points i <= j <= k are kept while marching; ``amplitudes``
    holds the exit face psi(i, M-1, M-1) with shape (M, 27).  Components are
    indexed 9 a + 3 b + c (or 3 a + b) with labels E = 0, P = 1, S = 2.
    """

    order: int
    z: np.ndarray
    amplitudes: np.ndarray
    t: complex
    asymmetry: float = 0.0
    storage: str = "full"
    lower: Optional["WavefunctionGrid"] = None


@dataclass
class CorrelationResult:
    """Equal-time correlations and their convergence record.

    eta3_00 = 3 g2_0 - g3_00 - 2 holds by construction.
    """

    g2_0: float
    g3_00: Optional[float] = None
    eta3_00: Optional[float] = None
    g2_tau: Optional[np.ndarray] = None
    grid: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g3_00 is not None and self.eta3_00 is None:
            self.eta3_00 = 3.0 * self.g2_0 - self.g3_00 - 2.0


class _Medium:
    """Grid-sampled single-particle blocks and pair potential."""

    def __init__(self, params: MediumParams, profile: DensityProfile, grid: Grid):
        self.params = params
        self.profile = profile
        self.z = grid.positions(profile)
        self.m = self.z.size
        self.h = self.z[1] - self.z[0]
        self.g = profile.coupling(self.z, params)
        self.flux = -1j * params.light_speed / self.h
        b = np.zeros((self.m, 3, 3), dtype=complex)
        b[:, E, E] = self.flux
        b[:, E, P] = b[:, P, E] = self.g
        b[:, P, P] = -params.cap_delta - params.delta_s
        b[:, P, S] = b[:, S, P] = 0.5 * params.omega_c_rabi
        b[:, S, S] = -params.cap_delta_s
        self.block = b
        if params.c6 != 0:
            self.v_cap = POTENTIAL_CAP / abs(chi_bar(0.0, params))
        else:
            self.v_cap = 0.0

    def potential(self, dz):
        """Capped V = C6 / r^6."""
        c6 = self.params.c6
        if c6 == 0:
            return np.zeros(np.shape(dz))
        r6 = np.asarray(dz, dtype=float) ** 6
        with np.errstate(divide="ignore"):
            mag = np.where(r6 > 0, abs(c6) / np.where(r6 > 0, r6, 1.0), np.inf)
        return math.copysign(1.0, c6) * np.minimum(mag, self.v_cap)


def _batched_solve(mat, rhs):
    out = np.empty(rhs.shape, dtype=complex)
    for a in range(0, rhs.shape[0], _SOLVE_CHUNK):
        sl = slice(a, a + _SOLVE_CHUNK)
        try:
            out[sl] = np.linalg.solve(mat[sl], rhs[sl][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise PoleError("local algebraic block is singular") from exc
    return out


def _march_single(med: _Medium) -> np.ndarray:
    psi = np.empty((med.m, 3), dtype=complex)
    prev = 1.0 + 0j
    for i in range(med.m):
        rhs = np.array([med.flux * prev, 0.0, 0.0])
        try:
            psi[i] = np.linalg.solve(med.block[i], rhs)
        except np.linalg.LinAlgError as exc:
            raise PoleError("single-photon local block is singular", location={"z": med.z[i]}) from exc
        prev = psi[i, E]
    return psi


def eliminated_coefficient(params: MediumParams) -> complex:
    """K in d psi_E/dz = -i g^2 K psi_E / c, with P and S eliminated at zero energy.

    K = 1 / (Delta + delta_s - Omega^2 / (4 Delta_s)).

    Raises
    ------
    PoleError
        If Delta_s = 0 while Omega > 0 (use gamma_s > 0).
    """
    ds = params.cap_delta_s
    x = params.cap_delta + params.delta_s
    om2 = params.omega_c_rabi ** 2
    if ds == 0:
        if om2 > 0:
            raise PoleError("Delta_s = 0 makes the eliminated Rydberg block singular; "
                            "use gamma_s > 0 or delta_s != 0")
        return 1.0 / x
    den = x - om2 / (4.0 * ds)
    if den == 0:
        raise PoleError("eliminated single-photon coefficient diverges")
    return 1.0 / den


def analytic_transmission(params: MediumParams, profile: DensityProfile) -> complex:
    """Closed-form amplitude exp(-i K OD Gamma / 4) over the whole cloud."""
    k = eliminated_coefficient(params)
    return complex(np.exp(-1j * k * params.od * params.gamma_p / 4.0))


def solve_single(params: MediumParams, profile: DensityProfile, grid: Optional[Grid] = None,
                 scheme: str = "exact") -> SingleSolution:
    """Single-photon steady state.

    ``scheme="exact"`` integrates d psi_E/dz = -i g(z)^2 K psi_E / c using the
    exact cumulative integral of g^2 from -inf; P and S follow algebraically.
    ``scheme="marching"`` uses the same discrete upwind scheme as the few-body
    solvers (its t is the consistent normalization for g2 and g3).
    """
    if grid is None:
        grid = Grid(1201, half_width=max(8.0 * profile.sigma_z, profile.extent()))
    if scheme == "marching":
        med = _Medium(params, profile, grid)
        psi = _march_single(med)
        return SingleSolution(z=med.z, t=complex(psi[-1, E]), psi=psi)
    if scheme != "exact":
        raise ValidationError("scheme", f"unknown scheme {scheme!r}")
    k = eliminated_coefficient(params)
    z = grid.positions(profile)
    cum = profile.coupling_sq_integral(z, params)
    e = np.exp(-1j * k * cum / params.light_speed)
    g = profile.coupling(z, params)
    psi = np.zeros((z.size, 3), dtype=complex)
    psi[:, E] = e
    ds = params.cap_delta_s
    if ds != 0:
        # P = g E K, S = Omega P / (2 Delta_s)
        psi[:, P] = g * e * k
        psi[:, S] = 0.5 * params.omega_c_rabi * psi[:, P] / ds
    else:
        psi[:, P] = g * e * k
    return SingleSolution(z=z, t=complex(e[-1]), psi=psi)


def _pair_potential(med):
    return med.potential(med.z[:, None] - med.z[None, :])


def _march_two(med: _Medium, single: np.ndarray, sweep_seed=None):
    m = med.m
    eye = np.eye(3)
    kron1 = np.einsum("nab,cd->nacbd", med.block, eye).reshape(m, 9, 9)
    kron2 = np.einsum("ab,ncd->nacbd", eye, med.block).reshape(m, 9, 9)
    vpair = _pair_potential(med)
    psi = np.zeros((m, m, 9), dtype=complex)
    slot1_e = np.array([3 * E + b for b in range(3)])
    slot2_e = np.array([3 * a + E for a in range(3)])
    rng = np.random.default_rng(sweep_seed) if sweep_seed is not None else None
    f = med.flux
    for s in range(2 * m - 1):
        ii = np.arange(max(0, s - m + 1), min(m, s + 1))
        if rng is not None:
            ii = rng.permutation(ii)
        jj = s - ii
        mat = kron1[ii] + kron2[jj]
        mat[:, 8, 8] += vpair[ii, jj]
        rhs = np.zeros((ii.size, 9), dtype=complex)
        has = ii > 0
        prev1 = np.where(has[:, None], psi[np.maximum(ii - 1, 0), jj][:, slot1_e], single[jj])
        has = jj > 0
        prev2 = np.where(has[:, None], psi[ii, np.maximum(jj - 1, 0)][:, slot2_e], single[ii])
        rhs[:, slot1_e] += f * prev1
        rhs[:, slot2_e] += f * prev2
        psi[ii, jj] = _batched_solve(mat, rhs)
    swap = np.array([3 * b + a for a in range(3) for b in range(3)])
    diff = np.abs(psi - psi.transpose(1, 0, 2)[:, :, swap]).max()
    asym = diff / max(np.abs(psi).max(), 1e-300)
    return psi, float(asym)


def _correlation_two(psi, t):
    return float(abs(psi[-1, -1, 0]) ** 2 / abs(t) ** 4)


def solve_two(params: MediumParams, profile: DensityProfile, grid: Optional[Grid] = None,
              extrapolate: bool = True, sweep_seed=None):
    """Two-excitation steady state and g2(0).

    Parameters
    ----------
    extrapolate : bool
        Also solve on the grid with doubled spacing and report the
        first-order Richardson value 2 g(h) - g(2h) as ``g2_0``.
    sweep_seed : int, optional
        Shuffle the in-slab order of local solves (diagnostic; the result is
        order independent).

    Returns
    -------
    WavefunctionGrid, CorrelationResult
    """
    if grid is None:
        grid = default_grid(params, profile)
    wave, raw = _two_on_grid(params, profile, grid, sweep_seed)
    conv = {"raw": raw, "points": grid.points}
    value = raw
    if extrapolate:
        coarse = grid.coarsened()
        _, raw_c = _two_on_grid(params, profile, coarse, sweep_seed)
        value = 2.0 * raw - raw_c
        conv.update(coarse=raw_c, extrapolated=value, change=abs(raw - raw_c),
                    estimate=abs(value - raw))
    result = CorrelationResult(g2_0=value, grid=_grid_meta(wave.z, grid),
                               convergence={"g2": conv, "asymmetry": wave.asymmetry})
    return wave, result


def _two_on_grid(params, profile, grid, sweep_seed=None):
    med = _Medium(params, profile, grid)
    single = _march_single(med)
    t = complex(single[-1, E])
    psi, asym = _march_two(med, single, sweep_seed)
    wave = WavefunctionGrid(order=2, z=med.z, amplitudes=psi, t=t, asymmetry=asym)
    return wave, _correlation_two(psi, t)


def _grid_meta(z, grid):
    return {"points": int(grid.points), "z_min_um": float(z[0]), "z_max_um": float(z[-1]),
            "dz_um": float(z[1] - z[0])}


# --- three excitations -----------------------------------------------------

_PERMS = list(itertools.permutations(range(3)))
_COMPS = np.array([(a, b, c) for a in range(3) for b in range(3) for c in range(3)])


def _perm_component_maps():
    """For each slot permutation sigma, component index c -> c' = (a_s0, a_s1, a_s2)."""
    maps = np.empty((6, 27), dtype=np.intp)
    for n, sig in enumerate(_PERMS):
        permuted = _COMPS[:, list(sig)]
        maps[n] = permuted[:, 0] * 9 + permuted[:, 1] * 3 + permuted[:, 2]
    return maps


_PERM_MAPS = _perm_component_maps()
_PERM_CODE = np.full(27, -1, dtype=np.intp)
for _n, _sig in enumerate(_PERMS):
    _PERM_CODE[_sig[0] * 9 + _sig[1] * 3 + _sig[2]] = _n
_SLOT_E = [np.nonzero(_COMPS[:, a] == E)[0] for a in range(3)]
# two-body component of the remaining slots for a ghost in slot a
_GHOST_COMP = [
    _COMPS[_SLOT_E[0]][:, 1] * 3 + _COMPS[_SLOT_E[0]][:, 2],
    _COMPS[_SLOT_E[1]][:, 0] * 3 + _COMPS[_SLOT_E[1]][:, 2],
    _COMPS[_SLOT_E[2]][:, 0] * 3 + _COMPS[_SLOT_E[2]][:, 1],
]
_SS_PAIRS = [
    (_COMPS[:, 0] == S) & (_COMPS[:, 1] == S),
    (_COMPS[:, 0] == S) & (_COMPS[:, 2] == S),
    (_COMPS[:, 1] == S) & (_COMPS[:, 2] == S),
]
_SWAP12 = _PERM_MAPS[_PERMS.index((1, 0, 2))]
_SWAP23 = _PERM_MAPS[_PERMS.index((0, 2, 1))]


def _sorted_slab(s, m):
    """Sorted points (i <= j <= k < m) with i + j + k = s."""
    ii, jj = [], []
    for i in range(0, s // 3 + 1):
        j_lo = max(i, s - i - (m - 1))
        j_hi = (s - i) // 2
        if j_lo > j_hi:
            continue
        j = np.arange(j_lo, j_hi + 1)
        ii.append(np.full(j.size, i))
        jj.append(j)
    if not ii:
        e = np.empty(0, dtype=np.intp)
        return e, e, e
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    return i, j, s - i - j


def three_body_memory_estimate(points: int) -> int:
    """Peak bytes of the slab-storage three-body solve."""
    m = points
    slab = m * m // 4 + m
    two_body = m * m * 9 * 16
    slabs = 2 * slab * 27 * 16
    tables = 2 * m * m * 8
    work = min(slab, _SOLVE_CHUNK) * 27 * 27 * 16 * 3 + slab * 27 * 16 * 6
    return two_body + slabs + tables + work + m * 27 * 16


def _march_three(med: _Medium, psi2: np.ndarray, sweep_seed=None):
    m = med.m
    eye = np.eye(3)
    t1 = np.einsum("nab,cd,ef->nacebdf", med.block, eye, eye).reshape(m, 27, 27)
    t2 = np.einsum("ab,ncd,ef->nacebdf", eye, med.block, eye).reshape(m, 27, 27)
    t3 = np.einsum("ab,cd,nef->nacebdf", eye, eye, med.block).reshape(m, 27, 27)
    vpair = _pair_potential(med)
    f = med.flux
    pos_prev = np.zeros((m, m), dtype=np.intp)
    pos_cur = np.zeros((m, m), dtype=np.intp)
    prev = np.zeros((0, 27), dtype=complex)
    face = np.zeros((m, 27), dtype=complex)
    rng = np.random.default_rng(sweep_seed) if sweep_seed is not None else None
    asym = 0.0
    scale = 0.0
    for s in range(3 * m - 2):
        ii, jj, kk = _sorted_slab(s, m)
        if rng is not None:
            order = rng.permutation(ii.size)
            ii, jj, kk = ii[order], jj[order], kk[order]
        n = ii.size
        rhs = np.zeros((n, 27), dtype=complex)
        pts = np.stack([ii, jj, kk], axis=1)
        for slot in range(3):
            nb = pts.copy()
            nb[:, slot] -= 1
            ghost = nb[:, slot] < 0
            comps = _SLOT_E[slot]
            if np.any(ghost):
                rest = [a for a in range(3) if a != slot]
                g_idx = np.nonzero(ghost)[0]
                vals = psi2[nb[g_idx, rest[0]], nb[g_idx, rest[1]]][:, _GHOST_COMP[slot]]
                rhs[np.ix_(g_idx, comps)] += f * vals
            live = np.nonzero(~ghost)[0]
            if live.size:
                x = nb[live]
                order = np.argsort(x, axis=1, kind="stable")
                srt = np.take_along_axis(x, order, axis=1)
                code = _PERM_CODE[order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]]
                idx = pos_prev[srt[:, 0], srt[:, 1]]
                cmap = _PERM_MAPS[code][:, comps]
                vals = prev[idx[:, None], cmap]
                rhs[np.ix_(live, comps)] += f * vals
        mat = t1[ii] + t2[jj] + t3[kk]
        v12 = vpair[ii, jj]
        v13 = vpair[ii, kk]
        v23 = vpair[jj, kk]
        diag = (_SS_PAIRS[0][None, :] * v12[:, None] + _SS_PAIRS[1][None, :] * v13[:, None]
                + _SS_PAIRS[2][None, :] * v23[:, None])
        mat[:, np.arange(27), np.arange(27)] += diag
        cur = _batched_solve(mat, rhs)
        pos_cur[ii, jj] = np.arange(n)
        # bosonic symmetry diagnostic on coincident indices
        scale = max(scale, float(np.abs(cur).max()) if n else 0.0)
        eq = ii == jj
        if np.any(eq):
            asym = max(asym, float(np.abs(cur[eq] - cur[eq][:, _SWAP12]).max()))
        eq = jj == kk
        if np.any(eq):
            asym = max(asym, float(np.abs(cur[eq] - cur[eq][:, _SWAP23]).max()))
        exit_face = (jj == m - 1) & (kk == m - 1)
        if np.any(exit_face):
            face[ii[exit_face]] = cur[exit_face]
        prev = cur
        pos_prev, pos_cur = pos_cur, pos_prev
    return face, asym / max(scale, 1e-300)


def _three_on_grid(params, profile, grid, budget, sweep_seed=None):
    need = three_body_memory_estimate(grid.points)
    if need > budget:
        raise MemoryBudgetError(f"three-body solve on {grid.points}^3 needs about "
                                f"{need / 1024 ** 2:.0f} MiB, budget {budget / 1024 ** 2:.0f} MiB")
    med = _Medium(params, profile, grid)
    single = _march_single(med)
    t = complex(single[-1, E])
    psi2, asym2 = _march_two(med, single)
    face, asym3 = _march_three(med, psi2, sweep_seed)
    g2 = _correlation_two(psi2, t)
    g3 = float(abs(face[-1, 0]) ** 2 / abs(t) ** 6)
    wave2 = WavefunctionGrid(order=2, z=med.z, amplitudes=psi2, t=t, asymmetry=asym2)
    wave3 = WavefunctionGrid(order=3, z=med.z, amplitudes=face, t=t, asymmetry=asym3,
                             storage="exit-face", lower=wave2)
    return wave2, wave3, g2, g3


def solve_three(params: MediumParams, profile: DensityProfile, grid: Optional[Grid] = None,
                extrapolate: bool = True, memory_budget: int = DEFAULT_MEMORY_BUDGET,
                sweep_seed=None):
    """Three-excitation steady state, g3(0,0) and eta3(0,0).

    The two-body problem is solved on the same grid (it supplies the entry
    faces), so g2(0) in the result is consistent with g3(0,0).

    Returns
    -------
    WavefunctionGrid, CorrelationResult
        The wavefunction holds the exit face psi(i, M-1, M-1) and links the
        two-body solution through ``lower``.

    Raises
    ------
    MemoryBudgetError
        If the estimated peak memory exceeds ``memory_budget`` bytes.
    """
    if grid is None:
        grid = default_grid(params, profile)
    wave2, wave3, g2, g3 = _three_on_grid(params, profile, grid, memory_budget, sweep_seed)
    conv = {"points": grid.points, "g2_raw": g2, "g3_raw": g3,
            "asymmetry_two": wave2.asymmetry, "asymmetry_three": wave3.asymmetry}
    if extrapolate:
        coarse = grid.coarsened()
        _, _, g2c, g3c = _three_on_grid(params, profile, coarse, memory_budget, sweep_seed)
        g2x, g3x = 2.0 * g2 - g2c, 2.0 * g3 - g3c
        conv.update(g2_coarse=g2c, g3_coarse=g3c, g2_change=abs(g2 - g2c),
                    g3_change=abs(g3 - g3c), g2_estimate=abs(g2x - g2), g3_estimate=abs(g3x - g3))
        eta_raw = 3 * g2 - g3 - 2
        eta_c = 3 * g2c - g3c - 2
        conv.update(eta3_raw=eta_raw, eta3_coarse=eta_c)
        g2, g3 = g2x, g3x
    result = CorrelationResult(g2_0=g2, g3_00=g3, grid=_grid_meta(wave3.z, grid), convergence=conv)
    return wave3, result
