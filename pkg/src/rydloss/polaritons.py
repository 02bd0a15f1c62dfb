"""Single-excitation band structure of the Rydberg-EIT medium.

The single-excitation Hamiltonian in the basis {E, P, S} (photon field,
intermediate state, Rydberg state) is diagonalized over momentum grids.  The
three resulting branches are tracked by eigenvector continuity and labelled
D (dark), L (lower bright) and U (upper bright).  The module also provides
the Rydberg-projected single-body propagator G_ss and an exact inversion of
the dispersion relation, which gives q(omega) and 1/v_g(omega) on any branch.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import PoleError, TrackingError, ValidationError, WindowError
from .medium import MediumParams

BRANCHES = ("D", "L", "U")
K_INFINITE = "infinite"
# Minimum eigenvector overlap accepted between adjacent grid points.
MIN_TRACKING_OVERLAP = 0.5


def hamiltonian(q, params: MediumParams) -> np.ndarray:
    """Single-excitation Hamiltonian H(q).

    Parameters
    ----------
    q : float or array_like
        Momentum in 1/um.
    params : MediumParams

    Returns
    -------
    ndarray
        Complex array of shape ``np.shape(q) + (3, 3)``.
    """
    q = np.asarray(q, dtype=float)
    h = np.zeros(q.shape + (3, 3), dtype=complex)
    h[..., 0, 0] = params.light_speed * q
    h[..., 0, 1] = h[..., 1, 0] = params.g_peak
    h[..., 1, 1] = -params.cap_delta - params.delta_s
    h[..., 1, 2] = h[..., 2, 1] = 0.5 * params.omega_c_rabi
    h[..., 2, 2] = -params.cap_delta_s
    return h


@dataclass
class BranchSpectrum:
    """Continuity-tracked complex dispersions.

    ``omega``, ``rydberg_overlap`` and ``eigenvectors`` are dicts keyed by
    branch label ("D", "L", "U").  Eigenvectors have unit Euclidean norm and
    components ordered (E, P, S).
    """

    q_grid: np.ndarray
    omega: dict
    rydberg_overlap: dict
    eigenvectors: dict
    params: MediumParams = field(repr=False)
    seed_index: int = 0

    def stacked_vectors(self, index: int) -> np.ndarray:
        """Eigenvectors at one grid point as columns ordered D, L, U."""
        return np.stack([self.eigenvectors[b][index] for b in BRANCHES], axis=-1)


def _eig(q, params):
    w, v = np.linalg.eig(hamiltonian(q, params))
    v = v / np.linalg.norm(v, axis=-2, keepdims=True)
    return w, v


def _match(reference, vectors):
    """Permutation of ``vectors`` columns that best matches ``reference`` columns.

    Returns the permutation and the matched overlap moduli.
    """
    overlap = np.abs(reference.conj().T @ vectors)
    rows, cols = linear_sum_assignment(-overlap)
    perm = cols[np.argsort(rows)]
    return perm, overlap[np.arange(3), perm]


def _align_phase(reference, vector):
    """Rotate ``vector`` by a global phase so its overlap with ``reference`` is real positive."""
    s = np.vdot(reference, vector)
    return vector * (np.conj(s) / abs(s)) if abs(s) > 0 else vector


def branch_spectrum(q_grid, params: MediumParams, q0: float = 0.0) -> BranchSpectrum:
    """Diagonalize H(q) on ``q_grid`` and track the D, L, U branches.

    Parameters
    ----------
    q_grid : array_like
        Strictly increasing momenta (1/um).  Must contain the seed momentum.
    params : MediumParams
    q0 : float
        Seed momentum, normally the incoming momentum of the dark polariton.
        The grid point nearest to ``q0`` must lie within 1e-9 relative of it.

    Raises
    ------
    ValidationError
        If the grid is not strictly increasing or does not contain ``q0``.
    TrackingError
        If adjacent eigenvectors cannot be matched with overlap above 0.5.
    """
    q_grid = np.asarray(q_grid, dtype=float)
    if q_grid.ndim != 1 or q_grid.size < 2 or np.any(np.diff(q_grid) <= 0):
        raise ValidationError("q_grid", "must be a strictly increasing 1-D array")
    seed = int(np.argmin(np.abs(q_grid - q0)))
    scale = max(abs(q0), np.max(np.abs(np.diff(q_grid))))
    if abs(q_grid[seed] - q0) > 1e-9 * scale:
        raise ValidationError("q_grid", f"grid must contain the seed momentum q0 = {q0}")

    w_all, v_all = _eig(q_grid, params)
    n = q_grid.size
    omega = np.empty((n, 3), dtype=complex)
    vecs = np.empty((n, 3, 3), dtype=complex)

    # Seed: D is the eigenvalue nearest zero energy, then L below and U above it.
    w0, v0 = w_all[seed], v_all[seed]
    d = int(np.argmin(np.abs(w0)))
    others = [i for i in range(3) if i != d]
    others.sort(key=lambda i: w0[i].real)
    order = [d, others[0], others[1]]
    omega[seed] = w0[order]
    for col, i in enumerate(order):
        v = v0[:, i]
        k = int(np.argmax(np.abs(v)))
        vecs[seed, :, col] = v * (abs(v[k]) / v[k])

    for direction in (1, -1):
        i = seed + direction
        while 0 <= i < n:
            ref = vecs[i - direction]
            perm, ov = _match(ref, v_all[i])
            if np.any(ov < MIN_TRACKING_OVERLAP):
                raise TrackingError(
                    f"branch tracking ambiguous between q = {q_grid[i - direction]:.6g} and "
                    f"q = {q_grid[i]:.6g} 1/um (overlaps {np.round(ov, 3)}); densify the grid")
            omega[i] = w_all[i][perm]
            for col in range(3):
                vecs[i, :, col] = _align_phase(ref[:, col], v_all[i][:, perm[col]])
            i += direction

    return BranchSpectrum(
        q_grid=q_grid,
        omega={b: omega[:, j] for j, b in enumerate(BRANCHES)},
        rydberg_overlap={b: vecs[:, 2, j] for j, b in enumerate(BRANCHES)},
        eigenvectors={b: vecs[:, :, j] for j, b in enumerate(BRANCHES)},
        params=params,
        seed_index=seed,
    )


def eigenpairs_at(q, spectrum: BranchSpectrum):
    """Eigenvalues and eigenvectors at an arbitrary momentum, labelled by matching.

    The reference is the tracked eigenbasis at the nearest grid point.

    Returns
    -------
    omega : ndarray, shape (3,)
        Ordered D, L, U.
    vectors : ndarray, shape (3, 3)
        Columns ordered D, L, U.
    """
    idx = int(np.argmin(np.abs(spectrum.q_grid - q)))
    ref = spectrum.stacked_vectors(idx)
    w, v = _eig(q, spectrum.params)
    perm, ov = _match(ref, v)
    if np.any(ov < MIN_TRACKING_OVERLAP):
        raise TrackingError(f"cannot label eigenvectors at q = {q:.6g} 1/um; densify the grid")
    return w[perm], v[:, perm]


def _branch_energy(branch, q, spectrum):
    w, _ = eigenpairs_at(q, spectrum)
    return w[BRANCHES.index(branch)]


def group_velocity(branch: str, q: float, spectrum: BranchSpectrum, rel_step: float = 1e-4):
    """Group velocity d omega / dq (um/us) of one branch at momentum ``q``.

    Uses a fourth-order Richardson combination of centred differences with
    steps ``h`` and ``h/2`` around ``q``, relabelling eigenpairs by overlap at
    every stencil point.

    Raises
    ------
    WindowError
        If ``q`` is not strictly inside the spectrum's grid.
    """
    if branch not in BRANCHES:
        raise ValidationError("branch", f"expected one of {BRANCHES}, got {branch!r}")
    qg = spectrum.q_grid
    if not (qg[0] < q < qg[-1]):
        raise WindowError(f"q = {q} lies outside the open grid interval ({qg[0]}, {qg[-1]}); "
                          "extrapolation refused")
    p = spectrum.params
    q_scale = max(abs(q), p.omega_c_rabi / p.light_speed, 1e-12)
    h = rel_step * q_scale
    h = min(h, 0.5 * (q - qg[0]), 0.5 * (qg[-1] - q))

    def diff(step):
        return (_branch_energy(branch, q + step, spectrum)
                - _branch_energy(branch, q - step, spectrum)) / (2 * step)

    d1, d2 = diff(h), diff(h / 2)
    return (4 * d2 - d1) / 3


def hellmann_feynman_velocity(vector: np.ndarray, params: MediumParams) -> complex:
    """d omega/dq from an eigenvector of the complex-symmetric H(q).

    For H = H^T, d omega/dq = v^T (dH/dq) v / (v^T v) = c v_E^2 / (v^T v).
    """
    vector = np.asarray(vector)
    return params.light_speed * vector[0] ** 2 / np.dot(vector, vector)


def _continued_sqrt(radicand_at, steps: int = 64) -> complex:
    """Square root continued from the positive root at t = 0 along t in [0, 1]."""
    r0 = radicand_at(0.0)
    root = cmath.sqrt(r0)
    if root.real < 0:
        root = -root
    if radicand_at(1.0) == r0:
        # zero-length path (no loss): nothing to continue
        return root
    for t in np.linspace(0.0, 1.0, steps + 1)[1:]:
        cand = cmath.sqrt(radicand_at(t))
        root = cand if abs(cand - root) <= abs(cand + root) else -cand
    return root


def omega_plus(params: MediumParams, use_delta_tilde: bool = False) -> complex:
    """Saturation energy omega_+ of the flat parts of the D and U branches.

    omega_+ = (-Delta + sqrt((Delta + Delta_s)^2 + Omega^2) + Delta_s) / 2, with the
    square root continued along a straight path in the linewidths from the
    zero-loss point, where it is the positive real root.

    Parameters
    ----------
    use_delta_tilde : bool
        Replace Delta by Delta~ = Delta - i gamma_s/2 (comparison mode).
    """
    big = params.cap_delta_tilde if use_delta_tilde else params.cap_delta
    small = params.cap_delta_s
    om2 = params.omega_c_rabi ** 2
    d0, ds0 = complex(params.delta), complex(params.delta_s)

    def radicand(t):
        d = d0 + t * (big - d0)
        ds = ds0 + t * (small - ds0)
        return (d + ds) ** 2 + om2

    return 0.5 * (-big + _continued_sqrt(radicand) + small)


def saturation_energies(params: MediumParams) -> tuple:
    """Exact large-|q| limits of the bright/dark branches, (omega_minus, omega_plus_exact).

    These are the roots of A(omega) = (omega + Delta + delta_s)(omega + Delta_s) - Omega^2/4,
    the poles of the inverted dispersion q(omega).  At delta_s = 0 and zero loss the
    upper root coincides with :func:`omega_plus`.
    """
    x = params.cap_delta + params.delta_s
    ds = params.cap_delta_s
    root = cmath.sqrt((x - ds) ** 2 + params.omega_c_rabi ** 2)
    if root.real < 0:
        root = -root
    lo = 0.5 * (-(x + ds) - root)
    hi = 0.5 * (-(x + ds) + root)
    return lo, hi


@dataclass(frozen=True)
class PropagatorQuery:
    """Arguments of G_ss: momentum ``k`` (1/um) or ``"infinite"``, and energy ``omega``."""

    k: Union[float, str]
    omega: complex

    @property
    def is_infinite(self) -> bool:
        return isinstance(self.k, str)

    def __post_init__(self):
        if isinstance(self.k, str) and self.k != K_INFINITE:
            raise ValidationError("k", f"expected a momentum or {K_INFINITE!r}, got {self.k!r}")


def g_ss(query: PropagatorQuery, params: MediumParams, k_max: float = None) -> complex:
    """Rydberg-projected single-body propagator G_ss[k, omega].

    Finite ``k`` evaluates the closed form
    ``[(w - ck)(X + w) - g^2] / [(Ds + w)((w - ck)(X + w) - g^2) + Omega^2 (ck - w)/4]``
    with X = Delta~ + Delta_s = Delta + delta_s; it equals the (S, S) element of
    (omega - H(k))^-1.  ``k = "infinite"`` gives the algebraic limit
    ``(X + w) / [(Ds + w)(X + w) - Omega^2/4]``.

    Raises
    ------
    ValidationError
        If ``|k| >= k_max``.
    PoleError
        If the denominator vanishes relative to its scale.
    """
    w = complex(query.omega)
    x = params.cap_delta + params.delta_s
    ds = params.cap_delta_s
    quarter_om2 = 0.25 * params.omega_c_rabi ** 2
    if query.is_infinite:
        num = x + w
        den = (ds + w) * (x + w) - quarter_om2
        scale = abs(ds + w) * abs(x + w) + quarter_om2
    else:
        k = float(query.k)
        if k_max is not None and abs(k) >= k_max:
            raise ValidationError("k", f"|k| = {abs(k)} exceeds configured k_max = {k_max}")
        ck = params.light_speed * k
        num = (w - ck) * (x + w) - params.g_peak ** 2
        den = (ds + w) * num + quarter_om2 * (ck - w)
        scale = abs(ds + w) * (abs(w - ck) * abs(x + w) + params.g_peak ** 2) \
            + quarter_om2 * abs(ck - w)
    if scale == 0 or abs(den) < 1e-12 * scale:
        raise PoleError("G_ss denominator vanishes", location={"k": query.k, "omega": w})
    return num / den


def _dispersion_pieces(omega, params):
    w = np.asarray(omega, dtype=complex)
    x = params.cap_delta + params.delta_s
    ws = w + params.cap_delta_s
    a = (w + x) * ws - 0.25 * params.omega_c_rabi ** 2
    da = ws + (w + x)
    return ws, a, da


def dark_momentum(omega, params: MediumParams):
    """Momentum q(omega) solving det(omega - H(q)) = 0.

    The characteristic polynomial is linear in q, so every energy maps to a
    single momentum: c q = omega - g^2 (omega + Delta_s) / A(omega).  For the
    zero-loss problem, energies in (omega_minus, omega_plus) belong to the D
    branch.
    """
    ws, a, _ = _dispersion_pieces(omega, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (np.asarray(omega, dtype=complex) - params.g_peak ** 2 * ws / a) / params.light_speed
    return q if np.ndim(q) else complex(q)


def inverse_group_velocity(omega, params: MediumParams):
    """Exact 1/v_g = dq/d omega on the branch passing through ``omega`` (us/um)."""
    ws, a, da = _dispersion_pieces(omega, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (1.0 - params.g_peak ** 2 * (a - ws * da) / a ** 2) / params.light_speed
    return val if np.ndim(val) else complex(val)


def inverse_group_velocity_closed_form(params: MediumParams, reduced: bool = False) -> complex:
    """Large-g closed form of 1/v_g(-2 omega_+).

    Valid for g >> Omega, |Delta|, |Delta_s|.  ``reduced=True`` evaluates the
    Delta_s -> 0 reduction, in which the density of states diverges at
    Delta = Omega / (2 sqrt 2).  Delta is replaced by Delta~ for gamma_s > 0.
    """
    d = params.cap_delta_tilde
    g2 = params.g_peak ** 2
    om2 = params.omega_c_rabi ** 2
    c = params.light_speed
    if reduced:
        r = cmath.sqrt(d * d + om2)
        num = g2 * (-2 * d * r + 2 * d * d + 1.25 * om2)
        den = 9 * c * (-d * r + d * d + 0.25 * om2) ** 2
        return num / den
    ds = params.cap_delta_s
    r = cmath.sqrt(d * d + 2 * d * ds + ds * ds + om2)
    num = g2 * (d - r) ** 2 + 0.25 * g2 * om2
    den = c * (3 * d * d - 3 * d * r + 2 * d * ds + ds * ds + 0.75 * om2) ** 2
    return num / den


def default_q_grid(params: MediumParams, q_max: float = None, n: int = 801, q0: float = 0.0):
    """Symmetric sinh-spaced momentum grid, dense near ``q0``.

    The default span covers |q| up to 50 g/c, well past the avoided crossings.
    """
    if q_max is None:
        q_max = 50.0 * params.g_peak / params.light_speed
    half = (n - 1) // 2
    s = np.linspace(-1.0, 1.0, 2 * half + 1)
    width = 20.0
    grid = q_max * np.sinh(width * s) / math.sinh(width)
    grid[half] = 0.0
    grid = grid + q0
    return grid
