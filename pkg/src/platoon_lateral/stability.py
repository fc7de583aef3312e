"""Closed-loop characteristic polynomial, Routh-Hurwitz tests and D-decomposition.

With actuation the closed loop is

    Delta(s; K) = D(s) Delta_0(s) + wn^2 C_f [k_e P_e(s) + (k_theta + k_omega s) P_theta(s)]

where D(s) = s^2 + 2 zeta wn s + wn^2, Delta_0(s) = det M_0(s) and

    P_e(s)     = I_z s^2 + b (a+b) C_r s / V0 + (a+b) C_r
    P_theta(s) = m_v a s^2 + (a+b) C_r s / V0.

Delta is affine in the gains, so it is stored as four coefficient vectors
``base + k_e*q_e + k_theta*q_theta + k_omega*q_omega``; this makes grid sweeps a
single broadcast.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .controller import GainVector
from .vehicle_model import MPH, ActuationParams, VehicleParams

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 1e-9
ZERO_TOL = 1e-12
DESIGN_SPEEDS_MPH = (10, 20, 30, 40, 50, 60, 67)


# ---------------------------------------------------------------------------
# characteristic polynomial


def _pad(c, n: int) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return np.concatenate((np.zeros(n - len(c)), c))


def open_loop_quartic(p: VehicleParams, V0: float) -> np.ndarray:
    """Delta_0(s) / s^2, highest power first."""
    if V0 <= 0:
        raise ValueError("V0 must be > 0")
    m, Iz, cf, cr, a, b = p.m_v, p.I_z, p.C_f, p.C_r, p.a, p.b
    return np.array([
        m * Iz,
        ((Iz + m * a * a) * cf + (Iz + m * b * b) * cr) / V0,
        (a + b) ** 2 * cf * cr / V0**2 - m * (a * cf - b * cr),
    ])


def delta0(p: VehicleParams, V0: float) -> np.ndarray:
    return np.polymul([1.0, 0.0, 0.0], open_loop_quartic(p, V0))


def gain_polys(p: VehicleParams, V0: float) -> tuple[np.ndarray, np.ndarray]:
    """(P_e, P_theta) numerators multiplying k_e and (k_theta + k_omega s)."""
    a, b, cr = p.a, p.b, p.C_r
    pe = np.array([p.I_z, b * (a + b) * cr / V0, (a + b) * cr])
    pt = np.array([p.m_v * a, (a + b) * cr / V0, 0.0])
    return pe, pt


class PolyParts(NamedTuple):
    base: np.ndarray
    q_e: np.ndarray
    q_theta: np.ndarray
    q_omega: np.ndarray

    def combine(self, K) -> np.ndarray:
        ke, kt, kw = K
        return self.base + ke * self.q_e + kt * self.q_theta + kw * self.q_omega

    def batch(self, ke, kt, kw) -> np.ndarray:
        """Coefficient array for broadcastable gain arrays; trailing axis = coefficients."""
        ke, kt, kw = (np.asarray(v, dtype=float)[..., None] for v in (ke, kt, kw))
        return self.base + ke * self.q_e + kt * self.q_theta + kw * self.q_omega


def char_poly_parts(p: VehicleParams, act: ActuationParams, V0: float) -> PolyParts:
    d0 = delta0(p, V0)
    base = np.polymul(act.denominator(), d0)
    pe, pt = gain_polys(p, V0)
    g = p.C_f * act.omega_n**2
    n = len(base)
    return PolyParts(base, _pad(g * pe, n), _pad(g * pt, n), _pad(g * np.polymul([1.0, 0.0], pt), n))


def instantaneous_char_poly_parts(p: VehicleParams, V0: float) -> PolyParts:
    """Loop polynomial det(M_0(s) + B K(s)) when delta_f = delta_c."""
    d0 = delta0(p, V0)
    pe, pt = gain_polys(p, V0)
    n = len(d0)
    cf = p.C_f
    return PolyParts(d0, _pad(cf * pe, n), _pad(cf * pt, n), _pad(cf * np.polymul([1.0, 0.0], pt), n))


@dataclass(frozen=True)
class CharPoly:
    coeffs: np.ndarray
    K: GainVector
    V0: float

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, s):
        return np.polyval(self.coeffs, s)

    def roots(self) -> np.ndarray:
        return np.roots(self.coeffs)


def char_poly(K, p: VehicleParams, act: ActuationParams, V0: float) -> CharPoly:
    K = GainVector(*K)
    return CharPoly(char_poly_parts(p, act, V0).combine(K), K, V0)


# ---------------------------------------------------------------------------
# Routh-Hurwitz


def shift_matrix(degree: int, margin: float) -> np.ndarray:
    """T with (c @ T) = coefficients of c(s - margin); highest power first."""
    n = degree
    T = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        j = n - k  # power of (s - margin)
        for i in range(j + 1):
            # coefficient of s^i in (s - margin)^j
            T[k, n - i] = math.comb(j, i) * (-margin) ** (j - i)
    return T


def _balance(c: np.ndarray) -> np.ndarray:
    """Rescale s so the extreme coefficients match; preserves root half-planes."""
    n = c.shape[-1] - 1
    lead = c[..., 0]
    const = c[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.abs(const / lead) ** (1.0 / n)
    sigma = np.where(np.isfinite(sigma) & (sigma > 0), sigma, 1.0)
    powers = np.arange(n, -1, -1)
    out = c * sigma[..., None] ** powers
    scale = np.abs(out).max(axis=-1, keepdims=True)
    return out / np.where(scale > 0, scale, 1.0)


def routh_first_column_batch(coeffs: np.ndarray):
    """First Routh column for a batch of polynomials (trailing axis = coefficients).

    Returns (first_column, degenerate) where ``degenerate`` flags rows in which
    a zero pivot or zero row appeared; such polynomials are never Hurwitz.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1] - 1
    width = n // 2 + 1
    shape = c.shape[:-1]
    r0 = np.zeros(shape + (width,))
    r1 = np.zeros(shape + (width,))
    e, o = c[..., 0::2], c[..., 1::2]
    r0[..., : e.shape[-1]] = e
    r1[..., : o.shape[-1]] = o
    first = np.zeros(shape + (n + 1,))
    first[..., 0] = r0[..., 0]
    degenerate = np.zeros(shape, dtype=bool)
    for k in range(1, n + 1):
        first[..., k] = r1[..., 0]
        if k == n:
            break
        piv = r1[..., 0]
        scale = np.abs(r1).max(axis=-1)
        bad = np.abs(piv) <= ZERO_TOL * np.where(scale > 0, scale, 1.0)
        bad |= scale == 0
        degenerate |= bad
        safe = np.where(bad, 1.0, piv)
        ratio = (r0[..., 0] / safe)[..., None]
        prod = ratio * r1[..., 1:]
        nxt = np.zeros_like(r0)
        nxt[..., :-1] = r0[..., 1:] - prod
        # cancellation to (relative) zero counts as an exact zero
        tiny = np.abs(nxt[..., :-1]) <= ZERO_TOL * (np.abs(r0[..., 1:]) + np.abs(prod))
        nxt[..., :-1] = np.where(tiny, 0.0, nxt[..., :-1])
        r0, r1 = r1, nxt
    return first, degenerate


def is_hurwitz_batch(coeffs: np.ndarray, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1] - 1
    if n < 1:
        raise ValueError("polynomial degree must be >= 1")
    if np.any(c[..., 0] == 0):
        raise ValueError("leading coefficient must be nonzero")
    if margin:
        c = c @ shift_matrix(n, margin)
    c = c * np.sign(c[..., :1])
    c = _balance(c)
    first, degenerate = routh_first_column_batch(c)
    return np.all(first > 0, axis=-1) & ~degenerate


def is_hurwitz(poly, margin: float = DEFAULT_MARGIN) -> bool:
    """True iff every root has real part < -margin (Routh array)."""
    coeffs = poly.coeffs if isinstance(poly, CharPoly) else np.asarray(poly, dtype=float)
    if coeffs.ndim != 1 or coeffs.size < 2:
        raise ValueError("polynomial degree must be >= 1")
    return bool(is_hurwitz_batch(coeffs[None, :], margin)[0])


def routh_table(coeffs: Sequence[float], eps: float = 1e-9) -> np.ndarray:
    """Full Routh table with the usual special cases.

    A zero pivot in a nonzero row is replaced by ``eps`` (relative to the row
    scale); an all-zero row is replaced by the derivative of the auxiliary
    polynomial formed from the row above.
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "f")
    n = len(c) - 1
    width = n // 2 + 1
    table = np.zeros((n + 1, width))
    table[0, : len(c[0::2])] = c[0::2]
    table[1, : len(c[1::2])] = c[1::2]
    for k in range(1, n + 1):
        row = table[k]
        scale = max(np.abs(table[k - 1]).max(), 1e-300)
        if np.all(np.abs(row) <= ZERO_TOL * scale):
            order = n - k + 1  # degree of the auxiliary polynomial from row k-1
            powers = order - 2 * np.arange(width)
            deriv = np.where(powers > 0, table[k - 1] * powers, 0.0)
            table[k] = deriv
            row = table[k]
        if abs(row[0]) <= ZERO_TOL * max(np.abs(row).max(), scale):
            row[0] = eps * scale
        if k == n:
            break
        prev = table[k - 1]
        nxt = np.zeros(width)
        nxt[:-1] = (row[0] * prev[1:] - prev[0] * row[1:]) / row[0]
        tiny = np.abs(nxt[:-1]) <= ZERO_TOL * (np.abs(prev[1:]) + np.abs(prev[0] * row[1:] / row[0]))
        nxt[:-1][tiny] = 0.0
        table[k + 1] = nxt
    return table


def routh_rhp_count(coeffs: Sequence[float]) -> int:
    """Number of sign changes in the first Routh column."""
    col = routh_table(coeffs)[:, 0]
    signs = np.sign(col)
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


# ---------------------------------------------------------------------------
# D-decomposition


@dataclass(frozen=True)
class DecompositionBoundary:
    """Complex-root boundary curve in (k_e, k_theta) at fixed k_omega and speed.

    Entries are NaN at frequencies where the 2x2 system is singular. The
    real-root boundary (Delta(0; K) = 0) is the line k_e = 0.
    """

    omega: np.ndarray
    k_e: np.ndarray
    k_theta: np.ndarray
    k_omega: float
    V0: float
    gaps: tuple[float, ...] = ()
    real_root_k_e: float = 0.0

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.k_e) & np.isfinite(self.k_theta)


def d_decomposition_boundaries(
    p: VehicleParams, act: ActuationParams, V0: float, k_omega: float, omegas: np.ndarray,
    parts: PolyParts | None = None,
) -> DecompositionBoundary:
    w = np.asarray(omegas, dtype=float)
    if w.ndim != 1 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
        raise ValueError("omega grid must be strictly positive and increasing")
    parts = parts or char_poly_parts(p, act, V0)
    jw = 1j * w
    rhs = -(np.polyval(parts.base, jw) + k_omega * np.polyval(parts.q_omega, jw))
    qe = np.polyval(parts.q_e, jw)
    qt = np.polyval(parts.q_theta, jw)
    a11, a12, a21, a22 = qe.real, qt.real, qe.imag, qt.imag
    det = a11 * a22 - a12 * a21
    scale = np.hypot(a11, a21) * np.hypot(a12, a22)
    singular = np.abs(det) <= 1e-12 * np.where(scale > 0, scale, 1.0)
    safe = np.where(singular, 1.0, det)
    ke = (rhs.real * a22 - a12 * rhs.imag) / safe
    kt = (a11 * rhs.imag - a21 * rhs.real) / safe
    ke[singular] = np.nan
    kt[singular] = np.nan
    gaps = tuple(float(x) for x in w[singular])
    for x in gaps:
        log.debug("singular D-decomposition system at omega=%g (V0=%g)", x, V0)
    return DecompositionBoundary(w, ke, kt, float(k_omega), float(V0), gaps)


def default_boundary_omegas(n: int = 2000) -> np.ndarray:
    return np.logspace(-2, 3, n)


# ---------------------------------------------------------------------------
# grid classification


@dataclass(frozen=True)
class GridSpec:
    k_e: tuple[float, float, int] = (0.0, 0.5, 201)
    k_theta: tuple[float, float, int] = (0.0, 3.0, 201)
    k_omega: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 0.5, 26), 12))

    def axes(self):
        return (
            np.linspace(*self.k_e[:2], int(self.k_e[2])),
            np.linspace(*self.k_theta[:2], int(self.k_theta[2])),
            np.asarray(self.k_omega, dtype=float),
        )

    def refined(self) -> "GridSpec":
        """Grid with each (k_e, k_theta) spacing halved; old nodes are kept."""
        return GridSpec(
            (self.k_e[0], self.k_e[1], 2 * int(self.k_e[2]) - 1),
            (self.k_theta[0], self.k_theta[1], 2 * int(self.k_theta[2]) - 1),
            self.k_omega,
        )


@dataclass(frozen=True)
class StabilityRegion:
    """Pointwise Hurwitz classification on a (k_e, k_theta, k_omega) grid.

    ``V0`` is None for an intersection over several speeds.
    """

    k_e: np.ndarray
    k_theta: np.ndarray
    k_omega: np.ndarray
    stable: np.ndarray
    V0: float | None = None
    speeds: tuple[float, ...] = field(default=())

    @cached_property
    def boundary(self) -> np.ndarray:
        """Cells with a 4-neighbour of the opposite class in their k_omega slice."""
        s = self.stable
        b = np.zeros_like(s)
        b[1:] |= s[1:] != s[:-1]
        b[:-1] |= s[1:] != s[:-1]
        b[:, 1:] |= s[:, 1:] != s[:, :-1]
        b[:, :-1] |= s[:, 1:] != s[:, :-1]
        return b

    def classification(self) -> np.ndarray:
        out = np.where(self.stable, "stable", "unstable").astype(object)
        out[self.boundary] = "boundary"
        return out

    def index_of(self, K, atol: float = 1e-9) -> tuple[int, int, int]:
        idx = []
        for axis, v in zip((self.k_e, self.k_theta, self.k_omega), K):
            i = int(np.argmin(np.abs(axis - v)))
            if abs(axis[i] - v) > atol:
                raise KeyError(f"gain {v} is not a grid node")
            idx.append(i)
        return tuple(idx)

    def contains(self, K, atol: float = 1e-9) -> bool:
        return bool(self.stable[self.index_of(K, atol)])

    def nearest(self, K) -> bool:
        idx = tuple(int(np.argmin(np.abs(axis - v))) for axis, v in zip((self.k_e, self.k_theta, self.k_omega), K))
        return bool(self.stable[idx])

    def is_empty(self) -> bool:
        return not bool(self.stable.any())

    @property
    def fraction_stable(self) -> float:
        return float(self.stable.mean())


@dataclass(frozen=True)
class StabilizingSet:
    per_speed: tuple[StabilityRegion, ...]
    intersection: StabilityRegion

    @property
    def speeds(self) -> tuple[float, ...]:
        return tuple(r.V0 for r in self.per_speed)


def classify_grid(p: VehicleParams, act: ActuationParams, V0: float, grid: GridSpec,
                  margin: float = DEFAULT_MARGIN) -> StabilityRegion:
    ke, kt, kw = grid.axes()
    parts = char_poly_parts(p, act, V0)
    KE, KT, KW = np.meshgrid(ke, kt, kw, indexing="ij")
    coeffs = parts.batch(KE, KT, KW)
    stable = is_hurwitz_batch(coeffs.reshape(-1, coeffs.shape[-1]), margin).reshape(KE.shape)
    return StabilityRegion(ke, kt, kw, stable, float(V0), (float(V0),))


def stabilizing_set(p: VehicleParams, act: ActuationParams, speeds: Sequence[float],
                    grid: GridSpec | None = None, margin: float = DEFAULT_MARGIN) -> StabilizingSet:
    """Classify the grid at every speed (m/s) and intersect the stable sets."""
    speeds = [float(v) for v in speeds]
    if not speeds:
        raise ValueError("speed list must be non-empty")
    if any(v <= 0 for v in speeds):
        raise ValueError("speeds must be > 0")
    grid = grid or GridSpec()
    regions = tuple(classify_grid(p, act, v, grid, margin) for v in speeds)
    stable = np.logical_and.reduce([r.stable for r in regions])
    first = regions[0]
    inter = StabilityRegion(first.k_e, first.k_theta, first.k_omega, stable, None, tuple(speeds))
    if inter.is_empty():
        log.warning("stabilizing sets have an empty intersection over %d speeds", len(speeds))
    return StabilizingSet(regions, inter)


@dataclass(frozen=True)
class SpeedEnvelope:
    """Operating speeds expressed through gamma = 1 / V0."""

    gammas: tuple[float, ...]

    def __post_init__(self):
        if not self.gammas:
            raise ValueError("speed envelope must be non-empty")
        if any(g <= 0 for g in self.gammas):
            raise ValueError("gamma values must be > 0")

    @classmethod
    def from_speeds(cls, speeds: Sequence[float]) -> "SpeedEnvelope":
        return cls(tuple(1.0 / float(v) for v in speeds))

    @classmethod
    def from_mph(cls, speeds_mph: Sequence[float]) -> "SpeedEnvelope":
        return cls.from_speeds([v * MPH for v in speeds_mph])

    @classmethod
    def linspace(cls, V_min: float, V_max: float, n: int) -> "SpeedEnvelope":
        if not (0 < V_min <= V_max):
            raise ValueError("need 0 < V_min <= V_max")
        return cls(tuple(np.linspace(1.0 / V_max, 1.0 / V_min, n)))

    @property
    def speeds(self) -> tuple[float, ...]:
        return tuple(1.0 / g for g in self.gammas)


def write_region_csv(path, regions: Sequence[StabilityRegion]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k_e", "k_theta", "k_omega", "V0", "classification"))
        for reg in regions:
            label = "intersection" if reg.V0 is None else repr(reg.V0)
            cls = reg.classification()
            for i, ke in enumerate(reg.k_e):
                for j, kt in enumerate(reg.k_theta):
                    for k, kw in enumerate(reg.k_omega):
                        w.writerow((repr(float(ke)), repr(float(kt)), repr(float(kw)), label, cls[i, j, k]))
