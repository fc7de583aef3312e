"""Frequency-domain lateral string stability with instantaneous actuation.

Each follower obeys  x_i = G(s) (alpha x_{i-1} + (1 - alpha) x_1)  with

    G(s) = (M_0(s) + B K(s))^{-1} B K(s),   K(s) = C_f [k_e, k_theta + k_omega s].

If rho = ||alpha G||_inf < 1 the error of every vehicle is bounded by a
constant multiple of the lead vehicle's error, independently of platoon size.
Norms on 2x2 matrices are induced 2-norms (largest singular value); signal
norms are L2.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .controller import GainVector
from .stability import instantaneous_char_poly_parts, is_hurwitz
from .vehicle_model import VehicleParams

COND_LIMIT = 1e12
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def default_omegas(n: int = 4000) -> np.ndarray:
    return np.logspace(-3, 3, n)


def build_M0(s, p: VehicleParams, V0: float) -> np.ndarray:
    """M_0(s) = M s^2 + C s + L; broadcasts over an array of ``s`` (trailing 2x2)."""
    if V0 <= 0:
        raise ValueError("V0 must be > 0")
    s = np.asarray(s, dtype=complex)
    cf, cr, a, b = p.C_f, p.C_r, p.a, p.b
    out = np.empty(s.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = p.m_v * s * s + (cf + cr) / V0 * s
    out[..., 0, 1] = (a * cf - b * cr) / V0 * s - (cf + cr)
    out[..., 1, 0] = (a * cf - b * cr) / V0 * s
    out[..., 1, 1] = p.I_z * s * s + (a * a * cf + b * b * cr) / V0 * s - (a * cf - b * cr)
    return out


def build_BK(s, K, p: VehicleParams) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    ke, kt, kw = K
    row = np.stack(np.broadcast_arrays(ke + 0 * s, kt + kw * s), axis=-1) * p.C_f
    col = np.array([1.0, p.a])
    return col[:, None] * row[..., None, :]


def sigma_max_2x2(A: np.ndarray) -> np.ndarray:
    """Largest singular value of (stacked) 2x2 complex matrices, closed form."""
    fro2 = np.sum(np.abs(A) ** 2, axis=(-2, -1))
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * np.abs(det) ** 2, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def sigma_min_2x2(A: np.ndarray) -> np.ndarray:
    fro2 = np.sum(np.abs(A) ** 2, axis=(-2, -1))
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    smax = sigma_max_2x2(A)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(smax > 0, np.abs(det) / smax, 0.0)


def _solve_2x2(A: np.ndarray, Bm: np.ndarray) -> np.ndarray:
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    inv[..., 1, 1] = A[..., 0, 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return (inv / det[..., None, None]) @ Bm


class TransferMatrixSample(NamedTuple):
    omega: float
    G: np.ndarray
    sigma_max: float
    flagged: bool


class FrequencyResponse(NamedTuple):
    omega: np.ndarray
    G: np.ndarray
    sigma_max: np.ndarray
    flagged: np.ndarray


def frequency_response(omegas, K, p: VehicleParams, V0: float) -> FrequencyResponse:
    """G(jw) on a grid; samples with cond(M_0 + BK) > 1e12 are flagged."""
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    s = 1j * w
    BK = build_BK(s, K, p)
    A = build_M0(s, p, V0) + BK
    smin = sigma_min_2x2(A)
    with np.errstate(divide="ignore", over="ignore"):
        cond = np.where(smin > 0, sigma_max_2x2(A) / smin, np.inf)
    flagged = ~(cond <= COND_LIMIT)
    G = _solve_2x2(A, BK)
    return FrequencyResponse(w, G, sigma_max_2x2(G), flagged)


def closed_loop_G(omega: float, K, p: VehicleParams, V0: float) -> TransferMatrixSample:
    fr = frequency_response([omega], K, p, V0)
    return TransferMatrixSample(float(omega), fr.G[0], float(fr.sigma_max[0]), bool(fr.flagged[0]))


def loop_is_stable(K, p: VehicleParams, V0: float) -> bool:
    """Whether G(s) itself is stable: det(M_0 + BK) Hurwitz."""
    return is_hurwitz(instantaneous_char_poly_parts(p, V0).combine(K), margin=0.0)


def _sigma_fn(K, p, V0, minus_identity: bool):
    eye = np.eye(2)

    def f(w: np.ndarray) -> np.ndarray:
        G = frequency_response(w, K, p, V0).G
        return sigma_max_2x2(G - eye if minus_identity else G)

    return f


def _golden_max(f, lo: float, hi: float, iters: int = 60) -> tuple[float, float]:
    """Maximise scalar f on [lo, hi] (log-frequency) by golden-section search."""
    a, b = math.log(lo), math.log(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(math.exp(d))
    x = 0.5 * (a + b)
    return math.exp(x), f(math.exp(x))


def hinf_norm(K, p: VehicleParams, V0: float, omegas=None, minus_identity: bool = False) -> tuple[float, float]:
    """Peak of sigma_max over the grid plus one golden-section refinement.

    Returns (norm, omega_at_peak). Ties go to the lowest frequency. Flagged
    (near-singular) samples are excluded.
    """
    w = default_omegas() if omegas is None else np.asarray(omegas, dtype=float)
    if w.ndim != 1 or len(w) < 2 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
        raise ValueError("frequency grid must be positive and strictly increasing")
    fr = frequency_response(w, K, p, V0)
    G = fr.G - np.eye(2) if minus_identity else fr.G
    sig = sigma_max_2x2(G)
    sig = np.where(fr.flagged, -np.inf, sig)
    if not np.any(np.isfinite(sig)):
        raise ArithmeticError("every frequency sample is near-singular")
    i = int(np.argmax(sig))  # first occurrence = lowest frequency
    best_w, best = float(w[i]), float(sig[i])
    lo, hi = w[max(i - 1, 0)], w[min(i + 1, len(w) - 1)]
    f = _sigma_fn(K, p, V0, minus_identity)
    ref_w, ref = _golden_max(lambda x: float(f(np.array([x]))[0]), lo, hi)
    if ref > best:
        best_w, best = ref_w, ref
    return best, best_w


@dataclass(frozen=True)
class StringStabilityReport:
    alpha: float
    V0: float
    gains: tuple[float, float, float]
    g_norm: float
    rho: float
    g_minus_i_norm: float
    bound_M: float | None
    bound_M_telescoped: float | None
    peak_omega: float
    peak_omega_minus_i: float
    loop_stable: bool
    verdict: str

    def to_dict(self) -> dict:
        """Plain dict; an infinite norm (unstable loop) becomes None so the JSON stays valid."""
        d = asdict(self)
        d["gains"] = list(d["gains"])
        for k in ("g_norm", "rho"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["alpha", "V0", "gains", "g_norm", "rho", "g_minus_i_norm", "bound_M",
                 "bound_M_telescoped", "peak_omega", "peak_omega_minus_i", "loop_stable", "verdict"],
    "additionalProperties": False,
    "properties": {
        "alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "V0": {"type": "number", "exclusiveMinimum": 0},
        "gains": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "g_norm": {"type": ["number", "null"], "minimum": 0},
        "rho": {"type": ["number", "null"], "minimum": 0},
        "g_minus_i_norm": {"type": "number", "minimum": 0},
        "bound_M": {"type": ["number", "null"]},
        "bound_M_telescoped": {"type": ["number", "null"]},
        "peak_omega": {"type": "number", "exclusiveMinimum": 0},
        "peak_omega_minus_i": {"type": "number", "exclusiveMinimum": 0},
        "loop_stable": {"type": "boolean"},
        "verdict": {"enum": ["certified", "not-certified", "unstable-loop"]},
    },
}


def certify(K, alpha: float, p: VehicleParams, V0: float, omegas=None) -> StringStabilityReport:
    """rho = alpha ||G||_inf and the platoon-size-independent bound on ||x_i|| / ||x_1||.

    ``bound_M`` is ||G - I||_inf / (1 - rho). Summing the telescoped
    differences exactly gives 1 + ||G - I||_inf / (1 - rho), reported as
    ``bound_M_telescoped``; it is the one that holds for every input.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    K = GainVector(*K)
    stable = loop_is_stable(K, p, V0)
    g, w_g = hinf_norm(K, p, V0, omegas)
    gi, w_gi = hinf_norm(K, p, V0, omegas, minus_identity=True)
    if not stable:
        g = math.inf
    rho = alpha * g
    if stable and rho < 1.0:
        M = gi / (1.0 - rho)
        M_tel = 1.0 + M
        verdict = "certified"
    else:
        M = M_tel = None
        verdict = "not-certified" if stable else "unstable-loop"
    return StringStabilityReport(
        float(alpha), float(V0), tuple(float(k) for k in K), g, rho, gi, M, M_tel,
        w_g, w_gi, stable, verdict,
    )


class ChainSpectra(NamedTuple):
    recursion: np.ndarray
    closed_form: np.ndarray


def propagate_chain(x1: np.ndarray, N: int, alpha: float, K, p: VehicleParams, V0: float,
                    omegas: np.ndarray) -> ChainSpectra:
    """Spectra of vehicles 1..N from the lead spectrum ``x1`` (shape (n_omega, 2)).

    Computed twice: by the vehicle-to-vehicle recursion and by summing the
    closed-form differences (alpha G)^(i-2) (G - I) x_1.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    x1 = np.asarray(x1, dtype=complex)
    G = frequency_response(omegas, K, p, V0).G
    rec = np.empty((N,) + x1.shape, dtype=complex)
    rec[0] = x1
    for i in range(1, N):
        ref = alpha * rec[i - 1] + (1.0 - alpha) * x1
        rec[i] = np.einsum("wij,wj->wi", G, ref)
    diff_op = G - np.eye(2)
    closed = np.empty_like(rec)
    closed[0] = x1
    acc = x1.copy()
    for i in range(2, N + 1):
        P = np.linalg.matrix_power(alpha * G, i - 2)
        acc = acc + np.einsum("wij,wj->wi", P @ diff_op, x1)
        closed[i - 1] = acc
    return ChainSpectra(rec, closed)


def write_response_csv(path, omegas, sigma) -> None:
    with open(path, "w") as fh:
        fh.write("omega,sigma_max\n")
        for w, s in zip(omegas, sigma):
            fh.write(f"{float(w)!r},{float(s)!r}\n")
