"""Real spherical harmonics, modified spherical Bessel functions and the
von Mises-Fisher directional visibility kernel.

Coefficients are stored flat, index ``l*l + l + m``.  The real basis is the
one without Condon-Shortley phase (``Y_{1,-1} ~ y``, ``Y_{1,0} ~ z``,
``Y_{1,1} ~ x``), i.e. the complex harmonics with the phase folded back out by
the ``sqrt(2) * (-1)**m`` factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ParameterError

MAX_DEGREE = 20
MAX_KAPPA = 50.0

__all__ = [
    "MAX_DEGREE",
    "ShCoeffBlock",
    "VmfParams",
    "sh_index",
    "num_coeffs",
    "real_sh_basis",
    "eval_real_sh",
    "bessel_i",
    "bessel_i_all",
    "vmf_dir_vis",
    "vmf_sh_coeffs",
    "sh_reconstruct",
]


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def num_coeffs(L: int) -> int:
    return (L + 1) * (L + 1)


def _check_degree(L):
    if not (0 <= L <= MAX_DEGREE):
        raise ParameterError(f"SH degree must be in [0, {MAX_DEGREE}], got {L}")


@lru_cache(maxsize=None)
def _norms(L):
    """sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!) for 0 <= m <= l <= L."""
    out = np.zeros((L + 1, L + 1))
    for l in range(L + 1):
        for m in range(l + 1):
            # lgamma keeps the factorial ratio finite at l = 20
            log_ratio = math.lgamma(l - m + 1) - math.lgamma(l + m + 1)
            out[l, m] = math.sqrt((2 * l + 1) / (4 * math.pi) * math.exp(log_ratio))
    return out


def real_sh_basis(L: int, dirs) -> np.ndarray:
    """Evaluate all real SH up to degree ``L`` at unit directions.

    ``dirs`` has shape (..., 3); the result has shape (..., (L+1)**2).
    """
    _check_degree(L)
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (num_coeffs(L),))
    norms = _norms(L)

    # Legendre functions with the sin^m(theta) factor stripped: P_l^m = sin^m * Q_l^m.
    # The sin^m factor is recovered from Re/Im of (x + i y)^m.
    re_m = np.ones_like(x)
    im_m = np.zeros_like(x)
    q_mm = np.ones_like(x)  # Q_m^m = (2m-1)!!
    root2 = math.sqrt(2.0)

    def store(l, m, q):
        if m == 0:
            out[..., sh_index(l, 0)] = norms[l, 0] * q
        else:
            out[..., sh_index(l, m)] = root2 * norms[l, m] * q * re_m
            out[..., sh_index(l, -m)] = root2 * norms[l, m] * q * im_m

    for m in range(L + 1):
        if m > 0:
            re_m, im_m = re_m * x - im_m * y, re_m * y + im_m * x
            q_mm = q_mm * (2 * m - 1)
        store(m, m, q_mm)
        if m + 1 > L:
            continue
        q_lm2, q_lm1 = q_mm, (2 * m + 1) * z * q_mm
        store(m + 1, m, q_lm1)
        for l in range(m + 2, L + 1):
            q = ((2 * l - 1) * z * q_lm1 - (l + m - 1) * q_lm2) / (l - m)
            store(l, m, q)
            q_lm2, q_lm1 = q_lm1, q
    return out


def _check_unit(d, name="d"):
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (3,):
        raise ParameterError(f"{name} must be a 3-vector")
    n = float(np.linalg.norm(d))
    if abs(n - 1.0) > 1e-6:
        raise ParameterError(f"{name} must be a unit vector (norm {n})")
    return d


def eval_real_sh(l: int, m: int, d) -> float:
    if abs(m) > l:
        raise ParameterError(f"|m| must not exceed l (l={l}, m={m})")
    _check_degree(l)
    d = _check_unit(d)
    return float(real_sh_basis(l, d)[sh_index(l, m)])


def _bessel_series(l, x):
    # x^l * sum_k (x^2/2)^k / (k! (2l+2k+1)!!); every term positive
    t = 1.0
    for j in range(1, l + 1):
        t *= x / (2 * j + 1)
    total = t
    h = 0.5 * x * x
    k = 0
    while True:
        k += 1
        t *= h / (k * (2 * l + 2 * k + 1))
        total += t
        if t <= 1e-17 * total:
            return total


def _bessel_miller(L, x):
    """All i_0..i_L by downward recurrence normalised to sinh(x)/x."""
    start = L + int(x) + 40
    f_next, f = 0.0, 1e-300
    vals = np.zeros(L + 1)
    for l in range(start, 0, -1):
        # i_{l-1} = i_{l+1} + (2l+1)/x * i_l
        f_prev = f_next + (2 * l + 1) / x * f
        f_next, f = f, f_prev
        if abs(f) > 1e250:
            f_next *= 1e-250
            f *= 1e-250
            vals *= 1e-250
        if l - 1 <= L:
            vals[l - 1] = f
    return vals * (math.sinh(x) / x) / vals[0]


def _check_bessel_args(l, kappa):
    if not (0 <= l <= MAX_DEGREE):
        raise ParameterError(f"Bessel order must be in [0, {MAX_DEGREE}], got {l}")
    if not (0.0 <= kappa <= MAX_KAPPA) or not math.isfinite(kappa):
        raise ParameterError(f"kappa must be in [0, {MAX_KAPPA}], got {kappa}")


def bessel_i_all(L: int, kappa: float) -> np.ndarray:
    """Modified spherical Bessel functions of the first kind, i_0..i_L at kappa."""
    kappa = float(kappa)
    _check_bessel_args(L, kappa)
    if kappa == 0.0:
        out = np.zeros(L + 1)
        out[0] = 1.0
        return out
    if kappa < 1.0:
        return np.array([_bessel_series(l, kappa) for l in range(L + 1)])
    return _bessel_miller(L, kappa)


def bessel_i(l: int, kappa: float) -> float:
    return float(bessel_i_all(l, kappa)[l])


@dataclass(frozen=True)
class VmfParams:
    """Concentration of the directional visibility kernel.

    ``zeta = exp(-kappa)`` normalises the kernel to 1 at the training direction.
    """

    kappa: float = 1.0
    zeta: float = field(init=False)

    def __post_init__(self):
        k = float(self.kappa)
        if not (0.0 <= k <= MAX_KAPPA):
            raise ParameterError(f"kappa must be in [0, {MAX_KAPPA}], got {k}")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "zeta", math.exp(-k))

    def band_factors(self, L: int) -> np.ndarray:
        """4 pi zeta i_l(kappa) for l = 0..L, cached per (kappa, L)."""
        return _band_factors(self.kappa, L)

    def expanded_band_factors(self, L: int) -> np.ndarray:
        """Band factors repeated to the flat (l, m) layout."""
        return _expanded(self.kappa, L)


@lru_cache(maxsize=None)
def _band_factors(kappa, L):
    a = 4.0 * math.pi * math.exp(-kappa) * bessel_i_all(L, kappa)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _expanded(kappa, L):
    a = _band_factors(kappa, L)
    out = np.repeat(a, [2 * l + 1 for l in range(L + 1)])
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ShCoeffBlock:
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (num_coeffs(self.degree),):
            raise ParameterError(
                f"expected {num_coeffs(self.degree)} coefficients for degree {self.degree}, got {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ParameterError("SH coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __getitem__(self, lm):
        l, m = lm
        return float(self.coeffs[sh_index(l, m)])

    def evaluate(self, dirs) -> np.ndarray:
        return real_sh_basis(self.degree, dirs) @ self.coeffs


def vmf_dir_vis(d, d_p, params: VmfParams) -> float:
    """zeta * exp(kappa * d . d_p); equals 1 at d == d_p."""
    d = np.asarray(d, dtype=np.float64)
    d_p = np.asarray(d_p, dtype=np.float64)
    c = min(1.0, max(-1.0, float(np.dot(d, d_p))))
    # exp(kappa (c - 1)) == zeta exp(kappa c), exact at c == 1
    return math.exp(params.kappa * (c - 1.0))


def vmf_sh_coeffs(d_p, params: VmfParams, L: int) -> ShCoeffBlock:
    """Analytic SH expansion of the vMF kernel centred on ``d_p``."""
    _check_degree(L)
    d_p = _check_unit(d_p, "d_p")
    y = real_sh_basis(L, d_p)
    return ShCoeffBlock(L, params.expanded_band_factors(L) * y)


def sh_reconstruct(block: ShCoeffBlock, dirs) -> np.ndarray:
    return block.evaluate(dirs)
