"""Brute-force references used to certify the fast paths.

Nothing here calls the code it certifies: SH values come from scipy's
complex harmonics, compositing is redone per pixel without tiles, and
transmittance is marched through the true 3D Gaussian densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, sph_harm_y

from .camera import project_gaussians
from .errors import ParameterError
from .shmath import ShCoeffBlock

LOG_2PIE = math.log(2.0 * math.pi * math.e)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` quasi-uniform unit vectors; each stands for area 4*pi/n."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def scipy_real_sh(L: int, dirs) -> np.ndarray:
    """Real SH (flat index l*l + l + m) built from scipy's complex harmonics.

    scipy includes the Condon-Shortley phase; the sqrt(2) (-1)**m real form
    cancels it, which gives Y_{1,-1} ~ y, Y_{1,0} ~ z, Y_{1,1} ~ x.
    """
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.empty((len(d), (L + 1) ** 2))
    for l in range(L + 1):
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            if m < 0:
                v = math.sqrt(2.0) * (-1.0) ** m * y.imag
            elif m == 0:
                v = y.real
            else:
                v = math.sqrt(2.0) * (-1.0) ** m * y.real
            out[:, l * l + l + m] = v
    return out


def quadrature_project_sh(f, L: int, n_dirs: int) -> ShCoeffBlock:
    """Project a spherical function onto real SH by equal-weight quadrature.

    ``f`` maps an (n, 3) array of unit vectors to n values.
    """
    if n_dirs < 10 * (L + 1) ** 2:
        raise ParameterError(f"n_dirs must be >= 10 (L+1)^2 = {10 * (L + 1) ** 2}")
    dirs = fibonacci_sphere(n_dirs)
    vals = np.asarray(f(dirs), dtype=np.float64).reshape(n_dirs)
    basis = scipy_real_sh(L, dirs)
    return ShCoeffBlock(L, basis.T @ vals * (4.0 * math.pi / n_dirs))


def exact_multiview_visibility(per_view) -> float:
    v = np.asarray(per_view, dtype=np.float64).reshape(-1)
    return float(1.0 - np.prod(1.0 - v))


def _inv_cov(rotations, scales):
    # independent of camera.quat_to_rotmat: Rodrigues from the quaternion
    q = np.asarray(rotations, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, v = q[:, :1], q[:, 1:]
    out = np.empty((len(q), 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        # rotate basis vector e by q: e + 2w(v x e) + 2 v x (v x e)
        c = np.cross(v, e)
        out[:, :, k] = e + 2.0 * w * c + 2.0 * np.cross(v, c)
    inv_s2 = 1.0 / np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("nij,nj,nkj->nik", out, inv_s2, out)


def raymarch_transmittance(scene, origin, target_point, step: float, exclude=None, alpha_max=0.99) -> float:
    """Transmittance from ``origin`` to ``target_point`` through the particles.

    Each particle contributes once, with opacity times its peak density along
    the marched samples (clamped to ``alpha_max``).  Particles listed in
    ``exclude`` (default: any centred exactly on the target) are skipped.
    """
    if not step > 0:
        raise ParameterError("step must be positive")
    o = np.asarray(origin, dtype=np.float64)
    tp = np.asarray(target_point, dtype=np.float64)
    if len(scene) == 0:
        return 1.0
    seg = tp - o
    length = float(np.linalg.norm(seg))
    if length == 0:
        return 1.0
    keep = np.ones(len(scene), bool)
    if exclude is None:
        keep &= ~np.all(scene.positions == tp, axis=1)
    else:
        keep[np.asarray(exclude, dtype=np.int64)] = False
    keep &= scene.opacities > 0
    # drop particles more than 10 sigma from the segment: exp(-50) is nil
    rel = scene.positions - o
    t = np.clip(rel @ seg / (length * length), 0.0, 1.0)
    dist = np.linalg.norm(rel - t[:, None] * seg, axis=1)
    keep &= dist <= 10.0 * scene.scales.max(axis=1)
    idx = np.nonzero(keep)[0]
    if len(idx) == 0:
        return 1.0
    n_steps = max(2, int(math.ceil(length / step)) + 1)
    ts = np.linspace(0.0, 1.0, n_steps)
    prec = _inv_cov(scene.rotations[idx], scene.scales[idx])
    mu = scene.positions[idx]
    best = np.full(len(idx), np.inf)
    chunk = max(1, 2_000_000 // max(1, len(idx)))
    for s0 in range(0, n_steps, chunk):
        pts = o + ts[s0:s0 + chunk, None] * seg
        diff = pts[:, None, :] - mu[None, :, :]
        m2 = np.einsum("sni,nij,snj->sn", diff, prec, diff)
        best = np.minimum(best, m2.min(axis=0))
    alpha = np.minimum(scene.opacities[idx] * np.exp(-0.5 * best), alpha_max)
    return float(np.prod(1.0 - alpha))


def brute_force_composite(scene, camera, dilation=0.3, eps_t=1e-4, alpha_max=0.99, cover=4.5):
    """Tile-free per-pixel compositing over all splats; returns (weights, T, depth, splat ids).

    ``weights`` is (H, W, M) over splats in (depth, index) order.
    """
    ps = project_gaussians(scene.positions, scene.covariances, camera, dilation)
    order = np.lexsort((ps.index, ps.depth))
    mean, conic, depth, idx = ps.mean2d[order], ps.conic[order], ps.depth[order], ps.index[order]
    h, w = camera.height, camera.width
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    px = np.stack([jj.ravel(), ii.ravel()], axis=1)
    T = np.ones(len(px))
    active = np.ones(len(px), bool)
    weights = np.zeros((len(px), len(idx)))
    dsum = np.zeros(len(px))
    op = scene.opacities[idx]
    for s in range(len(idx)):
        d = px - mean[s]
        power = 0.5 * (conic[s, 0] * d[:, 0] ** 2 + 2 * conic[s, 1] * d[:, 0] * d[:, 1] + conic[s, 2] * d[:, 1] ** 2)
        hit = active & (power <= cover)
        a = np.where(hit, np.minimum(op[s] * np.exp(-power), alpha_max), 0.0)
        weights[:, s] = T * a
        dsum += T * a * depth[s]
        T = np.where(hit, T * (1.0 - a), T)
        active &= ~(T < eps_t)
    return weights.reshape(h, w, -1), T.reshape(h, w), dsum.reshape(h, w), idx


@dataclass(frozen=True, eq=False)
class GmmSpec:
    """Mixture components; weight ``1 - sum(weights)`` goes to the prior."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64).reshape(len(w), 3)
        c = np.asarray(self.covs, dtype=np.float64).reshape(len(w), 3, 3)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParameterError("mixture weights must be finite and >= 0")
        if w.sum() > 1.0 + 1e-9:
            raise ParameterError("mixture weights must sum to at most 1")
        for k in range(len(c)):
            try:
                np.linalg.cholesky(c[k])
            except np.linalg.LinAlgError:
                raise ParameterError(f"component {k} covariance is not SPD") from None
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", c)

    @classmethod
    def from_dump(cls, dump) -> "GmmSpec":
        comps = dump["components"]
        return cls(
            [c["weight"] for c in comps],
            np.array([c["mean"] for c in comps]).reshape(-1, 3),
            np.array([np.diag(c["cov_diag"]) for c in comps]).reshape(-1, 3, 3),
        )


def _full_mixture(spec: GmmSpec, prior_cov, prior_mean):
    prior_cov = np.asarray(prior_cov, dtype=np.float64).reshape(3, 3)
    try:
        np.linalg.cholesky(prior_cov)
    except np.linalg.LinAlgError:
        raise ParameterError("prior covariance is not SPD") from None
    rest = max(0.0, 1.0 - float(spec.weights.sum()))
    w = np.r_[spec.weights, rest]
    mu = np.vstack([spec.means, np.asarray(prior_mean, dtype=np.float64).reshape(1, 3)])
    cov = np.concatenate([spec.covs, prior_cov[None]])
    nz = w > 0
    return w[nz] / w[nz].sum(), mu[nz], cov[nz]


def huber_bound(spec: GmmSpec, prior_cov) -> float:
    """Closed-form upper bound sum_i w_i (-log w_i + h(N_i)) with the residual on the prior."""
    w, _, cov = _full_mixture(spec, prior_cov, np.zeros(3))
    ld = np.array([np.linalg.slogdet(c)[1] for c in cov])
    return float(np.sum(w * (-np.log(w) + 0.5 * ld + 1.5 * LOG_2PIE)))


def mc_gmm_entropy(spec: GmmSpec, prior_cov, n_samples: int, seed: int, prior_mean=(0.5, 0.5, 0.5)):
    """Monte-Carlo differential entropy ``-E[log p(x)]`` and its standard error."""
    if n_samples < 10_000:
        raise ParameterError("n_samples must be >= 1e4")
    w, mu, cov = _full_mixture(spec, prior_cov, prior_mean)
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(w), size=n_samples, p=w)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal((n_samples, 3))
    x = mu[comp] + np.einsum("nij,nj->ni", chol[comp], z)
    logp = np.empty((n_samples, len(w)))
    for k in range(len(w)):
        diff = np.linalg.solve(chol[k], (x - mu[k]).T).T
        ld = 2.0 * np.log(np.diag(chol[k])).sum()
        logp[:, k] = math.log(w[k]) - 0.5 * (diff ** 2).sum(axis=1) - 0.5 * ld - 1.5 * math.log(2 * math.pi)
    lp = logsumexp(logp, axis=1)
    return float(-lp.mean()), float(lp.std(ddof=1) / math.sqrt(n_samples))
