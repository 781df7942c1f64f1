"""Reductions of the five derived null hypotheses to uniformity on the cube.

Each ``*_transform`` maps a raw sample to ``[0, 1]^p`` so that, under its
null, the result is (asymptotically) uniform; each ``*_null_sampler``
produces batches of cube samples with the exact finite-sample null law of
that transform, for use as ``null_sampler(rng, size)`` in calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaincinv, ndtr

POLE_EPS = 1e-12
EIG_FLOOR = 1e-10
UNIT_TOL = 1e-6
CENTERINGS = ("known_zero", "estimated")
# kinds whose null tables are simulated from quantities fitted to the sample
FITTED_KINDS = ("normal", "elliptic")


class SingularCovarianceError(ValueError):
    pass


class DataError(ValueError):
    pass


# --- polar coordinates ------------------------------------------------------

def polar_inverse(z) -> np.ndarray:
    """Polar angles of points on ``S^p``, last axis ``p + 1`` -> ``p``.

    The first ``p - 1`` angles lie in ``[0, pi]``, the last in ``[0, 2 pi)``.
    When the remaining tail of a point is below ``1e-12`` all later angles
    are set to 0.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    if d < 2:
        raise ValueError("points must have at least 2 coordinates")
    # tail[..., j] = ||z[..., j:]||
    tail = np.sqrt(np.cumsum((z * z)[..., ::-1], axis=-1)[..., ::-1])
    phi = np.empty(z.shape[:-1] + (d - 1,))
    for j in range(d - 2):
        phi[..., j] = np.arctan2(tail[..., j + 1], z[..., j])
    phi[..., d - 2] = np.mod(np.arctan2(z[..., d - 1], z[..., d - 2]), 2 * np.pi)
    pole = tail[..., 1:] < POLE_EPS
    # once a tail vanishes every later angle is undefined
    pole = np.logical_or.accumulate(pole, axis=-1)
    phi[..., 1:][pole[..., :-1]] = 0.0
    return phi


def polar_map(phi) -> np.ndarray:
    """``M_{1,p}``: angles ``(..., p)`` to unit vectors ``(..., p + 1)``."""
    phi = np.asarray(phi, dtype=float)
    p = phi.shape[-1]
    z = np.empty(phi.shape[:-1] + (p + 1,))
    s = np.ones(phi.shape[:-1])
    for j in range(p):
        z[..., j] = s * np.cos(phi[..., j])
        s = s * np.sin(phi[..., j])
    z[..., p] = s
    return z


def sin_power_cdf(k: int, phi):
    """CDF on ``[0, pi]`` of the density proportional to ``sin(t)^k``.

    Uses ``int_0^phi sin^k = I/2 * I_{sin^2 phi}((k+1)/2, 1/2)`` for
    ``phi <= pi/2`` (the complementary form near ``pi/2``) and symmetry
    about ``pi/2``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(phi > np.pi) or np.any(np.isnan(phi)):
        raise ValueError("phi must lie in [0, pi]")
    a = (k + 1) / 2.0
    low = np.minimum(phi, np.pi - phi)
    s2 = np.sin(low) ** 2
    c2 = np.cos(low) ** 2
    half = np.where(s2 < 0.5, 0.5 * betainc(a, 0.5, s2), 0.5 - 0.5 * betainc(0.5, a, c2))
    out = np.where(phi <= np.pi / 2, half, 1.0 - half)
    return float(out) if out.ndim == 0 else out


def sin_power_ppf(k: int, u):
    """Inverse of :func:`sin_power_cdf`."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1) or np.any(np.isnan(u)):
        raise ValueError("u must lie in [0, 1]")
    a = (k + 1) / 2.0
    w = 2.0 * np.minimum(u, 1.0 - u)
    with np.errstate(invalid="ignore"):
        small = np.arcsin(np.sqrt(betaincinv(a, 0.5, w)))
        large = np.arccos(np.sqrt(betaincinv(0.5, a, 1.0 - w)))
    low = np.where(w < 0.5, small, large)
    out = np.where(u <= 0.5, low, np.pi - low)
    return float(out) if out.ndim == 0 else out


def sphere_to_cube(z) -> np.ndarray:
    """``M_p``: points on ``S^p`` (last axis ``p + 1``) to ``[0, 1]^p``."""
    phi = polar_inverse(z)
    p = phi.shape[-1]
    u = np.empty_like(phi)
    for j in range(p - 1):
        u[..., j] = sin_power_cdf(p - 1 - j, phi[..., j])
    u[..., p - 1] = phi[..., p - 1] / (2 * np.pi)
    # guard the 2 pi wrap
    u[..., p - 1] = np.where(u[..., p - 1] >= 1.0, 0.0, u[..., p - 1])
    return u


def cube_to_sphere(u) -> np.ndarray:
    """``M_p^{-1}``: inverse sin-power CDFs followed by the polar map."""
    u = np.asarray(u, dtype=float)
    p = u.shape[-1]
    phi = np.empty_like(u)
    for j in range(p - 1):
        phi[..., j] = sin_power_ppf(p - 1 - j, u[..., j])
    phi[..., p - 1] = 2 * np.pi * u[..., p - 1]
    return polar_map(phi)


# --- ranks ------------------------------------------------------------------

def ranks(x, axis=-2) -> np.ndarray:
    """1-based ranks along ``axis``, ties broken by ascending position."""
    x = np.asarray(x)
    order = np.argsort(x, axis=axis, kind="stable")
    r = np.empty_like(order)
    idx = np.arange(1, x.shape[axis] + 1).reshape([-1 if a == (axis % x.ndim) else 1
                                                   for a in range(x.ndim)])
    np.put_along_axis(r, order, np.broadcast_to(idx, order.shape), axis=axis)
    return r


def has_ties(x, axis=-2) -> bool:
    s = np.sort(np.asarray(x), axis=axis)
    return bool(np.any(np.diff(s, axis=axis) == 0))


def _grid_ranks(x, axis=-2):
    n = np.asarray(x).shape[axis]
    return ranks(x, axis) / (n + 1.0)


# --- normality --------------------------------------------------------------

@dataclass
class TransformContext:
    test_kind: str
    centering: str = "known_zero"
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    inv_sqrt: np.ndarray | None = None
    radii: np.ndarray | None = None


def _inv_sqrt(sigma) -> np.ndarray:
    """Symmetric inverse square roots of a (stack of) covariance matrices."""
    w, v = np.linalg.eigh(sigma)
    lo, hi = w[..., 0], w[..., -1]
    if np.any(lo <= EIG_FLOOR * hi):
        raise SingularCovarianceError(
            f"covariance estimate is singular: smallest eigenvalue {float(np.min(lo)):.3g}"
        )
    return (v / np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def _whitener(sigma) -> np.ndarray:
    """``diag(sigma)^-1/2 C^-1/2`` with ``C`` the correlation matrix of ``sigma``.

    Right-multiplying centred rows by it whitens them; unlike the plain
    symmetric root it is unchanged by positive rescaling of the coordinates.
    """
    sd = np.sqrt(np.diagonal(sigma, axis1=-2, axis2=-1))
    if np.any(sd <= 0):
        raise SingularCovarianceError("covariance estimate is singular: a coordinate is constant")
    corr = sigma / (sd[..., :, None] * sd[..., None, :])
    return _inv_sqrt(corr) / sd[..., :, None]


def _moments(Z, center=True):
    n = Z.shape[-2]
    mu = Z.mean(axis=-2, keepdims=True) if center else np.zeros_like(Z[..., :1, :])
    D = Z - mu
    return mu[..., 0, :], np.swapaxes(D, -1, -2) @ D / n, D


def euclidean_sample(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise DataError(f"expected an n x p sample, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise DataError("sample contains non-finite values")
    return Z


def normality_transform(sample):
    """``Phi(Sigma^-1/2 (Z - mu))`` with plug-in moments (``1/n`` covariance).

    The inverse root is taken on the correlation scale (see :func:`_whitener`),
    so the result is invariant under positive diagonal rescaling of ``Z``.
    Returns the cube sample and the fitted :class:`TransformContext`.
    """
    Z = euclidean_sample(sample)
    n, p = Z.shape
    if n <= p:
        raise DataError(f"normality test needs n > p, got n={n}, p={p}")
    mu, sigma, D = _moments(Z)
    W = _whitener(sigma)
    ctx = TransformContext("normal", "estimated", mu, sigma, W)
    return ndtr(D @ W), ctx


def normality_null_sampler(ctx: TransformContext, n: int, rng, size: int | None = None):
    """Cube samples from ``N(mu, Sigma)`` refitted and re-transformed per replication."""
    if ctx.sigma is None:
        raise ValueError("normality null sampler needs a fitted context")
    p = ctx.sigma.shape[0]
    L = np.linalg.cholesky(ctx.sigma)
    count = 1 if size is None else size
    Z = ctx.mu + rng.standard_normal((count, n, p)) @ L.T
    _, sigma, D = _moments(Z)
    X = ndtr(D @ _whitener(sigma))
    return X[0] if size is None else X


# --- isotropy and ellipticity ----------------------------------------------

def _check_centering(centering):
    if centering not in CENTERINGS:
        raise ValueError(f"centering must be one of {CENTERINGS}, got {centering!r}")


def _isotropy_core(Z):
    r = np.sqrt(np.sum(Z * Z, axis=-1))
    if np.any(r == 0):
        raise DataError("isotropy transform needs nonzero rows")
    dirs = sphere_to_cube(Z / r[..., None])
    return np.concatenate([dirs, _grid_ranks(r, axis=-1)[..., None]], axis=-1)


def isotropy_transform(sample, centering: str = "known_zero") -> np.ndarray:
    """Directions through ``M_{p-1}`` plus radial ranks ``/(n+1)`` as the last column."""
    _check_centering(centering)
    Z = euclidean_sample(sample)
    if Z.shape[1] < 2:
        raise DataError("isotropy test needs p >= 2")
    if centering == "estimated":
        Z = Z - Z.mean(axis=0)
    return _isotropy_core(Z)


def isotropy_null_sampler(n: int, p: int, rng, size: int | None = None,
                          centering: str = "known_zero"):
    """Uniform cube samples whose last column is a random permutation of ``{1..n}/(n+1)``.

    With an estimated centre the null law depends on the recentring, so
    standard normal samples are recentred and pushed through the transform.
    """
    _check_centering(centering)
    count = 1 if size is None else size
    if centering == "known_zero":
        X = rng.random((count, n, p))
        X[..., p - 1] = _grid_ranks(X[..., p - 1], axis=-1)
    else:
        Z = rng.standard_normal((count, n, p))
        X = _isotropy_core(Z - Z.mean(axis=-2, keepdims=True))
    return X[0] if size is None else X


def _whiten(Z, centering):
    n, p = Z.shape[-2:]
    if p < 2:
        raise DataError("ellipticity test needs p >= 2")
    if n <= p:
        raise DataError(f"ellipticity test needs n > p, got n={n}, p={p}")
    _, sigma, D = _moments(Z, center=centering == "estimated")
    return D @ _inv_sqrt(sigma)


def ellipticity_transform(sample, centering: str = "known_zero") -> np.ndarray:
    """Whiten with ``Z Z^T / n`` (after optional recentring) and apply the isotropy map."""
    _check_centering(centering)
    Z = euclidean_sample(sample)
    return _isotropy_core(_whiten(Z, centering))


def tyler_shape(Z, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Tyler's M-estimator of scatter, normalised to trace ``p``.

    It depends on the rows only through their directions, so under
    ellipticity it does not depend on the radial law.
    """
    Z = np.asarray(Z, float)
    Z = Z[np.any(Z != 0, axis=1)]
    n, p = Z.shape
    if n <= p:
        raise DataError(f"shape estimate needs more than p nonzero rows, got {n}")
    V = np.eye(p)
    for _ in range(max_iter):
        d = np.einsum("ij,jk,ik->i", Z, np.linalg.inv(V), Z)
        nxt = p / n * (Z / d[:, None]).T @ Z
        nxt *= p / np.trace(nxt)
        done = np.max(np.abs(nxt - V)) < tol
        V = nxt
        if done:
            break
    return V


def elliptic_radii(sample, centering: str = "known_zero") -> np.ndarray:
    """Radii of the sample after whitening with :func:`tyler_shape` (up to a common scale)."""
    Z = euclidean_sample(sample)
    if centering == "estimated":
        Z = Z - Z.mean(axis=0)
    Vi = np.linalg.inv(tyler_shape(Z))
    return np.sqrt(np.einsum("ij,jk,ik->i", Z, Vi, Z))


def ellipticity_null_sampler(n: int, p: int, rng, size: int | None = None,
                             centering: str = "known_zero", radii=None):
    """Isotropic samples pushed through :func:`ellipticity_transform`.

    With ``radii`` the draws are ``radii[i] * theta_i`` for uniform directions
    ``theta_i``, so the whitening step sees the radial law of the data.
    Without them the draws are standard normal.
    """
    _check_centering(centering)
    count = 1 if size is None else size
    Z = rng.standard_normal((count, n, p))
    if radii is not None:
        Z *= np.asarray(radii, float)[None, :, None] / np.linalg.norm(Z, axis=2, keepdims=True)
    X = _isotropy_core(_whiten(Z, centering))
    return X[0] if size is None else X


# --- independence -----------------------------------------------------------

def independence_transform(sample) -> np.ndarray:
    """Columnwise ranks ``/(n+1)``; ties broken by row order."""
    Z = euclidean_sample(sample)
    return _grid_ranks(Z, axis=0)


def independence_null_sampler(n: int, p: int, rng, size: int | None = None):
    """Independent uniform permutations of ``{1..n}/(n+1)`` in every column."""
    count = 1 if size is None else size
    grid = np.arange(1, n + 1) / (n + 1.0)
    X = rng.permuted(np.broadcast_to(grid[:, None], (count, n, p)).copy(), axis=1)
    return X[0] if size is None else X


def uniform_null_sampler(n: int, p: int, rng, size: int | None = None):
    X = rng.random((1 if size is None else size, n, p))
    return X[0] if size is None else X


# --- dispatch ---------------------------------------------------------------

def sphere_sample(sample) -> np.ndarray:
    Z = euclidean_sample(sample)
    if Z.shape[1] < 2:
        raise DataError("sphere samples need at least 2 columns")
    norms = np.sqrt(np.sum(Z * Z, axis=1))
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DataError(f"sphere sample rows must have unit norm (tolerance {UNIT_TOL})")
    return Z / norms[:, None]


def to_cube(test_kind: str, sample, centering: str = "known_zero"):
    """Apply the reduction for ``test_kind``.

    Returns ``(cube_sample, context, warnings)``.
    """
    warnings = []
    ctx = TransformContext(test_kind, centering)
    if test_kind == "uniform":
        X = euclidean_sample(sample)
        if X.min() < 0 or X.max() > 1:
            raise DataError("uniformity test needs all entries in [0, 1]")
    elif test_kind == "sphere":
        X = sphere_to_cube(sphere_sample(sample))
    elif test_kind == "normal":
        X, ctx = normality_transform(sample)
    elif test_kind == "isotropy":
        Z = euclidean_sample(sample)
        X = isotropy_transform(Z, centering)
        if has_ties(np.sum(Z * Z, axis=1), axis=0):
            warnings.append("rank ties in radii broken by row order")
    elif test_kind == "elliptic":
        _check_centering(centering)
        W = _whiten(euclidean_sample(sample), centering)
        X = _isotropy_core(W)
        ctx.radii = elliptic_radii(sample, centering)
        if has_ties(np.sum(W * W, axis=1), axis=0):
            warnings.append("rank ties in radii broken by row order")
    elif test_kind == "independence":
        Z = euclidean_sample(sample)
        X = independence_transform(Z)
        if has_ties(Z, axis=0):
            warnings.append("rank ties broken by row order")
    else:
        raise ValueError(f"unknown test kind {test_kind!r}")
    return np.clip(X, 0.0, 1.0), ctx, warnings


def null_sampler(test_kind: str, n: int, p: int, ctx: TransformContext | None = None,
                 centering: str = "known_zero"):
    """``f(rng, size) -> (size, n, p)`` cube samples under the null of ``test_kind``.

    ``p`` is the cube dimension.
    """
    if test_kind in ("uniform", "sphere"):
        return lambda rng, size: uniform_null_sampler(n, p, rng, size)
    if test_kind == "normal":
        if ctx is None or ctx.sigma is None:
            raise ValueError("normality null sampler needs the fitted context")
        return lambda rng, size: normality_null_sampler(ctx, n, rng, size)
    if test_kind == "isotropy":
        return lambda rng, size: isotropy_null_sampler(n, p, rng, size, centering)
    if test_kind == "elliptic":
        radii = None if ctx is None else ctx.radii
        return lambda rng, size: ellipticity_null_sampler(n, p, rng, size, centering, radii)
    if test_kind == "independence":
        return lambda rng, size: independence_null_sampler(n, p, rng, size)
    raise ValueError(f"unknown test kind {test_kind!r}")
