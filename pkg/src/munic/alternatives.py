"""Samplers for the alternative distributions used in power studies.

Sphere samplers return points on ``S^p``, i.e. arrays of shape
``(n, p + 1)``; copula samplers return cube samples ``(n, p)``; Euclidean
samplers return ``(n, p)`` real samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .transforms import cube_to_sphere

SPHERE_FAMILIES = ("vmf", "vmf_mixture", "projected_normal_diag", "projected_ma",
                   "projected_equicorr")
COPULA_FAMILIES = ("copula_normal", "copula_clayton", "copula_gumbel", "copula_bp_mixture")
EUCLIDEAN_FAMILIES = ("mixture_shift", "mixture_B", "multivariate_t", "skew_normal",
                      "radial_power", "shifted_bernoulli", "equicorr_mixture", "ma_product",
                      "equicorr_normal")
FAMILIES = SPHERE_FAMILIES + COPULA_FAMILIES + EUCLIDEAN_FAMILIES
TARGETS = ("sphere", "cube", "euclidean")

# the parameter each family is indexed by in a power grid
MAIN_PARAM = {
    "vmf": "kappa", "vmf_mixture": "kappa", "projected_normal_diag": "kappa",
    "projected_ma": "kappa", "projected_equicorr": "rho",
    "copula_normal": "rho", "copula_clayton": "theta", "copula_gumbel": "theta",
    "copula_bp_mixture": "P", "mixture_shift": "mu", "mixture_B": "P",
    "multivariate_t": "df", "skew_normal": "alpha_shape", "radial_power": "theta",
    "shifted_bernoulli": "P", "equicorr_mixture": "P", "ma_product": "a",
    "equicorr_normal": "rho",
}
DEFAULTS = {"mixture_shift": {"P": 0.5}, "equicorr_mixture": {"rho": 0.5}}


@dataclass
class AlternativeSpec:
    family: str
    params: dict = field(default_factory=dict)
    target: str = "euclidean"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown alternative family {self.family!r}")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target space {self.target!r}")
        if self.family in SPHERE_FAMILIES and self.target != "sphere":
            raise ValueError(f"{self.family} lives on the sphere")
        if self.family in EUCLIDEAN_FAMILIES and self.target != "euclidean":
            raise ValueError(f"{self.family} lives in Euclidean space")
        self.params = {**DEFAULTS.get(self.family, {}), **self.params}
        _check_params(self.family, self.params)

    def with_param(self, value) -> "AlternativeSpec":
        return AlternativeSpec(self.family, {**self.params, MAIN_PARAM[self.family]: value},
                               self.target)


def _check_params(family, prm):
    main = MAIN_PARAM[family]
    if main not in prm:
        return  # grid value supplied later
    v = prm[main]
    bad = {
        "kappa": lambda x: x < 0,
        "theta": lambda x: (x < 1) if family == "copula_gumbel" else
                           (x <= 0 if family == "copula_clayton" else x < 0),
        "P": lambda x: not 0 <= x <= 1,
        "df": lambda x: x <= 0,
        "rho": lambda x: not -1 < x < 1,
    }.get(main)
    if bad is not None and bad(v):
        raise ValueError(f"{family}: invalid {main}={v}")
    if "P" in prm and not 0 <= prm["P"] <= 1:
        raise ValueError(f"{family}: invalid P={prm['P']}")
    if "rho" in prm and family != "projected_equicorr" and not -1 < prm["rho"] < 1:
        raise ValueError(f"{family}: invalid rho={prm['rho']}")


# --- sphere -----------------------------------------------------------------

def _uniform_sphere(d, size, rng):
    z = rng.standard_normal((size, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _rotate_from_e1(x, mu):
    """Householder reflection taking ``e1`` to ``mu``, applied to rows of ``x``."""
    e1 = np.zeros_like(mu)
    e1[0] = 1.0
    v = e1 - mu
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return x
    v /= nv
    return x - 2.0 * np.outer(x @ v, v)


def sample_vmf(p_dim: int, mu, kappa: float, n: int, rng) -> np.ndarray:
    """von Mises-Fisher draws on ``S^p`` by Wood's tangent-normal rejection scheme."""
    d = p_dim + 1
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (d,) or abs(np.linalg.norm(mu) - 1.0) > 1e-10:
        raise ValueError(f"mean direction must be a unit vector in R^{d}")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0:
        return _uniform_sphere(d, n, rng)
    b = (d - 1) / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + (d - 1) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1) * np.log(1.0 - x0 * x0)
    w = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        m = todo.size
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0, m)
        ww = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(m)
        ok = kappa * ww + (d - 1) * np.log(1.0 - x0 * ww) - c >= np.log(u)
        w[todo[ok]] = ww[ok]
        todo = todo[~ok]
    v = _uniform_sphere(d - 1, n, rng)
    x = np.concatenate([w[:, None], np.sqrt(np.maximum(1.0 - w * w, 0.0))[:, None] * v], axis=1)
    return _rotate_from_e1(x, mu)


def sample_vmf_mixture(p_dim: int, kappa: float, n: int, rng) -> np.ndarray:
    """Equal-weight mixture of vMF laws with directions ``e1`` and ``e2``."""
    d = p_dim + 1
    mu1, mu2 = np.eye(d)[0], np.eye(d)[1]
    pick = rng.random(n) < 0.5
    out = sample_vmf(p_dim, mu1, kappa, n, rng)
    k = int(pick.sum())
    if k:
        out[pick] = sample_vmf(p_dim, mu2, kappa, k, rng)
    return out


def sample_projected(p_dim: int, cov_spec: str, param: float, n: int, rng) -> np.ndarray:
    """``Z / ||Z||`` for a centred normal ``Z`` in ``R^{p+1}``.

    ``cov_spec`` is ``diag_kappa`` (variance ``diag(1 + kappa, 1, ..., 1)``),
    ``shift_cyclic`` (``(Z_{p+1} + kappa Z_1, Z_i + kappa Z_{i+1})``) or
    ``equicorr`` (unit variances, correlation ``rho``).
    """
    d = p_dim + 1
    Z = rng.standard_normal((n, d))
    if cov_spec == "diag_kappa":
        if param < -1:
            raise ValueError("diag_kappa needs kappa >= -1")
        Z[:, 0] *= np.sqrt(1.0 + param)
    elif cov_spec == "shift_cyclic":
        Z = np.concatenate([Z[:, -1:] + param * Z[:, :1], Z[:, :-1] + param * Z[:, 1:]], axis=1)
    elif cov_spec == "equicorr":
        Z = Z @ _equicorr_chol(d, param).T
    else:
        raise ValueError(f"unknown covariance spec {cov_spec!r}")
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def _equicorr_chol(d, rho):
    if not -1.0 / (d - 1) < rho < 1:
        raise ValueError(f"equicorrelation rho={rho} is not positive definite in dimension {d}")
    return np.linalg.cholesky(rho * np.ones((d, d)) + (1 - rho) * np.eye(d))


# --- copulas ----------------------------------------------------------------

def _positive_stable(alpha, size, rng):
    """Kanter's representation of the law with Laplace transform ``exp(-t^alpha)``."""
    if alpha == 1:
        return np.ones(size)
    u = rng.uniform(0, np.pi, size)
    e = rng.standard_exponential(size)
    return (np.sin(alpha * u) / np.sin(u) ** (1 / alpha)
            * (np.sin((1 - alpha) * u) / e) ** ((1 - alpha) / alpha))


def sample_copula(kind: str, param: float, p_dim: int, n: int, rng) -> np.ndarray:
    """Cube samples from the ``normal``, ``clayton``, ``gumbel`` or ``bp`` copula.

    For ``bp`` the parameter is the mixing probability ``P`` of the
    Bucher-Pakzad copula against independence.
    """
    if kind == "normal":
        Z = rng.standard_normal((n, p_dim)) @ _equicorr_chol(p_dim, param).T if p_dim > 1 \
            else rng.standard_normal((n, 1))
        return ndtr(Z)
    if kind == "clayton":
        if param <= 0:
            raise ValueError("Clayton copula needs theta > 0")
        v = rng.gamma(1.0 / param, size=(n, 1))
        e = rng.standard_exponential((n, p_dim))
        return np.exp(-np.log1p(e / v) / param)
    if kind == "gumbel":
        if param < 1:
            raise ValueError("Gumbel copula needs theta >= 1")
        s = _positive_stable(1.0 / param, n, rng)[:, None]
        e = rng.standard_exponential((n, p_dim))
        return np.exp(-((e / s) ** (1.0 / param)))
    if kind == "bp":
        if not 0 <= param <= 1:
            raise ValueError("mixing probability must lie in [0, 1]")
        if p_dim < 3:
            raise ValueError("the Bucher-Pakzad copula needs p >= 3")
        U = rng.random((n, p_dim))
        pick = rng.random(n) < param
        U[pick, 0] = bp_first(U[pick, 1], U[pick, 2])
        return U
    raise ValueError(f"unknown copula {kind!r}")


def bp_first(u2, u3):
    return np.mod(np.asarray(u2) + np.asarray(u3), 1.0)


def pullback_to_sphere(cube_sample) -> np.ndarray:
    """``M_p^{-1}``: cube samples ``(n, p)`` to points on ``S^p``."""
    U = np.asarray(cube_sample, dtype=float)
    if np.any(U < 0) or np.any(U > 1):
        raise ValueError("cube entries must lie in [0, 1]")
    return cube_to_sphere(U)


def pullback_to_euclidean(cube_sample) -> np.ndarray:
    """Componentwise standard normal quantiles."""
    U = np.asarray(cube_sample, dtype=float)
    if np.any(U <= 0) or np.any(U >= 1):
        raise ValueError("entries must lie strictly inside (0, 1)")
    return ndtri(U)


# --- Euclidean --------------------------------------------------------------

def ma_matrix(p_dim: int, a: float) -> np.ndarray:
    """``M(a)`` with ones on the diagonal and ``a`` on the superdiagonal."""
    return np.eye(p_dim) + a * np.eye(p_dim, k=1)


def sample_euclidean_alternative(spec: AlternativeSpec, p_dim: int, n: int, rng) -> np.ndarray:
    fam, prm = spec.family, spec.params
    Z = rng.standard_normal((n, p_dim))
    u = np.ones(p_dim) / np.sqrt(p_dim)
    if fam == "mixture_shift":
        pick = rng.random(n) < prm["P"]
        return Z + np.outer(pick, prm["mu"] * u)
    if fam == "mixture_B":
        B = 0.9 * np.ones((p_dim, p_dim)) + 0.1 * np.eye(p_dim)
        pick = rng.random(n) < prm["P"]
        return np.where(pick[:, None], Z @ np.linalg.cholesky(B).T, Z)
    if fam == "multivariate_t":
        return Z / np.sqrt(rng.chisquare(prm["df"], (n, 1)) / prm["df"])
    if fam == "radial_power":
        rad = rng.chisquare(p_dim, n) ** prm["theta"]
        return rad[:, None] * Z / np.linalg.norm(Z, axis=1, keepdims=True)
    if fam == "ma_product":
        return Z @ ma_matrix(p_dim, prm["a"])
    if fam == "equicorr_normal":
        return Z @ _equicorr_chol(p_dim, prm["rho"]).T
    if fam == "shifted_bernoulli":
        pick = rng.random(n) < prm["P"]
        return Z + 3.0 * pick[:, None]
    if fam == "equicorr_mixture":
        Zr = rng.standard_normal((n, p_dim)) @ _equicorr_chol(p_dim, prm["rho"]).T
        pick = rng.random(n) < prm["P"]
        return np.where(pick[:, None], Z, Zr)
    if fam == "skew_normal":
        al = prm["alpha_shape"] * u
        delta = al / np.sqrt(1.0 + al @ al)
        x0 = rng.standard_normal(n)
        L = np.linalg.cholesky(np.eye(p_dim) - np.outer(delta, delta))
        x1 = np.outer(x0, delta) + Z @ L.T
        return np.where(x0[:, None] > 0, x1, -x1)
    raise ValueError(f"{fam} is not a Euclidean family")


def sample_alternative(spec: AlternativeSpec, p_dim: int, n: int, rng) -> np.ndarray:
    """Draw ``n`` observations of ``spec``; ``p_dim`` is the cube dimension of the test."""
    fam, prm = spec.family, spec.params
    main = prm[MAIN_PARAM[fam]]
    if fam == "vmf":
        return sample_vmf(p_dim, np.eye(p_dim + 1)[0], main, n, rng)
    if fam == "vmf_mixture":
        return sample_vmf_mixture(p_dim, main, n, rng)
    if fam == "projected_normal_diag":
        return sample_projected(p_dim, "diag_kappa", main, n, rng)
    if fam == "projected_ma":
        return sample_projected(p_dim, "shift_cyclic", main, n, rng)
    if fam == "projected_equicorr":
        return sample_projected(p_dim, "equicorr", main, n, rng)
    if fam in COPULA_FAMILIES:
        U = sample_copula(fam[len("copula_"):].replace("_mixture", ""), main, p_dim, n, rng)
        if spec.target == "sphere":
            return pullback_to_sphere(U)
        if spec.target == "euclidean":
            return pullback_to_euclidean(np.clip(U, 1e-300, 1 - 2**-53))
        return U
    return sample_euclidean_alternative(spec, p_dim, n, rng)
