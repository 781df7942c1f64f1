"""Squared L2 norms of the zero-marginal components of the uniform empirical process.

For a sample ``X`` of size ``n`` in ``[0, 1]^p`` and a nonempty coordinate
subset ``H`` the component ``b_{n,H}`` is the sqrt(n)-scaled signed measure

    b_{n,H}(t) = n^{-1/2} sum_i prod_{j in H} (1{X_ij <= t_j} - t_j)

whose squared norm has the closed form

    ||b_{n,H}||^2 = (1/n) sum_{a,b} prod_{j in H} k(X_aj, X_bj),
    k(x, y) = (x^2 + y^2)/2 - max(x, y) + 1/3.

Subsets are bitmasks: bit ``j`` stands for coordinate ``j + 1``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from math import comb

import numpy as np

from . import _kernels

MAX_P = 20
MAX_FULL_P = 12
MAX_FAMILY = 65535


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def mask_coords(mask: int) -> tuple[int, ...]:
    """1-based coordinates of a bitmask."""
    return tuple(j + 1 for j in range(mask.bit_length()) if mask >> j & 1)


def coords_mask(coords) -> int:
    m = 0
    for c in coords:
        if c < 1:
            raise ValueError(f"coordinates are 1-based, got {c}")
        m |= 1 << (c - 1)
    return m


class SubsetFamily:
    """A family of nonempty coordinate subsets over which the tests combine.

    ``kind`` is ``"full"`` (all nonempty subsets), ``"max"`` (cardinality at
    most ``h``) or ``"min"`` (cardinality at least ``h``).  Masks are ordered
    by cardinality, then by value.
    """

    def __init__(self, kind: str, p: int, h: int | None = None):
        if not 1 <= p <= MAX_P:
            raise ValueError(f"dimension must lie in [1, {MAX_P}], got {p}")
        if kind == "full":
            h = None
            cards = range(1, p + 1)
        elif kind == "max":
            if h is None or h < 1:
                raise ValueError("max-cardinality family needs h >= 1")
            cards = range(1, min(h, p) + 1)
        elif kind == "min":
            if h is None or h < 1:
                raise ValueError("min-cardinality family needs h >= 1")
            cards = range(h, p + 1)
        else:
            raise ValueError(f"unknown family kind {kind!r}")
        size = sum(comb(p, c) for c in cards)
        if size == 0:
            raise ValueError(f"family {kind}:{h} is empty for p={p}")
        if size > MAX_FAMILY or (p > MAX_FULL_P and size == 2**p - 1):
            raise ValueError(
                f"family of {size} subsets at p={p} is too large; use a partial family"
            )
        self.kind = kind
        self.p = p
        self.h = h
        self.masks = tuple(
            coords_mask(c) for card in cards for c in combinations(range(1, p + 1), card)
        )

    @classmethod
    def parse(cls, spec: str, p: int) -> "SubsetFamily":
        """Build from ``full``, ``min2``/``min:h`` or ``max:h``."""
        spec = spec.strip().lower()
        if spec == "full":
            return cls("full", p)
        for kind in ("min", "max"):
            if spec.startswith(kind):
                rest = spec[len(kind):].lstrip(":")
                try:
                    h = int(rest)
                except ValueError:
                    raise ValueError(f"bad family spec {spec!r}") from None
                return cls(kind, p, h)
        raise ValueError(f"bad family spec {spec!r}; expected full, min:h or max:h")

    @property
    def label(self) -> str:
        return "full" if self.kind == "full" else f"{self.kind}:{self.h}"

    @property
    def is_partial(self) -> bool:
        return len(self.masks) < 2**self.p - 1

    def cardinalities(self) -> np.ndarray:
        return np.array([popcount(m) for m in self.masks])

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def __eq__(self, other):
        return isinstance(other, SubsetFamily) and (self.p, self.masks) == (other.p, other.masks)

    def __repr__(self):
        return f"SubsetFamily({self.label!r}, p={self.p}, size={len(self.masks)})"


def bridge_kernel(x, y):
    """Per-coordinate factor ``(x^2 + y^2)/2 - max(x, y) + 1/3``.

    It integrates to zero in either argument, which is what makes
    off-diagonal terms of the squared norm mean-zero under uniformity.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (x * x + y * y) * 0.5 - np.maximum(x, y) + 1.0 / 3.0


def as_cube_sample(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"expected an n x p sample, got shape {X.shape}")
    if not 1 <= X.shape[1] <= MAX_P:
        raise ValueError(f"dimension must lie in [1, {MAX_P}], got {X.shape[1]}")
    if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("cube samples must have all entries in [0, 1]")
    return np.ascontiguousarray(X)


def _closure(masks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masks needed to build ``masks`` by adding one coordinate at a time.

    Returns the closed mask list (ascending) with each entry's parent index
    and added coordinate (0-based, the highest set bit).
    """
    need = set()
    for m in masks:
        while m:
            need.add(m)
            m &= ~(1 << (m.bit_length() - 1))
    order = sorted(need)
    index = {m: i for i, m in enumerate(order)}
    parent = np.empty(len(order), dtype=np.int64)
    coord = np.empty(len(order), dtype=np.int64)
    for i, m in enumerate(order):
        top = m.bit_length() - 1
        rest = m & ~(1 << top)
        parent[i] = index[rest] if rest else -1
        coord[i] = top
    return np.array(order, dtype=np.int64), parent, coord


def sq_norm(sample, H: int) -> float:
    """Squared norm of ``b_{n,H}`` for one subset, computed directly."""
    X = as_cube_sample(sample)
    if H <= 0:
        raise ValueError("the subset must be nonempty")
    if H >> X.shape[1]:
        raise ValueError(f"subset {H:#x} has coordinates beyond p={X.shape[1]}")
    coords = np.array([c - 1 for c in mask_coords(H)], dtype=np.int64)
    return max(0.0, float(_kernels.sq_norm_direct(X, coords)))


def sq_norms_batch(samples, masks, threads: int = 1, chunk: int = 32) -> np.ndarray:
    """Squared norms for a stack of samples of shape (B, n, p).

    Returns a (B, len(masks)) array.  The per-pair kernel values are shared
    across all subsets; results do not depend on ``threads`` or ``chunk``.
    """
    X = np.ascontiguousarray(samples, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"expected a (B, n, p) stack, got shape {X.shape}")
    masks = [int(m) for m in masks]
    if not masks or min(masks) <= 0:
        raise ValueError("masks must be nonempty subsets")
    if max(masks) >> X.shape[2]:
        raise ValueError("a subset uses coordinates beyond the sample dimension")
    order, parent, coord = _closure(masks)
    pick = np.searchsorted(order, masks)
    B = X.shape[0]
    out = np.empty((B, len(order)))
    starts = range(0, B, chunk)

    def work(s):
        _kernels.sq_norms_shared(X[s:s + chunk], parent, coord, out[s:s + chunk])

    if threads > 1 and B > chunk:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, starts))
    else:
        for s in starts:
            work(s)
    return np.maximum(out[:, pick], 0.0)


def sq_norms_all(sample, family) -> dict[int, float]:
    """``{mask: ||b_{n,H}||^2}`` for every subset in ``family``."""
    X = as_cube_sample(sample)
    masks = list(family.masks if isinstance(family, SubsetFamily) else family)
    vals = sq_norms_batch(X[None], masks)[0]
    return {m: float(v) for m, v in zip(masks, vals)}


def pillow_moments(h: int) -> tuple[float, float]:
    """Mean and variance of the squared norm of a Brownian pillow with ``#H = h``."""
    if h < 1:
        raise ValueError(f"cardinality must be >= 1, got {h}")
    return 6.0**-h, 2.0 * 90.0**-h


def _kl_weights(h: int, truncation: int) -> np.ndarray:
    base = 1.0 / (np.arange(1, truncation + 1) * np.pi) ** 2
    w = np.ones(1)
    for _ in range(h):
        w = np.multiply.outer(w, base).ravel()
    return w


def kl_sample(h: int, truncation: int = 64, rng=None, size=None):
    """Draws of ``||b_H||^2`` from its truncated Karhunen-Loeve series.

    Uses the box ``{1..truncation}^h`` of eigenvalues ``prod (nu_j pi)^-2``
    and adds the omitted mean ``6^-h - sum(weights)`` as a constant, so the
    sampled mean is exact.
    """
    if h < 1 or truncation < 1:
        raise ValueError("need h >= 1 and truncation >= 1")
    rng = np.random.default_rng() if rng is None else rng
    w = _kl_weights(h, truncation)
    tail = 6.0**-h - w.sum()
    count = 1 if size is None else int(size)
    out = np.empty(count)
    rows = max(1, (1 << 22) // w.size)
    for s in range(0, count, rows):
        z = rng.standard_normal((min(rows, count - s), w.size))
        out[s:s + z.shape[0]] = (z * z) @ w
    out += tail
    return float(out[0]) if size is None else out
