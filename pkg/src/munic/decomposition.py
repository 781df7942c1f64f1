"""Zero-marginal decomposition of signed measures on finite product spaces.

A finite signed measure ``mu`` on a product probability space
``(Omega_1 x ... x Omega_p, P_1 x ... x P_p)`` splits uniquely as

    mu(A_1 x ... x A_p) = sum_H  P_{J\\H}(A_{J\\H}) * mu_H(A_H)

where every ``mu_H`` (``H`` a subset of the coordinates) has all of its
one-coordinate marginals equal to zero.  Here the axes are finite, so
measures are dense arrays of cell masses and the decomposition is exact.
This module is the reference against which the continuous statistics are
checked; it favours clarity over speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

MAX_AXES = 6
MAX_LEVELS = 16
CHECK_EPS = 1e-10
ROUNDTRIP_EPS = 1e-12


class DiscreteProductSpace:
    """Finite product probability space ``Omega_1 x ... x Omega_p``."""

    def __init__(self, axis_probs):
        probs = tuple(np.asarray(a, dtype=float).copy() for a in axis_probs)
        if len(probs) < 1:
            raise ValueError("a product space needs at least one axis")
        if len(probs) > MAX_AXES:
            raise ValueError(f"at most {MAX_AXES} axes are supported, got {len(probs)}")
        for j, a in enumerate(probs):
            if a.ndim != 1 or a.size < 1:
                raise ValueError(f"axis {j}: probability vector must be 1-d and nonempty")
            if a.size > MAX_LEVELS:
                raise ValueError(f"axis {j}: at most {MAX_LEVELS} levels, got {a.size}")
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"axis {j}: probabilities must be finite and nonnegative")
            if abs(a.sum() - 1.0) > 1e-12:
                raise ValueError(f"axis {j}: probabilities sum to {a.sum()!r}, not 1")
            a.setflags(write=False)
        self.axis_probs = probs

    @classmethod
    def uniform(cls, axis_sizes) -> "DiscreteProductSpace":
        return cls([np.full(k, 1.0 / k) for k in axis_sizes])

    @property
    def p(self) -> int:
        return len(self.axis_probs)

    @property
    def axis_sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axis_probs)

    def product_measure(self, axes=None) -> np.ndarray:
        """Cell masses of ``P_K`` for the axes ``K`` (all axes by default)."""
        axes = range(self.p) if axes is None else axes
        out = np.ones(())
        for j in axes:
            out = np.multiply.outer(out, self.axis_probs[j])
        return out

    def restrict(self, axes) -> "DiscreteProductSpace":
        return DiscreteProductSpace([self.axis_probs[j] for j in axes])

    def __eq__(self, other):
        if not isinstance(other, DiscreteProductSpace):
            return NotImplemented
        return self.p == other.p and all(
            np.array_equal(a, b) for a, b in zip(self.axis_probs, other.axis_probs)
        )

    def __repr__(self):
        return f"DiscreteProductSpace(axis_sizes={self.axis_sizes})"

    def __hash__(self):
        return hash(tuple(a.tobytes() for a in self.axis_probs))


@dataclass(frozen=True)
class DiscreteSignedMeasure:
    space: DiscreteProductSpace
    cell_mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.cell_mass, dtype=float)
        if mass.shape != self.space.axis_sizes:
            raise ValueError(
                f"cell_mass shape {mass.shape} does not match axis sizes {self.space.axis_sizes}"
            )
        if not np.all(np.isfinite(mass)):
            raise ValueError("cell masses must be finite")
        object.__setattr__(self, "cell_mass", mass)

    @property
    def total(self) -> float:
        return float(self.cell_mass.sum())

    def scale(self) -> float:
        """Total absolute mass, floored at 1; tolerances are relative to it."""
        return max(1.0, float(np.abs(self.cell_mass).sum()))

    def evaluate(self, sets) -> float:
        """Measure of the product set ``A_1 x ... x A_p``.

        ``sets[j]`` is a boolean mask over the levels of axis ``j`` or ``None``
        for the whole axis.
        """
        m = self.cell_mass
        for j in reversed(range(self.space.p)):
            a = sets[j]
            m = m.sum(axis=j) if a is None else np.tensordot(m, np.asarray(a, float), axes=([j], [0]))
        return float(m)

    def marginal(self, axes) -> np.ndarray:
        """Cell masses of the image measure on the coordinates ``axes``."""
        drop = tuple(j for j in range(self.space.p) if j not in set(axes))
        return self.cell_mass.sum(axis=drop) if drop else self.cell_mass.copy()


@dataclass(frozen=True)
class ZmComponent:
    """The component ``mu_H``; ``cell_mass`` is 0-d when ``H`` is empty."""

    subset: int
    axes: tuple[int, ...]
    cell_mass: np.ndarray

    def as_measure(self, space: DiscreteProductSpace) -> DiscreteSignedMeasure:
        if not self.axes:
            raise ValueError("the empty-subset component is a scalar, not a measure")
        return DiscreteSignedMeasure(space.restrict(self.axes), self.cell_mass)


def mask_axes(mask: int, p: int) -> tuple[int, ...]:
    return tuple(j for j in range(p) if mask >> j & 1)


def _axes_mask(axes) -> int:
    m = 0
    for j in axes:
        m |= 1 << j
    return m


def _embed(values: np.ndarray, axes, p: int) -> np.ndarray:
    """Reshape an array over ``axes`` (ascending) so it broadcasts over all p axes."""
    shape = [1] * p
    for k, j in enumerate(axes):
        shape[j] = values.shape[k]
    return values.reshape(shape)


def decompose(mu: DiscreteSignedMeasure) -> dict[int, ZmComponent]:
    """All ``2**p`` zero-marginal components of ``mu``, keyed by coordinate bitmask.

    Runs the level recursion: start from ``mu_0 = mu - mu(Omega) P``; at level
    ``k`` every component with ``#H = k`` is read off as the ``H``-marginal of
    ``mu_{k-1}``, and ``mu_k`` subtracts ``P_{J\\H} x mu_H`` for all of them.
    """
    space = mu.space
    if any(np.any(a == 0) for a in space.axis_probs):
        raise ValueError("axis probability vectors with zero entries are not supported")
    p = space.p
    total = mu.total
    components = {0: ZmComponent(0, (), np.asarray(total))}
    current = mu.cell_mass - total * space.product_measure()
    for k in range(1, p + 1):
        level = []
        for axes in combinations(range(p), k):
            rest = tuple(j for j in range(p) if j not in axes)
            comp = current.sum(axis=rest) if rest else current.copy()
            mask = _axes_mask(axes)
            components[mask] = ZmComponent(mask, axes, comp)
            level.append((axes, rest, comp))
        nxt = current.copy()
        for axes, rest, comp in level:
            nxt -= _embed(comp, axes, p) * _embed(space.product_measure(rest), rest, p)
        current = nxt
    return components


def reconstruct(components: dict[int, ZmComponent], space: DiscreteProductSpace) -> DiscreteSignedMeasure:
    """Assemble ``sum_H P_{J\\H} x mu_H`` cell by cell."""
    p = space.p
    if set(components) != set(range(1 << p)):
        raise ValueError(f"expected one component per subset of {p} coordinates")
    out = np.zeros(space.axis_sizes)
    for mask, comp in components.items():
        axes = mask_axes(mask, p)
        if comp.axes != axes:
            raise ValueError(f"component for mask {mask:#x} carries axes {comp.axes}")
        expected = tuple(space.axis_sizes[j] for j in axes)
        if comp.cell_mass.shape != expected:
            raise ValueError(
                f"component {mask:#x} has shape {comp.cell_mass.shape}, space needs {expected}"
            )
        rest = tuple(j for j in range(p) if j not in axes)
        out += _embed(comp.cell_mass, axes, p) * _embed(space.product_measure(rest), rest, p)
    return DiscreteSignedMeasure(space, out)


def is_k_null(mu: DiscreteSignedMeasure, k: int) -> bool:
    """True when ``mu`` vanishes on every product set that is trivial outside at most k axes.

    A measure vanishes on all K-sets exactly when its K-marginal is zero, so
    the check runs over marginals of size ``0..k``.
    """
    p = mu.space.p
    if not 0 <= k <= p:
        raise ValueError(f"k must lie in [0, {p}], got {k}")
    tol = CHECK_EPS * mu.scale()
    for size in range(k + 1):
        for axes in combinations(range(p), size):
            if np.max(np.abs(mu.marginal(axes))) > tol:
                return False
    return True
