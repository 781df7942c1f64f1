"""Monte Carlo null tables and smoothed p-values.

A null table holds, for every subset in a family, the sorted squared norms
of ``R`` samples drawn under the null model.  An observed squared norm ``y``
is placed among the order statistics ``b(1) <= ... <= b(R)`` (with
``b(0) = 0`` and ``b(R+1) = inf``) and interpolated inside its cell with a
Gamma distribution matching the first two moments of the limiting law:

    psi(y) = (r + (G(y) - G(b(r))) / (G(b(r+1)) - G(b(r)))) / (R + 1)

The reported p-value is ``1 - psi(y)``, which lies in (0, 1] and is small
for large squared norms.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincc

from . import _rng
from .pillow import SubsetFamily, popcount, sq_norms_batch

TEST_KINDS = ("uniform", "sphere", "normal", "isotropy", "elliptic", "independence")
MIN_REPS = 99
CHUNK = 64
TIE_RTOL = 1e-12
FORMAT_HEADER = "munic-null-table"
FORMAT_VERSION = 1


class TableError(ValueError):
    pass


class TableCorruptError(TableError):
    pass


class TableVersionError(TableError):
    pass


class TableMetadataError(TableError):
    pass


@dataclass
class NullTable:
    """Sorted null squared norms per subset.

    With ``collapse`` set, all subsets of one cardinality share a single
    list pooled from every such subset, so the list holds ``R`` values times
    the number of family subsets of that cardinality.
    """

    test_kind: str
    n: int
    p: int
    R: int
    seed: int
    collapse: bool
    per_subset: dict[int, np.ndarray] = field(repr=False)

    @property
    def masks(self) -> tuple[int, ...]:
        return tuple(self.per_subset)

    def entry(self, mask: int) -> np.ndarray:
        try:
            return self.per_subset[mask]
        except KeyError:
            raise TableMetadataError(f"null table has no entry for subset {mask:#x}") from None

    def covers(self, masks) -> bool:
        return all(m in self.per_subset for m in masks)

    def check(self, test_kind: str, n: int, p: int, R: int | None = None):
        want = {"test_kind": test_kind, "n": n, "p": p}
        if R is not None:
            want["R"] = R
        for key, value in want.items():
            if getattr(self, key) != value:
                raise TableMetadataError(
                    f"null table {key}={getattr(self, key)!r} does not match requested {value!r}"
                )

    def same_as(self, other: "NullTable") -> bool:
        head = ("test_kind", "n", "p", "R", "seed", "collapse")
        if any(getattr(self, k) != getattr(other, k) for k in head):
            return False
        if self.masks != other.masks:
            return False
        return all(np.array_equal(self.per_subset[m], other.per_subset[m]) for m in self.masks)


def simulate_null_table(null_sampler, n: int, p: int, family, R: int, seed: int, *,
                        test_kind: str = "uniform", collapse: bool = False,
                        threads: int = 1) -> NullTable:
    """Simulate ``R`` null samples and tabulate their squared norms.

    ``null_sampler(rng, size)`` must return a ``(size, n, p)`` stack of cube
    samples.  Replications are drawn in fixed chunks, chunk ``c`` from the
    stream ``(seed, TABLE, c)``, so the table is a pure function of the
    arguments.
    """
    if R < MIN_REPS:
        raise ValueError(f"R must be at least {MIN_REPS}, got {R}")
    if test_kind not in TEST_KINDS:
        raise ValueError(f"unknown test kind {test_kind!r}")
    masks = list(family.masks if isinstance(family, SubsetFamily) else family)
    stats = simulate_null_stats(null_sampler, n, p, masks, R, seed, _rng.TABLE, threads)
    per_subset = {}
    if collapse:
        cards = np.array([popcount(m) for m in masks])
        pooled = {h: np.sort(stats[:, cards == h].ravel()) for h in np.unique(cards)}
        for m, h in zip(masks, cards):
            per_subset[m] = pooled[h]
    else:
        for i, m in enumerate(masks):
            per_subset[m] = np.sort(stats[:, i])
    return NullTable(test_kind, n, p, R, _rng.check_seed(seed), bool(collapse), per_subset)


def simulate_null_stats(null_sampler, n, p, masks, count, seed, stream, threads=1):
    """``(count, len(masks))`` squared norms of null samples from stream ``(seed, stream, c)``."""
    starts = list(range(0, count, CHUNK))

    def chunk(i):
        s = starts[i]
        rng = _rng.substream(seed, stream, i)
        X = np.asarray(null_sampler(rng, min(CHUNK, count - s)))
        if X.shape[1:] != (n, p):
            raise ValueError(f"null sampler returned samples of shape {X.shape[1:]}, expected {(n, p)}")
        return sq_norms_batch(X, masks)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(chunk, range(len(starts))))
    else:
        parts = [chunk(i) for i in range(len(starts))]
    return np.concatenate(parts, axis=0)


def gamma_params(h: int) -> tuple[float, float]:
    """Shape and rate of the Gamma law with mean ``6^-h`` and variance ``2 * 90^-h``."""
    if h < 1:
        raise ValueError(f"cardinality must be >= 1, got {h}")
    return 5.0**h / 2.0 ** (h + 1), 15.0**h / 2.0


def grid_pvalue(observed: float, table_entry, R: int | None = None) -> float:
    """``(#{b > observed} + 1) / (R + 1)``."""
    b = np.asarray(table_entry)
    R = b.size if R is None else R
    if b.size != R:
        raise ValueError(f"table entry has {b.size} values, expected {R}")
    exceed = b.size - np.searchsorted(b, observed, side="right")
    return (exceed + 1) / (R + 1)


def _cell_position(y, b, h, rng):
    """Split ``psi`` into a grid index and within-cell fractions.

    Returns ``(r, frac, rest)`` with ``psi = (r + frac)/(L + 1)`` and
    ``rest = 1 - frac`` computed without cancellation; tied entries get a
    uniform draw across their run.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("observed squared norms must be finite and nonnegative")
    L = b.size
    shape, rate = gamma_params(h)
    tol = TIE_RTOL * y
    lo = np.searchsorted(b, y - tol, side="left")
    hi = np.searchsorted(b, y + tol, side="right")
    run = hi - lo

    r = lo.astype(float)
    frac = np.zeros_like(y)
    rest = np.ones_like(y)

    single = run == 1
    r[single] = lo[single] + 1
    frac[single], rest[single] = 0.0, 1.0

    tied = run >= 2
    if np.any(tied):
        # uniform on [(lo+1)/(L+1), hi/(L+1)]: index lo+1 plus a fraction of the run width
        u = rng.random(int(tied.sum()))
        width = (hi[tied] - lo[tied] - 1).astype(float)
        pos = u * width
        r[tied] = lo[tied] + 1 + np.floor(pos)
        frac[tied] = pos - np.floor(pos)
        rest[tied] = 1.0 - frac[tied]

    free = run == 0
    if np.any(free):
        k = lo[free]
        yy = y[free]
        lower = np.where(k > 0, b[np.maximum(k - 1, 0)], 0.0)
        upper = np.where(k < L, b[np.minimum(k, L - 1)], np.inf)
        cl, cu, cy = (gammainc(shape, rate * v) for v in (lower, upper, yy))
        sl, su, sy = (gammaincc(shape, rate * v) for v in (lower, upper, yy))
        use_sf = cu > 0.5
        with np.errstate(invalid="ignore", divide="ignore"):
            f_cdf = (cy - cl) / (cu - cl)
            r_sf = (sy - su) / (sl - su)
        fr = np.where(use_sf, 1.0 - r_sf, f_cdf)
        rs = np.where(use_sf, r_sf, 1.0 - f_cdf)
        bad = ~np.isfinite(fr) | ~np.isfinite(rs)
        if np.any(bad):
            # Gamma cell collapsed numerically: interpolate linearly in y instead
            finite = np.isfinite(upper)
            with np.errstate(invalid="ignore", divide="ignore"):
                lin = np.where(finite, (yy - lower) / (upper - lower), 1.0 - lower / yy)
            lin = np.clip(np.nan_to_num(lin, nan=0.0), 0.0, 1.0)
            fr = np.where(bad, lin, fr)
            rs = np.where(bad, 1.0 - lin, rs)
        frac[free] = np.clip(fr, 0.0, 1.0)
        rest[free] = np.clip(rs, 0.0, 1.0)
    return r, frac, rest


def psi(observed, table_entry, h: int, rng=None):
    """Smoothed rank of ``observed`` within a sorted null entry, in [0, 1)."""
    b = np.asarray(table_entry, dtype=float)
    rng = np.random.default_rng() if rng is None else rng
    r, frac, _ = _cell_position(observed, b, h, rng)
    out = (r + frac) / (b.size + 1)
    return float(out[0]) if np.ndim(observed) == 0 else out


def upper_pvalue(observed, table_entry, h: int, rng=None):
    """``1 - psi(observed)``, computed directly so tail values keep precision."""
    b = np.asarray(table_entry, dtype=float)
    rng = np.random.default_rng() if rng is None else rng
    r, _, rest = _cell_position(observed, b, h, rng)
    out = (b.size - r + rest) / (b.size + 1)
    return float(out[0]) if np.ndim(observed) == 0 else out


def table_pvalues(table: NullTable, masks, values, rng) -> np.ndarray:
    """Smoothed p-values for a ``(B, len(masks))`` array of observed squared norms."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty_like(values)
    for i, m in enumerate(masks):
        out[:, i] = upper_pvalue(values[:, i], table.entry(m), popcount(m), rng)
    return out


def smoothed_pvalues(observed: dict, table: NullTable, rng) -> dict[int, float]:
    """Subset-wise ``1 - psi`` for a ``{mask: squared norm}`` mapping."""
    masks = list(observed)
    if not table.covers(masks):
        missing = [hex(m) for m in masks if m not in table.per_subset]
        raise TableMetadataError(f"null table lacks subsets {missing}")
    vals = np.array([[observed[m] for m in masks]])
    pv = table_pvalues(table, masks, vals, rng)[0]
    return {m: float(v) for m, v in zip(masks, pv)}


def second_stage_calibrate(raw_pvalue: float, null_pvalues=None) -> float:
    """Grid p-value of a combined p-value among combined p-values of fresh null samples.

    With no null p-values (calibration disabled) the input is returned unchanged.
    """
    if null_pvalues is None:
        return raw_pvalue
    ref = np.asarray(null_pvalues, dtype=float)
    if ref.size < MIN_REPS:
        raise ValueError(f"second-stage calibration needs at least {MIN_REPS} null samples")
    return (int(np.count_nonzero(ref <= raw_pvalue)) + 1) / (ref.size + 1)


def save_table(table: NullTable, path) -> None:
    lines = [
        f"{FORMAT_HEADER} v{FORMAT_VERSION}",
        f"kind={table.test_kind} n={table.n} p={table.p} R={table.R} "
        f"seed={table.seed} collapse={int(table.collapse)}",
    ]
    for m in table.masks:
        vals = ",".join(f"{v:.17g}" for v in table.per_subset[m])
        lines.append(f"H={m:x} values={vals}")
    lines.append("end")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_table(path, *, test_kind=None, n=None, p=None, R=None) -> NullTable:
    """Read a table written by :func:`save_table`, validating it and the request."""
    try:
        with open(path, encoding="ascii") as fh:
            text = fh.read()
    except UnicodeDecodeError:
        raise TableCorruptError(f"{path}: not a text null table") from None
    lines = text.split("\n")
    first = lines[0].strip()
    if not first.startswith(FORMAT_HEADER + " v"):
        raise TableCorruptError(f"{path}: missing '{FORMAT_HEADER}' header")
    version = first[len(FORMAT_HEADER) + 2:]
    if version != str(FORMAT_VERSION):
        raise TableVersionError(f"{path}: unsupported table version {version!r}")
    if not text.endswith("end\n") or len(lines) < 4:
        raise TableCorruptError(f"{path}: truncated table (no end marker)")
    try:
        meta = dict(tok.split("=", 1) for tok in lines[1].split())
        kind = meta["kind"]
        tn, tp, tR = int(meta["n"]), int(meta["p"]), int(meta["R"])
        seed = int(meta["seed"])
        collapse = {"0": False, "1": True}[meta["collapse"]]
    except (KeyError, ValueError):
        raise TableCorruptError(f"{path}: malformed metadata line {lines[1]!r}") from None
    if kind not in TEST_KINDS:
        raise TableCorruptError(f"{path}: unknown test kind {kind!r}")
    per_subset = {}
    for line in lines[2:-2]:
        try:
            head, vals = line.split(" ", 1)
            if not head.startswith("H=") or not vals.startswith("values="):
                raise ValueError
            mask = int(head[2:], 16)
            arr = np.array([float(v) for v in vals[7:].split(",")])
        except ValueError:
            raise TableCorruptError(f"{path}: malformed subset line") from None
        if mask <= 0 or mask >> tp or mask in per_subset:
            raise TableCorruptError(f"{path}: invalid or repeated subset {mask:#x}")
        if np.any(np.diff(arr) < 0) or not np.all(np.isfinite(arr)):
            raise TableCorruptError(f"{path}: subset {mask:#x} values are not sorted finite reals")
        per_subset[mask] = arr
    if not per_subset:
        raise TableCorruptError(f"{path}: table has no subsets")
    cards = {}
    for m in per_subset:
        cards[popcount(m)] = cards.get(popcount(m), 0) + 1
    shared = {}
    for m, arr in per_subset.items():
        want = tR * cards[popcount(m)] if collapse else tR
        if arr.size != want:
            raise TableCorruptError(f"{path}: subset {m:#x} has {arr.size} values, expected {want}")
        if collapse:
            h = popcount(m)
            if h in shared and not np.array_equal(shared[h], arr):
                raise TableCorruptError(f"{path}: collapsed entries of cardinality {h} disagree")
            per_subset[m] = shared.setdefault(h, arr)
    table = NullTable(kind, tn, tp, tR, seed, collapse, per_subset)
    if test_kind is not None or n is not None or p is not None or R is not None:
        for key, value in (("test_kind", test_kind), ("n", n), ("p", p), ("R", R)):
            if value is not None and getattr(table, key) != value:
                raise TableMetadataError(
                    f"{path}: table {key}={getattr(table, key)!r} but {value!r} was requested"
                )
    return table
