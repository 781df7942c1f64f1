"""m-test and s-test combination of subset p-values, and the end-to-end test runner."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import chdtrc, chdtri

from . import _rng
from .calibration import (NullTable, TableError, load_table, save_table, second_stage_calibrate,
                          simulate_null_stats, simulate_null_table, table_pvalues)
from .pillow import SubsetFamily, mask_coords, sq_norms_batch
from .transforms import FITTED_KINDS, null_sampler, to_cube

PVALUE_EPS = 1e-15
COLLAPSING_KINDS = ("uniform", "sphere", "independence")


def m_threshold(alpha: float, m: int) -> float:
    """``1 - (1 - alpha)^(1/m)``: the Sidak level for the smallest of ``m`` p-values."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if m < 1:
        raise ValueError("family size must be at least 1")
    return -np.expm1(np.log1p(-alpha) / m)


def m_pvalue(pvals) -> np.ndarray:
    """``1 - (1 - min p)^m`` along the last axis; below ``alpha`` iff the m-test rejects."""
    pvals = np.asarray(pvals, dtype=float)
    m = pvals.shape[-1]
    return -np.expm1(m * np.log1p(-np.min(pvals, axis=-1)))


def m_test(pvals, alpha: float):
    """Return ``(min p, threshold, reject)``."""
    pv = np.asarray(list(pvals.values()) if isinstance(pvals, dict) else pvals, dtype=float)
    if pv.size == 0:
        raise ValueError("empty p-value family")
    stat = float(pv.min())
    thr = float(m_threshold(alpha, pv.size))
    return stat, thr, stat < thr


def s_statistic(pvals):
    """``sum Q(1 - p)`` along the last axis, with ``Q`` the chi-square(1) quantile.

    Returns ``(statistic, capped)``; p-values below ``1e-15`` are raised to it.
    """
    pv = np.asarray(pvals, dtype=float)
    capped = pv < PVALUE_EPS
    q = chdtri(1, np.maximum(pv, PVALUE_EPS))
    return q.sum(axis=-1), np.any(capped, axis=-1)


def s_test(pvals, alpha: float):
    """Return ``(statistic, p-value, reject, capped)``."""
    pv = np.asarray(list(pvals.values()) if isinstance(pvals, dict) else pvals, dtype=float)
    if pv.size == 0:
        raise ValueError("empty p-value family")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    stat, capped = s_statistic(pv)
    pval = float(chdtrc(pv.size, stat))
    return float(stat), pval, pval < alpha, bool(capped)


@dataclass
class TestReport:
    test_kind: str
    n: int
    p: int
    alpha: float
    family: SubsetFamily
    per_subset_stats: dict
    per_subset_pvalues: dict
    m_statistic: float
    m_threshold: float
    m_pvalue: float
    m_reject: bool
    s_statistic: float
    s_pvalue: float
    s_reject: bool
    R: int
    seed: int
    double_calibrated: bool = False
    warnings: list = field(default_factory=list)

    @property
    def reject(self) -> bool:
        return self.m_reject or self.s_reject

    def to_dict(self) -> dict:
        return {
            "test_kind": self.test_kind,
            "n": self.n,
            "p": self.p,
            "alpha": self.alpha,
            "family": self.family.label,
            "subsets": [
                {"mask": m, "coords": list(mask_coords(m)),
                 "sq_norm": self.per_subset_stats[m], "p_value": self.per_subset_pvalues[m]}
                for m in self.family.masks
            ],
            "m": {"stat": self.m_statistic, "threshold": self.m_threshold,
                  "p_value": self.m_pvalue, "reject": self.m_reject},
            "s": {"stat": self.s_statistic, "p_value": self.s_pvalue, "reject": self.s_reject},
            "R": self.R,
            "seed": self.seed,
            "double_calibrated": self.double_calibrated,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"{self.test_kind} test: n={self.n}, p={self.p}, family={self.family.label} "
                 f"({len(self.family)} subsets), R={self.R}, seed={self.seed}"]
        for m in self.family.masks:
            coords = ",".join(map(str, mask_coords(m)))
            lines.append(f"  H={{{coords}}}  sq_norm={self.per_subset_stats[m]:.6g}  "
                         f"p={self.per_subset_pvalues[m]:.4g}")
        verdict = {True: "reject", False: "accept"}
        lines.append(f"m-test: min p={self.m_statistic:.4g}  threshold={self.m_threshold:.4g}  "
                     f"p={self.m_pvalue:.4g}  -> {verdict[self.m_reject]} at alpha={self.alpha}")
        lines.append(f"s-test: stat={self.s_statistic:.4g}  p={self.s_pvalue:.4g}  "
                     f"-> {verdict[self.s_reject]} at alpha={self.alpha}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def table_filename(test_kind, n, p, R, seed, centering, collapse, family: SubsetFamily) -> str:
    label = family.label.replace(":", "")
    return f"{test_kind}_n{n}_p{p}_R{R}_s{seed}_{centering}_c{int(collapse)}_{label}.tbl"


def null_table_for(test_kind, n, p, family: SubsetFamily, R, seed, *, centering="known_zero",
                   collapse=None, ctx=None, cache_dir=None, threads=1) -> NullTable:
    """Load a cached null table or simulate (and cache) one.

    Normality and ellipticity tables depend on the fitted sample and are never cached.
    """
    collapse = test_kind in COLLAPSING_KINDS if collapse is None else collapse
    sampler = null_sampler(test_kind, n, p, ctx, centering)
    path = None
    if cache_dir is not None and test_kind not in FITTED_KINDS:
        path = os.path.join(cache_dir, table_filename(test_kind, n, p, R, seed, centering,
                                                      collapse, family))
        if os.path.exists(path):
            try:
                table = load_table(path, test_kind=test_kind, n=n, p=p, R=R)
                if table.covers(family.masks) and table.collapse == collapse and table.seed == seed:
                    return table
            except TableError:
                pass
    table = simulate_null_table(sampler, n, p, family, R, seed, test_kind=test_kind,
                                collapse=collapse, threads=threads)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        save_table(table, path)
    return table


def combine(pvals, masks, alpha):
    """m and s results for rows of p-values; returns a dict of arrays."""
    pvals = np.atleast_2d(pvals)
    mp = m_pvalue(pvals)
    s_stat, capped = s_statistic(pvals)
    return {
        "m_stat": pvals.min(axis=1),
        "m_pvalue": mp,
        "s_stat": s_stat,
        "s_pvalue": chdtrc(len(masks), s_stat),
        "capped": capped,
    }


def run_test(sample, test_kind: str, family="full", alpha: float = 0.05, R: int = 999,
             seed: int = 0, *, centering: str = "known_zero", collapse=None, table=None,
             cache_dir=None, double_calibrate: bool = False, recalib_samples: int = 499,
             threads: int = 1) -> TestReport:
    """Transform, compute squared norms, calibrate against a null table, and combine."""
    seed = _rng.check_seed(seed)
    X, ctx, warnings = to_cube(test_kind, sample, centering)
    n, p = X.shape
    if isinstance(family, str):
        family = SubsetFamily.parse(family, p)
    elif family.p != p:
        raise ValueError(f"family is for p={family.p}, sample has cube dimension {p}")
    masks = list(family.masks)
    if table is None:
        table = null_table_for(test_kind, n, p, family, R, seed, centering=centering,
                               collapse=collapse, ctx=ctx, cache_dir=cache_dir, threads=threads)
    else:
        table.check(test_kind, n, p)
        if not table.covers(masks):
            raise TableError("null table does not cover the requested family")
    R = table.R

    stats = sq_norms_batch(X[None], masks)[0]
    pv = table_pvalues(table, masks, stats[None], _rng.substream(seed, _rng.TIES, 0))[0]
    res = combine(pv, masks, alpha)
    m_stat, m_p = float(res["m_stat"][0]), float(res["m_pvalue"][0])
    s_stat, s_p = float(res["s_stat"][0]), float(res["s_pvalue"][0])
    thr = float(m_threshold(alpha, len(masks)))
    m_rej = m_stat < thr

    if double_calibrate:
        sampler = null_sampler(test_kind, n, p, ctx, centering)
        ref = simulate_null_stats(sampler, n, p, masks, recalib_samples, seed, _rng.RECAL, threads)
        ref_pv = table_pvalues(table, masks, ref, _rng.substream(seed, _rng.TIES, 1))
        ref_res = combine(ref_pv, masks, alpha)
        m_p = second_stage_calibrate(m_p, ref_res["m_pvalue"])
        s_p = second_stage_calibrate(s_p, ref_res["s_pvalue"])
        m_rej = m_p < alpha

    if family.is_partial:
        warnings.append(f"partial family {family.label}: the test is not consistent against all alternatives")
    if bool(res["capped"][0]):
        warnings.append(f"subset p-values below {PVALUE_EPS:g} were capped in the s-statistic")
    return TestReport(
        test_kind=test_kind, n=n, p=p, alpha=alpha, family=family,
        per_subset_stats={m: float(v) for m, v in zip(masks, stats)},
        per_subset_pvalues={m: float(v) for m, v in zip(masks, pv)},
        m_statistic=m_stat, m_threshold=thr, m_pvalue=m_p, m_reject=bool(m_rej),
        s_statistic=s_stat, s_pvalue=s_p, s_reject=bool(s_p < alpha),
        R=R, seed=seed, double_calibrated=double_calibrate, warnings=warnings,
    )
