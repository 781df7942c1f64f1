"""Monte Carlo power studies driven by flat ``key=value`` scenario files.

Example::

    test=sphere
    n=50
    p=3
    replications=500
    R=199
    seed=1
    alternative.family=vmf
    alternative.kappa=0,0.5,1.0

Exactly one key may hold a comma-separated list; it defines the grid.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import chdtrc

from . import _rng
from .alternatives import MAIN_PARAM, AlternativeSpec, sample_alternative
from .calibration import TEST_KINDS, table_pvalues
from .combiners import m_pvalue, null_table_for, s_statistic
from .pillow import SubsetFamily, popcount, sq_norms_batch
from .transforms import FITTED_KINDS, to_cube

TARGET_FOR_KIND = {"uniform": "cube", "independence": "cube", "sphere": "sphere",
                   "normal": "euclidean", "isotropy": "euclidean", "elliptic": "euclidean"}
VARIANTS = ("m", "s", "m_h2", "s_h2")
INT_KEYS = ("n", "p", "replications", "R", "seed")
FLOAT_KEYS = ("alpha",)
STR_KEYS = ("test", "family", "centering")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    test_kind: str
    alternative: AlternativeSpec
    grid_key: str
    grid: list
    n: int
    p: int
    replications: int = 1000
    R: int = 199
    alpha: float = 0.05
    seed: int = 0
    family: str = "full"
    centering: str = "known_zero"
    extra: dict = field(default_factory=dict)

    def specs(self):
        for v in self.grid:
            prm = {**self.alternative.params, self.grid_key: v}
            yield v, AlternativeSpec(self.alternative.family, prm, self.alternative.target)


def _number(text, key):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: not a number: {text!r}") from None
    return v


def parse_config(text: str) -> ScenarioConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    alt = {k[len("alternative."):]: v for k, v in raw.items() if k.startswith("alternative.")}
    top = {k: v for k, v in raw.items() if not k.startswith("alternative.")}
    unknown = set(top) - set(INT_KEYS + FLOAT_KEYS + STR_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    for key in ("test", "n", "p"):
        if key not in top:
            raise ConfigError(f"missing key {key!r}")
    if "family" not in alt:
        raise ConfigError("missing key 'alternative.family'")
    listed = [k for k, v in raw.items() if "," in v]
    if len(listed) > 1:
        raise ConfigError(f"only one key may hold a list, got {listed}")
    if listed and not listed[0].startswith("alternative."):
        raise ConfigError(f"the grid must be an alternative parameter, got {listed[0]!r}")

    kind = top["test"]
    if kind not in TEST_KINDS:
        raise ConfigError(f"unknown test kind {kind!r}")
    fam = alt.pop("family")
    if fam not in MAIN_PARAM:
        raise ConfigError(f"unknown alternative family {fam!r}")
    params, grid_key, grid = {}, MAIN_PARAM[fam], None
    for k, v in alt.items():
        if "," in v:
            grid_key, grid = k, [_number(x, k) for x in v.split(",")]
        else:
            params[k] = _number(v, k)
    if grid is None:
        if grid_key not in params:
            raise ConfigError(f"alternative.{grid_key} is required for {fam}")
        grid = [params.pop(grid_key)]
    try:
        spec = AlternativeSpec(fam, params, TARGET_FOR_KIND[kind])
        for v in grid:
            AlternativeSpec(fam, {**params, grid_key: v}, TARGET_FOR_KIND[kind])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    ints = {}
    for k in INT_KEYS:
        if k in top:
            try:
                ints[k] = int(top[k])
            except ValueError:
                raise ConfigError(f"{k}: not an integer: {top[k]!r}") from None
    cfg = ScenarioConfig(
        test_kind=kind, alternative=spec, grid_key=grid_key, grid=grid,
        n=ints["n"], p=ints["p"],
        replications=ints.get("replications", 1000), R=ints.get("R", 199),
        alpha=_number(top["alpha"], "alpha") if "alpha" in top else 0.05,
        seed=ints.get("seed", 0), family=top.get("family", "full"),
        centering=top.get("centering", "known_zero"),
    )
    if cfg.n < 1 or cfg.p < 1 or cfg.replications < 1:
        raise ConfigError("n, p and replications must be positive")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    try:
        SubsetFamily.parse(cfg.family, cfg.p)
        _rng.check_seed(cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _decisions(pv, masks, alpha):
    """Rejection indicators per variant for rows of family p-values."""
    cards = np.array([popcount(m) for m in masks])
    out = {}
    for name, sel in (("", np.ones(len(masks), bool)), ("_h2", cards >= 2)):
        if not sel.any():
            continue
        sub = pv[:, sel]
        out["m" + name] = m_pvalue(sub) < alpha
        out["s" + name] = chdtrc(sub.shape[1], s_statistic(sub)[0]) < alpha
    return out


def run_power(cfg: ScenarioConfig, threads: int = 1, cache_dir=None) -> list[dict]:
    """Rejection frequencies for every grid value and test variant.

    Replication ``r`` of grid point ``g`` draws its data from the stream
    ``(seed, DATA, g, r)``, so results do not depend on ``threads``.
    """
    family = SubsetFamily.parse(cfg.family, cfg.p)
    masks = list(family.masks)
    n, p = cfg.n, cfg.p
    shared = None
    if cfg.test_kind not in FITTED_KINDS:
        shared = null_table_for(cfg.test_kind, n, p, family, cfg.R, cfg.seed,
                                centering=cfg.centering, cache_dir=cache_dir, threads=threads)
    rows = []
    for g, (value, spec) in enumerate(cfg.specs()):
        def one(r):
            rng = _rng.substream(cfg.seed, _rng.DATA, g, r)
            X, ctx, _ = to_cube(cfg.test_kind, sample_alternative(spec, p, n, rng), cfg.centering)
            if X.shape[1] != p:
                raise ValueError(f"alternative produced cube dimension {X.shape[1]}, expected {p}")
            if shared is not None:
                return X, None
            table = null_table_for(cfg.test_kind, n, p, family, cfg.R,
                                   _rng.derive_seed(cfg.seed, _rng.RUN, g, r), ctx=ctx,
                                   centering=cfg.centering)
            return X, table

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                drawn = list(ex.map(one, range(cfg.replications)))
        else:
            drawn = [one(r) for r in range(cfg.replications)]
        X = np.stack([d[0] for d in drawn])
        stats = sq_norms_batch(X, masks, threads=threads)
        ties = _rng.substream(cfg.seed, _rng.TIES, g)
        if shared is not None:
            pv = table_pvalues(shared, masks, stats, ties)
        else:
            pv = np.concatenate([table_pvalues(d[1], masks, stats[i:i + 1], ties)
                                 for i, d in enumerate(drawn)])
        dec = _decisions(pv, masks, cfg.alpha)
        for name in VARIANTS:
            if name not in dec:
                continue
            pw = float(np.mean(dec[name]))
            rows.append({"parameter": value, "variant": name, "power": pw,
                         "replications": cfg.replications,
                         "mc_stderr": float(np.sqrt(pw * (1 - pw) / cfg.replications))})
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("parameter,variant,power,replications,mc_stderr\n")
    for r in rows:
        buf.write(f"{r['parameter']:g},{r['variant']},{r['power']:.4f},{r['replications']},"
                  f"{r['mc_stderr']:.4f}\n")
    return buf.getvalue()
