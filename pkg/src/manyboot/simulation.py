"""Monte Carlo size experiments.

Dummy designs (A, B, C, custom): ``y = x beta + eps`` with ``x, eps ~ N(0, 1)``
and controls ``W = [1, D]`` where ``D`` holds ``q - 1`` independent
Bernoulli(pi) columns (``gamma = 0``). Panel design: ``G`` groups of ``M``
units, ``W`` is the group-indicator matrix, ``beta = 2``, no group effects.

Sparse dummies at ``n = 100`` are frequently degenerate (empty columns,
singleton columns that isolate one unit, duplicated columns). Offending
columns are redrawn from fresh positions of their own stream until ``W`` has
full column rank and every leverage ``M_ii`` is at least ``1e-8``; the number
of column redraws is reported.

Every replication draws from ``cell_key.derive("rep", r)``, so a cell's
results do not depend on chunking, worker count or the other cells in a run.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .bootstrap import DEFAULT_B, bootstrap_pvalue, prepare_null, starred_statistics
from .errors import ManybootError, RedrawLimitExceeded
from .estimators import NEGATIVE_MEAT_POLICIES, fit_ols, t_test
from .projection import LEVERAGE_FLOOR, RANK_TOL, Dataset, build_projection
from .rng import StreamKey, _uniform53, derive_words, philox4x32, replication_weights

METHODS = ("HC0", "HCK", "HCA", "Wild-G", "Wild-R")
RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
PANEL_GROUPS = (5, 10, 20, 25, 50)
MAX_REDRAW_ROUNDS = 1000
CSV_FIELDS = ("design", "ratio_or_G", "method", "freq", "mc_se",
              "clamp_count", "hck_fallback_count", "redraw_count", "other_rule_freq")

# "printed" rejects when mean(|t| > |t*|) < level, i.e. for small |t|
PVALUE_RULES = ("conventional", "printed")

_PRESETS = {"A": (1.0, 0.02), "B": (1.0, 0.01), "C": (2.0, 0.02)}
_WEIGHTS = {"Wild-G": "gaussian", "Wild-R": "rademacher"}


@dataclass(frozen=True)
class SimulationDesign:
    """One cell of a size experiment.

    ``q`` counts all controls including the intercept. Build the published
    cells with :meth:`preset` or :meth:`panel`.
    """

    variant: str = "A"
    n: int = 100
    q: int = 10
    pi: float = 0.02
    beta: float = 1.0
    G: int | None = None
    reps: int = 10_000
    B: int = DEFAULT_B
    level: float = 0.05
    methods: tuple[str, ...] = METHODS
    seed: int = 1
    controls: str = "dummies"
    negative_meat: str = "clamp"
    pvalue_rule: str = "printed"

    def __post_init__(self):
        v = self.variant.upper() if self.variant.lower() != "panel" else "panel"
        if self.variant.lower() == "custom":
            v = "custom"
        if v not in ("A", "B", "C", "panel", "custom"):
            raise ValueError(f"unknown design variant {self.variant!r}")
        object.__setattr__(self, "variant", v)
        object.__setattr__(self, "methods", tuple(_canonical_method(m) for m in self.methods))
        if v == "panel":
            if not self.G or self.n % self.G:
                raise ValueError(f"panel design needs G dividing n, got G={self.G}, n={self.n}")
            object.__setattr__(self, "q", self.G)
        elif v in _PRESETS and (self.beta, self.pi) != _PRESETS[v]:
            raise ValueError(f"design {v} fixes (beta, pi) = {_PRESETS[v]}")
        if self.controls not in ("dummies", "gaussian"):
            raise ValueError("controls must be 'dummies' or 'gaussian'")
        if self.controls != "dummies" and v != "custom":
            raise ValueError("only custom designs may change the control distribution")
        if not 1 <= self.q < self.n - 1:
            raise ValueError(f"need 1 <= q < n - 1, got q={self.q}, n={self.n}")
        if self.reps < 1 or self.B < 1:
            raise ValueError("reps and B must be positive")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.negative_meat not in NEGATIVE_MEAT_POLICIES:
            raise ValueError(f"negative_meat must be one of {NEGATIVE_MEAT_POLICIES}")
        if self.pvalue_rule not in PVALUE_RULES:
            raise ValueError(f"pvalue_rule must be one of {PVALUE_RULES}")

    @classmethod
    def preset(cls, variant: str, ratio: float, **kw) -> SimulationDesign:
        beta, pi = _PRESETS[variant.upper()]
        n = kw.pop("n", 100)
        return cls(variant=variant.upper(), n=n, q=int(round(ratio * n)), pi=pi, beta=beta, **kw)

    @classmethod
    def panel(cls, G: int, **kw) -> SimulationDesign:
        return cls(variant="panel", G=G, q=G, pi=0.0, beta=2.0, **kw)

    @property
    def ratio(self) -> float:
        return self.q / self.n

    @property
    def column(self) -> str:
        """Value of the ``ratio_or_G`` column."""
        return str(self.G) if self.variant == "panel" else f"{self.ratio:.2f}".rstrip("0").rstrip(".")

    @property
    def cell_tag(self) -> str:
        return (f"{self.variant}|n={self.n}|q={self.q}|pi={self.pi!r}|beta={self.beta!r}"
                f"|G={self.G}|controls={self.controls}")

    def key(self) -> StreamKey:
        return StreamKey.root(self.seed).derive(self.cell_tag)


def _canonical_method(m: str) -> str:
    for name in METHODS:
        if m.lower() == name.lower():
            return name
    raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")


# -- design draws ---------------------------------------------------------


def _column_draws(words, attempts: np.ndarray, n: int, pi: float) -> np.ndarray:
    """Bernoulli columns; a column at attempt ``a`` reads positions ``[a n, (a+1) n)`` of its stream."""
    k0, k1, s2, s3 = (w[None, :] for w in words)
    pos = attempts.astype(np.uint64)[None, :] * np.uint64(n) + np.arange(n, dtype=np.uint64)[:, None]
    w = philox4x32(pos & np.uint64(0xFFFFFFFF), pos >> np.uint64(32), s2, s3, k0, k1)
    return (_uniform53(w[0], w[1]) < pi).astype(np.float64)


def _advance(words, attempts: np.ndarray, n: int, pi: float, batch: int = 4):
    """First attempt ``>= attempts`` of each column with at least two ones.

    Equivalent to redrawing one attempt at a time, but evaluates ``batch``
    attempts per column in one vectorized call.
    """
    k = attempts.size
    out = np.empty((n, k))
    found = attempts.copy()
    todo = np.arange(k)
    while todo.size:
        start = found[todo]
        if start.max() >= MAX_REDRAW_ROUNDS:
            raise RedrawLimitExceeded(
                f"a dummy column had fewer than two ones in {MAX_REDRAW_ROUNDS} attempts"
            )
        att = (start[:, None] + np.arange(batch)[None, :]).reshape(-1)
        sub = tuple(w[np.repeat(todo, batch)] for w in words)
        cols = _column_draws(sub, att, n, pi).reshape(n, todo.size, batch)
        ok = cols.sum(axis=0) >= 2
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        out[:, todo[hit]] = cols[:, hit, first[hit]]
        found[todo[hit]] = start[hit] + first[hit]
        found[todo[~hit]] = start[~hit] + batch
        todo = todo[~hit]
    return found, out


def _offending_columns(D: np.ndarray) -> np.ndarray:
    """Dummy columns to redraw so ``[1, D]`` has full rank and no leverage-one row."""
    n, k = D.shape
    # duplicated supports are the common rank failure; later copies are redrawn
    packed = np.packbits(D.T.astype(bool), axis=1)
    seen: set[bytes] = set()
    dup = []
    for j in range(k):
        b = packed[j].tobytes()
        if b in seen:
            dup.append(j)
        seen.add(b)
    if dup:
        return np.array(dup)
    W = np.column_stack([np.ones(n), D])
    Q, R, piv = sla.qr(W, mode="economic", pivoting=True, check_finite=False)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > RANK_TOL * d[0]))
    if r < k + 1:
        dep = np.sort(piv[r:])
        dep = dep[dep > 0] - 1
        return dep if dep.size else np.array([k - 1])
    lev = 1.0 - np.einsum("ij,ij->i", Q, Q)
    return _touching(D, np.flatnonzero(lev < LEVERAGE_FLOOR))


def _touching(D: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Highest-index dummy column touching any row in ``rows``."""
    if rows.size == 0:
        return rows
    touching = np.flatnonzero(D[rows].sum(axis=0) > 0)
    return touching[-1:] if touching.size else np.array([D.shape[1] - 1])


def _draw_dummies(design: SimulationDesign, rep_key: StreamKey):
    """Control matrix ``[1, D]`` under the column-redraw policy.

    Columns with fewer than two ones are redrawn first, then later copies of
    duplicated columns and other linearly dependent columns, then the
    highest-index column touching an observation with leverage below the
    floor. Returns ``(W, ctx, redraws)``.
    """
    n, k = design.n, design.q - 1
    words = derive_words(rep_key, "column", np.arange(k))
    attempts, D = _advance(words, np.zeros(k, dtype=np.int64), n, design.pi)
    redraws = int(attempts.sum())
    for _ in range(MAX_REDRAW_ROUNDS):
        bad = _offending_columns(D)
        if bad.size == 0:
            W = np.column_stack([np.ones(n), D])
            ctx = build_projection(W)
            if ctx.rank == design.q:
                bad = _touching(D, ctx.degenerate_rows(LEVERAGE_FLOOR))
                if bad.size == 0:
                    return W, ctx, redraws
            else:
                bad = np.array([k - 1])
        start = attempts[bad] + 1
        sub = tuple(w[bad] for w in words)
        found, cols = _advance(sub, start, n, design.pi)
        D[:, bad] = cols
        redraws += int((found - attempts[bad]).sum())
        attempts[bad] = found
    raise RedrawLimitExceeded(
        f"no admissible control matrix after {MAX_REDRAW_ROUNDS} redraw rounds "
        f"(n={n}, q={design.q}, pi={design.pi})"
    )


def _draw(design: SimulationDesign, rep_index: int):
    rep_key = design.key().derive("rep", rep_index)
    n = design.n
    x = rep_key.derive("x").normal(n)
    eps = rep_key.derive("error").normal(n)
    redraws = 0
    if design.variant == "panel":
        M = n // design.G
        W = np.kron(np.eye(design.G), np.ones((M, 1)))
        ctx = build_projection(W)
    elif design.controls == "gaussian":
        W = np.column_stack([np.ones(n), rep_key.derive("controls").normal((n, design.q - 1))])
        ctx = build_projection(W)
    else:
        W, ctx, redraws = _draw_dummies(design, rep_key)
    y = x * design.beta + eps
    return Dataset(y, x, W), ctx, redraws, rep_key


def draw_design(design: SimulationDesign, rep_index: int) -> Dataset:
    """Dataset of replication ``rep_index``; identical on every call."""
    return _draw(design, rep_index)[0]


def draw_design_info(design: SimulationDesign, rep_index: int):
    """``(dataset, projection context, column redraws)`` of one replication."""
    return _draw(design, rep_index)[:3]


# -- replications ---------------------------------------------------------


@dataclass
class CellTally:
    reps: int = 0
    rejections: dict = field(default_factory=lambda: {m: 0 for m in METHODS})
    clamps: dict = field(default_factory=lambda: {m: 0 for m in METHODS})
    # bootstrap rejections under the p-value rule not selected by the design
    other_rule: dict = field(default_factory=lambda: {m: 0 for m in METHODS})
    hck_fallbacks: int = 0
    redraws: int = 0

    def add(self, other: CellTally) -> None:
        self.reps += other.reps
        for m in METHODS:
            self.rejections[m] += other.rejections[m]
            self.clamps[m] += other.clamps[m]
            self.other_rule[m] += other.other_rule[m]
        self.hck_fallbacks += other.hck_fallbacks
        self.redraws += other.redraws


def run_replication(design: SimulationDesign, rep_index: int) -> CellTally:
    """Test ``beta = beta_true`` on one draw with every requested method."""
    data, ctx, redraws, rep_key = _draw(design, rep_index)
    out = CellTally(reps=1, redraws=redraws)
    beta0 = design.beta
    fit = fit_ols(data, ctx)
    for m in ("HC0", "HCK", "HCA"):
        if m in design.methods:
            res = t_test(fit, m.lower(), beta0, design.negative_meat)
            out.rejections[m] += res.p_normal < design.level
            out.clamps[m] += res.clamped
            if m == "HCK":
                out.hck_fallbacks += res.fallback
    boots = [m for m in ("Wild-G", "Wild-R") if m in design.methods]
    if boots:
        null = prepare_null(data, beta0, ctx)
        observed = t_test(fit, "hca", beta0, design.negative_meat)
        for m in boots:
            key = rep_key.derive("bootstrap", METHODS.index(m))
            w = replication_weights(key, _WEIGHTS[m], design.n, design.B)
            _, t_star, clamped = starred_statistics(null, w, policy=design.negative_meat)
            conventional, printed = bootstrap_pvalue(observed.t, t_star)
            p, other = (printed, conventional) if design.pvalue_rule == "printed" else (conventional, printed)
            out.rejections[m] += p < design.level
            out.other_rule[m] += other < design.level
            out.clamps[m] += bool(observed.clamped or clamped.any())
    return out


def _run_range(design: SimulationDesign, start: int, stop: int) -> CellTally:
    tally = CellTally()
    for r in range(start, stop):
        tally.add(run_replication(design, r))
    return tally


# -- reports --------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    design: str
    ratio_or_G: str
    method: str
    freq: float
    mc_se: float
    clamp_count: int
    hck_fallback_count: int
    redraw_count: int
    reps: int
    other_rule_freq: float = float("nan")


@dataclass
class SimulationReport:
    rows: list[CellResult] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def extend(self, other: SimulationReport) -> None:
        self.rows.extend(other.rows)
        self.errors.extend(other.errors)

    def lookup(self, design: str, column: str, method: str) -> CellResult:
        for row in self.rows:
            if (row.design, row.ratio_or_G, row.method) == (design, str(column), method):
                return row
        raise KeyError((design, column, method))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r.design, r.ratio_or_G, r.method, f"{r.freq:.6f}", f"{r.mc_se:.6f}",
                        r.clamp_count, r.hck_fallback_count, r.redraw_count,
                        "" if np.isnan(r.other_rule_freq) else f"{r.other_rule_freq:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        return format_tables(self.rows)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "errors": self.errors, "metadata": self.metadata}


def format_tables(rows, value=lambda r: f"{r.freq:.3f}") -> str:
    """One block per design: methods down, ratios (or G) across."""
    blocks = []
    for design in dict.fromkeys(r.design for r in rows):
        sub = [r for r in rows if r.design == design]
        cols = list(dict.fromkeys(r.ratio_or_G for r in sub))
        methods = [m for m in METHODS if any(r.method == m for r in sub)]
        methods += [m for m in dict.fromkeys(r.method for r in sub) if m not in methods]
        head = "G" if design == "panel" else "q/n"
        cell = {(r.method, r.ratio_or_G): value(r) for r in sub}
        width = max([6] + [len(v) for v in cell.values()] + [len(c) for c in cols])
        lines = [f"Design {design}", f"{head:<8}" + "".join(f"{c:>{width + 1}}" for c in cols)]
        lines.append("-" * len(lines[-1]))
        for m in methods:
            lines.append(f"{m:<8}" + "".join(f"{cell.get((m, c), ''):>{width + 1}}" for c in cols))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _rows_from_tally(design: SimulationDesign, tally: CellTally) -> list[CellResult]:
    rows = []
    for m in design.methods:
        p = tally.rejections[m] / tally.reps
        rows.append(CellResult(
            design=design.variant, ratio_or_G=design.column, method=m, freq=p,
            mc_se=float(np.sqrt(p * (1.0 - p) / tally.reps)), clamp_count=tally.clamps[m],
            hck_fallback_count=tally.hck_fallbacks, redraw_count=tally.redraws, reps=tally.reps,
            other_rule_freq=tally.other_rule[m] / tally.reps if m in _WEIGHTS else float("nan"),
        ))
    return rows


def _chunks(reps: int, size: int):
    return [(s, min(s + size, reps)) for s in range(0, reps, size)]


def run_cell(design: SimulationDesign, workers: int | None = 1, chunk: int = 250) -> SimulationReport:
    """Rejection frequencies of every requested method for one design cell."""
    return run_suite([design], workers=workers, chunk=chunk)


def run_suite(designs, workers: int | None = 1, chunk: int = 250, progress=None) -> SimulationReport:
    """Run every cell; a failing cell is recorded in ``errors`` and skipped.

    ``workers > 1`` spreads replication chunks over processes. Tallies are
    integer sums over replications, so the report does not depend on
    ``workers`` or ``chunk``.
    """
    designs = list(designs)
    workers = max(1, workers or (os.cpu_count() or 1))
    t0 = time.perf_counter()
    report = SimulationReport()
    tallies = {i: CellTally() for i in range(len(designs))}
    failed: dict[int, str] = {}
    jobs = [(i, a, b) for i, d in enumerate(designs) for a, b in _chunks(d.reps, chunk)]
    if workers == 1:
        for i, a, b in jobs:
            if i in failed:
                continue
            try:
                tallies[i].add(_run_range(designs[i], a, b))
            except ManybootError as exc:
                failed[i] = f"{type(exc).__name__}: {exc}"
            if progress:
                progress(designs[i], b)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [(i, ex.submit(_run_range, designs[i], a, b)) for i, a, b in jobs]
            for i, fut in futs:
                try:
                    tallies[i].add(fut.result())
                except ManybootError as exc:
                    failed.setdefault(i, f"{type(exc).__name__}: {exc}")
    for i, d in enumerate(designs):
        if i in failed:
            report.errors.append({"design": d.variant, "ratio_or_G": d.column, "error": failed[i]})
        else:
            report.rows.extend(_rows_from_tally(d, tallies[i]))
    report.metadata = {
        "seeds": sorted({d.seed for d in designs}),
        "reps": sorted({d.reps for d in designs}),
        "B": sorted({d.B for d in designs}),
        "level": sorted({d.level for d in designs}),
        "negative_meat": sorted({d.negative_meat for d in designs}),
        "pvalue_rule": sorted({d.pvalue_rule for d in designs}),
        "workers": workers,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    return report


def design_sweep(variant: str, ratios=RATIOS, **kw) -> list[SimulationDesign]:
    if variant.lower() == "panel":
        return [SimulationDesign.panel(G, **kw) for G in ratios]
    return [SimulationDesign.preset(variant, r, **kw) for r in ratios]


def with_reps(designs, reps: int) -> list[SimulationDesign]:
    return [replace(d, reps=reps) for d in designs]
