"""Command line entry point: ``manyboot infer | simulate | report``.

Exit codes: 0 success, 2 bad input (data, flags, config), 3 numerical
degeneracy (leverage-one observations, collinear regressors, ...).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from . import __version__
from .bootstrap import MODES, BootstrapConfig, score_bootstrap_test, wild_bootstrap_test
from .dataio import load_dataset, read_report_csv, reference_tables
from .errors import ConfigError, DegenerateConstraint, InputError, LeverageDegenerate, ManybootError, NumericalError
from .estimators import fit_ols, linear_test
from .projection import build_projection, dependent_columns
from .rng import WEIGHT_SCHEMES
from .simulation import (
    CSV_FIELDS,
    NEGATIVE_MEAT_POLICIES,
    PANEL_GROUPS,
    PVALUE_RULES,
    RATIOS,
    SimulationDesign,
    run_suite,
)

REPORT_SCHEMA = "manyboot.inference/1"
SIM_SCHEMA = "manyboot.simulation/1"
SEED_ENV = "MANYBOOT_SEED"
NORMAL_METHODS = ("hc0", "hck", "hca")
BOOT_METHODS = {"wild-g": "gaussian", "wild-r": "rademacher", "wild": None}


# -- inference report -----------------------------------------------------


@dataclass
class MethodResult:
    method: str
    estimate: float
    se: float | None
    t: float
    p: float
    p_kind: str
    clamped: bool = False
    fallback: bool = False
    extra: dict = field(default_factory=dict)


@dataclass
class InferenceReport:
    n: int
    q: int
    q_columns: int
    d_x: int
    beta: list
    hypothesis: dict
    results: list
    diagnostics: dict
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> InferenceReport:
        if d.get("schema") != REPORT_SCHEMA:
            raise InputError(f"unsupported report schema {d.get('schema')!r}")
        d = dict(d)
        d["results"] = [MethodResult(**r) for r in d["results"]]
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def from_json(cls, text: str) -> InferenceReport:
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        h = self.hypothesis
        lines = [
            f"n = {self.n}, controls = {self.q_columns} (rank {self.q}), regressors = {self.d_x}",
            "beta_hat = " + ", ".join(f"{b:.6g}" for b in self.beta),
            f"H0: {h['c']}' beta = {h['lambda']:.6g}",
            "",
            f"{'method':<8} {'estimate':>12} {'se':>12} {'t':>10} {'p':>8}  notes",
        ]
        for r in self.results:
            se = f"{r.se:.6g}" if r.se is not None else "-"
            notes = []
            if r.fallback:
                notes.append("HCK unavailable, HC0 value")
            if r.clamped:
                notes.append("meat clamped")
            if r.p_kind != "normal":
                notes.append(r.p_kind)
            lines.append(f"{r.method:<8} {r.estimate:>12.6g} {se:>12} {r.t:>10.4f} {r.p:>8.4f}  {'; '.join(notes)}")
        dg = self.diagnostics
        lines += ["", f"min leverage M_ii = {dg['min_leverage']:.4g}"]
        if dg.get("rows_dropped"):
            lines.append(f"rows dropped for missing values: {dg['rows_dropped']}")
        if dg.get("dependent_controls"):
            lines.append("linearly dependent controls: " + ", ".join(dg["dependent_controls"]))
        if "a_n" in dg:
            lines.append(f"bootstrap adjustment a_n = {dg['a_n']}")
        return "\n".join(lines) + "\n"


def _parse_constraint(text: str, d_x: int):
    try:
        lhs, rhs = text.split("=")
        c = np.array([float(v) for v in lhs.split(",")])
        lam = float(rhs)
    except ValueError:
        raise InputError(f"--constraint must look like c1,c2=lambda, got {text!r}") from None
    if c.size != d_x:
        raise InputError(f"--constraint has {c.size} coefficients for {d_x} regressor(s)")
    if not np.any(c):
        raise DegenerateConstraint("--constraint coefficients are all zero")
    return c, lam


def _method_list(text: str) -> list[str]:
    methods = [m.strip().lower() for m in text.split(",") if m.strip()]
    for m in methods:
        if m not in NORMAL_METHODS and m not in BOOT_METHODS:
            raise InputError(f"unknown method {m!r}")
    return methods


def _resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None


def cmd_infer(args) -> InferenceReport:
    loaded = load_dataset(args.data, args.y, args.x, args.controls)
    data = loaded.dataset
    methods = _method_list(args.methods)
    if args.constraint:
        c, lam = _parse_constraint(args.constraint, data.d_x)
    else:
        if data.d_x != 1:
            raise InputError("several regressors need --constraint c1,...,cd=lambda")
        c, lam = np.ones(1), float(args.beta0)
    if not np.isfinite(lam):
        raise InputError("the hypothesised value must be finite")
    ctx = build_projection(data.W)
    dep = dependent_columns(data.W)
    fit = fit_ols(data, ctx)
    needs_leverage = any(m != "hc0" for m in methods)
    if needs_leverage and ctx.degenerate_rows().size:
        rows = ctx.degenerate_rows()
        raise LeverageDegenerate(
            f"{rows.size} observation(s) are fitted exactly by the controls "
            f"(data rows {[_data_row(loaded, r) for r in rows[:20]]})", rows)
    estimate = float(c @ fit.beta)
    results = []
    for m in methods:
        if m in NORMAL_METHODS:
            res = linear_test(fit, m, c, lam)
            results.append(MethodResult(m.upper(), estimate, float(np.sqrt(res.variance)), res.t,
                                        res.p_normal, "normal", res.clamped, res.fallback))
    seed = _resolve_seed(args.seed)
    diag = {
        "min_leverage": ctx.min_leverage,
        "rows_read": loaded.rows_read,
        "rows_dropped": loaded.rows_dropped,
        "dependent_controls": [loaded.control_names[j] for j in dep],
        "seed": seed,
    }
    boots = [m for m in methods if m in BOOT_METHODS]
    if boots:
        mode = args.mode
        if data.d_x > 1 and mode != "score":
            mode = "score"
            diag["mode_note"] = "several regressors: score bootstrap used"
        diag["mode"] = mode
        for m in boots:
            scheme = BOOT_METHODS[m] or args.weights
            cfg = BootstrapConfig(B=args.B, mode=mode, weights=scheme, seed=seed,
                                  workers=max(1, args.workers or (os.cpu_count() or 1)))
            if mode == "score":
                out = score_bootstrap_test(data, c, lam, cfg, ctx=ctx)
            else:
                out = wild_bootstrap_test(data, lam / float(c[0]), cfg, ctx=ctx)
            label = {"wild-g": "Wild-G", "wild-r": "Wild-R"}.get(m, f"Wild-{scheme[0].upper()}")
            results.append(MethodResult(
                label, estimate, None, out.statistic, out.p_value, f"bootstrap {mode}, B={out.B}",
                clamped=bool(out.observed_clamped),
                extra={"rank": out.rank, "bootstrap_clamps": out.bootstrap_clamps, "weights": scheme},
            ))
            diag["a_n"] = np.asarray(out.adjustment.a_n).tolist()
            diag["adjustment_clamped"] = bool(out.adjustment.clamped)
    return InferenceReport(
        n=data.n, q=ctx.rank, q_columns=data.q, d_x=data.d_x, beta=fit.beta.tolist(),
        hypothesis={"c": c.tolist(), "lambda": lam}, results=results, diagnostics=diag,
    )


def _data_row(loaded, r: int) -> int:
    """1-based CSV data row of the ``r``-th retained observation."""
    dropped = loaded.dropped_rows
    row = int(r) + 1
    for d in dropped:
        if d <= row:
            row += 1
    return row


# -- simulate -------------------------------------------------------------


def parse_ratios(text: str) -> list[float]:
    """``0.1,0.5,0.9`` or ``0.1..0.9`` (step 0.1) or ``0.1..0.9:0.2``."""
    text = text.strip()
    try:
        if ".." in text:
            rng, _, step = text.partition(":")
            lo, hi = (float(v) for v in rng.split(".."))
            step = float(step) if step else 0.1
            k = int(round((hi - lo) / step))
            if step <= 0 or k < 0 or abs(lo + k * step - hi) > 1e-9:
                raise ValueError
            return [round(lo + i * step, 10) for i in range(k + 1)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"cannot parse ratios {text!r}; use 0.1,0.5 or 0.1..0.9[:step]") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected a comma-separated list of integers, got {text!r}") from None


_SIM_KEYS = {
    "design": str, "ratios": str, "G": str, "reps": int, "B": int, "seed": int, "level": float,
    "methods": str, "workers": int, "out": str, "n": int, "pi": float, "beta": float,
    "control_dist": str, "pvalue_rule": str, "negative_meat": str,
}


def load_config(path) -> dict:
    """``[simulate]`` section of an INI file; keys use the long flag names."""
    parser = configparser.ConfigParser()
    parser.optionxform = lambda s: s.replace("-", "_")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("simulate"):
        raise ConfigError(f"{path}: missing [simulate] section")
    lines = text.splitlines()

    def lineno(key):
        for i, line in enumerate(lines, start=1):
            if line.strip().replace("-", "_").split("=")[0].strip() == key:
                return i
        return 0

    out = {}
    for key, raw in parser.items("simulate"):
        canon = "G" if key.lower() == "g" else key
        if canon not in _SIM_KEYS:
            raise ConfigError(f"{path}, line {lineno(key)}: unknown key {key!r}")
        try:
            out[canon] = _SIM_KEYS[canon](raw)
        except ValueError:
            raise ConfigError(f"{path}, line {lineno(key)}: bad value {raw!r} for {key}") from None
    return out


def build_designs(opts: dict) -> list[SimulationDesign]:
    design = str(opts.get("design", "A"))
    common = dict(
        reps=opts.get("reps", 10_000), B=opts.get("B", 199), level=opts.get("level", 0.05),
        seed=opts["seed"], pvalue_rule=opts.get("pvalue_rule", "printed"),
        negative_meat=opts.get("negative_meat", "clamp"),
    )
    if opts.get("methods"):
        common["methods"] = tuple(m.strip() for m in opts["methods"].split(",") if m.strip())
    n = opts.get("n", 100)
    try:
        if design.lower() == "panel":
            groups = _int_list(opts["G"]) if opts.get("G") else list(PANEL_GROUPS)
            return [SimulationDesign.panel(G, n=n, **common) for G in groups]
        ratios = parse_ratios(opts["ratios"]) if opts.get("ratios") else list(RATIOS)
        if design.lower() == "custom":
            return [SimulationDesign(variant="custom", n=n, q=int(round(r * n)), pi=opts.get("pi", 0.02),
                                     beta=opts.get("beta", 1.0), controls=opts.get("control_dist", "dummies"),
                                     **common) for r in ratios]
        return [SimulationDesign.preset(design, r, n=n, **common) for r in ratios]
    except (KeyError, ValueError) as exc:
        raise InputError(f"invalid design: {exc}") from None


def cmd_simulate(args):
    opts = load_config(args.config) if args.config else {}
    for key in _SIM_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    opts["seed"] = _resolve_seed(opts.get("seed"))
    designs = build_designs(opts)
    workers = opts.get("workers") or (os.cpu_count() or 1)
    report = run_suite(designs, workers=workers)
    report.metadata.update(_versions())
    report.metadata["schema"] = SIM_SCHEMA
    report.metadata["designs"] = [d.cell_tag for d in designs]
    text = report.to_text()
    out = opts.get("out")
    if out:
        with open(out + ".csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv())
        with open(out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        with open(out + ".json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return report, text


def _versions() -> dict:
    return {"manyboot": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# -- report ---------------------------------------------------------------


def merge_reports(paths) -> list[dict]:
    if not paths:
        raise InputError("report needs at least one CSV file")
    rows = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            try:
                rows.extend(read_report_csv(fh.read(), CSV_FIELDS))
            except InputError as exc:
                raise type(exc)(f"{p}: {exc}") from None
    return rows


def compare_table(rows, compare: bool) -> str:
    ref = reference_tables() if compare else {}
    head = ["design", "ratio_or_G", "method", "ours", "mc_se"]
    if compare:
        head = ["design", "ratio_or_G", "method", "ours", "paper", "|diff|", "mc_se"]
    out = [head]
    for r in rows:
        ours = float(r["freq"])
        line = [r["design"], r["ratio_or_G"], r["method"], f"{ours:.3f}"]
        if compare:
            key = (r["design"], _norm_col(r["ratio_or_G"]), r["method"])
            val = ref.get(key)
            line += [f"{val:.3f}", f"{abs(ours - val):.3f}"] if val is not None else ["-", "-"]
        line.append(f"{float(r['mc_se']):.4f}")
        out.append(line)
    widths = [max(len(row[i]) for row in out) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in out) + "\n"


def _norm_col(col: str) -> str:
    try:
        v = float(col)
    except ValueError:
        return col
    return str(int(v)) if v.is_integer() and v >= 1 else f"{v:g}"


def cmd_report(args) -> str:
    rows = merge_reports(args.paths)
    text = compare_table(rows, args.compare_paper)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manyboot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"manyboot {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    inf = sub.add_parser("infer", help="robust and bootstrap tests on a CSV dataset")
    inf.add_argument("--data", required=True, help="CSV file with a header row")
    inf.add_argument("--y", required=True, help="outcome column")
    inf.add_argument("--x", required=True, help="regressor column(s), comma separated")
    inf.add_argument("--controls", default="all-others",
                     help="control columns, comma separated, 'all-others' (default) or '' for none")
    inf.add_argument("--beta0", type=float, default=0.0, help="hypothesised coefficient (scalar x)")
    inf.add_argument("--constraint", help="linear hypothesis c1,...,cd=lambda")
    inf.add_argument("--methods", default="hc0,hck,hca,wild-g,wild-r")
    inf.add_argument("--B", type=int, default=199)
    inf.add_argument("--mode", choices=MODES, default="percentile-t")
    inf.add_argument("--weights", choices=WEIGHT_SCHEMES, default="gaussian",
                     help="weights for the generic 'wild' method")
    inf.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or 0)")
    inf.add_argument("--workers", type=int, help="bootstrap threads (default: available CPUs)")
    inf.add_argument("--out", help="write the JSON report here")

    sim = sub.add_parser("simulate", help="Monte Carlo size experiments")
    sim.add_argument("--config", help="INI file with a [simulate] section")
    sim.add_argument("--design", choices=["A", "B", "C", "panel", "custom"])
    sim.add_argument("--ratios", help="q/n values: 0.1,0.5 or 0.1..0.9[:step]")
    sim.add_argument("--G", help="panel group counts, comma separated")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--B", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--level", type=float)
    sim.add_argument("--methods", help="subset of hc0,hck,hca,wild-g,wild-r")
    sim.add_argument("--workers", type=int, help="processes (default: available CPUs)")
    sim.add_argument("--out", help="output prefix for .csv, .txt and .json")
    sim.add_argument("--n", type=int)
    sim.add_argument("--pi", type=float, help="dummy probability (custom design)")
    sim.add_argument("--beta", type=float, help="true coefficient (custom design)")
    sim.add_argument("--control-dist", dest="control_dist", choices=["dummies", "gaussian"])
    sim.add_argument("--pvalue-rule", dest="pvalue_rule", choices=PVALUE_RULES)
    sim.add_argument("--negative-meat", dest="negative_meat", choices=NEGATIVE_MEAT_POLICIES)

    rep = sub.add_parser("report", help="merge simulation CSVs, optionally against published values")
    rep.add_argument("paths", nargs="+", help="CSV files written by simulate")
    rep.add_argument("--compare-paper", action="store_true",
                     help="add the published frequencies and absolute differences")
    rep.add_argument("--out", help="write the merged table here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "infer":
            report = cmd_infer(args)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(report.to_json())
            sys.stdout.write(report.to_text())
        elif args.command == "simulate":
            report, text = cmd_simulate(args)
            sys.stdout.write(text)
            for e in report.errors:
                print(f"cell {e['design']} {e['ratio_or_G']} failed: {e['error']}", file=sys.stderr)
            if report.errors:
                return 3
        else:
            sys.stdout.write(cmd_report(args))
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ManybootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
