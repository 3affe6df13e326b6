"""Command-line front end: scenario documents, presets, analytic curves, selftest."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .analytics import (
    erlang_blocking,
    leader_block_single,
    leader_block_striped_coded_bounds,
    leader_block_striped_uncoded,
)
from .metrics import UndefinedMetricError, summarize
from .sim import ConfigError, InvariantError, ScenarioConfig, layout_for, run_replication

log = logging.getLogger("pmpsched")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

RESULT_COLUMNS = ["scenario_id", "mode", "sweep_value", "N", "T", "W", "R", "s", "lambda", "pbd", "reps",
                  "slots", "ext_block_prob", "ext_block_se", "throughput_norm", "throughput_norm_se",
                  "throughput_raw", "throughput_raw_se", "analytic_ext_block"]
LEADER_COLUMNS = ["mode", "pbd", "rank", "block_prob", "stderr", "n_obs", "analytic_value", "analytic_lb",
                  "analytic_ub", "sweep_value"]
USEFUL_COLUMNS = ["mode", "pbd", "useful_drives", "block_prob", "stderr", "n_obs", "analytic_value",
                  "sweep_value"]

ALL_MODES = ["UNCODED_FIN", "CODED_FIN", "UNCODED_INF"]
CONFIG_FIELDS = {f.name for f in fields(ScenarioConfig)}
NUMERIC_FIELDS = {"T", "W", "s", "N", "lam", "pbd", "R", "q", "horizon", "warmup", "replications", "master_seed"}
ALIASES = {"lambda": "lam", "P_b^D": "pbd", "seed": "master_seed", "slots": "horizon", "reps": "replications"}


class DocumentError(ValueError):
    """Malformed scenario document."""


@dataclass
class ScenarioDocument:
    id: str
    base: ScenarioConfig
    sweep_param: str | None = None
    sweep_values: list = field(default_factory=list)
    compare_modes: list[str] = field(default_factory=lambda: list(ALL_MODES))
    output: str | None = None

    def cells(self):
        """(sweep value, mode, config) in output order."""
        values = self.sweep_values if self.sweep_param else [None]
        for v in values:
            for mode in self.compare_modes:
                kw = {"mode": mode}
                if self.sweep_param:
                    kw[self.sweep_param] = v
                yield v, mode, self.base.with_(**kw)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "config": self.base.to_dict(),
            "sweep": {"parameter": self.sweep_param, "values": self.sweep_values} if self.sweep_param else None,
            "compare_modes": self.compare_modes,
        }


def _preset_fig3() -> ScenarioDocument:
    base = ScenarioConfig(T=100, W=2, s=4, lam=0.9, pbd=0.5, N=1)
    return ScenarioDocument("fig3", base, "N", list(range(1, 33)))


def _preset_fig4() -> ScenarioDocument:
    base = ScenarioConfig(T=8, W=2, s=4, lam=0.9, N=8)
    return ScenarioDocument("fig4", base, "pbd", [round(0.1 * k, 1) for k in range(1, 10)])


def _preset_fig5() -> ScenarioDocument:
    base = ScenarioConfig(T=8, W=2, s=4, lam=0.9, N=8)
    return ScenarioDocument("fig5", base, "pbd", [round(0.1 * k, 1) for k in range(1, 10)],
                            compare_modes=["UNCODED_FIN", "CODED_FIN"])


PRESETS = {"fig3": _preset_fig3, "fig4": _preset_fig4, "fig5": _preset_fig5}


def _locate(text: str, key: str) -> str:
    """'line N' of the first occurrence of a JSON key, for diagnostics."""
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return f"line {i}"
    return "unknown line"


def parse_document(text: str, source: str = "<document>") -> ScenarioDocument:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise DocumentError(f"{source}: top level must be a JSON object")
    raw = dict(raw)
    doc_id = str(raw.pop("id", Path(source).stem))
    sweep = raw.pop("sweep", None)
    modes = raw.pop("compare_modes", None)
    output = raw.pop("output", None)
    kw = {}
    for key, value in raw.items():
        name = ALIASES.get(key, key)
        if name not in CONFIG_FIELDS:
            raise DocumentError(f"{source}: {_locate(text, key)}: unknown field {key!r}")
        if name in NUMERIC_FIELDS and value is not None and not isinstance(value, (int, float)):
            raise DocumentError(f"{source}: {_locate(text, key)}: field {key!r} must be numeric")
        kw[name] = value
    try:
        base = ScenarioConfig(**kw)
    except (TypeError, AttributeError) as exc:
        raise DocumentError(f"{source}: {exc}") from None
    doc = ScenarioDocument(doc_id, base, output=output)
    if modes is not None:
        if not isinstance(modes, list) or not modes:
            raise DocumentError(f"{source}: {_locate(text, 'compare_modes')}: compare_modes must be a non-empty list")
        doc.compare_modes = [str(m).upper() for m in modes]
    else:
        doc.compare_modes = [base.mode]
    if sweep is not None:
        where = _locate(text, "sweep")
        if not isinstance(sweep, dict) or "values" not in sweep:
            raise DocumentError(f"{source}: {where}: sweep needs 'parameter' and 'values'")
        param = ALIASES.get(sweep.get("parameter"), sweep.get("parameter"))
        if param not in NUMERIC_FIELDS:
            raise DocumentError(f"{source}: {where}: sweep parameter {sweep.get('parameter')!r} is not a numeric field")
        values = sweep["values"]
        if not isinstance(values, list) or not values or not all(isinstance(v, (int, float)) for v in values):
            raise DocumentError(f"{source}: {where}: sweep values must be a non-empty list of numbers")
        doc.sweep_param, doc.sweep_values = param, values
    for v, mode, cfg in doc.cells():
        try:
            cfg.validate()
        except ConfigError as exc:
            at = f" at {doc.sweep_param}={v}" if doc.sweep_param else ""
            key = str(exc).split()[0]
            where = f" {_locate(text, key)}:" if f'"{key}"' in text else ""
            raise DocumentError(f"{source}:{where} mode {mode}{at}: {exc}") from None
    return doc


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _leader_analytic(cfg: ScenarioConfig, rank: int):
    """(value, lb, ub) for one rank bin; None where no closed form applies."""
    if cfg.mode == "UNCODED_INF":
        return 0.0, None, None
    if cfg.stripes == cfg.T:
        kind = "coded" if cfg.coded else "uncoded"
        return leader_block_single(cfg.pbd, cfg.W, cfg.T, rank, kind), None, None
    if cfg.coded:
        lb, ub = leader_block_striped_coded_bounds(cfg.pbd, cfg.W, cfg.stripes, cfg.T, rank)
        return None, lb, ub
    return None, None, None


def _useful_analytic(cfg: ScenarioConfig, useful: int):
    if cfg.mode == "UNCODED_INF":
        return 0.0
    if not cfg.coded and useful % cfg.W == 0 and useful > 0:
        return leader_block_striped_uncoded(cfg.pbd, cfg.W, cfg.stripes, cfg.stripes - useful // cfg.W)
    return cfg.pbd ** useful


def run_cell(cfg: ScenarioConfig, pool=None):
    reps = range(cfg.replications)
    accs = list(pool.map(lambda k: run_replication(cfg, k), reps)) if pool else [run_replication(cfg, k) for k in reps]
    return summarize(accs)


def run_scenario(doc: ScenarioDocument, jobs: int = 1):
    """Simulate every cell; returns (result rows, leader rows, useful-drive rows)."""
    results, leader, useful = [], [], []
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for v, mode, cfg in doc.cells():
            t0 = time.perf_counter()
            st = run_cell(cfg, pool)
            log.info("%s %s %s=%s: ext_block=%.4g thr=%.4g (%.1fs)", doc.id, mode, doc.sweep_param, v,
                     st.ext_block_prob, st.throughput_norm, time.perf_counter() - t0)
            results.append({
                "scenario_id": doc.id, "mode": mode, "sweep_value": v, "N": cfg.N, "T": cfg.T, "W": cfg.W,
                "R": cfg.drives, "s": cfg.stripes, "lambda": cfg.lam, "pbd": cfg.pbd, "reps": st.reps,
                "slots": st.slots, "ext_block_prob": st.ext_block_prob, "ext_block_se": st.ext_block_se,
                "throughput_norm": st.throughput_norm, "throughput_norm_se": st.throughput_norm_se,
                "throughput_raw": st.throughput_raw, "throughput_raw_se": st.throughput_raw_se,
                "analytic_ext_block": erlang_blocking(cfg.lam, cfg.T, cfg.N) if mode == "UNCODED_INF" else None,
            })
            for r, pt in sorted(st.leader_block_curve.items()):
                val, lb, ub = _leader_analytic(cfg, r)
                leader.append({"mode": mode, "pbd": cfg.pbd, "rank": r, "block_prob": pt.prob,
                               "stderr": pt.stderr, "n_obs": pt.n_obs, "analytic_value": val,
                               "analytic_lb": lb, "analytic_ub": ub, "sweep_value": v})
            for u, pt in sorted(st.useful_block_curve.items()):
                useful.append({"mode": mode, "pbd": cfg.pbd, "useful_drives": u, "block_prob": pt.prob,
                               "stderr": pt.stderr, "n_obs": pt.n_obs,
                               "analytic_value": _useful_analytic(cfg, u), "sweep_value": v})
    finally:
        if pool:
            pool.shutdown()
    return results, leader, useful


def write_outputs(doc: ScenarioDocument, out: Path, results, leader, useful) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(_csv_text(RESULT_COLUMNS, results))
    (out / "leader_block.csv").write_text(_csv_text(LEADER_COLUMNS, leader))
    (out / "leader_block_useful.csv").write_text(_csv_text(USEFUL_COLUMNS, useful))
    (out / "scenario.json").write_text(json.dumps(doc.to_dict(), indent=2, sort_keys=True) + "\n")


# ---- argument handling -----------------------------------------------------


def parse_int_range(text: str) -> list[int]:
    """'1..32' or '1,2,4' or '8'."""
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, list or range like 1..32, got {text!r}") from None


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmpsched", description="Leader-based broadcast scheduling simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-cell progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a scenario document or preset")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario JSON document")
    src.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--out", type=Path, help="output directory (default: results/<id>)")
    sim.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    sim.add_argument("--reps", type=int, help="replications per cell")
    sim.add_argument("--slots", type=int, help="slots per replication")
    sim.add_argument("--warmup", type=int, help="slots discarded before measuring")
    sim.add_argument("--policy", choices=["spread", "random", "first"])
    sim.add_argument("--jobs", type=int, default=1, help="replications run concurrently")
    sim.add_argument("--dump-layout", action="store_true", help="also write layout_<mode>.json")

    ana = sub.add_parser("analytic", help="closed-form curves in the simulation CSV schemas")
    asub = ana.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    er = asub.add_parser("erlang")
    er.add_argument("--lambda", dest="lam", type=float, required=True)
    er.add_argument("--T", type=int, required=True)
    er.add_argument("--N", type=parse_int_range, required=True)
    er.add_argument("--out", type=Path, help="write results.csv here instead of stdout")
    ld = asub.add_parser("leader")
    ld.add_argument("--pbd", type=parse_float_list, required=True)
    ld.add_argument("--W", type=int, required=True)
    ld.add_argument("--T", type=int, required=True)
    ld.add_argument("--s", type=int, help="stripe sets (default T: one chunk per drive)")
    ld.add_argument("--mode", choices=["coded", "uncoded"], required=True)
    ld.add_argument("--out", type=Path, help="write leader_block.csv here instead of stdout")

    sub.add_parser("selftest", help="fast invariant checks")
    return p


def _resolve_document(args) -> ScenarioDocument:
    if args.preset:
        doc = PRESETS[args.preset]()
    else:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise DocumentError(f"{args.config}: {exc.strerror}") from None
        doc = parse_document(text, str(args.config))
    over = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise DocumentError("--seed must be an unsigned 64-bit integer")
        over["master_seed"] = args.seed
    if args.reps is not None:
        over["replications"] = args.reps
    if args.slots is not None:
        over["horizon"] = args.slots
    if args.warmup is not None:
        over["warmup"] = args.warmup
    if args.policy:
        over["policy"] = args.policy.upper()
    if over:
        doc.base = doc.base.with_(**over)
    for v, mode, cfg in doc.cells():
        try:
            cfg.validate()
        except ConfigError as exc:
            raise DocumentError(f"mode {mode}, sweep value {v}: {exc}") from None
    return doc


def cmd_simulate(args) -> int:
    doc = _resolve_document(args)
    out = args.out or Path(doc.output or Path("results") / doc.id)
    results, leader, useful = run_scenario(doc, jobs=max(1, args.jobs))
    write_outputs(doc, out, results, leader, useful)
    if args.dump_layout:
        for mode in doc.compare_modes:
            lay, _ = layout_for(doc.base.with_(mode=mode))
            (out / f"layout_{mode.lower()}.json").write_text(lay.to_json(indent=1) + "\n")
    print(f"wrote {len(results)} result rows to {out}")
    return EXIT_OK


def cmd_analytic(args) -> int:
    if args.kind == "erlang":
        if args.lam < 0 or args.T < 1 or min(args.N) < 1:
            raise DocumentError("need lambda >= 0, T >= 1 and N >= 1")
        rows = [{"scenario_id": "erlang", "mode": "UNCODED_INF", "sweep_value": n, "N": n, "T": args.T,
                 "lambda": args.lam, "analytic_ext_block": erlang_blocking(args.lam, args.T, n)} for n in args.N]
        text, name = _csv_text(RESULT_COLUMNS, rows), "results.csv"
    else:
        s = args.T if args.s is None else args.s
        if args.T < 1 or args.W < 1 or s < 1 or args.T % s or not all(0 <= p <= 1 for p in args.pbd):
            raise DocumentError("need T, W, s >= 1 with s dividing T and pbd in [0, 1]")
        rows = []
        for pbd in args.pbd:
            for r in range(args.T):
                row = {"mode": args.mode.upper() + "_FIN", "pbd": pbd, "rank": r}
                if s == args.T:
                    row["analytic_value"] = leader_block_single(pbd, args.W, args.T, r, args.mode)
                elif args.mode == "coded":
                    row["analytic_lb"], row["analytic_ub"] = leader_block_striped_coded_bounds(pbd, args.W, s, args.T, r)
                elif r < s:
                    # uncoded stripes are indexed by completed stripe sets, not rank
                    row = {"mode": "UNCODED_FIN", "pbd": pbd, "useful_drives": args.W * (s - r),
                           "analytic_value": leader_block_striped_uncoded(pbd, args.W, s, r)}
                else:
                    continue
                rows.append(row)
        if s != args.T and args.mode == "uncoded":
            text, name = _csv_text(USEFUL_COLUMNS, rows), "leader_block_useful.csv"
        else:
            text, name = _csv_text(LEADER_COLUMNS, rows), "leader_block.csv"
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---- selftest --------------------------------------------------------------


def _check_fields() -> None:
    from .gf import get_field

    for q in (256, 257):
        f = get_field(q)
        x = np.arange(1, q, dtype=np.int64)
        assert np.all(f.mul(x, f.inv(x)) == 1), f"inverse table broken in GF({q})"
        assert np.all(f.mul(x, 1) == x), f"identity broken in GF({q})"
    g = get_field(256)
    a = np.arange(256, dtype=np.int64)
    assert np.all(g.add(a, a) == 0), "characteristic 2 broken"


def _check_mds(points=None) -> None:
    from .layout import CODED, LayoutParams, build_coded, verify_mds

    for q in (256, 257):
        lay = build_coded(LayoutParams(T=4, W=2, s=4, mode=CODED, q=q), points=points)
        assert verify_mds(lay), f"Vandermonde layout over GF({q}) is not MDS"


def _check_maximality(cases: int = 200) -> None:
    from .schedulers import (brute_force_max_targeted, random_small_state, schedule_coded_finite,
                             schedule_uncoded_finite, targeted_by)

    rng = np.random.default_rng(2024)
    for i in range(cases):
        mode = ("UNCODED_FIN", "CODED_FIN")[i % 2]
        state, b = random_small_state(rng, mode)
        fn = schedule_coded_finite if mode == "CODED_FIN" else schedule_uncoded_finite
        d = fn(state, b, float(rng.random()))
        got = 0 if d is None else targeted_by(state, d.chunk)
        want = brute_force_max_targeted(state, b)
        assert got == want, f"case {i} ({mode}): scheduler targets {got}, best possible {want}"


def _check_erlang() -> None:
    cfg = ScenarioConfig(mode="UNCODED_INF", T=10, W=1, s=1, N=8, lam=0.3, horizon=200_000, replications=4)
    st = run_cell(cfg)
    ref = erlang_blocking(cfg.lam, cfg.T, cfg.N)
    tol = max(3 * st.ext_block_se, 0.005)
    assert abs(st.ext_block_prob - ref) <= tol, f"blocking {st.ext_block_prob:.4f} vs Erlang {ref:.4f}"


def _check_determinism() -> None:
    doc = ScenarioDocument("det", ScenarioConfig(T=8, W=2, s=4, horizon=5000, replications=3), "pbd", [0.3, 0.7])
    digests = []
    for jobs in (1, 2):
        rows = run_scenario(doc, jobs=jobs)
        text = "".join(_csv_text(c, r) for c, r in zip((RESULT_COLUMNS, LEADER_COLUMNS, USEFUL_COLUMNS), rows))
        digests.append(hashlib.sha256(text.encode()).hexdigest())
    assert digests[0] == digests[1], "repeated runs differ"


SELFTESTS = [
    ("field tables", _check_fields),
    ("MDS enumeration T=4 H=8", _check_mds),
    ("scheduler maximality (200 states)", _check_maximality),
    ("Erlang spot check", _check_erlang),
    ("seeded determinism", _check_determinism),
]


def cmd_selftest(args=None, checks=None) -> int:
    failed = 0
    for name, fn in checks or SELFTESTS:
        t0 = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except AssertionError as exc:
            status, failed = f"FAIL: {exc}", failed + 1
        print(f"{name:<36} {status} ({time.perf_counter() - t0:.2f}s)")
    print("selftest:", "all checks passed" if not failed else f"{failed} check(s) failed")
    return EXIT_OK if not failed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "analytic":
            return cmd_analytic(args)
        return cmd_selftest(args)
    except DocumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
