"""Command-line front end: ``faultline <subcommand> [flags]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 bad input or
configuration, 3 a fatal invariant or simulation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import adversary, metrics, oracle
from .core import (
    TIME_TOL,
    AdversarialPattern,
    ConfigError,
    PatternSyntaxError,
    SimulationError,
    SystemConfig,
    fmt_float,
    format_pattern,
    parse_pattern_text,
)
from .engine import Trace, run, validate
from .schedulers import POLICY_IDS, make_policy

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_FATAL = 0, 1, 2, 3


class CheckFailed(Exception):
    pass


def parse_pattern_file(text: str, m: int | None = None, horizon: float | None = None) -> AdversarialPattern:
    """Parse and validate a pattern; errors name the offending line."""
    pattern, lines = parse_pattern_text(text)
    if m is None:
        m = pattern.max_machine() + 1 or 1
    problems = validate(pattern, m, horizon)
    if problems:
        v = problems[0]
        lineno = lines.get(v.seq, 0)
        if v.kind == "no-alive" and v.seq < 0:
            raise ConfigError(f"inadmissible pattern: {v}")
        raise PatternSyntaxError(lineno, str(v))
    return pattern


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass
class ExperimentConfig:
    command: str
    policy: str = "m-lis"
    grouplis: bool = False
    c: int = 4
    adaptive_c: bool = False
    machines: int = 2
    speedup: float | None = None
    sizes: tuple[float, ...] | None = None
    pattern_file: str | None = None
    gen: str | None = None
    horizon: float | None = None
    seed: int = 0
    burn_in: float | None = None
    out: str | None = None
    fmt: str = "csv"
    epochs: int = 100
    rho: float = 2.0
    lmin: float = 1.0
    crash_rate: float = 0.3
    injection_rate: float = 1.0
    front_load: int = 0
    backlog_period: float | None = None
    patterns: int = 50
    speedups: tuple[float, ...] = (1.0,)
    rhos: tuple[float, ...] = (2.0,)
    baseline: str = "fifo"
    max_ratio: float = 0.996
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.machines < 1:
            raise ConfigError("--machines must be >= 1")
        if self.speedup is not None and self.speedup < 1:
            raise ConfigError("--speedup must be >= 1")
        if self.sizes is not None and (not self.sizes or any(b <= a for a, b in zip(self.sizes, self.sizes[1:]))):
            raise ConfigError("--sizes must be a nonempty ascending list")
        if self.fmt not in ("csv", "json"):
            raise ConfigError("--format must be csv or json")


@dataclass
class Source:
    pattern: AdversarialPattern
    sizes: tuple[float, ...]
    horizon: float
    script: list[tuple[int, float, float]] | None = None
    m: int | None = None


def _load_source(cfg: ExperimentConfig, kind: str | None = None) -> Source:
    kind = kind or cfg.gen
    if cfg.pattern_file and kind:
        raise ConfigError("use either --pattern or --gen, not both")
    if cfg.pattern_file:
        text = Path(cfg.pattern_file).read_text()
        pattern = parse_pattern_file(text, cfg.machines, cfg.horizon)
        sizes = cfg.sizes or pattern.sizes()
        if not sizes:
            raise ConfigError("pattern injects no tasks and --sizes is not given")
        horizon = cfg.horizon
        if horizon is None:
            last = max((e.t for e in pattern.events), default=0.0)
            horizon = last + math.fsum(e.size for e in pattern.injections) or 1.0
        return Source(pattern, tuple(sizes), horizon)
    if kind == "mlis":
        con = adversary.build_mlis_pattern(cfg.rho, cfg.lmin, cfg.epochs)
        return Source(con.pattern, con.spec.sizes, con.horizon, con.script, 2)
    if kind == "phases":
        sizes = (cfg.lmin, cfg.rho * cfg.lmin)
        horizon = cfg.horizon or 200 * sizes[1]
        spec = adversary.random_phase_spec(cfg.seed, cfg.machines, sizes, horizon)
        con = adversary.build_phase_pattern(spec)
        return Source(con.pattern, sizes, con.horizon, con.script)
    if kind == "random":
        sizes = cfg.sizes or (cfg.lmin, cfg.rho * cfg.lmin)
        horizon = cfg.horizon or 20.0
        pattern = adversary.build_random_pattern(
            cfg.seed, cfg.machines, sizes, horizon, cfg.crash_rate, cfg.injection_rate,
            front_load=cfg.front_load, backlog_period=cfg.backlog_period, speedup=cfg.speedup or 1.0)
        return Source(pattern, tuple(sizes), horizon)
    raise ConfigError("a pattern source is required: --pattern <file> or --gen mlis|phases|random")


def _policy(cfg: ExperimentConfig, sys_cfg: SystemConfig, name: str | None = None):
    return make_policy(name or cfg.policy, sys_cfg, grouplis=cfg.grouplis, c=cfg.c, adaptive_c=cfg.adaptive_c)


# ---------------------------------------------------------------------------
# Output helpers


def _num(x: float | None) -> float | None:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return float(fmt_float(x))


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return fmt_float(x)
    return str(x)


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _json(obj: Any) -> str:
    def clean(o: Any) -> Any:
        if isinstance(o, float):
            return _num(o)
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(obj), indent=2) + "\n"


def _emit(cfg: ExperimentConfig, header: Sequence[str], rows: Sequence[Sequence[Any]], summary: dict) -> None:
    """Write rows as CSV, or summary plus rows as JSON, to --out (or stdout when no --out)."""
    if cfg.fmt == "csv":
        text = _csv(header, rows)
    else:
        text = _json({"summary": summary, "rows": [dict(zip(header, r)) for r in rows]})
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def _say(cfg: ExperimentConfig, line: str) -> None:
    # keep stdout clean for data when no --out is given
    print(line, file=sys.stdout if cfg.out else sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands


def trace_rows(trace: Trace) -> list[list[Any]]:
    rows = []
    c = 0.0
    for r in trace.records:
        if r.kind == "complete":
            c += r.size
        rows.append([r.t, r.machine if r.machine >= 0 else None, r.kind,
                     r.task if r.task >= 0 else None, r.size if r.task >= 0 else None, c])
    return rows


def cmd_simulate(cfg: ExperimentConfig) -> int:
    src = _load_source(cfg)
    m = src.m or cfg.machines
    sys_cfg = SystemConfig(m, cfg.speedup or 1.0, src.sizes)
    trace = run(sys_cfg, src.pattern, _policy(cfg, sys_cfg), src.horizon)
    red = metrics.redundancy_report(trace)
    injected = metrics.injected_load(trace, src.horizon)
    summary = {"policy": trace.policy, "machines": m, "speedup": sys_cfg.s, "horizon": src.horizon,
               "completed_load": trace.completed_load, "injected_load": injected,
               "completions": len(trace.completions), **red.to_json()}
    _emit(cfg, ["time", "machine", "event", "task", "size", "c_t"], trace_rows(trace), summary)
    _say(cfg, " ".join(f"{k}={_cell(v)}" for k, v in summary.items()))
    return EXIT_OK


def cmd_compete(cfg: ExperimentConfig) -> int:
    src = _load_source(cfg)
    m = src.m or cfg.machines
    speed = cfg.speedup if cfg.speedup is not None else (cfg.rho if cfg.gen == "mlis" else 1.0)
    sys_cfg = SystemConfig(m, speed, src.sizes)
    trace = run(sys_cfg, src.pattern, _policy(cfg, sys_cfg), src.horizon)
    if src.script is not None:
        base = oracle.scripted_x(src.script, src.pattern, m, src.horizon).trajectory()
        base_kind = "scripted"
    else:
        base = oracle.optimal_offline(src.pattern, m, src.horizon).trajectory()
        base_kind = "oracle"
    series = metrics.competitive_ratio(trace, base, src.horizon)
    red = metrics.redundancy_report(trace)
    burn = cfg.burn_in or 0.0
    summary = {**series.summary(burn), "duplicates": red.duplicates, "lemma_violations": red.lemma_violations,
               "baseline": base_kind, "policy": trace.policy}
    rows = [[s.t, s.c_alg, s.c_base, s.ratio] for s in series.samples]
    _emit(cfg, ["t", "c_alg", "c_base", "ratio"], rows, summary)
    _say(cfg, " ".join(f"{k}={_cell(v)}" for k, v in summary.items()))
    return EXIT_OK


@dataclass
class MlisReport:
    rows: list[list[Any]]
    lines: list[str]
    passed: bool


def verify_mlis(epochs: int = 100, rho: float = 2.0, lmin: float = 1.0, max_ratio: float = 0.996) -> MlisReport:
    """Run m-LIS (m=2, s=rho) on the epoch construction against its scripted offline schedule."""
    con = adversary.build_mlis_pattern(rho, lmin, epochs)
    spec = con.spec
    sys_cfg = SystemConfig(2, rho, spec.sizes)
    trace = run(sys_cfg, con.pattern, make_policy("m-lis", sys_cfg), con.horizon)
    x = oracle.scripted_x(con.script, con.pattern, 2, con.horizon)
    alg_done = [(r.t, r.size) for r in trace.of_kind("complete")]
    x_done = [(t, task.size) for t, _, task in x.completions]
    want_alg, want_x = spec.mlis_epoch_load, spec.offline_epoch_load
    expected = Counter(round(spec.size(e), 9) for e in adversary.EPOCH_SEQUENCE)
    lines = [f"delta={spec.delta:.12g} closed-form per-epoch loads: offline={want_x:.12g} m-lis={want_alg:.12g}"]
    rows: list[list[Any]] = []
    ok = True
    ia = ix = 0
    c_alg = c_x = 0.0
    for e in range(epochs):
        end = con.epoch_bounds[e + 1]
        ea: list[float] = []
        ex: list[float] = []
        while ia < len(alg_done) and alg_done[ia][0] <= end + TIME_TOL:
            ea.append(alg_done[ia][1])
            ia += 1
        while ix < len(x_done) and x_done[ix][0] <= end + TIME_TOL:
            ex.append(x_done[ix][1])
            ix += 1
        la, lx = math.fsum(ea), math.fsum(ex)
        c_alg += la
        c_x += lx
        ratio = c_alg / c_x if c_x > 0 else math.nan
        good = abs(la - want_alg) <= 1e-6 and abs(lx - want_x) <= 1e-6
        good &= len(ea) == 8 and Counter(round(v, 9) for v in ea) == expected
        if e >= 1:
            good &= ratio < max_ratio
        ok &= good
        rows.append([e + 1, end, lx, la, c_x, c_alg, ratio])
        lines.append(f"epoch {e + 1}: offline={lx:.12g} m-lis={la:.12g} cumulative_ratio={ratio:.12g}"
                     + ("" if good else "  <-- FAIL"))
    lines.append(("PASS" if ok else "FAIL") + f": cumulative ratio < {max_ratio} after epoch 1, per-epoch loads "
                 f"within 1e-6 of closed forms")
    return MlisReport(rows, lines, ok)


def cmd_verify_mlis(cfg: ExperimentConfig) -> int:
    rep = verify_mlis(cfg.epochs, cfg.rho, cfg.lmin, cfg.max_ratio)
    for line in rep.lines:
        print(line)
    header = ["epoch", "t", "offline_epoch_load", "mlis_epoch_load", "c_base", "c_alg", "ratio"]
    if cfg.out:
        _emit(cfg, header, rep.rows, {"passed": rep.passed, "epochs": cfg.epochs})
    return EXIT_OK if rep.passed else EXIT_FAIL


PHASE_MACHINES = (1, 2, 3)
PHASE_RHOS = (2.0, 2.5, 3.0)


def preamble_case(index: int, seed: int, horizon_factor: float = 200.0) -> tuple[int, float, int]:
    """(m, rho, seed) for the index-th member of the phase suite."""
    return PHASE_MACHINES[index % 3], PHASE_RHOS[(index // 3) % 3], seed + index


def verify_preamble(
    count: int = 50,
    seed: int = 0,
    burn_in: float | None = None,
    lmin: float = 1.0,
    tolerance: float = 0.02,
) -> tuple[list[list[Any]], bool]:
    """Phase suite for rho-m-Preamble at s=1; burn-in defaults to 10% of each horizon."""
    rows = []
    ok = True
    for i in range(count):
        m, rho, s = preamble_case(i, seed)
        sizes = (lmin, rho * lmin)
        spec = adversary.random_phase_spec(s, m, sizes, 200 * sizes[1])
        con = adversary.build_phase_pattern(spec)
        sys_cfg = SystemConfig(m, 1.0, sizes)
        trace = run(sys_cfg, con.pattern, make_policy("rho-m-preamble", sys_cfg), con.horizon)
        x = oracle.scripted_x(con.script, con.pattern, m, con.horizon)
        series = metrics.competitive_ratio(trace, x.trajectory(), con.horizon)
        burn = burn_in if burn_in is not None else 0.1 * con.horizon
        msr = series.min_suffix_ratio(burn)
        rb = math.floor(rho + TIME_TOL)
        bound = rb / (rho + rb)
        good = msr is not None and msr >= bound - tolerance
        ok &= good
        kinds = Counter(ph.type for ph in spec.phases)
        rows.append([i, s, m, rho, len(spec.phases), kinds[1], kinds[2], kinds[3], kinds[4],
                     con.horizon, msr, bound, "PASS" if good else "FAIL"])
    return rows, ok


def cmd_verify_preamble(cfg: ExperimentConfig) -> int:
    rows, ok = verify_preamble(cfg.patterns, cfg.seed, cfg.burn_in, cfg.lmin)
    header = ["index", "seed", "m", "rho", "phases", "type1", "type2", "type3", "type4",
              "horizon", "min_suffix_ratio", "bound", "result"]
    for r in rows:
        print(f"pattern {r[0]} seed={r[1]} m={r[2]} rho={_cell(r[3])} phases={r[4]} "
              f"min_suffix_ratio={_cell(r[10])} bound={_cell(r[11])} {r[12]}")
    print(("PASS" if ok else "FAIL") + f": {len(rows)} phase patterns, min suffix ratio >= rho_bar/(rho+rho_bar) - 0.02")
    if cfg.out:
        _emit(cfg, header, rows, {"passed": ok, "patterns": len(rows)})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(cfg: ExperimentConfig) -> int:
    header = ["speedup", "rho", "policy", "c_alg", "c_base", "final_ratio", "min_suffix_ratio",
              "duplicates", "lemma_violations"]
    rows = []
    horizon = cfg.horizon or 20.0
    for rho in cfg.rhos:
        sizes = (cfg.lmin, rho * cfg.lmin)
        pattern = adversary.build_random_pattern(
            cfg.seed, cfg.machines, sizes, horizon, cfg.crash_rate, cfg.injection_rate,
            front_load=cfg.front_load, backlog_period=cfg.backlog_period)
        base_cfg = SystemConfig(cfg.machines, 1.0, sizes)
        base = run(base_cfg, pattern, _policy(cfg, base_cfg, cfg.baseline), horizon)
        for s in cfg.speedups:
            sys_cfg = SystemConfig(cfg.machines, s, sizes)
            trace = run(sys_cfg, pattern, _policy(cfg, sys_cfg), horizon)
            series = metrics.competitive_ratio(trace, base, horizon)
            red = metrics.redundancy_report(trace)
            rows.append([s, rho, trace.policy, trace.completed_load, base.completed_load, series.final_ratio,
                         series.min_suffix_ratio(cfg.burn_in or 0.0), red.duplicates, red.lemma_violations])
    _emit(cfg, header, rows, {"rows": len(rows), "baseline": cfg.baseline})
    return EXIT_OK


def cmd_gen_pattern(cfg: ExperimentConfig) -> int:
    src = _load_source(cfg, cfg.gen)
    text = format_pattern(src.pattern)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    if not cfg.pattern_file:
        raise ConfigError("oracle needs --pattern <file>")
    src = _load_source(cfg)
    sched = oracle.optimal_offline(src.pattern, cfg.machines, src.horizon)
    text = _json({"horizon": src.horizon, "machines": cfg.machines, **sched.to_json()})
    if cfg.out:
        Path(cfg.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "compete": cmd_compete,
    "verify-mlis": cmd_verify_mlis,
    "verify-preamble": cmd_verify_preamble,
    "sweep": cmd_sweep,
    "gen-pattern": cmd_gen_pattern,
    "oracle": cmd_oracle,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    try:
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


# ---------------------------------------------------------------------------
# Argument parsing


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pattern", dest="pattern_file", help="pattern file")
    common.add_argument("--gen", choices=("mlis", "phases", "random"), help="generate the pattern instead")
    common.add_argument("--policy", default="m-lis", choices=POLICY_IDS)
    common.add_argument("--grouplis", action="store_true", help="position rule for fifo/ss/ls")
    common.add_argument("--c", type=int, default=4, help="mk-amortized stage constant")
    common.add_argument("--adaptive-c", action="store_true")
    common.add_argument("--machines", type=int, default=2)
    common.add_argument("--speedup", type=float)
    common.add_argument("--sizes", type=_floats)
    common.add_argument("--horizon", type=float)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--burn-in", type=float)
    common.add_argument("--out")
    common.add_argument("--format", dest="fmt", default="csv", choices=("csv", "json"))
    common.add_argument("--epochs", type=int, default=100)
    common.add_argument("--rho", type=float, default=2.0)
    common.add_argument("--lmin", type=float, default=1.0)
    common.add_argument("--crash-rate", type=float, default=0.3)
    common.add_argument("--injection-rate", type=float, default=1.0)
    common.add_argument("--front-load", type=int, default=0, help="tasks per class injected at t=0")
    common.add_argument("--backlog-period", type=float, help="periodic top-ups keeping every class >= m^2")

    parser = argparse.ArgumentParser(prog="faultline", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one policy and export the trace")
    sub.add_parser("compete", parents=[common], help="policy vs offline optimum or scripted schedule")
    p = sub.add_parser("verify-mlis", parents=[common], help="epoch lower-bound construction against m-LIS")
    p.add_argument("--max-ratio", type=float, default=0.996)
    p = sub.add_parser("verify-preamble", parents=[common], help="phase suite for rho-m-preamble")
    p.add_argument("--patterns", type=int, default=50)
    p = sub.add_parser("sweep", parents=[common], help="grid over speedups and size ratios")
    p.add_argument("--speedups", type=_floats, default=(1.0, 2.0, 3.0))
    p.add_argument("--rhos", type=_floats, default=(2.0,))
    p.add_argument("--baseline", default="fifo", choices=POLICY_IDS)
    p = sub.add_parser("gen-pattern", parents=[common], help="write a generated pattern file")
    p.add_argument("--kind", dest="kind", choices=("mlis", "phases", "random"), required=True)
    sub.add_parser("oracle", parents=[common], help="offline optimum for a small pattern")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    kind = args.pop("kind", None)
    if kind:
        args["gen"] = kind
    try:
        cfg = ExperimentConfig(**args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
