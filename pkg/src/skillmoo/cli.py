"""Command-line entry point wiring tasks, bundles, evaluators, proposers,
search, and analysis into reproducible runs.

Exit codes are a stable contract: 0 success, 2 configuration error,
3 evaluator/proposer hard failure. Flag values override the optional
key=value config file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob as globmod
import io
import json
import statistics
import sys
from pathlib import Path

from .analysis import (
    MissingBaseline,
    RunSet,
    UndefinedEfficiency,
    efficiency_report,
    pattern_table,
    scott_knott_esd,
    summarize,
)
from .bundle import BundleError, load_bundle
from .evaluation import EvaluationError, load_task, make_evaluator, result_from_dict
from .llm import EndpointError, LlmError, ModelConfig
from .moo import ZeroBaseline, delta_hv_percent, hypervolume_2d
from .proposer import LlmProposer, ProposerFailure, RuleProposer
from .search import (
    SearchConfig,
    canonical_event_bytes,
    overhead_from_events,
    run_search,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """Bad flags, files, or directories; maps to exit code 2."""


# --- config overlay --------------------------------------------------------

def _coerce(value: str):
    text = value.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config_file(path: str | Path) -> dict:
    """Flat key = value overlay file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        values[key.strip()] = _coerce(value)
    return values


def _resolve(flags: argparse.Namespace, file_values: dict, defaults: dict) -> dict:
    effective = dict(defaults)
    for key in defaults:
        if key in file_values:
            effective[key] = file_values[key]
        flag = getattr(flags, key, None)
        if flag is not None:
            effective[key] = flag
    return effective


# --- output helpers ---------------------------------------------------------

def _emit_table(rows: list[dict], fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(rows, indent=2))
        return
    if not rows:
        print("(no rows)")
        return
    headers = list(rows[0].keys())
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=headers)
        writer.writeheader()
        writer.writerows(rows)
        print(out.getvalue(), end="")
        return
    cells = [[str(r[h]) for h in headers] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in cells)) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def _read_events(run_dir: Path) -> list[dict]:
    path = run_dir / "events.jsonl"
    if not path.is_file():
        raise ConfigError(f"{run_dir} has no events.jsonl")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _read_run_header(run_dir: Path) -> dict:
    path = run_dir / "run.json"
    if not path.is_file():
        raise ConfigError(f"{run_dir} has no run.json")
    return json.loads(path.read_text(encoding="utf-8"))


def _read_front(run_dir: Path) -> list[dict]:
    path = Path(run_dir)
    if path.is_file():  # a bare front.json
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        fpath = path / "front.json"
        if not fpath.is_file():
            raise ConfigError(f"{run_dir} has no front.json")
        data = json.loads(fpath.read_text(encoding="utf-8"))
    return data["front"]


def _expand_runs(patterns: list[str]) -> list[Path]:
    dirs: list[Path] = []
    for pattern in patterns:
        matches = sorted(globmod.glob(pattern))
        if not matches and Path(pattern).is_dir():
            matches = [pattern]
        for m in matches:
            p = Path(m)
            if (p / "run.json").is_file():
                dirs.append(p)
    if not dirs:
        raise ConfigError(f"no run directories match {patterns}")
    return dirs


def _final_event(events: list[dict]) -> dict:
    for e in reversed(events):
        if e.get("event") == "final_selection":
            return e
    raise ConfigError("run has no final_selection event (incomplete run?)")


# --- subcommands -------------------------------------------------------------

_OPTIMIZE_DEFAULTS = {
    "generations": 5,
    "population": 1,
    "seed": 0,
    "guard_threshold": 0.05,
    "timeout_s": None,
    "evaluator": None,
    "proposer": "rule",
    "label": "skillmoo",
    "jobs": 1,
    "parent_policy": "best",
    "model": "",
    "price_in": 0.0,
    "price_out": 0.0,
}


def cmd_optimize(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    cfg = _resolve(args, file_values, _OPTIMIZE_DEFAULTS)

    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"--out {out} exists and is not empty; refusing to overwrite")

    task = load_task(args.task)
    if cfg["timeout_s"] is not None:
        task = dataclasses.replace(task, timeout_s=float(cfg["timeout_s"]))
    bundle = load_bundle(args.bundle)

    evaluator_kind = cfg["evaluator"] or task.evaluator_config.get("kind", "sim")
    if evaluator_kind not in ("sim", "verifier", "llm"):
        raise ConfigError(f"unknown evaluator {evaluator_kind!r}")
    if evaluator_kind != task.evaluator_config.get("kind", "sim"):
        raise ConfigError(
            f"--evaluator {evaluator_kind} does not match task evaluator config "
            f"({task.evaluator_config.get('kind', 'sim')})"
        )
    model_config = None
    if evaluator_kind == "llm" or cfg["proposer"] == "llm":
        overrides = dict(task.evaluator_config.get("model", {}))
        if cfg["model"]:
            overrides["model_name"] = cfg["model"]
        overrides.setdefault("model_name", "default")
        if cfg["price_in"]:
            overrides["price_per_1k_input"] = cfg["price_in"]
        if cfg["price_out"]:
            overrides["price_per_1k_output"] = cfg["price_out"]
        try:
            model_config = ModelConfig.from_env(**overrides)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    evaluator = make_evaluator(task, model_config=model_config)

    if cfg["proposer"] == "rule":
        proposer = RuleProposer()
    elif cfg["proposer"] == "llm":
        proposer = LlmProposer(model_config)
    else:
        raise ConfigError(f"unknown proposer {cfg['proposer']!r}")

    search_config = SearchConfig(
        generations=int(cfg["generations"]),
        population=int(cfg["population"]),
        guard_drop_threshold=float(cfg["guard_threshold"]),
        seed=int(cfg["seed"]),
        parent_policy=str(cfg["parent_policy"]),
        jobs=int(cfg["jobs"]),
    )
    record = run_search(
        task, bundle, search_config, evaluator, proposer,
        out_dir=out, label=str(cfg["label"]),
    )
    final = record.final
    bundle_path = out / "candidates" / final.bundle.bundle_id / "bundle"
    print(
        f"final: pass={final.result.pass_rate:.4f} "
        f"cost={final.result.cost_usd:.6f} "
        f"runtime={final.result.runtime_s:.2f} "
        f"bundle={bundle_path}"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    events = _read_events(run_dir)
    if args.events_canonical:
        sys.stdout.write(canonical_event_bytes(events).decode("utf-8"))
        return EXIT_OK
    header = _read_run_header(run_dir)
    front = _read_front(run_dir)
    final = _final_event(events)

    print(f"run: {run_dir}  label={header.get('label')}  task={header.get('task_id')}")
    print(
        f"final: candidate={final['candidate']} pass={final['pass_rate']:.4f} "
        f"cost={final['cost_usd']:.6f} runtime={final['runtime_s']:.2f}"
    )
    print("\npareto front:")
    _emit_table(
        [
            {
                "id": e["id"],
                "pass_rate": f"{e['pass_rate']:.4f}",
                "cost_usd": f"{e['cost']:.6f}",
                "runtime_s": f"{e['runtime_s']:.2f}",
            }
            for e in front
        ],
        args.format,
    )

    rows = []
    best_pass = None
    for e in events:
        if e.get("event") not in ("seed_eval", "child_eval"):
            continue
        r = e["result"]
        best_pass = r["pass_rate"] if best_pass is None else max(best_pass, r["pass_rate"])
        rows.append(
            {
                "generation": e["generation"],
                "candidate": e["candidate"],
                "pass_rate": f"{r['pass_rate']:.4f}",
                "cost_usd": f"{r['cost_usd']:.6f}",
                "best_pass_so_far": f"{best_pass:.4f}",
            }
        )
    print("\ntrajectory:")
    _emit_table(rows, args.format)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    runs = _expand_runs(args.runs)
    finals: dict[str, list[dict]] = {}
    for run_dir in runs:
        header = _read_run_header(run_dir)
        final = _final_event(_read_events(run_dir))
        finals.setdefault(header.get("label", "unlabeled"), []).append(final)

    runsets = {
        label: RunSet(
            label=label,
            pass_rates=tuple(f["pass_rate"] for f in fs),
            costs=tuple(f["cost_usd"] for f in fs),
            runtimes=tuple(f["runtime_s"] for f in fs),
        )
        for label, fs in finals.items()
    }
    metric_of = {
        "pass_rate": lambda rs: rs.pass_rates,
        "cost_usd": lambda rs: rs.costs,
        "runtime_s": lambda rs: rs.runtimes,
    }[args.metric]
    rankable = {label: metric_of(rs) for label, rs in runsets.items() if len(rs.pass_rates) >= 2}
    ranks = scott_knott_esd(rankable).ranks if len(rankable) == len(runsets) and rankable else {}

    rows = []
    for label, rs in sorted(runsets.items(), key=lambda kv: -summarize(kv[1].pass_rates)[0]):
        skills = [f.get("skills_used") for f in finals[label]]
        mean_pass, sd_pass = summarize(rs.pass_rates)
        mean_cost, sd_cost = summarize(rs.costs)
        mean_rt, sd_rt = summarize(rs.runtimes)
        rows.append(
            {
                "method": label,
                "runs": len(rs.pass_rates),
                "skills_used": round(statistics.fmean(s for s in skills if s is not None))
                if any(s is not None for s in skills)
                else "-",
                "pass_rate": f"{mean_pass:.2f}±{sd_pass:.2f}",
                "cost_usd": f"{mean_cost:.2f}±{sd_cost:.2f}",
                "runtime_s": f"{mean_rt:.1f}±{sd_rt:.1f}",
                "rank": ranks.get(label, "-"),
            }
        )
    _emit_table(rows, args.format)
    return EXIT_OK


def _front_points(front: list[dict]) -> list[tuple[float, float]]:
    return [(e["pass_rate"], e["cost"]) for e in front]


def cmd_hv(args: argparse.Namespace) -> int:
    front = _read_front(Path(args.run_dir))
    points = _front_points(front)
    baseline_points = None
    if args.baseline:
        baseline_points = _front_points(_read_front(Path(args.baseline)))

    ceiling = args.cost_ceiling
    if ceiling is None:
        costs = [c for _, c in points] + [c for _, c in (baseline_points or [])]
        ceiling = max(costs) if costs and max(costs) > 0 else 1.0

    hv = hypervolume_2d(points, cost_ceiling=ceiling)
    rows = [{"front": str(args.run_dir), "hv": f"{hv.value:.6f}", "cost_ceiling": f"{ceiling:.6f}"}]
    if baseline_points is not None:
        hv_base = hypervolume_2d(baseline_points, cost_ceiling=ceiling)
        rows.append(
            {
                "front": str(args.baseline),
                "hv": f"{hv_base.value:.6f}",
                "cost_ceiling": f"{ceiling:.6f}",
            }
        )
        try:
            delta = delta_hv_percent(hv_base.value, hv.value)
            delta_text = f"{delta:.1f}"
        except ZeroBaseline as e:
            delta = None
            delta_text = str(e.sentinel)
        print_rows = {"delta_hv_pct": delta_text}
        run_dir = Path(args.run_dir)
        opt_cost, opt_runtime = args.opt_cost, None
        if opt_cost is None and (run_dir / "events.jsonl").is_file():
            opt_cost, opt_runtime = overhead_from_events(_read_events(run_dir))
        if opt_cost is not None and delta is not None and delta > 0:
            print_rows["opt_cost_usd"] = f"{opt_cost:.6f}"
            if opt_runtime is not None:
                print_rows["opt_runtime_s"] = f"{opt_runtime:.2f}"
            print_rows["cost_per_hv_pct"] = f"{opt_cost / delta:.6f}"
        _emit_table(rows, args.format)
        _emit_table([print_rows], args.format)
        return EXIT_OK
    _emit_table(rows, args.format)
    return EXIT_OK


def cmd_patterns(args: argparse.Namespace) -> int:
    runs = _expand_runs(args.runs)
    baseline_dir = Path(args.baseline_run)
    baseline_final = _final_event(_read_events(baseline_dir))
    candidate = baseline_final["candidate"]
    result_file = baseline_dir / "candidates" / candidate / "result.json"
    if not result_file.is_file():
        raise ConfigError(f"baseline run is missing {result_file}")
    baseline = result_from_dict(json.loads(result_file.read_text(encoding="utf-8"))["result"])

    events = []
    for i, run_dir in enumerate(runs):
        for e in _read_events(run_dir):
            e = dict(e)
            # candidate ids are only unique within a run; namespace them
            for key in ("candidate", "parent"):
                if key in e:
                    e[key] = f"{i}:{e[key]}"
            events.append(e)
    try:
        rows = pattern_table(events, baseline)
    except MissingBaseline as e:
        raise ConfigError(str(e)) from e
    _emit_table(
        [
            {
                "operation_description": r.description,
                "edits": r.edits,
                "pass_improved": f"{r.pass_improved}/{r.edits}",
                "cost_reduced": f"{r.cost_reduced}/{r.edits}",
                "time_reduced": f"{r.time_reduced}/{r.edits}",
            }
            for r in rows
        ],
        args.format,
    )
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillmoo",
        description="Evolve agent skill bundles against pass rate and cost.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run the guarded search loop")
    p_opt.add_argument("--task", required=True, help="task spec JSON file")
    p_opt.add_argument("--bundle", required=True, help="seed bundle directory")
    p_opt.add_argument("--out", required=True, help="run directory to create")
    p_opt.add_argument("--config", help="key = value overlay file")
    p_opt.add_argument("--generations", type=int)
    p_opt.add_argument("--population", type=int)
    p_opt.add_argument("--seed", type=int)
    p_opt.add_argument("--guard-threshold", dest="guard_threshold", type=float)
    p_opt.add_argument("--timeout-s", dest="timeout_s", type=float)
    p_opt.add_argument("--evaluator", choices=["sim", "verifier", "llm"])
    p_opt.add_argument("--proposer", choices=["rule", "llm"])
    p_opt.add_argument("--label", help="method label recorded for stats grouping")
    p_opt.add_argument("--jobs", type=int)
    p_opt.add_argument("--parent-policy", dest="parent_policy", choices=["best", "chain"])
    p_opt.add_argument("--model", help="model name for llm evaluator/proposer")
    p_opt.add_argument("--price-in", dest="price_in", type=float)
    p_opt.add_argument("--price-out", dest="price_out", type=float)
    p_opt.set_defaults(func=cmd_optimize)

    p_rep = sub.add_parser("report", help="print front, final pick, and trajectory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_rep.add_argument(
        "--events-canonical",
        action="store_true",
        help="print the event log with timestamps stripped and exit",
    )
    p_rep.set_defaults(func=cmd_report)

    p_stats = sub.add_parser("stats", help="aggregate final metrics across runs")
    p_stats.add_argument("runs", nargs="+", help="run directories or glob patterns")
    p_stats.add_argument("--metric", default="pass_rate",
                         choices=["pass_rate", "cost_usd", "runtime_s"])
    p_stats.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_stats.set_defaults(func=cmd_stats)

    p_hv = sub.add_parser("hv", help="hypervolume of a run's front")
    p_hv.add_argument("run_dir", help="run directory or front.json file")
    p_hv.add_argument("--baseline", help="baseline run directory or front.json")
    p_hv.add_argument("--cost-ceiling", dest="cost_ceiling", type=float)
    p_hv.add_argument("--opt-cost", dest="opt_cost", type=float,
                      help="override the overhead cost used for cost per HV%%")
    p_hv.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_hv.set_defaults(func=cmd_hv)

    p_pat = sub.add_parser("patterns", help="edit-pattern table across runs")
    p_pat.add_argument("runs", nargs="+", help="run directories or glob patterns")
    p_pat.add_argument("--baseline-run", dest="baseline_run", required=True)
    p_pat.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_pat.set_defaults(func=cmd_patterns)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BundleError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, LlmError, EndpointError, ProposerFailure, UndefinedEfficiency) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
