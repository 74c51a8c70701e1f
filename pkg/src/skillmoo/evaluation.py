"""Bundle evaluators behind one result contract.

Three implementations: a deterministic simulated landscape for desk-scale
search and testing, an external verifier harness that shells out to a
user-supplied command and parses its per-test report, and a chat-model
solver that writes its answer into a workspace and lets the verifier judge
it. All of them populate pass rate, cost, runtime, and per-failure traces.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .bundle import SkillBundle, store_bundle
from .llm import ModelConfig, Timeout, UsageLedger, chat
from .templates import load_template, render


class EvaluationError(Exception):
    """Base error for evaluator failures."""


class EvaluationTimeout(EvaluationError):
    """An evaluation exceeded its time budget with no usable output."""


class VerifierCrash(EvaluationError):
    """The verifier exited abnormally without producing a usable report."""


@dataclass(frozen=True)
class TaskSpec:
    """One optimization target: what to evaluate against and under which
    budget. evaluator_config selects and parameterizes the evaluator."""

    task_id: str
    description: str = ""
    tests_total: int = 40
    timeout_s: float = 900.0
    evaluator_config: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tests_total < 1:
            raise ValueError("tests_total must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


def load_task(path: str | Path) -> TaskSpec:
    """Read a task spec from its JSON file format."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return TaskSpec(
        task_id=data["task_id"],
        description=data.get("description", ""),
        tests_total=int(data.get("tests_total", 40)),
        timeout_s=float(data.get("timeout_s", 900.0)),
        evaluator_config=data.get("evaluator", {}),
    )


@dataclass(frozen=True)
class EvaluationResult:
    pass_rate: float
    tests_passed: int
    tests_total: int
    cost_usd: float
    runtime_s: float
    error_traces: tuple[str, ...] = ()
    timed_out: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "error_traces", tuple(self.error_traces))
        if not 0 <= self.tests_passed <= self.tests_total:
            raise ValueError("tests_passed must be within [0, tests_total]")
        if self.pass_rate != self.tests_passed / self.tests_total:
            raise ValueError("pass_rate must equal tests_passed / tests_total exactly")
        if (self.tests_passed < self.tests_total) != bool(self.error_traces):
            raise ValueError("error_traces must be non-empty iff some test failed")
        if self.cost_usd < 0 or self.runtime_s < 0:
            raise ValueError("cost and runtime must be nonnegative")

    @classmethod
    def from_counts(
        cls,
        tests_passed: int,
        tests_total: int,
        *,
        cost_usd: float,
        runtime_s: float,
        error_traces: Sequence[str] = (),
        timed_out: bool = False,
    ) -> "EvaluationResult":
        return cls(
            pass_rate=tests_passed / tests_total,
            tests_passed=tests_passed,
            tests_total=tests_total,
            cost_usd=cost_usd,
            runtime_s=runtime_s,
            error_traces=tuple(error_traces),
            timed_out=timed_out,
        )

    def pass_fraction(self) -> Fraction:
        return Fraction(self.tests_passed, self.tests_total)

    def to_dict(self) -> dict:
        return {
            "pass_rate": self.pass_rate,
            "tests_passed": self.tests_passed,
            "tests_total": self.tests_total,
            "cost_usd": self.cost_usd,
            "runtime_s": self.runtime_s,
            "error_traces": list(self.error_traces),
            "timed_out": self.timed_out,
        }


def result_from_dict(d: Mapping) -> EvaluationResult:
    return EvaluationResult.from_counts(
        int(d["tests_passed"]),
        int(d["tests_total"]),
        cost_usd=float(d["cost_usd"]),
        runtime_s=float(d["runtime_s"]),
        error_traces=tuple(d.get("error_traces", ())),
        timed_out=bool(d.get("timed_out", False)),
    )


# --- simulated landscape -----------------------------------------------

@dataclass(frozen=True)
class SimLandscape:
    """Deterministic score surface over bundle text.

    Coverage of weighted keywords raises the raw score; tokens beyond the
    reference length are penalized, so pruning irrelevant content improves
    pass rate and cost together. Optional hash-derived noise exercises
    non-degenerate variance in cross-run statistics.
    """

    relevant_keywords: Mapping[str, float]
    distractor_penalty: float = 0.0
    reference_length: int = 100
    cost_base: float = 0.0
    cost_per_token: float = 0.0
    runtime_base: float = 0.0
    runtime_per_token: float = 0.0
    noise_amplitude: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "relevant_keywords", dict(self.relevant_keywords))
        total = sum(self.relevant_keywords.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"keyword weights must sum to 1, got {total}")
        if not 0.0 <= self.noise_amplitude <= 0.05:
            raise ValueError("noise_amplitude must be in [0, 0.05]")
        if self.distractor_penalty < 0 or self.reference_length < 1:
            raise ValueError("penalty must be nonnegative and reference_length positive")
        for attr in ("cost_base", "cost_per_token", "runtime_base", "runtime_per_token"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be nonnegative")

    @classmethod
    def from_mapping(cls, m: Mapping) -> "SimLandscape":
        known = {
            "relevant_keywords",
            "distractor_penalty",
            "reference_length",
            "cost_base",
            "cost_per_token",
            "runtime_base",
            "runtime_per_token",
            "noise_amplitude",
            "rng_seed",
        }
        return cls(**{k: v for k, v in m.items() if k in known})


def _hash_noise(run_seed: int, text: str) -> float:
    """Deterministic pseudo-noise in [-1, 1) from the run seed and text."""
    digest = hashlib.sha256(f"{run_seed}\x1f{text}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**63 - 1.0


def sim_raw_score(bundle: SkillBundle, landscape: SimLandscape, run_seed: int = 0) -> float:
    """Unclamped score: keyword coverage minus length penalty plus noise."""
    toks = bundle.tokens()
    present = set(toks)
    coverage = sum(w for k, w in landscape.relevant_keywords.items() if k in present)
    excess = max(0, len(toks) - landscape.reference_length) / landscape.reference_length
    raw = coverage - landscape.distractor_penalty * excess
    if landscape.noise_amplitude:
        raw += _hash_noise(run_seed, " ".join(toks)) * landscape.noise_amplitude
    return raw


def sim_pass_rate(
    bundle: SkillBundle,
    landscape: SimLandscape,
    tests_total: int = 40,
    run_seed: int = 0,
) -> float:
    """Pass rate on the simulated landscape, quantized to whole tests."""
    raw = sim_raw_score(bundle, landscape, run_seed)
    clamped = min(max(raw, 0.0), 1.0)
    return round(clamped * tests_total) / tests_total


@dataclass(frozen=True)
class SimEvaluator:
    landscape: SimLandscape

    def evaluate(self, bundle: SkillBundle, task: TaskSpec, run_seed: int = 0) -> EvaluationResult:
        land = self.landscape
        toks = bundle.tokens()
        n_tokens = len(toks)
        present = set(toks)
        rate = sim_pass_rate(bundle, land, task.tests_total, run_seed)
        passed = round(rate * task.tests_total)

        cost = land.cost_base + land.cost_per_token * n_tokens
        runtime = land.runtime_base + land.runtime_per_token * n_tokens

        uncovered = sorted(
            (k for k in land.relevant_keywords if k not in present),
            key=lambda k: (-land.relevant_keywords[k], k),
        )
        traces = []
        for i in range(task.tests_total - passed):
            if uncovered:
                kw = uncovered[i % len(uncovered)]
                traces.append(f"test_{i + 1:02d}: expected behavior for '{kw}' not covered")
            else:
                traces.append(f"test_{i + 1:02d}: response degraded, over token budget")
        return EvaluationResult.from_counts(
            passed,
            task.tests_total,
            cost_usd=cost,
            runtime_s=runtime,
            error_traces=traces,
            timed_out=runtime > task.timeout_s,
        )


# --- external verifier --------------------------------------------------

def _parse_report(text: str, *, lenient: bool = False) -> list[tuple[str, bool, str]]:
    """Parse test_id<TAB>pass|fail<TAB>message lines."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) < 2 or parts[1] not in ("pass", "fail"):
            if lenient:
                continue
            raise VerifierCrash(f"malformed report line {lineno}: {line!r}")
        records.append((parts[0], parts[1] == "pass", parts[2] if len(parts) > 2 else ""))
    return records


def _aggregate_report(
    records: list[tuple[str, bool, str]],
    task: TaskSpec,
    *,
    cost_usd: float,
    runtime_s: float,
    timed_out: bool,
) -> EvaluationResult:
    passed = min(sum(1 for _, ok, _ in records if ok), task.tests_total)
    traces = [f"{tid}: {msg or 'failed'}" for tid, ok, msg in records if not ok]
    missing = task.tests_total - len(records)
    for i in range(max(0, missing)):
        traces.append(f"unreported_{i + 1:02d}: no verdict before termination")
    if passed == task.tests_total:
        traces = []
    return EvaluationResult.from_counts(
        passed,
        task.tests_total,
        cost_usd=cost_usd,
        runtime_s=runtime_s,
        error_traces=traces,
        timed_out=timed_out,
    )


@dataclass(frozen=True)
class VerifierEvaluator:
    """Runs a user-supplied verifier command against a stored bundle.

    Command tokens may carry {bundle} and {workspace} placeholders; the
    report file path is always appended as the last argument. A nonzero exit
    with a usable report is a legitimate failing run, not a crash.
    """

    command: tuple[str, ...]
    workspace: str = "."

    def evaluate(self, bundle: SkillBundle, task: TaskSpec, run_seed: int = 0) -> EvaluationResult:
        start = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="skillmoo-eval-") as td:
            bundle_dir = Path(td) / "bundle"
            store_bundle(bundle, bundle_dir)
            report_path = Path(td) / "report.tsv"
            argv = [
                tok.replace("{bundle}", str(bundle_dir)).replace("{workspace}", str(self.workspace))
                for tok in self.command
            ] + [str(report_path)]

            timed_out = False
            proc = None
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=task.timeout_s)
            except subprocess.TimeoutExpired:
                timed_out = True
            except OSError as e:
                raise VerifierCrash(f"could not start verifier {argv[0]!r}: {e}") from e
            runtime = time.monotonic() - start

            text = report_path.read_text(encoding="utf-8") if report_path.exists() else ""
            records = _parse_report(text, lenient=timed_out) if text.strip() else []
            if not timed_out:
                if proc is not None and proc.returncode != 0 and not records:
                    tail = (proc.stderr or proc.stdout or "").strip()[-200:]
                    raise VerifierCrash(f"verifier exited {proc.returncode} without a report: {tail}")
                if not records:
                    raise VerifierCrash("verifier produced an empty report")
            return _aggregate_report(
                records, task, cost_usd=0.0, runtime_s=runtime, timed_out=timed_out
            )


def run_verifier(bundle: SkillBundle, task: TaskSpec) -> EvaluationResult:
    """Evaluate via the verifier command in task.evaluator_config."""
    cfg = task.evaluator_config
    return VerifierEvaluator(
        command=tuple(cfg["command"]), workspace=str(cfg.get("workspace", "."))
    ).evaluate(bundle, task)


# --- chat-model solver ---------------------------------------------------

def _render_bundle_for_prompt(bundle: SkillBundle) -> str:
    parts = []
    for s in bundle.skills:
        parts.append(f"### [{s.skill_id}] {s.name}\n{s.description}\n\n{s.body}\n")
    return "\n".join(parts) if parts else "(empty bundle)"


@dataclass
class LlmSolverEvaluator:
    """Sends task + bundle to a chat model, writes the reply into the
    workspace, and lets the verifier command judge it. Cost comes from the
    model usage record; a solver timeout yields a usable zero result."""

    model: ModelConfig
    verifier: VerifierEvaluator
    solution_filename: str = "solution.md"
    ledger: UsageLedger = field(default_factory=UsageLedger)

    def evaluate(self, bundle: SkillBundle, task: TaskSpec, run_seed: int = 0) -> EvaluationResult:
        start = time.monotonic()
        prompt = render(
            load_template("solver_prompt.md"),
            {
                "task_description": task.description or task.task_id,
                "bundle_render": _render_bundle_for_prompt(bundle),
            },
        )
        messages = [{"role": "user", "content": prompt}]
        try:
            reply, record = chat(self.model, messages, ledger=self.ledger)
        except Timeout:
            runtime = time.monotonic() - start
            traces = [
                f"unreported_{i + 1:02d}: solver timed out before answering"
                for i in range(task.tests_total)
            ]
            return EvaluationResult.from_counts(
                0, task.tests_total, cost_usd=0.0, runtime_s=runtime,
                error_traces=traces, timed_out=True,
            )

        workspace = Path(self.verifier.workspace)
        workspace.mkdir(parents=True, exist_ok=True)
        (workspace / self.solution_filename).write_text(reply, encoding="utf-8")
        result = self.verifier.evaluate(bundle, task, run_seed)
        return replace(
            result,
            cost_usd=float(record.cost_usd),
            runtime_s=time.monotonic() - start,
        )


def make_evaluator(task: TaskSpec, *, model_config: ModelConfig | None = None):
    """Instantiate the evaluator selected by task.evaluator_config['kind']."""
    cfg = dict(task.evaluator_config)
    kind = cfg.get("kind", "sim")
    if kind == "sim":
        return SimEvaluator(SimLandscape.from_mapping(cfg))
    if kind == "verifier":
        return VerifierEvaluator(
            command=tuple(cfg["command"]), workspace=str(cfg.get("workspace", "."))
        )
    if kind == "llm":
        model = model_config
        if model is None:
            model = ModelConfig.from_env(**cfg.get("model", {}))
        vcfg = cfg["verifier"]
        return LlmSolverEvaluator(
            model=model,
            verifier=VerifierEvaluator(
                command=tuple(vcfg["command"]), workspace=str(vcfg.get("workspace", "."))
            ),
        )
    raise ValueError(f"unknown evaluator kind {kind!r}")
