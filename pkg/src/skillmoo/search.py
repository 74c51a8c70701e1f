"""The generation loop: seed evaluation, propose -> guard -> evaluate ->
archive -> rank, with an evolving optimizer skill, lexicographic final
selection, and replayable run persistence.

Runs are deterministic given (task, seed bundle, config, simulated
evaluator): one master seed is split into per-role and per-slot sub-seeds by
counter-based hashing, candidate ids are derived from (generation, slot),
and event records are serialized with sorted keys, so two runs with the same
inputs produce byte-identical event logs once timestamps are stripped.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__ as _pkg_version
from .bundle import BundleError, SkillBundle, apply_edit, store_bundle
from .evaluation import EvaluationResult, TaskSpec
from .moo import ObjectiveVector, nondominated_sort, nsga2_select
from .proposer import FailureEvidence, NoValidOperation, ProposerFailure
from .templates import load_template


class CandidateStatus(str, Enum):
    ACCEPTED = "ACCEPTED"
    REJECTED_GUARD = "REJECTED_GUARD"


@dataclass(frozen=True)
class Candidate:
    bundle: SkillBundle
    result: EvaluationResult
    objective: ObjectiveVector
    generation: int
    arrival_index: int
    status: CandidateStatus
    parent_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.objective.neg_pass != -self.result.pass_rate:
            raise ValueError("objective.neg_pass must equal -pass_rate")
        if self.objective.cost != self.result.cost_usd:
            raise ValueError("objective.cost must equal cost_usd")
        if self.generation == 0 and (
            self.status is not CandidateStatus.ACCEPTED or self.parent_id is not None
        ):
            raise ValueError("generation-0 candidate must be ACCEPTED with no parent")


def make_candidate(
    bundle: SkillBundle,
    result: EvaluationResult,
    generation: int,
    arrival_index: int,
    status: CandidateStatus = CandidateStatus.ACCEPTED,
    parent_id: str | None = None,
) -> Candidate:
    return Candidate(
        bundle=bundle,
        result=result,
        objective=ObjectiveVector(neg_pass=-result.pass_rate, cost=result.cost_usd),
        generation=generation,
        arrival_index=arrival_index,
        status=status,
        parent_id=parent_id,
    )


class Archive:
    """Append-only candidate archive with a derived Pareto front.

    Rejected candidates stay in the archive for pattern analysis but never
    enter the front or parent selection. With `cap` set, the pool considered
    for the front is trimmed to the NSGA-II top-cap of accepted candidates.
    """

    def __init__(self, cap: int | None = None):
        self._candidates: list[Candidate] = []
        self._front: tuple[int, ...] = ()
        self.cap = cap

    def __len__(self) -> int:
        return len(self._candidates)

    @property
    def candidates(self) -> tuple[Candidate, ...]:
        return tuple(self._candidates)

    @property
    def pareto_front(self) -> tuple[int, ...]:
        """Archive indices of the current front, recomputed on every append."""
        return self._front

    def append(self, cand: Candidate) -> None:
        if cand.arrival_index != len(self._candidates):
            raise ValueError("arrival_index must equal the append position")
        self._candidates.append(cand)
        self._front = self._compute_front()

    def accepted(self) -> list[tuple[int, Candidate]]:
        return [
            (i, c)
            for i, c in enumerate(self._candidates)
            if c.status is CandidateStatus.ACCEPTED
        ]

    def _active(self) -> list[tuple[int, Candidate]]:
        acc = self.accepted()
        if self.cap is not None and len(acc) > self.cap:
            picked = nsga2_select(
                [(c.objective, c.arrival_index) for _, c in acc], self.cap
            )
            acc = [acc[p] for p in sorted(picked)]
        return acc

    def _compute_front(self) -> tuple[int, ...]:
        active = self._active()
        if not active:
            return ()
        fa = nondominated_sort([c.objective for _, c in active])
        return tuple(active[p][0] for p in fa.fronts[0])

    def front_candidates(self) -> list[Candidate]:
        return [self._candidates[i] for i in self._front]

    def bundles_by_id(self) -> dict[str, SkillBundle]:
        return {c.bundle.bundle_id: c.bundle for c in self._candidates}


def guard(parent: Candidate, child_result: EvaluationResult, threshold: float) -> CandidateStatus:
    """Pass-preservation guard: reject iff the child's pass rate drops by
    strictly more than `threshold` below the parent's.

    The comparison is exact over test-count fractions, so a drop of exactly
    the threshold is accepted regardless of binary-float representation.
    """
    drop = parent.result.pass_fraction() - child_result.pass_fraction()
    limit = Fraction(str(threshold))
    return CandidateStatus.REJECTED_GUARD if drop > limit else CandidateStatus.ACCEPTED


def _lexicographic_best(candidates: Sequence[Candidate]) -> Candidate:
    # preference order is fixed: max pass, then min cost, then min runtime
    return min(
        candidates,
        key=lambda c: (
            -c.result.pass_rate,
            c.result.cost_usd,
            c.result.runtime_s,
            c.arrival_index,
        ),
    )


def select_parent(archive: Archive, parent_policy: str = "best") -> Candidate:
    """Pick the next parent: lexicographically best front member ("best"),
    or the most recently accepted candidate ("chain")."""
    if parent_policy == "chain":
        accepted = archive.accepted()
        if not accepted:
            raise ValueError("archive has no accepted candidate")
        return accepted[-1][1]
    front = archive.front_candidates()
    if not front:
        raise ValueError("archive has an empty front")
    return _lexicographic_best(front)


def final_selection(archive: Archive) -> Candidate:
    """Reporting choice over the completed archive; same rule as the parent
    selection under the 'best' policy."""
    front = archive.front_candidates()
    if not front:
        raise ValueError("archive has an empty front")
    return _lexicographic_best(front)


@dataclass(frozen=True)
class OptimizerSkill:
    version: int
    text: str


def default_optimizer_skill() -> OptimizerSkill:
    return OptimizerSkill(version=0, text=load_template("optimizer_seed.md"))


@dataclass(frozen=True)
class SearchConfig:
    """Loop parameters. `generations` counts the seed evaluation, so the
    default of 5 performs 4 optimization steps."""

    generations: int = 5
    population: int = 1
    guard_drop_threshold: float = 0.05
    seed: int = 0
    parent_policy: str = "best"  # "best" or "chain"
    archive_cap: int | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.generations < 1 or self.population < 1 or self.jobs < 1:
            raise ValueError("generations, population, and jobs must be >= 1")
        if self.guard_drop_threshold < 0:
            raise ValueError("guard_drop_threshold must be nonnegative")
        if self.parent_policy not in ("best", "chain"):
            raise ValueError("parent_policy must be 'best' or 'chain'")

    def to_dict(self) -> dict:
        return {
            "generations": self.generations,
            "population": self.population,
            "guard_drop_threshold": self.guard_drop_threshold,
            "seed": self.seed,
            "parent_policy": self.parent_policy,
            "archive_cap": self.archive_cap,
            "jobs": self.jobs,
        }


def derive_seed(master: int, *path: object) -> int:
    """Counter-based sub-seed derivation; stable across platforms."""
    key = f"{master}|" + "/".join(str(p) for p in path)
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


@dataclass
class RunRecord:
    task: TaskSpec
    config: SearchConfig
    archive: Archive
    final: Candidate
    events: list[dict]
    optimizer_skill: OptimizerSkill
    opt_cost_usd: float
    opt_runtime_s: float
    seeds: dict
    run_dir: Optional[Path] = None


class _RunWriter:
    """Streams run artifacts: run.json up front, events.jsonl as they
    happen, candidates/<id>/ per candidate, front.json at the end."""

    def __init__(self, out_dir: str | Path | None):
        self.root = Path(out_dir) if out_dir is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "candidates").mkdir(exist_ok=True)

    def write_run_header(self, header: dict) -> None:
        if self.root is None:
            return
        (self.root / "run.json").write_text(
            json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    def append_event(self, event: dict) -> None:
        if self.root is None:
            return
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with open(self.root / "events.jsonl", "a", encoding="utf-8") as f:
            f.write(line + "\n")

    def store_candidate(self, cand: Candidate) -> None:
        if self.root is None:
            return
        cdir = self.root / "candidates" / cand.bundle.bundle_id
        store_bundle(cand.bundle, cdir / "bundle")
        record = {
            "candidate": cand.bundle.bundle_id,
            "generation": cand.generation,
            "arrival_index": cand.arrival_index,
            "status": cand.status.value,
            "parent": cand.parent_id,
            "result": cand.result.to_dict(),
        }
        (cdir / "result.json").write_text(
            json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    def write_front(self, archive: Archive) -> None:
        if self.root is None:
            return
        entries = []
        for idx in archive.pareto_front:
            c = archive.candidates[idx]
            entries.append(
                {
                    "id": c.bundle.bundle_id,
                    "neg_pass": c.objective.neg_pass,
                    "cost": c.objective.cost,
                    "pass_rate": c.result.pass_rate,
                    "runtime_s": c.result.runtime_s,
                    "arrival_index": c.arrival_index,
                }
            )
        (self.root / "front.json").write_text(
            json.dumps({"front": entries}, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def _proposer_cost(proposer) -> float:
    ledger = getattr(proposer, "ledger", None)
    return float(ledger.total_cost()) if ledger is not None else 0.0


def run_search(
    task: TaskSpec,
    seed_bundle: SkillBundle,
    config: SearchConfig,
    evaluator,
    proposer,
    *,
    out_dir: str | Path | None = None,
    optimizer_skill: OptimizerSkill | None = None,
    label: str = "skillmoo",
) -> RunRecord:
    """Run the guarded generation loop and return the full record.

    Each generation selects a parent from the archive, asks the proposer for
    `population` edits branching from it, evaluates the children (in
    parallel when config.jobs > 1), applies the pass-preservation guard, and
    appends every child, accepted or rejected, to the archive. Proposal
    failures skip their slot. Optimization overhead counts every evaluation
    and proposal from generation 1 on.
    """
    seeds = {
        "master": config.seed,
        "evaluator": derive_seed(config.seed, "evaluator"),
        "proposer": derive_seed(config.seed, "proposer"),
    }
    writer = _RunWriter(out_dir)
    writer.write_run_header(
        {
            "label": label,
            "task_id": task.task_id,
            "tests_total": task.tests_total,
            "timeout_s": task.timeout_s,
            "config": config.to_dict(),
            "seeds": seeds,
            "package_version": _pkg_version,
            "created_at": time.time(),
        }
    )

    events: list[dict] = []

    def emit(event: dict) -> None:
        event = {"ts": time.time(), **event}
        events.append(event)
        writer.append_event(event)

    opt_skill = optimizer_skill or default_optimizer_skill()
    archive = Archive(cap=config.archive_cap)

    seed_result = evaluator.evaluate(seed_bundle, task, derive_seed(config.seed, "eval", 0, 0))
    seed_cand = make_candidate(seed_bundle, seed_result, generation=0, arrival_index=0)
    archive.append(seed_cand)
    writer.store_candidate(seed_cand)
    emit(
        {
            "event": "seed_eval",
            "candidate": seed_bundle.bundle_id,
            "generation": 0,
            "result": seed_result.to_dict(),
        }
    )

    opt_cost = 0.0
    opt_runtime = 0.0
    proposer_cost_before = _proposer_cost(proposer)

    for g in range(1, config.generations):
        parent = select_parent(archive, config.parent_policy)
        evidence = FailureEvidence(
            error_traces=parent.result.error_traces,
            pass_rate=parent.result.pass_rate,
            cost_usd=parent.result.cost_usd,
            runtime_s=parent.result.runtime_s,
            generation=g,
        )
        ancestors = archive.bundles_by_id()

        slots = []
        for s in range(config.population):
            prop_seed = derive_seed(config.seed, "proposal", g, s)
            spend_before = _proposer_cost(proposer)
            try:
                proposal = proposer.propose(
                    opt_skill, parent.bundle, evidence, prop_seed, ancestors=ancestors
                )
            except (ProposerFailure, NoValidOperation) as e:
                emit(
                    {
                        "event": "proposal",
                        "generation": g,
                        "slot": s,
                        "parent": parent.bundle.bundle_id,
                        "status": "failed",
                        "cost_usd": _proposer_cost(proposer) - spend_before,
                        "error": str(e),
                    }
                )
                continue
            child_id = f"g{g:03d}s{s:02d}"
            try:
                child_bundle = apply_edit(
                    parent.bundle, proposal.op, bundle_id=child_id, generation=g
                )
            except BundleError as e:
                emit(
                    {
                        "event": "proposal",
                        "generation": g,
                        "slot": s,
                        "parent": parent.bundle.bundle_id,
                        "status": "failed",
                        "cost_usd": _proposer_cost(proposer) - spend_before,
                        "error": f"proposal does not apply: {e}",
                    }
                )
                continue
            emit(
                {
                    "event": "proposal",
                    "generation": g,
                    "slot": s,
                    "parent": parent.bundle.bundle_id,
                    "candidate": child_id,
                    "status": "ok",
                    "cost_usd": _proposer_cost(proposer) - spend_before,
                    "op": proposal.op.to_dict(),
                    "rationale": proposal.rationale,
                }
            )
            slots.append((s, proposal, child_bundle))

        def _eval(slot):
            s, _, child_bundle = slot
            return evaluator.evaluate(child_bundle, task, derive_seed(config.seed, "eval", g, s))

        if config.jobs > 1 and len(slots) > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                results = list(pool.map(_eval, slots))
        else:
            results = [_eval(slot) for slot in slots]

        for (s, proposal, child_bundle), child_result in zip(slots, results):
            emit(
                {
                    "event": "child_eval",
                    "candidate": child_bundle.bundle_id,
                    "generation": g,
                    "slot": s,
                    "result": child_result.to_dict(),
                }
            )
            status = guard(parent, child_result, config.guard_drop_threshold)
            emit(
                {
                    "event": "guard_decision",
                    "candidate": child_bundle.bundle_id,
                    "parent": parent.bundle.bundle_id,
                    "status": status.value,
                    "parent_pass": parent.result.pass_rate,
                    "child_pass": child_result.pass_rate,
                    "threshold": config.guard_drop_threshold,
                }
            )
            cand = make_candidate(
                child_bundle,
                child_result,
                generation=g,
                arrival_index=len(archive),
                status=status,
                parent_id=parent.bundle.bundle_id,
            )
            archive.append(cand)
            writer.store_candidate(cand)
            opt_cost += child_result.cost_usd
            opt_runtime += child_result.runtime_s

        updates = [p.optimizer_skill_update for _, p, _ in slots if p.optimizer_skill_update]
        if updates:
            opt_skill = OptimizerSkill(version=opt_skill.version + 1, text=updates[-1])
            emit(
                {
                    "event": "optimizer_skill_update",
                    "generation": g,
                    "version": opt_skill.version,
                }
            )

    proposer_spend = _proposer_cost(proposer) - proposer_cost_before
    opt_cost += proposer_spend

    final = final_selection(archive)
    emit(
        {
            "event": "final_selection",
            "candidate": final.bundle.bundle_id,
            "generation": final.generation,
            "pass_rate": final.result.pass_rate,
            "cost_usd": final.result.cost_usd,
            "runtime_s": final.result.runtime_s,
            "skills_used": len(final.bundle.skills),
        }
    )
    writer.write_front(archive)

    return RunRecord(
        task=task,
        config=config,
        archive=archive,
        final=final,
        events=events,
        optimizer_skill=opt_skill,
        opt_cost_usd=opt_cost,
        opt_runtime_s=opt_runtime,
        seeds=seeds,
        run_dir=writer.root,
    )


def canonical_event_bytes(source: str | Path | Iterable[Mapping]) -> bytes:
    """Serialize an event log with timestamps stripped, for replay equality.

    `source` is an events.jsonl path or an iterable of event dicts.
    """
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
    else:
        records = [dict(e) for e in source]
    out = []
    for rec in records:
        rec = {k: v for k, v in rec.items() if k != "ts"}
        out.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return ("\n".join(out) + "\n").encode("utf-8")


def overhead_from_events(events: Iterable[Mapping]) -> tuple[float, float]:
    """Optimization spend (cost USD, runtime s) from generation 1 on,
    counting child evaluations (accepted or not) and any proposal costs."""
    cost = 0.0
    runtime = 0.0
    for e in events:
        if e.get("event") == "child_eval":
            cost += e["result"]["cost_usd"]
            runtime += e["result"]["runtime_s"]
        elif e.get("event") == "proposal":
            cost += e.get("cost_usd", 0.0)
    return cost, runtime
