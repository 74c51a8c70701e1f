"""Edit proposers: turn a parent bundle plus failure evidence into one
validated bundle edit and an optional optimizer-skill update.

Two implementations share the contract: a deterministic rule-based policy
for desk-scale runs and tests, and a chat-model proposer that emits a fenced
``proposal`` block (grammar in PROTOCOL.md) with one validating retry.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from typing import Callable, Mapping

import yaml

from .bundle import (
    BundleError,
    EditKind,
    EditOp,
    Skill,
    SkillBundle,
    make_skill,
    validate_op,
)
from .llm import ModelConfig, UsageLedger, chat
from .templates import load_template, render


class ProposerFailure(Exception):
    """No valid proposal could be produced (after retry, for the LLM path)."""


class NoValidOperation(ProposerFailure):
    """No edit kind is applicable to the parent bundle."""


class ParseError(Exception):
    """A proposal block could not be parsed. Carries the byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
        self.reason = message


@dataclass(frozen=True)
class FailureEvidence:
    """What the proposer knows about the parent: verbatim error traces plus
    its metrics and the generation being proposed."""

    error_traces: tuple[str, ...]
    pass_rate: float
    cost_usd: float
    runtime_s: float
    generation: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "error_traces", tuple(self.error_traces))


@dataclass(frozen=True)
class EditProposal:
    op: EditOp
    rationale: str = ""
    optimizer_skill_update: str | None = None


# kind draw weights for the rule-based policy; pruning is deliberately favored
RULE_KIND_WEIGHTS: tuple[tuple[EditKind, float], ...] = (
    (EditKind.PRUNE, 0.4),
    (EditKind.REWRITE, 0.2),
    (EditKind.REORDER, 0.2),
    (EditKind.SUBSTITUTE, 0.2),
)

OPTIMIZER_NOTE_LIMIT = 20

_WORD_RE = re.compile(r"[a-z0-9_]+")


def _evidence_tokens(evidence: FailureEvidence) -> frozenset[str]:
    toks: set[str] = set()
    for trace in evidence.error_traces:
        toks.update(_WORD_RE.findall(trace.lower()))
    return frozenset(toks)


def _hits_per_token(skill: Skill, ev_tokens: frozenset[str]) -> float:
    if not skill.token_estimate:
        return 0.0
    hits = sum(1 for tok in skill.tokens() if tok.lower() in ev_tokens)
    return hits / skill.token_estimate


def _least_relevant(bundle: SkillBundle, ev_tokens: frozenset[str]) -> Skill:
    # fewest evidence hits per token; ties broken toward the longest skill
    return min(bundle.skills, key=lambda s: (_hits_per_token(s, ev_tokens), -s.token_estimate))


def _most_relevant(bundle: SkillBundle, ev_tokens: frozenset[str]) -> Skill:
    return max(bundle.skills, key=lambda s: (_hits_per_token(s, ev_tokens), s.token_estimate))


def _truncate_half(body: str) -> str:
    toks = body.split()
    return " ".join(toks[: math.ceil(len(toks) / 2)])


def append_note(text: str, note: str, limit: int = OPTIMIZER_NOTE_LIMIT) -> str:
    """Append a one-line history note, keeping at most `limit` note lines.

    Notes are the lines starting with '- '; the oldest is dropped first.
    """
    lines = text.splitlines()
    lines.append(note)
    note_positions = [i for i, line in enumerate(lines) if line.startswith("- ")]
    while len(note_positions) > limit:
        del lines[note_positions[0]]
        note_positions = [i for i, line in enumerate(lines) if line.startswith("- ")]
    return "\n".join(lines)


def _try_prune(bundle, ev_tokens) -> EditOp | None:
    if len(bundle.skills) <= 1:
        return None
    target = _least_relevant(bundle, ev_tokens)
    return EditOp(
        EditKind.PRUNE,
        targets=(target.skill_id,),
        description="Bundle pruning (remove skill blocks)",
    )


def _try_rewrite(bundle, ev_tokens) -> EditOp | None:
    candidates = [s for s in bundle.skills if len(s.body.split()) >= 2]
    if not candidates:
        return None
    target = min(candidates, key=lambda s: (_hits_per_token(s, ev_tokens), -s.token_estimate))
    trimmed = Skill(target.skill_id, target.name, target.description, _truncate_half(target.body))
    return EditOp(
        EditKind.REWRITE,
        targets=(target.skill_id,),
        payload=(trimmed,),
        description="Bundle rewrite (trim skill body)",
    )


def _try_reorder(bundle, ev_tokens) -> EditOp | None:
    if len(bundle.skills) <= 1:
        return None
    lead = _most_relevant(bundle, ev_tokens)
    ids = list(bundle.skill_ids())
    if ids[0] == lead.skill_id:
        return None
    ids.remove(lead.skill_id)
    return EditOp(
        EditKind.REORDER,
        order=tuple([lead.skill_id] + ids),
        description="Bundle reorder (move relevant skill first)",
    )


def _try_substitute(bundle, ev_tokens, ancestors) -> EditOp | None:
    target = _least_relevant(bundle, ev_tokens)
    cur = bundle
    while cur.lineage is not None and ancestors:
        parent = ancestors.get(cur.lineage.parent_id)
        if parent is None:
            break
        try:
            old = parent.get(target.skill_id)
        except BundleError:
            break
        if old.content() != target.content():
            restored = Skill(target.skill_id, old.name, old.description, old.body)
            return EditOp(
                EditKind.SUBSTITUTE,
                targets=(target.skill_id,),
                payload=(restored,),
                description="Bundle substitution (swap skill blocks)",
            )
        cur = parent
    return None


def propose(
    optimizer_skill,
    parent_bundle: SkillBundle,
    evidence: FailureEvidence,
    rng_seed: int,
    *,
    ancestors: Mapping[str, SkillBundle] | None = None,
) -> EditProposal:
    """Deterministic rule-based proposal.

    Draws an edit kind with a pruning bias, then applies the policy for that
    kind: PRUNE drops the skill with the fewest evidence-keyword hits per
    token (longest first on ties), REWRITE truncates that skill's body to its
    first half, REORDER moves the most evidence-relevant skill to the front,
    and SUBSTITUTE restores the target's ancestor version when the lineage
    (via `ancestors`) still has one, else degrades to REWRITE. Inapplicable
    kinds fall through; if nothing applies, NoValidOperation is raised and
    the caller should skip the slot.
    """
    if not parent_bundle.skills:
        raise NoValidOperation("parent bundle has no skills")
    ev_tokens = _evidence_tokens(evidence)
    rng = random.Random(rng_seed)

    draw = rng.random()
    acc = 0.0
    chosen = RULE_KIND_WEIGHTS[-1][0]
    for kind, weight in RULE_KIND_WEIGHTS:
        acc += weight
        if draw < acc:
            chosen = kind
            break

    attempts: dict[EditKind, Callable[[], EditOp | None]] = {
        EditKind.PRUNE: lambda: _try_prune(parent_bundle, ev_tokens),
        EditKind.REWRITE: lambda: _try_rewrite(parent_bundle, ev_tokens),
        EditKind.REORDER: lambda: _try_reorder(parent_bundle, ev_tokens),
        EditKind.SUBSTITUTE: lambda: _try_substitute(parent_bundle, ev_tokens, ancestors or {}),
    }
    # REWRITE is the universal fallback: always meaningful on a non-trivial body
    fallback_order = [EditKind.REWRITE, EditKind.PRUNE, EditKind.REORDER, EditKind.SUBSTITUTE]
    op = attempts[chosen]()
    if op is None and chosen is EditKind.SUBSTITUTE:
        op = attempts[EditKind.REWRITE]()
    if op is None:
        for kind in fallback_order:
            if kind is chosen:
                continue
            op = attempts[kind]()
            if op is not None:
                break
    if op is None:
        raise NoValidOperation(
            f"no applicable edit for bundle {parent_bundle.bundle_id!r}"
        )
    validate_op(parent_bundle, op)

    note = (
        f"- gen {evidence.generation}: {op.kind.value} on "
        f"{', '.join(op.targets) if op.targets else 'bundle order'}"
        f" (parent pass {evidence.pass_rate:.3f}, cost {evidence.cost_usd:.4f})"
    )
    update = append_note(optimizer_skill.text, note)
    rationale = op.description
    if op.targets:
        rationale += f"; target {op.targets[0]} had the weakest link to the failure evidence"
    return EditProposal(op=op, rationale=rationale, optimizer_skill_update=update)


class RuleProposer:
    """Stateless wrapper so rule proposals satisfy the proposer protocol."""

    ledger = None

    def propose(self, optimizer_skill, parent_bundle, evidence, rng_seed, *, ancestors=None):
        return propose(
            optimizer_skill, parent_bundle, evidence, rng_seed, ancestors=ancestors
        )


# --- wire format ----------------------------------------------------------

_FENCE_RE = re.compile(r"```proposal[ \t]*\n(.*?)```", re.S)

_PAYLOAD_KINDS = (EditKind.SUBSTITUTE, EditKind.EXPAND, EditKind.REWRITE)


def parse_proposal(text: str) -> EditProposal:
    """Extract and parse the first fenced block labeled `proposal`.

    Inside the fence the proposal is a YAML mapping with keys `operation`,
    `targets`, `payload`, `rationale`, and optional `optimizer_skill_update`
    and `description`; unknown keys are ignored. Payload entries for
    SUBSTITUTE / EXPAND / REWRITE carry skill name/description/body fields
    (plus optional id); the REORDER payload is the permutation itself.
    """
    m = _FENCE_RE.search(text)
    if not m:
        raise ParseError("no fenced block labeled 'proposal' found", 0)
    block = m.group(1)
    base = m.start(1)
    try:
        data = yaml.safe_load(block)
    except yaml.YAMLError as e:
        offset = base
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            offset = base + mark.index
        raise ParseError(f"invalid YAML in proposal block: {e}", offset) from e
    if not isinstance(data, dict):
        raise ParseError("proposal block must be a mapping", base)
    if "operation" not in data:
        raise ParseError("proposal is missing the 'operation' key", base)
    try:
        kind = EditKind(str(data["operation"]).strip().upper())
    except ValueError:
        raise ParseError(f"unknown operation {data['operation']!r}", base) from None

    targets = data.get("targets", [])
    if isinstance(targets, str):
        targets = [targets]
    if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
        raise ParseError("'targets' must be a skill id or list of skill ids", base)

    raw_payload = data.get("payload")
    payload: tuple[Skill, ...] = ()
    order: tuple[str, ...] = ()
    if kind is EditKind.REORDER:
        if not isinstance(raw_payload, list) or not all(isinstance(x, str) for x in raw_payload):
            raise ParseError("REORDER payload must be a list of skill ids", base)
        order = tuple(raw_payload)
    elif kind in _PAYLOAD_KINDS:
        if isinstance(raw_payload, dict):
            raw_payload = [raw_payload]
        if not isinstance(raw_payload, list) or not raw_payload:
            raise ParseError(f"{kind.value} payload must carry skill content", base)
        skills = []
        for entry in raw_payload:
            if not isinstance(entry, dict) or "body" not in entry:
                raise ParseError("payload entries need at least a 'body' field", base)
            skills.append(
                make_skill(
                    str(entry.get("name", "")),
                    str(entry.get("description", "")),
                    str(entry["body"]),
                    skill_id=entry.get("id"),
                )
            )
        payload = tuple(skills)

    rationale = str(data.get("rationale", "") or "")
    if "description" in data:
        description = str(data["description"] or "")
    else:
        description = rationale  # best grouping label available
    update = data.get("optimizer_skill_update")
    if update is not None:
        update = str(update)
    op = EditOp(kind, targets=tuple(targets), payload=payload, order=order, description=description)
    return EditProposal(op=op, rationale=rationale, optimizer_skill_update=update)


def render_proposal(proposal: EditProposal) -> str:
    """Inverse of parse_proposal; emits the fenced YAML block."""
    op = proposal.op
    data: dict = {"operation": op.kind.value}
    if op.targets:
        data["targets"] = list(op.targets)
    if op.kind is EditKind.REORDER:
        data["payload"] = list(op.order)
    elif op.payload:
        data["payload"] = [
            {"id": s.skill_id, "name": s.name, "description": s.description, "body": s.body}
            for s in op.payload
        ]
    data["rationale"] = proposal.rationale
    data["description"] = op.description
    if proposal.optimizer_skill_update is not None:
        data["optimizer_skill_update"] = proposal.optimizer_skill_update
    body = yaml.safe_dump(data, sort_keys=False, allow_unicode=True, default_flow_style=False)
    return f"```proposal\n{body}```"


def operations_help() -> str:
    return load_template("operations_help.md")


def render_evidence(evidence: FailureEvidence) -> str:
    lines = [
        f"parent pass rate: {evidence.pass_rate:.4f}",
        f"parent cost (USD): {evidence.cost_usd:.6f}",
        f"parent runtime (s): {evidence.runtime_s:.2f}",
        f"generation: {evidence.generation}",
        "failing tests:",
    ]
    if evidence.error_traces:
        lines.extend(f"  - {t}" for t in evidence.error_traces)
    else:
        lines.append("  (none; all tests passed)")
    return "\n".join(lines)


def render_bundle(bundle: SkillBundle) -> str:
    parts = []
    for s in bundle.skills:
        parts.append(f"### [{s.skill_id}] {s.name}\n{s.description}\n\n{s.body}\n")
    return "\n".join(parts) if parts else "(empty bundle)"


def propose_llm(
    optimizer_skill,
    parent_bundle: SkillBundle,
    evidence: FailureEvidence,
    *,
    model: ModelConfig,
    ledger: UsageLedger | None = None,
    template: str | None = None,
) -> EditProposal:
    """Chat-model proposal with one validating retry.

    Renders the proposal prompt, sends a single request, parses and validates
    the reply; on a parse or validation failure it reprompts once with the
    error explained, then raises ProposerFailure.
    """
    prompt = render(
        template or load_template("proposer_prompt.md"),
        {
            "optimizer_skill": optimizer_skill.text,
            "bundle_render": render_bundle(parent_bundle),
            "evidence": render_evidence(evidence),
            "operations_help": operations_help(),
        },
    )
    messages = [{"role": "user", "content": prompt}]
    reply, _ = chat(model, messages, ledger=ledger)
    try:
        proposal = parse_proposal(reply)
        validate_op(parent_bundle, proposal.op)
        return proposal
    except (ParseError, BundleError) as first_error:
        retry_messages = messages + [
            {"role": "assistant", "content": reply},
            {
                "role": "user",
                "content": (
                    f"That proposal was invalid: {first_error}. Reply again with "
                    "exactly one fenced block labeled `proposal` that follows the "
                    "operations help, targeting only skill ids that exist in the bundle."
                ),
            },
        ]
        reply2, _ = chat(model, retry_messages, ledger=ledger)
        try:
            proposal = parse_proposal(reply2)
            validate_op(parent_bundle, proposal.op)
            return proposal
        except (ParseError, BundleError) as second_error:
            raise ProposerFailure(
                f"unparseable proposal after retry: {second_error}"
            ) from second_error


class LlmProposer:
    """Proposer-protocol wrapper around propose_llm with a shared ledger."""

    def __init__(self, model: ModelConfig, template: str | None = None):
        self.model = model
        self.template = template
        self.ledger = UsageLedger()

    def propose(self, optimizer_skill, parent_bundle, evidence, rng_seed, *, ancestors=None):
        return propose_llm(
            optimizer_skill,
            parent_bundle,
            evidence,
            model=self.model,
            ledger=self.ledger,
            template=self.template,
        )
