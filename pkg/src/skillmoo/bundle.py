"""Skill bundles: the data model and on-disk format for ordered skill
collections, plus deterministic application and diffing of bundle edits.

A bundle is an immutable, ordered sequence of skills. Edits never mutate
their input; every edited bundle records its parent and the operation that
produced it, so any bundle can be traced back to a generation-0 seed.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional


class BundleError(Exception):
    """Base error for bundle construction, editing, and serialization."""


class UnknownTarget(BundleError):
    """An edit targeted a skill_id that is not in the bundle."""


class InvalidPermutation(BundleError):
    """A reorder payload is not a permutation of the bundle's skill ids."""


class EmptyResult(BundleError):
    """The edit would leave the bundle with zero skills."""


class DuplicateSkillId(BundleError):
    """Two skills in one bundle would share a skill_id."""


class MalformedManifest(BundleError):
    """manifest.json or a SKILL.md file does not match the bundle format."""


class MissingSkillFile(BundleError):
    """The manifest lists a skill directory with no SKILL.md."""


def count_tokens(*texts: str) -> int:
    """Whitespace-delimited token count across the given text fields."""
    return sum(len(t.split()) for t in texts)


def _short_hash(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Skill:
    """One unit of instruction content.

    token_estimate is derived from the text fields on construction, so it can
    never drift out of sync with them.
    """

    skill_id: str
    name: str
    description: str
    body: str
    token_estimate: int = field(init=False)

    def __post_init__(self) -> None:
        if "\n" in self.name or "\n" in self.description:
            raise BundleError("skill name and description must be single-line")
        object.__setattr__(
            self, "token_estimate", count_tokens(self.name, self.description, self.body)
        )

    def content(self) -> tuple[str, str, str]:
        return (self.name, self.description, self.body)

    def tokens(self) -> list[str]:
        return f"{self.name} {self.description} {self.body}".split()


def make_skill(name: str, description: str, body: str, skill_id: str | None = None) -> Skill:
    """Build a Skill, deriving a stable content-based id when none is given."""
    sid = skill_id or ("s" + _short_hash(name, description, body)[:10])
    return Skill(sid, name, description, body)


class EditKind(str, Enum):
    PRUNE = "PRUNE"
    SUBSTITUTE = "SUBSTITUTE"
    REORDER = "REORDER"
    REWRITE = "REWRITE"
    EXPAND = "EXPAND"


@dataclass(frozen=True)
class EditOp:
    """A single bundle operation.

    `payload` carries replacement or new skill content (SUBSTITUTE, REWRITE,
    EXPAND); `order` carries the REORDER permutation. `description` is the
    free-text label the proposer attached, used downstream for edit-pattern
    grouping.
    """

    kind: EditKind
    targets: tuple[str, ...] = ()
    payload: tuple[Skill, ...] = ()
    order: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EditKind(self.kind))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "payload", tuple(self.payload))
        object.__setattr__(self, "order", tuple(self.order))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "targets": list(self.targets),
            "payload": [
                {
                    "skill_id": s.skill_id,
                    "name": s.name,
                    "description": s.description,
                    "body": s.body,
                }
                for s in self.payload
            ],
            "order": list(self.order),
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditOp":
        return cls(
            kind=EditKind(d["kind"]),
            targets=tuple(d.get("targets", ())),
            payload=tuple(
                Skill(p["skill_id"], p["name"], p["description"], p["body"])
                for p in d.get("payload", ())
            ),
            order=tuple(d.get("order", ())),
            description=d.get("description", ""),
        )


@dataclass(frozen=True)
class Lineage:
    parent_id: str
    generation: int
    op: EditOp


@dataclass(frozen=True)
class SkillBundle:
    """Ordered, immutable collection of skills. Order is significant and is
    preserved by every operation and by serialization round-trips."""

    bundle_id: str
    skills: tuple[Skill, ...] = ()
    lineage: Optional[Lineage] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "skills", tuple(self.skills))
        seen: set[str] = set()
        for s in self.skills:
            if s.skill_id in seen:
                raise DuplicateSkillId(
                    f"duplicate skill_id {s.skill_id!r} in bundle {self.bundle_id!r}"
                )
            seen.add(s.skill_id)

    def skill_ids(self) -> tuple[str, ...]:
        return tuple(s.skill_id for s in self.skills)

    def get(self, skill_id: str) -> Skill:
        for s in self.skills:
            if s.skill_id == skill_id:
                return s
        raise UnknownTarget(f"skill_id {skill_id!r} not in bundle {self.bundle_id!r}")

    @property
    def token_count(self) -> int:
        return sum(s.token_estimate for s in self.skills)

    def tokens(self) -> list[str]:
        return [tok for s in self.skills for tok in s.tokens()]

    def content(self) -> tuple[tuple[str, str, str], ...]:
        return tuple(s.content() for s in self.skills)


def content_equal(a: SkillBundle, b: SkillBundle) -> bool:
    """Equality over ordered (name, description, body) triples; ids and
    lineage are ignored."""
    return a.content() == b.content()


def validate_op(bundle: SkillBundle, op: EditOp, *, allow_empty: bool = False) -> None:
    """Check an edit against its kind invariants for the given bundle.

    Raises a BundleError subclass describing the first violation found.
    """
    ids = bundle.skill_ids()
    id_set = set(ids)
    kind = op.kind

    def _one_existing_target() -> str:
        if len(op.targets) != 1:
            raise BundleError(f"{kind.value} requires exactly one target, got {len(op.targets)}")
        target = op.targets[0]
        if target not in id_set:
            raise UnknownTarget(f"{kind.value} target {target!r} not in bundle")
        return target

    if kind is EditKind.PRUNE:
        _one_existing_target()
        if op.payload or op.order:
            raise BundleError("PRUNE carries no payload")
        if len(ids) == 1 and not allow_empty:
            raise EmptyResult("PRUNE would leave an empty bundle")
    elif kind is EditKind.REWRITE:
        _one_existing_target()
        if len(op.payload) != 1:
            raise BundleError("REWRITE requires exactly one payload skill")
    elif kind is EditKind.SUBSTITUTE:
        target = _one_existing_target()
        if len(op.payload) != 1:
            raise BundleError("SUBSTITUTE requires exactly one payload skill")
        new_id = op.payload[0].skill_id
        if new_id != target and new_id in id_set:
            raise DuplicateSkillId(f"SUBSTITUTE payload id {new_id!r} collides with existing skill")
    elif kind is EditKind.REORDER:
        if op.targets or op.payload:
            raise BundleError("REORDER carries only a permutation")
        if sorted(op.order) != sorted(ids) or len(op.order) != len(ids):
            raise InvalidPermutation(
                f"REORDER payload {list(op.order)} is not a permutation of {list(ids)}"
            )
    elif kind is EditKind.EXPAND:
        if op.targets:
            raise BundleError("EXPAND takes no existing targets")
        if not op.payload:
            raise BundleError("EXPAND requires at least one new skill")
        new_ids = [s.skill_id for s in op.payload]
        if len(set(new_ids)) != len(new_ids):
            raise DuplicateSkillId("EXPAND payload contains duplicate skill ids")
        clash = id_set.intersection(new_ids)
        if clash:
            raise DuplicateSkillId(f"EXPAND payload ids already in bundle: {sorted(clash)}")
    else:  # pragma: no cover - enum is closed
        raise BundleError(f"unknown edit kind {kind!r}")


def apply_edit(
    bundle: SkillBundle,
    op: EditOp,
    *,
    bundle_id: str | None = None,
    generation: int | None = None,
    allow_empty: bool = False,
) -> SkillBundle:
    """Apply one edit, returning a new bundle with fresh id and lineage.

    The input bundle is never modified. PRUNE removes the target in place,
    SUBSTITUTE replaces it in place, REWRITE replaces the target's content
    while keeping its id, REORDER applies the permutation, and EXPAND appends
    the new skills at the end.
    """
    validate_op(bundle, op, allow_empty=allow_empty)
    skills = list(bundle.skills)

    if op.kind is EditKind.PRUNE:
        skills = [s for s in skills if s.skill_id != op.targets[0]]
    elif op.kind is EditKind.SUBSTITUTE:
        idx = list(bundle.skill_ids()).index(op.targets[0])
        skills[idx] = op.payload[0]
    elif op.kind is EditKind.REWRITE:
        idx = list(bundle.skill_ids()).index(op.targets[0])
        old = skills[idx]
        new = op.payload[0]
        skills[idx] = Skill(old.skill_id, new.name, new.description, new.body)
    elif op.kind is EditKind.REORDER:
        skills = [bundle.get(sid) for sid in op.order]
    elif op.kind is EditKind.EXPAND:
        skills = skills + list(op.payload)

    if generation is None:
        generation = bundle.lineage.generation + 1 if bundle.lineage else 1
    if bundle_id is None:
        bundle_id = "b" + _short_hash(
            bundle.bundle_id, json.dumps(op.to_dict(), sort_keys=True)
        )
    return SkillBundle(bundle_id, tuple(skills), Lineage(bundle.bundle_id, generation, op))


def diff_bundles(parent: SkillBundle, child: SkillBundle) -> list[EditOp]:
    """Minimal edit sequence turning parent into child.

    Emits PRUNE ops for removed ids, one EXPAND for added ids, REWRITE ops
    for surviving ids whose content changed, and a final REORDER when the
    resulting order still differs. Applying the ops in the returned order to
    parent yields a bundle content-equal to child.
    """
    pids = parent.skill_ids()
    cids = child.skill_ids()
    pset, cset = set(pids), set(cids)
    ops: list[EditOp] = []

    for sid in pids:
        if sid not in cset:
            ops.append(EditOp(EditKind.PRUNE, targets=(sid,), description=f"diff prune {sid}"))

    added = [child.get(sid) for sid in cids if sid not in pset]
    if added:
        ops.append(EditOp(EditKind.EXPAND, payload=tuple(added), description="diff expand"))

    for sid in cids:
        if sid in pset and parent.get(sid).content() != child.get(sid).content():
            ops.append(
                EditOp(
                    EditKind.REWRITE,
                    targets=(sid,),
                    payload=(child.get(sid),),
                    description=f"diff rewrite {sid}",
                )
            )

    survivors = [sid for sid in pids if sid in cset]
    resulting = tuple(survivors + [s.skill_id for s in added])
    if resulting != cids:
        ops.append(EditOp(EditKind.REORDER, order=cids, description="diff reorder"))
    return ops


# On-disk format: <bundle>/manifest.json listing ordered skill directories,
# each directory holding SKILL.md with a ----delimited frontmatter block.

_FRONTMATTER_RE = re.compile(r"\A---\n(.*?)\n---\n?(.*)\Z", re.S)
_SAFE_DIR_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*\Z")


def store_bundle(bundle: SkillBundle, path: str | Path) -> Path:
    """Write a bundle directory; returns the directory path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for s in bundle.skills:
        if not _SAFE_DIR_RE.match(s.skill_id):
            raise BundleError(f"skill_id {s.skill_id!r} is not a safe directory name")
        d = root / s.skill_id
        d.mkdir(exist_ok=True)
        (d / "SKILL.md").write_text(
            f"---\nname: {s.name}\ndescription: {s.description}\n---\n{s.body}",
            encoding="utf-8",
        )
    manifest = {"bundle_id": bundle.bundle_id, "skills": list(bundle.skill_ids())}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return root


def load_bundle(path: str | Path) -> SkillBundle:
    """Load a bundle directory written by store_bundle (or by hand)."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise MalformedManifest(f"no manifest.json under {root}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedManifest(f"{mpath}: {e}") from e
    if not isinstance(manifest, dict) or "bundle_id" not in manifest or "skills" not in manifest:
        raise MalformedManifest(f"{mpath}: expected keys 'bundle_id' and 'skills'")
    names = manifest["skills"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise MalformedManifest(f"{mpath}: 'skills' must be a list of directory names")
    if len(set(names)) != len(names):
        raise DuplicateSkillId(f"{mpath}: manifest lists a skill directory twice")

    skills = []
    for name in names:
        f = root / name / "SKILL.md"
        if not f.is_file():
            raise MissingSkillFile(f"{f} is listed in the manifest but missing")
        text = f.read_text(encoding="utf-8")
        m = _FRONTMATTER_RE.match(text)
        if not m:
            raise MalformedManifest(f"{f}: missing ----delimited frontmatter block")
        meta = {}
        for line in m.group(1).splitlines():
            key, sep, value = line.partition(":")
            if sep:
                meta[key.strip()] = value.strip()
        if "name" not in meta or "description" not in meta:
            raise MalformedManifest(f"{f}: frontmatter must carry 'name:' and 'description:'")
        skills.append(Skill(name, meta["name"], meta["description"], m.group(2)))
    return SkillBundle(str(manifest["bundle_id"]), tuple(skills))
