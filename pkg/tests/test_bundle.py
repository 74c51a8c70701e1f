"""Bundle model: edit application, diffing, and the directory format."""

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from skillmoo.bundle import (
    DuplicateSkillId,
    EditKind,
    EditOp,
    EmptyResult,
    InvalidPermutation,
    MalformedManifest,
    MissingSkillFile,
    Skill,
    SkillBundle,
    UnknownTarget,
    apply_edit,
    content_equal,
    count_tokens,
    diff_bundles,
    load_bundle,
    make_skill,
    store_bundle,
)


def skill(sid, body="alpha beta gamma", name=None, description="desc"):
    return Skill(sid, name or sid.upper(), description, body)


def bundle(*sids, bundle_id="b0"):
    return SkillBundle(bundle_id, tuple(skill(s) for s in sids))


class TestSkill:
    def test_token_estimate_matches_recount(self):
        s = Skill("a", "Two words", "three more words", "body here now")
        assert s.token_estimate == len("Two words three more words body here now".split())

    def test_token_estimate_empty(self):
        assert Skill("a", "", "", "").token_estimate == 0

    def test_multiline_name_rejected(self):
        with pytest.raises(Exception):
            Skill("a", "two\nlines", "d", "b")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DuplicateSkillId):
            SkillBundle("b", (skill("a"), skill("a")))


class TestApplyEdit:
    def test_prune_removes_in_place(self):
        b = bundle("a", "b", "c")
        child = apply_edit(b, EditOp(EditKind.PRUNE, targets=("b",)))
        assert child.skill_ids() == ("a", "c")
        assert b.skill_ids() == ("a", "b", "c")  # parent untouched

    def test_reorder_applies_permutation(self):
        b = bundle("a", "b")
        child = apply_edit(b, EditOp(EditKind.REORDER, order=("b", "a")))
        assert child.skill_ids() == ("b", "a")

    def test_substitute_recomputes_token_estimate(self):
        b = SkillBundle("b", (Skill("a", "", "", "one two three"),))
        replacement = Skill("a2", "New", "newer", "just two longer words here")
        child = apply_edit(b, EditOp(EditKind.SUBSTITUTE, targets=("a",), payload=(replacement,)))
        # independent recount of the replacement's own text
        expected = count_tokens("New", "newer", "just two longer words here")
        assert child.skills[0].token_estimate == expected

    def test_rewrite_keeps_id_replaces_content(self):
        b = bundle("a", "b")
        new = Skill("ignored", "A2", "d2", "fresh body")
        child = apply_edit(b, EditOp(EditKind.REWRITE, targets=("a",), payload=(new,)))
        assert child.skills[0].skill_id == "a"
        assert child.skills[0].content() == ("A2", "d2", "fresh body")

    def test_expand_appends_at_end(self):
        b = bundle("a")
        child = apply_edit(b, EditOp(EditKind.EXPAND, payload=(skill("x"), skill("y"))))
        assert child.skill_ids() == ("a", "x", "y")

    def test_lineage_and_fresh_id(self):
        b = bundle("a", "b")
        op = EditOp(EditKind.PRUNE, targets=("a",))
        child = apply_edit(b, op)
        assert child.bundle_id != b.bundle_id
        assert child.lineage.parent_id == b.bundle_id
        assert child.lineage.op == op

    def test_unknown_target(self):
        with pytest.raises(UnknownTarget):
            apply_edit(bundle("a"), EditOp(EditKind.REWRITE, targets=("zz",), payload=(skill("zz"),)))

    def test_invalid_permutation(self):
        with pytest.raises(InvalidPermutation):
            apply_edit(bundle("a", "b"), EditOp(EditKind.REORDER, order=("a", "a")))

    def test_prune_to_empty_forbidden_by_default(self):
        b = bundle("a")
        with pytest.raises(EmptyResult):
            apply_edit(b, EditOp(EditKind.PRUNE, targets=("a",)))
        child = apply_edit(b, EditOp(EditKind.PRUNE, targets=("a",)), allow_empty=True)
        assert child.skills == ()

    def test_expand_duplicate_id_rejected(self):
        with pytest.raises(DuplicateSkillId):
            apply_edit(bundle("a"), EditOp(EditKind.EXPAND, payload=(skill("a"),)))

    def test_lineage_chain_terminates_at_seed(self):
        b = bundle("a", "b", "c")
        bundles = {b.bundle_id: b}
        cur = b
        for sid in ("a", "b"):
            cur = apply_edit(cur, EditOp(EditKind.PRUNE, targets=(sid,)))
            bundles[cur.bundle_id] = cur
        hops = 0
        while cur.lineage is not None:
            cur = bundles[cur.lineage.parent_id]
            hops += 1
        assert hops == 2 and cur.bundle_id == b.bundle_id


class TestDiff:
    def test_prune_only(self):
        p = bundle("a", "b", "c")
        c = SkillBundle("c0", (p.get("a"), p.get("c")))
        ops = diff_bundles(p, c)
        assert [o.kind for o in ops] == [EditKind.PRUNE]
        assert ops[0].targets == ("b",)

    def test_identity_is_empty(self):
        p = bundle("a", "b")
        assert diff_bundles(p, p) == []

    def test_reorder_detected(self):
        p = bundle("a", "b")
        c = SkillBundle("c0", (p.get("b"), p.get("a")))
        ops = diff_bundles(p, c)
        assert [o.kind for o in ops] == [EditKind.REORDER]


# --- property: diff round-trips any edit sequence -------------------------

_WORDS = st.lists(st.sampled_from("red blue green fast slow wide".split()), min_size=0, max_size=6)
_IDS = st.sampled_from([f"sk{i}" for i in range(8)])


@st.composite
def bundles_strategy(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    ids = draw(st.permutations([f"sk{i}" for i in range(8)]))[:n]
    skills = tuple(
        Skill(sid, sid.upper(), "d", " ".join(draw(_WORDS))) for sid in ids
    )
    return SkillBundle("p0", skills)


@st.composite
def edit_for(draw, b: SkillBundle):
    kinds = [EditKind.REWRITE, EditKind.SUBSTITUTE, EditKind.EXPAND, EditKind.REORDER]
    if len(b.skills) > 1:
        kinds.append(EditKind.PRUNE)
    kind = draw(st.sampled_from(kinds))
    free_ids = [f"new{i}" for i in range(4) if f"new{i}" not in set(b.skill_ids())]
    if kind is EditKind.PRUNE:
        return EditOp(kind, targets=(draw(st.sampled_from(b.skill_ids())),))
    if kind is EditKind.REWRITE:
        t = draw(st.sampled_from(b.skill_ids()))
        return EditOp(kind, targets=(t,), payload=(Skill("_", "N", "d", " ".join(draw(_WORDS))),))
    if kind is EditKind.SUBSTITUTE:
        t = draw(st.sampled_from(b.skill_ids()))
        nid = draw(st.sampled_from(free_ids))
        return EditOp(kind, targets=(t,), payload=(Skill(nid, "S", "d", " ".join(draw(_WORDS))),))
    if kind is EditKind.EXPAND:
        nid = draw(st.sampled_from(free_ids))
        return EditOp(kind, payload=(Skill(nid, "E", "d", " ".join(draw(_WORDS))),))
    return EditOp(kind, order=tuple(draw(st.permutations(list(b.skill_ids())))))


@given(data=st.data())
@settings(max_examples=80, deadline=None)
def test_diff_roundtrip_over_random_edit_sequences(data):
    parent = data.draw(bundles_strategy())
    child = parent
    for _ in range(data.draw(st.integers(min_value=1, max_value=4))):
        op = data.draw(edit_for(child))
        child = apply_edit(child, op)
    rebuilt = parent
    for op in diff_bundles(parent, child):
        rebuilt = apply_edit(rebuilt, op, allow_empty=True)
    assert content_equal(rebuilt, child)


@given(data=st.data())
@settings(max_examples=60, deadline=None)
def test_single_edit_diff_reproduces_child(data):
    parent = data.draw(bundles_strategy())
    op = data.draw(edit_for(parent))
    child = apply_edit(parent, op)
    rebuilt = parent
    for d in diff_bundles(parent, child):
        rebuilt = apply_edit(rebuilt, d, allow_empty=True)
    assert content_equal(rebuilt, child)


class TestStorage:
    def test_round_trip_three_skills(self, tmp_path):
        b = SkillBundle(
            "trip",
            (
                Skill("one", "First", "does one thing", "line one\nline two\n"),
                Skill("two", "Second", "colon: in description", "body without newline"),
                Skill("three", "Third", "", ""),
            ),
        )
        store_bundle(b, tmp_path / "bundle")
        loaded = load_bundle(tmp_path / "bundle")
        assert loaded.bundle_id == "trip"
        assert loaded.skill_ids() == b.skill_ids()
        for orig, back in zip(b.skills, loaded.skills):
            assert back.content() == orig.content()  # bodies byte-exact

    def test_missing_skill_file(self, tmp_path):
        root = tmp_path / "bundle"
        root.mkdir()
        (root / "manifest.json").write_text('{"bundle_id": "x", "skills": ["ghost"]}')
        with pytest.raises(MissingSkillFile):
            load_bundle(root)

    def test_malformed_manifest(self, tmp_path):
        root = tmp_path / "bundle"
        root.mkdir()
        (root / "manifest.json").write_text("not json")
        with pytest.raises(MalformedManifest):
            load_bundle(root)

    def test_duplicate_manifest_entry(self, tmp_path):
        root = tmp_path / "bundle"
        root.mkdir()
        (root / "manifest.json").write_text('{"bundle_id": "x", "skills": ["a", "a"]}')
        with pytest.raises(DuplicateSkillId):
            load_bundle(root)

    def test_eight_skill_bundle_loads_with_eight(self, tmp_path):
        b = SkillBundle("big", tuple(skill(f"s{i}") for i in range(8)))
        store_bundle(b, tmp_path / "bundle")
        assert len(load_bundle(tmp_path / "bundle").skills) == 8

    @given(
        bodies=st.lists(
            st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=60),
            min_size=1,
            max_size=4,
        )
    )
    @settings(
        max_examples=40,
        deadline=None,
        suppress_health_check=[HealthCheck.function_scoped_fixture],
    )
    def test_body_bytes_survive_round_trip(self, tmp_path, bodies):
        skills = tuple(
            Skill(f"s{i}", f"Name {i}", "plain description", body)
            for i, body in enumerate(bodies)
        )
        b = SkillBundle("prop", skills)
        import uuid

        target = tmp_path / uuid.uuid4().hex
        store_bundle(b, target)
        loaded = load_bundle(target)
        assert [s.body for s in loaded.skills] == [s.body for s in b.skills]


def test_make_skill_id_is_content_stable():
    a = make_skill("N", "d", "body")
    b = make_skill("N", "d", "body")
    assert a.skill_id == b.skill_id
