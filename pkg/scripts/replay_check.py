#!/usr/bin/env python3
"""Re-execute a persisted run from its recorded config and verify the event
log reproduces byte-identically (timestamps excluded).

Only simulated-evaluator runs are replayable offline.

Usage:
    python scripts/replay_check.py /path/to/run --task fixtures/sim_task.json \
        --bundle fixtures/demo_bundle
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from skillmoo import RuleProposer, SearchConfig, load_bundle, load_task, make_evaluator, run_search  # noqa: E402
from skillmoo.search import canonical_event_bytes  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir")
    parser.add_argument("--task", required=True, help="task spec the run used")
    parser.add_argument("--bundle", required=True, help="seed bundle the run used")
    args = parser.parse_args()

    run_dir = Path(args.run_dir)
    header = json.loads((run_dir / "run.json").read_text())
    cfg = header["config"]
    config = SearchConfig(
        generations=cfg["generations"],
        population=cfg["population"],
        guard_drop_threshold=cfg["guard_drop_threshold"],
        seed=cfg["seed"],
        parent_policy=cfg.get("parent_policy", "best"),
        archive_cap=cfg.get("archive_cap"),
        jobs=cfg.get("jobs", 1),
    )
    task = load_task(args.task)
    bundle = load_bundle(args.bundle)
    if task.evaluator_config.get("kind", "sim") != "sim":
        print("only simulated runs replay deterministically", file=sys.stderr)
        return 2

    with tempfile.TemporaryDirectory(prefix="skillmoo-replay-") as td:
        replay_dir = Path(td) / "replay"
        run_search(task, bundle, config, make_evaluator(task), RuleProposer(),
                   out_dir=replay_dir, label=header.get("label", "skillmoo"))
        original = canonical_event_bytes(run_dir / "events.jsonl")
        replayed = canonical_event_bytes(replay_dir / "events.jsonl")

    if original == replayed:
        count = len(original.splitlines())
        print(f"replay OK: {count} events identical after timestamp canonicalization")
        return 0
    print("replay MISMATCH: event logs differ", file=sys.stderr)
    a, b = original.splitlines(), replayed.splitlines()
    for i, (line_a, line_b) in enumerate(zip(a, b)):
        if line_a != line_b:
            print(f"first divergence at event {i}:", file=sys.stderr)
            print(f"  recorded: {line_a.decode()[:160]}", file=sys.stderr)
            print(f"  replayed: {line_b.decode()[:160]}", file=sys.stderr)
            break
    return 1


if __name__ == "__main__":
    sys.exit(main())
