"""Multi-objective evolutionary optimizer for agent skill bundles.

Evolves an ordered bundle of instruction "skills" against two objectives,
task pass rate (maximized) and evaluation cost (minimized), using guarded
edit proposals, an append-only archive with NSGA-II ranking, and
lexicographic final selection. Runs end-to-end against a deterministic
simulated evaluator, an external verifier command, or a chat-completion
solver.
"""

__version__ = "0.1.0"

from .bundle import (
    EditKind,
    EditOp,
    Skill,
    SkillBundle,
    apply_edit,
    content_equal,
    diff_bundles,
    load_bundle,
    make_skill,
    store_bundle,
)
from .evaluation import (
    EvaluationResult,
    SimEvaluator,
    SimLandscape,
    TaskSpec,
    VerifierEvaluator,
    load_task,
    make_evaluator,
    run_verifier,
    sim_pass_rate,
)
from .moo import (
    FrontAssignment,
    HypervolumeResult,
    ObjectiveVector,
    ZeroBaseline,
    crowding_distance,
    delta_hv_percent,
    dominates,
    hypervolume_2d,
    nondominated_sort,
    nsga2_select,
)
from .proposer import (
    EditProposal,
    FailureEvidence,
    LlmProposer,
    NoValidOperation,
    ParseError,
    ProposerFailure,
    RuleProposer,
    parse_proposal,
    propose,
    propose_llm,
    render_proposal,
)
from .search import (
    Archive,
    Candidate,
    CandidateStatus,
    OptimizerSkill,
    RunRecord,
    SearchConfig,
    canonical_event_bytes,
    default_optimizer_skill,
    final_selection,
    guard,
    run_search,
    select_parent,
)
from .analysis import (
    EfficiencyReport,
    PatternRow,
    RankAssignment,
    RunSet,
    efficiency_report,
    pattern_table,
    scott_knott_esd,
    summarize,
)
from .llm import ModelConfig, UsageLedger, UsageRecord, chat

__all__ = [
    "__version__",
    # bundle
    "Skill", "SkillBundle", "EditOp", "EditKind", "make_skill", "apply_edit",
    "diff_bundles", "content_equal", "load_bundle", "store_bundle",
    # evaluation
    "TaskSpec", "EvaluationResult", "SimLandscape", "SimEvaluator",
    "VerifierEvaluator", "sim_pass_rate", "run_verifier", "load_task",
    "make_evaluator",
    # moo
    "ObjectiveVector", "FrontAssignment", "HypervolumeResult", "dominates",
    "nondominated_sort", "crowding_distance", "nsga2_select",
    "hypervolume_2d", "delta_hv_percent", "ZeroBaseline",
    # proposer
    "EditProposal", "FailureEvidence", "RuleProposer", "LlmProposer",
    "propose", "propose_llm", "parse_proposal", "render_proposal",
    "ProposerFailure", "NoValidOperation", "ParseError",
    # search
    "Candidate", "CandidateStatus", "Archive", "OptimizerSkill",
    "SearchConfig", "RunRecord", "guard", "select_parent", "final_selection",
    "run_search", "default_optimizer_skill", "canonical_event_bytes",
    # analysis
    "RunSet", "RankAssignment", "EfficiencyReport", "PatternRow",
    "summarize", "scott_knott_esd", "efficiency_report", "pattern_table",
    # llm
    "ModelConfig", "UsageLedger", "UsageRecord", "chat",
]
