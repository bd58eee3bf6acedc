"""Black-box memorization and privacy audit toolkit for code-sequence models."""

from .audits import (
    DEFAULT_SETUPS,
    FlaggedPrompt,
    PerturbationCurve,
    TestRunConfig,
    t1_trajectory,
    t2_sensitivity,
    t3_probing,
    t4_membership,
    t5_perturbation,
    t6_subpopulation,
)
from .corpus import (
    CodeToken,
    Prompt,
    PromptSetup,
    SensitiveCategory,
    Trajectory,
    build_prompt,
    contains_category,
    event,
    gap,
    parse_cohort,
    serialize_cohort,
)
from .embeddings import EmbeddingTable, load_table
from .metrics import (
    ScoredLabels,
    auprc,
    auroc,
    code_frequency_correlation,
    min_k_score,
    threshold_metrics,
)
from .models import (
    Capabilities,
    EchoModel,
    EmbedRequest,
    GenRequest,
    GenResponse,
    ModelHandle,
    ReplayModel,
    ToyModel,
    embed,
    generate,
    logprobs,
    model_from_uri,
)
from .probe import ProbeDataset, ProbeModel, predict_proba, probe_sweep, train_probe
from .toymodel import ToyConfig, digit_probs, toy_embed, toy_generate, toy_logprobs
from .transport import (
    TimeWeightConfig,
    TransportPlan,
    TransportProblem,
    build_problem,
    sequence_emd,
    solve_exact,
    solve_sinkhorn,
    to_timed_seq,
)

__version__ = "0.1.0"
