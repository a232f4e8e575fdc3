"""Calibrated selective-prediction engine for short-answer grading.

Pipeline pieces, in dependency order: typed datasets, candidate-grade scoring
behind a pluggable backend, temperature calibration, the confidence gate,
ordinal agreement metrics, scale-aware replay retrieval, the two-stage
orchestrator, and an HTTP review service.
"""

from .calibration import (
    CalibratedPrediction,
    CalibrationReport,
    GridSpec,
    ReliabilityBins,
    TemperatureParam,
    apply_temperature,
    compute_ece,
    fit_temperature,
    max_confidence_gap,
    softmax,
)
from .dataset import (
    CorrectionRecord,
    DatasetSplit,
    GradingInstance,
    Rubric,
    load_dataset,
    normalize_scale,
    partition_hil_splits,
    save_dataset,
)
from .gate import (
    CoverageQualityCurve,
    GateDecision,
    OperatingPoint,
    ReliabilityTarget,
    decide,
    select_operating_point,
    sweep_thresholds,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    basic_metrics,
    qwk,
    shift_delta,
    split_report,
)
from .orchestrator import (
    CycleState,
    FineTuneBatch,
    OracleCorrector,
    OrchestratorConfig,
    evaluate_split,
    export_finetune_batch,
    recalibrate,
    run_cycle,
    run_stage1,
    simulate,
)
from .replay import (
    EmbeddingVector,
    LexicalEmbedder,
    ReplayBuffer,
    build_replay_buffer,
    embed_question,
)
from .scoring import (
    LogitVector,
    PromptTemplate,
    ScorerProfile,
    SyntheticScorer,
    enumerate_candidates,
    load_template,
    render_prompt,
    score_instance,
    synthetic_backend,
)

__version__ = "0.1.0"
