"""Re-identification risk assessment for speech-embedding datasets.

Simulates a marketer attack against a de-identified set of speaker
embeddings: train a PLDA verification backend on known speakers, calibrate
an acceptance threshold with a detection-cost criterion, match unknown
probes against the known set, and report acceptance statistics as a
function of search-space size, overlap, and speech task.
"""

from .attack import (
    AttackResult,
    ExperimentSplit,
    MatchRecord,
    SplitError,
    SplitSpec,
    TrialCounts,
    count_outcomes,
    parse_variant,
    run_attack,
    run_sweep,
    sample_split,
)
from .dataio import (
    EmbeddingDataset,
    EmbeddingMatrix,
    RecordingRecord,
    Task,
    assemble_dataset,
    load_dataset,
    load_embeddings,
    load_manifest,
    write_embeddings,
    write_manifest,
)
from .metrics import (
    GroupSummary,
    RunRow,
    StatResult,
    aggregate,
    emit_report,
    far,
    load_runs_csv,
    pearson_r,
    precision,
    t_test_r,
)
from .plda import (
    EnrollmentVector,
    LlrScorer,
    PldaModel,
    PreprocessParams,
    apply_preprocess,
    apply_preprocess_batch,
    enroll_speaker,
    fit_preprocess,
    load_model,
    save_model,
    score_matrix,
    score_pair,
    train_plda,
)
from .synth import SampledWorld, TaskEffect, WorldParams, oracle_llr, sample_world
from .thresholding import (
    CalibrationError,
    DcfConfig,
    ThresholdEstimate,
    ThresholdProtocol,
    TrialScores,
    averaged_threshold,
    dcf,
    eer_threshold,
    min_dcf_threshold,
    rates_at,
)

__version__ = "0.1.0"
