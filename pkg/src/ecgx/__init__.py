"""Trainable extraction of interpretable ECG features from raw signals."""

from . import errors
from .evaluation import (
    EvalReport,
    LeadStats,
    PairedSeries,
    compare_external,
    group_average_score,
    lead_stats,
    paired,
    pcc,
    pcc_or_none,
)
from .grouping import (
    GLOBAL_FEATURES,
    GroupingScheme,
    lead_instance_groups,
    random_pairs,
    semantic_clusters,
    semantic_pairs,
)
from .io import (
    STANDARD_LEADS,
    DatasetManifest,
    EcgRecord,
    FeatureTable,
    read_feature_csv,
    read_manifest,
    read_wfdb_record,
    select_split,
    write_feature_csv,
    write_manifest,
    write_wfdb_record,
)
from .nn import Adam, CnnModel, ModelConfig, backward, init_model, mse_loss
from .preprocess import (
    ALL12,
    FOUR_LEAD,
    LEAD_II,
    SIX_LEAD,
    FilterSpec,
    LeadConfig,
    MinMaxScaler,
    bandpass,
    fit_scaler,
    normalize_signal,
    resample,
    select_leads,
)
from .synth import generate_corpus, iter_corpus
from .trainer import (
    TrainConfig,
    TrainedModel,
    linear_baseline,
    predict,
    predict_baseline,
    time_per_1000,
    train,
)

__version__ = "0.1.0"
