"""Three-stream trajectory-pooled video descriptors with LLC encoding and a linear SVM.

A deterministic end-to-end action-classification pipeline over grayscale
clips: dense optical flow, temporal templates (decayed flow-difference
accumulation, flow motion history, stacked flow windows), a filter-bank
feature extractor, trajectory-constrained sum pooling, per-stream PCA, a
k-means codebook with locality-constrained coding, PCA whitening, and a
one-vs-rest linear SVM.
"""

from .classifier import EvalResult, SvmModel, evaluate, predict, train_svm
from .config import PipelineConfig, SplitSpec, load_config, parse_config
from .descriptors import (
    PcaModel,
    assemble_stream_tdd,
    assemble_tstdd,
    fit_pca,
    trajectory_pool,
)
from .encoding import (
    Codebook,
    LlcConfig,
    WhitenModel,
    build_codebook,
    llc_encode,
    pca_whiten,
    pool_codes,
)
from .errors import ConfigError, DataError, FormatError, TristreamError
from .featmaps import (
    FeatureMapStack,
    FilterBankConfig,
    channel_normalize,
    filterbank_extract,
    load_feature_maps,
    save_feature_maps,
    spatiotemporal_normalize,
)
from .flow import FlowConfig, FlowField, FlowImage, compute_flow, flow_sequence, quantize_flow
from .pipeline import (
    ExtractResult,
    PipelineModels,
    generate_synthetic_dataset,
    run_ablation,
    run_evaluate,
    run_extract,
)
from .report import RunReport, write_report
from .temporal import (
    MhiConfig,
    OfsdiConfig,
    StackConfig,
    TemporalImage,
    flow_difference,
    ofmhi_sequence,
    ofsdi_sequence,
    ofsdi_to_input,
    ofsdi_update,
    stack_flows,
)
from .tracking import (
    Trajectory,
    TrajectoryConfig,
    TrajectoryPoint,
    extract_trajectories,
    prune_trajectories,
    sample_seed_points,
    track_point,
)
from .video import Frame, SynthSpec, VideoClip, load_frame_sequence, save_clip, synth_generate

__version__ = "0.1.0"
