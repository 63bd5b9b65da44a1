"""Stage-wise training, batched inference and autolabeling."""
from .autolabel import PSEUDO_SCORE, autolabel
from .config import (
    PROFILES,
    STAGES,
    ConfigError,
    LrSchedule,
    ModelConfig,
    TrainConfig,
    lr_at,
    model_config,
    model_config_from_dict,
    train_config,
)
from .data import load_samples, split_ids
from .models import (
    STAGE_ORDER,
    MapGenModel,
    StageDependencyError,
    load_model,
    read_sidecar,
    required_stages,
    save_model,
)
from .pipeline import Inference, SegOutput, enrich, infer, regress_boxes, run_segmentation
from .stages import TrainingReport, epoch_rng, metrics_path, run_stage, state_dir
