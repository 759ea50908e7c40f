"""Desk-scale fully convolutional counting model and synthetic scenes."""

from .model import (
    PARAM_NAMES,
    EpochStats,
    ForwardResult,
    ToyModelParams,
    TrainConfig,
    forward,
    init_params,
    load_params,
    loss_and_gradients,
    predict_density,
    sample_gradients,
    save_params,
    train,
)
from .scenes import (
    SceneProfile,
    SyntheticScene,
    generate_scenes,
    scene_seed,
    write_scene_dataset,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    ExperimentRow,
    bs_experiment,
    experiment_csv_rows,
)

__all__ = [
    "PARAM_NAMES",
    "EpochStats",
    "ForwardResult",
    "ToyModelParams",
    "TrainConfig",
    "forward",
    "init_params",
    "load_params",
    "loss_and_gradients",
    "predict_density",
    "sample_gradients",
    "save_params",
    "train",
    "SceneProfile",
    "SyntheticScene",
    "generate_scenes",
    "scene_seed",
    "write_scene_dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "ExperimentRow",
    "bs_experiment",
    "experiment_csv_rows",
]
