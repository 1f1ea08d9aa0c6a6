"""Autoencoder hybrid beamformer (DNHB) with hand-written gradients."""

from .checkpoint import load_model, model_from_dict, model_to_dict, save_model
from .layers import (
    ComplexDenseLayer,
    PhaseShiftLayer,
    channel_layer_backward,
    channel_layer_forward,
    complex_dense_backward,
    complex_dense_forward,
    concat_users,
    phase_layer_backward,
    phase_layer_forward,
    power_normalize_backward,
    power_normalize_forward,
    split_users,
)
from .model import (
    DnhbModel,
    ExtractedMatrices,
    RxChain,
    StaleCacheError,
    UnsupportedModeError,
    backward,
    build_model,
    extract_matrices,
    forward,
    loss,
    loss_gradient,
)
from .train import Adam, Sgd, TrainConfig, TrainingDiverged, TrainingReport, Trainer, sample_symbols, train, train_with_restarts
