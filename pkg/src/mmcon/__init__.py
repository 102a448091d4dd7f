"""Multi-view margin contrastive learning at desk scale."""

from .data import Dataset, FoldAssignment, SyntheticConfig, generate_synthetic, kfold_split, read_dataset, write_dataset
from .experiment import (
    ConfusionCounts,
    MetricsReport,
    Model,
    TrainConfig,
    alignment_uniformity,
    compute_metrics,
    cross_validate,
    evaluate_fold,
    train_fold,
)
from .losses import (
    ContrastiveBatch,
    LossConfig,
    LossValue,
    angle_between,
    compute_loss,
    cosine_similarity,
    loss_and_grad,
    loss_backward,
    margin_con_loss,
    mmcon_loss,
    supcon_loss,
)
from .multiview import MultiViewSample, PairingPolicy, build_contrastive_batch, concat_patient_representation, multiview_similarity
from .numerics import EncoderParams, encoder_backward, encoder_forward, finite_difference_check, init_encoder, sgd_step

__version__ = "0.1.0"
