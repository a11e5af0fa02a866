"""DDPM machinery, the contact and grasp denoisers, and their training losses."""
from .losses import (
    LOSS_WEIGHTS,
    LossError,
    LossWeights,
    consistency_loss,
    ddpm_loss,
    grasp_loss_terms,
    grasp_losses,
    inside_mask,
    loss_weights,
    penetration_loss,
    recon_loss,
    simple_loss,
)
from .networks import ContactDiffuser, GraspDiffuser, NetworkConfig, PointFeatureEncoder, group_neighbors
from .schedule import DiffusionError, NoiseSchedule, make_schedule, predict_x0, q_sample, sample
from .training import (
    ContactDataset,
    GraspDataset,
    ScheduleConfig,
    TrainConfig,
    TrainingError,
    build_model,
    deterministic_mode,
    history_csv,
    load_weights,
    sample_contact,
    sample_grasps,
    save_weights,
    train_contact,
    train_grasp,
)
