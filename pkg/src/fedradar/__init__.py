"""fedradar: federated spectrogram-based radar interference detection.

A desk-scale workbench that synthesizes labeled shared-spectrum
spectrograms with controlled non-IID skew across simulated sensors,
trains a base/head-partitioned residual CNN under four paradigms
(local-only, centralized, FedAvg, FedPer) on a from-scratch float64
autodiff engine, and evaluates recall, cross-domain generalization and
communication payload.
"""

from .autodiff import AdamState, Parameter, Role, Tensor
from .config import ExperimentConfig
from .dataset import ClientDataset, build_client_datasets, load_dataset, save_dataset
from .frames import ChannelParams, Frame, FrameSpec, Subcategory, gen_frame
from .federated import (
    Paradigm,
    TrainSettings,
    payload_bytes,
    run_centralized,
    run_federated,
    run_local_only,
    server_aggregate,
)
from .metrics import ConfusionMatrix, accuracy, cross_domain_eval, evaluate_model, recall
from .model import (
    PartitionedModel,
    ResidualCnnConfig,
    WeightVector,
    build_model,
    count_parameters,
    flatten_base,
    load_base,
    load_checkpoint,
    save_checkpoint,
)
from .signals import CommProfile, RadarProfile, RadarType, mix_at_sinr, stft_magnitude

__version__ = "0.1.0"
