"""Training orchestration: local-only, centralized, FedAvg and FedPer.

A federated round is broadcast -> local training -> uplink -> weighted
aggregation -> evaluation. FedAvg exchanges the full parameter vector;
FedPer exchanges only the shared base, so private head bytes never enter
a message. Aggregation weights are gamma_k = n_k / sum_j n_j, fixed from
the per-client training set sizes.

Messages are in-process byte buffers (magic, sender, round, layout
table, float64 payload) so tests can inspect exactly what would cross
the network. Reported payload sizes follow the accounting formula
``shared parameter count * bytes_per_param + header`` with a
configurable wire width (default 4 bytes/parameter, modelling a float32
uplink); the in-process buffers themselves stay float64 so that
zero-learning-rate round trips are bit-exact.

Training is deterministic given the seeds in :class:`TrainSettings`:
model initialization, every epoch's shuffle and the aggregation order
are all derived from them.
"""

from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, backward, softmax_cross_entropy, zero_grads
from .dataset import ClientDataset, frames_to_arrays
from .metrics import evaluate_arrays, pooled_confusion, recall
from .model import (
    PartitionedModel,
    ResidualCnnConfig,
    WeightVector,
    build_model,
    flatten_base,
    flatten_params,
    load_weights,
)

__all__ = [
    "Paradigm",
    "TrainSettings",
    "ClientState",
    "ServerState",
    "RoundReport",
    "Message",
    "MESSAGE_HEADER_BYTES",
    "derive_seed",
    "make_clients",
    "make_server",
    "client_local_update",
    "server_aggregate",
    "run_federated",
    "run_centralized",
    "run_local_only",
    "pool_clients",
    "payload_bytes",
]

MESSAGE_MAGIC = b"FEDRADAR-MSG-1\n"
# Fixed per-message header in the accounting formula: magic + sender,
# round, parameter count and a 32-bit layout digest.
MESSAGE_HEADER_BYTES = 32


class Paradigm(enum.Enum):
    LOCAL_ONLY = "local_only"
    CENTRALIZED = "centralized"
    FEDAVG = "fedavg"
    FEDPER = "fedper"


@dataclass
class TrainSettings:
    """Optimization and round-loop knobs, all defaults mirroring the study."""

    rounds: int = 150
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.001
    target_recall: float = 0.99
    bytes_per_param: int = 4
    seed: int = 1


@dataclass
class ClientState:
    """One sensor's model, optimizer and data."""

    esc_id: int
    model: PartitionedModel
    optimizer: AdamState | None
    dataset: ClientDataset
    n_k: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


@dataclass
class ServerState:
    """Aggregator state across rounds."""

    global_base: WeightVector
    gammas: np.ndarray
    round: int = 0
    target_recall: float = 0.99
    max_rounds: int = 150
    history: list = field(default_factory=list)


@dataclass
class RoundReport:
    """Per-round metrics and communication accounting."""

    round: int
    per_client_val_accuracy: list[float]
    per_client_recall_h0: list[float]
    per_client_recall_h1: list[float]
    global_val_recall_h1: float
    uplink_bytes: int
    downlink_bytes: int
    wall_time_s: float


@dataclass
class Message:
    """An in-process stand-in for one network transfer."""

    sender: int  # esc id, or -1 for the server
    round: int
    weights: WeightVector

    def to_bytes(self) -> bytes:
        layout_blob = b"".join(
            struct.pack("<IQQ", pid, off, ln) for pid, off, ln in self.weights.layout
        )
        head = MESSAGE_MAGIC + struct.pack(
            "<iIIxxxxx", self.sender, self.round, len(self.weights.layout)
        )
        return head + layout_blob + self.weights.values.astype("<f8").tobytes()


def derive_seed(*keys: int) -> int:
    """Stable derived seed from a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _arrays_for(dataset: ClientDataset):
    x_train, y_train = frames_to_arrays(dataset.train)
    x_val, y_val = frames_to_arrays(dataset.val)
    return x_train, y_train, x_val, y_val


def make_clients(datasets, config: ResidualCnnConfig, settings: TrainSettings) -> list[ClientState]:
    """Build one client per dataset; each gets an independent model init."""
    clients = []
    for ds in datasets:
        if not ds.train:
            raise ValueError(f"client {ds.esc_id} has an empty train split")
        model = build_model(config, seed=derive_seed(settings.seed, 100 + ds.esc_id))
        x_train, y_train, x_val, y_val = _arrays_for(ds)
        clients.append(
            ClientState(
                esc_id=ds.esc_id,
                model=model,
                optimizer=None,
                dataset=ds,
                n_k=len(ds.train),
                x_train=x_train,
                y_train=y_train,
                x_val=x_val,
                y_val=y_val,
            )
        )
    return clients


def make_server(clients, config: ResidualCnnConfig, settings: TrainSettings,
                paradigm: Paradigm) -> ServerState:
    """Initialize the global weights and the aggregation gammas."""
    counts = np.array([c.n_k for c in clients], dtype=np.float64)
    gammas = counts / counts.sum()
    seed_model = build_model(config, seed=derive_seed(settings.seed, 1))
    if paradigm == Paradigm.FEDPER:
        global_vec = flatten_base(seed_model)
    elif paradigm == Paradigm.FEDAVG:
        global_vec = flatten_params(seed_model)
    else:
        raise ValueError(f"paradigm {paradigm.value} has no server")
    return ServerState(
        global_base=global_vec,
        gammas=gammas,
        round=0,
        target_recall=settings.target_recall,
        max_rounds=settings.rounds,
    )


def train_epochs(
    model: PartitionedModel,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    shuffle_seed: int,
) -> tuple[AdamState, float]:
    """Minibatch Adam over the given arrays; returns (state, last mean loss)."""
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    state = AdamState.for_params(model.parameters, learning_rate=learning_rate)
    rng = np.random.default_rng(shuffle_seed)
    n = x.shape[0]
    mean_loss = float("nan")
    for _ in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            logits = model.forward(Tensor(x[idx]))
            loss = softmax_cross_entropy(logits, y[idx])
            zero_grads(model.parameters)
            backward(loss)
            adam_step(model.parameters, state)
            losses.append(loss.item())
        mean_loss = float(np.mean(losses))
    return state, mean_loss


def client_local_update(
    client: ClientState,
    incoming_base: WeightVector | None,
    epochs: int,
    batch_size: int,
    *,
    learning_rate: float = 0.001,
    shuffle_seed: int = 0,
    share_ids=None,
) -> WeightVector:
    """One client's round: load shared weights, train, return its share.

    The incoming vector's layout decides what is loaded (full model for
    FedAvg, base only for FedPer) and, unless ``share_ids`` overrides
    it, what is shared back. The optimizer restarts each round; head
    parameters are only ever changed by training itself.
    """
    if incoming_base is not None:
        load_weights(client.model, incoming_base)
        if share_ids is None:
            share_ids = frozenset(pid for pid, _, _ in incoming_base.layout)
    if share_ids is None:
        share_ids = frozenset(p.id for p in client.model.parameters)

    client.optimizer, _ = train_epochs(
        client.model,
        client.x_train,
        client.y_train,
        epochs,
        batch_size,
        learning_rate,
        shuffle_seed,
    )
    return flatten_params(client.model, share_ids)


def server_aggregate(updates, gammas) -> WeightVector:
    """Dataset-size-weighted average of aligned weight vectors."""
    if not updates:
        raise ValueError("no updates to aggregate")
    gam = np.asarray(gammas, dtype=np.float64)
    if gam.shape != (len(updates),):
        raise ValueError("one gamma per update required")
    if abs(gam.sum() - 1.0) > 1e-9:
        raise ValueError(f"gammas sum to {gam.sum():.12f}, expected 1")
    layout = updates[0].layout
    for u in updates[1:]:
        if u.layout != layout:
            raise ValueError("weight vector layouts differ across updates")
    stacked = np.stack([u.values for u in updates])
    return WeightVector(values=gam @ stacked, layout=layout)


def _eval_client(model: PartitionedModel, x: np.ndarray, y: np.ndarray):
    return evaluate_arrays(model, x, y)


def run_federated(
    clients: list[ClientState],
    server: ServerState,
    paradigm: Paradigm,
    settings: TrainSettings,
    message_log: list[Message] | None = None,
) -> list[RoundReport]:
    """Run rounds until the recall target is beaten or rounds run out.

    Per round: broadcast the global vector, train every client locally,
    aggregate the uplinked vectors, then evaluate. FedPer reports each
    client's personalized model on its own validation split and pools
    the per-client confusions into the global recall; FedAvg evaluates
    the aggregated model. ``message_log``, when given, captures every
    uplink message for inspection.
    """
    if paradigm not in (Paradigm.FEDAVG, Paradigm.FEDPER):
        raise ValueError("run_federated handles fedavg and fedper only")
    if not clients:
        raise ValueError("no clients")

    share_count = server.global_base.num_params
    per_message = payload_message_bytes(share_count, settings.bytes_per_param)
    eval_model = build_model(clients[0].model.config, seed=0) if paradigm == Paradigm.FEDAVG else None

    reports: list[RoundReport] = []
    for t in range(1, server.max_rounds + 1):
        t0 = time.perf_counter()
        server.round = t
        updates = []
        for client in clients:
            incoming = server.global_base.copy()
            update = client_local_update(
                client,
                incoming,
                settings.local_epochs,
                settings.batch_size,
                learning_rate=settings.learning_rate,
                shuffle_seed=derive_seed(settings.seed, 2, t, client.esc_id),
            )
            if message_log is not None:
                message_log.append(Message(sender=client.esc_id, round=t, weights=update))
            updates.append(update)

        server.global_base = server_aggregate(updates, server.gammas)

        accs, rec0s, rec1s, cms = [], [], [], []
        for client in clients:
            if paradigm == Paradigm.FEDPER:
                report = _eval_client(client.model, client.x_val, client.y_val)
            else:
                load_weights(eval_model, server.global_base)
                report = _eval_client(eval_model, client.x_val, client.y_val)
            accs.append(report.accuracy)
            rec0s.append(report.recall_h0)
            rec1s.append(report.recall_h1)
            cms.append(report.confusion)
        global_recall = recall(pooled_confusion(cms))

        report = RoundReport(
            round=t,
            per_client_val_accuracy=accs,
            per_client_recall_h0=rec0s,
            per_client_recall_h1=rec1s,
            global_val_recall_h1=global_recall,
            uplink_bytes=len(clients) * per_message,
            downlink_bytes=len(clients) * per_message,
            wall_time_s=time.perf_counter() - t0,
        )
        reports.append(report)
        server.history.append(report)
        if global_recall > server.target_recall:
            break
    return reports


def pool_clients(clients_or_datasets) -> ClientDataset:
    """Union of all clients' splits, as one dataset (esc_id -1)."""
    datasets = [c.dataset if isinstance(c, ClientState) else c for c in clients_or_datasets]
    return ClientDataset(
        esc_id=-1,
        train=[f for d in datasets for f in d.train],
        val=[f for d in datasets for f in d.val],
        test=[f for d in datasets for f in d.test],
        radar_mixture=(0.5, 0.5),
    )


def run_centralized(
    clients: list[ClientState],
    settings: TrainSettings,
) -> tuple[PartitionedModel, list[RoundReport]]:
    """Train one model on the pooled train split; evaluate per client.

    The per-epoch report mirrors the federated one (round = epoch, zero
    communication) and the loop stops early once the pooled validation
    recall beats the target.
    """
    if not clients:
        raise ValueError("empty client pool")
    x = np.concatenate([c.x_train for c in clients])
    y = np.concatenate([c.y_train for c in clients])
    model = build_model(clients[0].model.config, seed=derive_seed(settings.seed, 3))
    opt = AdamState.for_params(model.parameters, learning_rate=settings.learning_rate)

    reports = []
    for epoch in range(1, settings.rounds + 1):
        t0 = time.perf_counter()
        _train_one_epoch(model, x, y, opt, settings.batch_size,
                         derive_seed(settings.seed, 4, epoch))
        accs, rec0s, rec1s, cms = [], [], [], []
        for client in clients:
            rep = _eval_client(model, client.x_val, client.y_val)
            accs.append(rep.accuracy)
            rec0s.append(rep.recall_h0)
            rec1s.append(rep.recall_h1)
            cms.append(rep.confusion)
        global_recall = recall(pooled_confusion(cms))
        reports.append(
            RoundReport(
                round=epoch,
                per_client_val_accuracy=accs,
                per_client_recall_h0=rec0s,
                per_client_recall_h1=rec1s,
                global_val_recall_h1=global_recall,
                uplink_bytes=0,
                downlink_bytes=0,
                wall_time_s=time.perf_counter() - t0,
            )
        )
        if global_recall > settings.target_recall:
            break
    return model, reports


def _train_one_epoch(model, x, y, state, batch_size, shuffle_seed):
    rng = np.random.default_rng(shuffle_seed)
    perm = rng.permutation(x.shape[0])
    for start in range(0, x.shape[0], batch_size):
        idx = perm[start : start + batch_size]
        logits = model.forward(Tensor(x[idx]))
        loss = softmax_cross_entropy(logits, y[idx])
        zero_grads(model.parameters)
        backward(loss)
        adam_step(model.parameters, state)


def run_local_only(
    clients: list[ClientState],
    settings: TrainSettings,
) -> tuple[dict[int, PartitionedModel], list[RoundReport]]:
    """Independent per-client training; no communication at all."""
    models: dict[int, PartitionedModel] = {}
    states = {}
    for client in clients:
        models[client.esc_id] = client.model
        states[client.esc_id] = AdamState.for_params(
            client.model.parameters, learning_rate=settings.learning_rate
        )

    reports = []
    for epoch in range(1, settings.rounds + 1):
        t0 = time.perf_counter()
        accs, rec0s, rec1s, cms = [], [], [], []
        for client in clients:
            _train_one_epoch(
                client.model,
                client.x_train,
                client.y_train,
                states[client.esc_id],
                settings.batch_size,
                derive_seed(settings.seed, 5, epoch, client.esc_id),
            )
            rep = _eval_client(client.model, client.x_val, client.y_val)
            accs.append(rep.accuracy)
            rec0s.append(rep.recall_h0)
            rec1s.append(rep.recall_h1)
            cms.append(rep.confusion)
        reports.append(
            RoundReport(
                round=epoch,
                per_client_val_accuracy=accs,
                per_client_recall_h0=rec0s,
                per_client_recall_h1=rec1s,
                global_val_recall_h1=recall(pooled_confusion(cms)),
                uplink_bytes=0,
                downlink_bytes=0,
                wall_time_s=time.perf_counter() - t0,
            )
        )
    return models, reports


def payload_message_bytes(shared_count: int, bytes_per_param: int) -> int:
    return shared_count * bytes_per_param + MESSAGE_HEADER_BYTES


def payload_bytes(model: PartitionedModel, paradigm: Paradigm,
                  bytes_per_param: int = 4) -> tuple[int, int]:
    """(uplink, downlink) bytes per client per round under a paradigm.

    FedAvg ships the full vector both ways; FedPer ships the base only.
    Local-only and centralized training exchange no model parameters
    (centralized pools raw data out of band instead).
    """
    total, base, _ = _counts(model)
    if paradigm == Paradigm.FEDAVG:
        n = total
    elif paradigm == Paradigm.FEDPER:
        n = base
    else:
        return 0, 0
    per_message = payload_message_bytes(n, bytes_per_param)
    return per_message, per_message


def _counts(model: PartitionedModel):
    from .model import count_parameters

    return count_parameters(model)
