"""Client dataset construction, non-IID skew, and on-disk shards.

Each simulated sensor gets ``frames_per_subcat`` frames of every one of
the nine scenarios. Label skew comes from a per-client radar-type
mixture (the probability of drawing the short-pulse vs the long-pulse
emitter); feature skew comes from a per-client commercial power offset.
Every client's frames are split 80/10/10 into train/val/test, stratified
by subcategory, and the global test set is the union of the per-client
test shards.

All randomness flows from one master seed: each frame's spec carries its
own derived seed, so generation order (and any worker parallelism) never
changes a single byte of the output.

On disk a dataset is a directory with ``manifest.json``, one binary
shard per client and a global-test shard. A shard is::

    magic | u32 header length | header JSON | payload

where the header describes per-frame records plus the dtype/shape/offset
of each payload array (little-endian), and the manifest records the full
generating configuration and the SHA-256 of every shard file.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from .frames import (
    ALL_SUBCATEGORIES,
    ChannelParams,
    Frame,
    FrameSpec,
    Subcategory,
    gen_frame,
)
from .signals import RadarType

__all__ = [
    "ClientDataset",
    "ChecksumError",
    "DEFAULT_MIXTURES",
    "DEFAULT_POWER_JITTER_DB",
    "plan_client_frames",
    "build_client_datasets",
    "frames_to_arrays",
    "save_dataset",
    "load_dataset",
]

SHARD_MAGIC = b"FEDRADAR-SHARD-1\n"
MANIFEST_NAME = "manifest.json"
GLOBAL_TEST_SHARD = "global_test.bin"

# Heavily skewed radar-type mixtures for five clients, plus a small
# per-client commercial power offset (dB) as feature skew.
DEFAULT_MIXTURES = ((1.0, 0.0), (0.8, 0.2), (0.5, 0.5), (0.2, 0.8), (0.0, 1.0))
DEFAULT_POWER_JITTER_DB = (2.0, 1.0, 0.0, -1.0, -2.0)

SPLIT_NAMES = ("train", "val", "test")


class ChecksumError(RuntimeError):
    pass


@dataclass
class ClientDataset:
    """One sensor's frames, already split, plus its radar-type mixture."""

    esc_id: int
    train: list[Frame]
    val: list[Frame]
    test: list[Frame]
    radar_mixture: tuple[float, float]

    @property
    def num_frames(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)

    def split(self, name: str) -> list[Frame]:
        return getattr(self, name)


def _frame_seed(master_seed: int, esc_id: int, subcat_index: int, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, esc_id, subcat_index, index])
    return int(ss.generate_state(1)[0])


def plan_client_frames(
    num_clients: int,
    frames_per_subcat: int,
    mixtures,
    power_jitter_db,
    master_seed: int,
    sinr_db_range: tuple[float, float] = (20.0, 26.0),
) -> list[list[tuple[FrameSpec, str]]]:
    """Lay out every frame spec and its split before any rendering.

    Returns, per client, a list of (spec, split) pairs. Splits are
    80/10/10 stratified per subcategory, assigned by a seeded shuffle of
    each subcategory's frame indices.
    """
    mixtures = [tuple(float(x) for x in row) for row in mixtures]
    power_jitter_db = [float(x) for x in power_jitter_db]
    if num_clients < 1:
        raise ValueError("need at least one client")
    if len(mixtures) != num_clients or len(power_jitter_db) != num_clients:
        raise ValueError("mixtures and power_jitter_db must have one row per client")
    for row in mixtures:
        if len(row) != 2 or abs(sum(row) - 1.0) > 1e-9 or min(row) < 0:
            raise ValueError(f"mixture row {row} must be two non-negative numbers summing to 1")
    if frames_per_subcat < 1:
        raise ValueError("frames_per_subcat must be positive")
    if frames_per_subcat < 10:
        warnings.warn(
            f"frames_per_subcat={frames_per_subcat} < 10: 80/10/10 split fractions degrade",
            stacklevel=2,
        )

    n_test = max(1, round(0.1 * frames_per_subcat)) if frames_per_subcat >= 3 else 0
    n_val = n_test
    plans: list[list[tuple[FrameSpec, str]]] = []
    for k in range(num_clients):
        rng = np.random.default_rng([master_seed, 7, k])
        client_plan: list[tuple[FrameSpec, str]] = []
        for s_idx, subcat in enumerate(ALL_SUBCATEGORIES):
            perm = rng.permutation(frames_per_subcat)
            split_of = {}
            for rank, idx in enumerate(perm):
                if rank < n_test:
                    split_of[idx] = "test"
                elif rank < n_test + n_val:
                    split_of[idx] = "val"
                else:
                    split_of[idx] = "train"
            for i in range(frames_per_subcat):
                radar_type = None
                if subcat.has_radar:
                    radar_type = RadarType.TYPE1 if rng.random() < mixtures[k][0] else RadarType.TYPE2
                spec = FrameSpec(
                    subcategory=subcat,
                    radar_type=radar_type,
                    esc_id=k,
                    sinr_db=float(rng.uniform(*sinr_db_range)),
                    seed=_frame_seed(master_seed, k, s_idx, i),
                    comm_power_offset_db=power_jitter_db[k],
                )
                client_plan.append((spec, split_of[i]))
        plans.append(client_plan)
    return plans


def _render_one(args) -> Frame:
    spec, channel = args
    return gen_frame(spec, channel)


def build_client_datasets(
    num_clients: int,
    frames_per_subcat: int,
    mixtures=DEFAULT_MIXTURES,
    power_jitter_db=DEFAULT_POWER_JITTER_DB,
    master_seed: int = 0,
    channel: ChannelParams = ChannelParams(),
    sinr_db_range: tuple[float, float] = (20.0, 26.0),
    workers: int = 0,
) -> tuple[list[ClientDataset], list[Frame]]:
    """Render every client's frames; returns (clients, global test set).

    ``workers > 1`` renders frames in a process pool; results are
    identical to a serial run because each spec carries its own seed.
    """
    plans = plan_client_frames(
        num_clients, frames_per_subcat, mixtures, power_jitter_db, master_seed, sinr_db_range
    )
    flat = [(spec, channel) for plan in plans for spec, _ in plan]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rendered = list(pool.map(_render_one, flat, chunksize=16))
    else:
        rendered = [gen_frame(spec, channel) for spec, channel in flat]

    clients: list[ClientDataset] = []
    cursor = 0
    for k, plan in enumerate(plans):
        buckets = {name: [] for name in SPLIT_NAMES}
        for (_, split), frame in zip(plan, rendered[cursor : cursor + len(plan)]):
            buckets[split].append(frame)
        cursor += len(plan)
        clients.append(
            ClientDataset(
                esc_id=k,
                train=buckets["train"],
                val=buckets["val"],
                test=buckets["test"],
                radar_mixture=tuple(mixtures[k]),
            )
        )
    global_test = [f for c in clients for f in c.test]
    return clients, global_test


def frames_to_arrays(frames) -> tuple[np.ndarray, np.ndarray]:
    """Stack frames into (images [N,3,H,W] float64, labels [N] int64)."""
    if not frames:
        raise ValueError("empty frame list")
    x = np.stack([f.spectrogram for f in frames])
    y = np.array([f.label for f in frames], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# Shard and manifest I/O
# ---------------------------------------------------------------------------


def _frame_record(frame: Frame, split: str) -> dict:
    spec = frame.spec
    return {
        "subcategory": spec.subcategory.value,
        "radar_type": spec.radar_type.value if spec.radar_type else None,
        "esc_id": spec.esc_id,
        "sinr_db": spec.sinr_db,
        "seed": spec.seed,
        "comm_power_offset_db": spec.comm_power_offset_db,
        "label": frame.label,
        "achieved_sinr_db": frame.achieved_sinr_db,
        "split": split,
    }


def _record_to_frame(rec: dict, image, radar_support, comm_support) -> Frame:
    spec = FrameSpec(
        subcategory=Subcategory(rec["subcategory"]),
        radar_type=RadarType(rec["radar_type"]) if rec["radar_type"] else None,
        esc_id=rec["esc_id"],
        sinr_db=rec["sinr_db"],
        seed=rec["seed"],
        comm_power_offset_db=rec["comm_power_offset_db"],
    )
    return Frame(
        spectrogram=image,
        label=rec["label"],
        spec=spec,
        radar_support=radar_support,
        comm_support=comm_support,
        achieved_sinr_db=rec["achieved_sinr_db"],
    )


def _write_shard(path, frames_with_splits) -> str:
    """Write one shard; returns the file's SHA-256 hex digest."""
    frames = [f for f, _ in frames_with_splits]
    images = np.stack([f.spectrogram for f in frames]).astype("<f8")
    radar = np.stack([f.radar_support for f in frames]).astype("|u1")
    comm = np.stack([f.comm_support for f in frames]).astype("|u1")
    payload = images.tobytes() + radar.tobytes() + comm.tobytes()
    header = {
        "format_version": 1,
        "frame_count": len(frames),
        "records": [_frame_record(f, split) for f, split in frames_with_splits],
        "arrays": {
            "spectrograms": {"dtype": "<f8", "shape": list(images.shape), "offset": 0},
            "radar_support": {"dtype": "|u1", "shape": list(radar.shape), "offset": images.nbytes},
            "comm_support": {
                "dtype": "|u1",
                "shape": list(comm.shape),
                "offset": images.nbytes + radar.nbytes,
            },
        },
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SHARD_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        digest.update(f.read())
    return digest.hexdigest()


def _read_shard(path):
    with open(path, "rb") as f:
        magic = f.read(len(SHARD_MAGIC))
        if magic != SHARD_MAGIC:
            raise ValueError(f"{path}: not a dataset shard (bad magic)")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"{path}: unsupported shard version")
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")

    arrays = {}
    for name, meta in header["arrays"].items():
        shape = tuple(meta["shape"])
        dt = np.dtype(meta["dtype"])
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(
            payload, dtype=dt, count=count, offset=meta["offset"]
        ).reshape(shape)

    frames_with_splits = []
    for i, rec in enumerate(header["records"]):
        frame = _record_to_frame(
            rec,
            arrays["spectrograms"][i].astype(np.float64),
            arrays["radar_support"][i].astype(bool),
            arrays["comm_support"][i].astype(bool),
        )
        frames_with_splits.append((frame, rec["split"]))
    return frames_with_splits


def save_dataset(path, clients, global_test, generation_config: dict) -> None:
    """Write shards plus a manifest with config and per-file checksums."""
    import os

    os.makedirs(path, exist_ok=True)
    shards = {}
    for client in clients:
        pairs = (
            [(f, "train") for f in client.train]
            + [(f, "val") for f in client.val]
            + [(f, "test") for f in client.test]
        )
        name = f"client_{client.esc_id:02d}.bin"
        shards[name] = {
            "sha256": _write_shard(os.path.join(path, name), pairs),
            "esc_id": client.esc_id,
            "radar_mixture": list(client.radar_mixture),
            "frame_count": client.num_frames,
        }
    shards[GLOBAL_TEST_SHARD] = {
        "sha256": _write_shard(os.path.join(path, GLOBAL_TEST_SHARD), [(f, "test") for f in global_test]),
        "esc_id": None,
        "radar_mixture": None,
        "frame_count": len(global_test),
    }
    manifest = {
        "format_version": 1,
        "generation_config": generation_config,
        "counts": {
            "total_frames": sum(c.num_frames for c in clients),
            "global_test_frames": len(global_test),
            "per_client": {str(c.esc_id): c.num_frames for c in clients},
        },
        "shards": shards,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def load_dataset(path):
    """Read a dataset directory back; returns (clients, global_test, manifest)."""
    import os

    with open(os.path.join(path, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported manifest version")

    for name, meta in manifest["shards"].items():
        digest = hashlib.sha256()
        with open(os.path.join(path, name), "rb") as f:
            digest.update(f.read())
        if digest.hexdigest() != meta["sha256"]:
            raise ChecksumError(f"{name}: shard checksum does not match manifest")

    clients = []
    global_test = []
    for name in sorted(manifest["shards"]):
        meta = manifest["shards"][name]
        pairs = _read_shard(os.path.join(path, name))
        if name == GLOBAL_TEST_SHARD:
            global_test = [f for f, _ in pairs]
            continue
        buckets = {s: [] for s in SPLIT_NAMES}
        for frame, split in pairs:
            buckets[split].append(frame)
        clients.append(
            ClientDataset(
                esc_id=meta["esc_id"],
                train=buckets["train"],
                val=buckets["val"],
                test=buckets["test"],
                radar_mixture=tuple(meta["radar_mixture"]),
            )
        )
    clients.sort(key=lambda c: c.esc_id)
    return clients, global_test, manifest
