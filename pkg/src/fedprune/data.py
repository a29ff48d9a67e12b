"""Desk-scale federated datasets: a synthetic generator, an IDX reader and
label-shard (non-IID) partitioning."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .client import ClientState
from .errors import ConfigError, IngestionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(eq=False)
class FederatedDataset:
    client_x: list
    client_y: list
    client_indices: list  # indices into the partitioned source arrays
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    image_shape: tuple

    @property
    def num_clients(self) -> int:
        return len(self.client_y)

    def clients(self) -> list[ClientState]:
        return [ClientState(i, x, y) for i, (x, y) in enumerate(zip(self.client_x, self.client_y))]

    @property
    def train_size(self) -> int:
        return sum(len(y) for y in self.client_y)


def partition_label_shards(x, y, clients: int, shards_per_client: int, seed: int,
                           test_size: int = 0, num_classes: int | None = None) -> FederatedDataset:
    """Hold out ``test_size`` random samples, sort the rest by label, cut into
    ``clients * shards_per_client`` contiguous shards and deal them out at random."""
    x, y = np.asarray(x), np.asarray(y)
    n = len(y)
    if clients < 1 or shards_per_client < 1:
        raise ConfigError("clients and shards_per_client must be positive")
    n_shards = clients * shards_per_client
    if test_size < 0 or n - test_size < n_shards:
        raise ConfigError(f"{n} samples cannot fill {n_shards} shards after holding out {test_size} for test")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx, train_idx = np.sort(perm[:test_size]), perm[test_size:]
    train_idx = train_idx[np.argsort(y[train_idx], kind="stable")]
    shards = np.array_split(train_idx, n_shards)
    assignment = rng.permutation(n_shards).reshape(clients, shards_per_client)
    idx = [np.sort(np.concatenate([shards[s] for s in row])) for row in assignment]
    L = int(num_classes if num_classes is not None else y.max() + 1)
    return FederatedDataset([x[i] for i in idx], [y[i] for i in idx], idx, x[test_idx], y[test_idx],
                            L, tuple(x.shape[1:]))


def _templates(classes, image_shape, rng, smooth):
    t = rng.normal(size=(classes,) + tuple(image_shape))
    t = np.stack([gaussian_filter(ti, sigma=(0,) + (smooth,) * (ti.ndim - 1)) for ti in t])
    t -= t.mean(axis=tuple(range(1, t.ndim)), keepdims=True)
    t /= t.std(axis=tuple(range(1, t.ndim)), keepdims=True) + 1e-12
    return t


def generate_synthetic(classes: int, clients: int, samples_per_client: int, image_shape=(1, 16, 16),
                       seed: int = 0, noise: float = 1.0, shards_per_client: int = 2,
                       test_samples: int = 500, smooth: float = 1.5) -> FederatedDataset:
    """Each class is a smoothed random template; samples add Gaussian pixel noise.

    Labels are balanced, then dealt to clients by label shards so each client
    sees a skewed class mix.
    """
    if classes < 2 or clients < 1 or samples_per_client < 1:
        raise ConfigError("need classes >= 2, clients >= 1, samples_per_client >= 1")
    n = clients * samples_per_client
    if n < clients * shards_per_client:
        raise ConfigError(f"{samples_per_client} samples per client cannot form {shards_per_client} shards")
    rng = np.random.default_rng(seed)
    templates = _templates(classes, image_shape, rng, smooth)

    def draw(count):
        labels = np.arange(count) % classes
        imgs = templates[labels] + noise * rng.normal(size=(count,) + tuple(image_shape))
        return imgs.astype(np.float32), labels.astype(np.int64)

    x, y = draw(n)
    tx, ty = draw(test_samples)
    ds = partition_label_shards(x, y, clients, shards_per_client, seed=seed + 1, test_size=0,
                                num_classes=classes)
    ds.test_x, ds.test_y = tx, ty
    return ds


def _read(path: Path, magic: int, ndim: int):
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IngestionError(f"{path}: truncated header ({len(raw)} bytes)")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IngestionError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(dims))
    if len(raw) - head < need:
        raise IngestionError(f"{path}: truncated payload, expected {need} bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=head).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an MNIST-style IDX pair. Images come back as float32 [n,1,H,W] in [0,1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    imgs = _read(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read(labels_path, IDX_LABELS_MAGIC, 1)
    if len(imgs) != len(labels):
        raise IngestionError(f"{labels_path}: {len(labels)} labels but {images_path} holds {len(imgs)} images")
    return (imgs[:, None].astype(np.float32) / 255.0), labels.astype(np.int64)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images [n,H,W] and labels [n] in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())
