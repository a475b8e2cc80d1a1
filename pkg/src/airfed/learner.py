"""Model, losses, datasets, partitioning, and user-side SGD.

The model is a multinomial logistic regression stored as one flat real
vector of length (feature_dim + 1) * num_classes (weights then a bias row,
laid out as an augmented-input weight matrix).  The flat vector is what
travels over the air, so its length must be even for complex packing.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .rng import as_generator


@dataclass
class Dataset:
    """Feature matrix plus integer labels."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be (n, d), labels (n,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def model_dim(feature_dim: int, num_classes: int) -> int:
    return (feature_dim + 1) * num_classes


def zero_model(feature_dim: int, num_classes: int) -> np.ndarray:
    return np.zeros(model_dim(feature_dim, num_classes))


def _unflatten(model, feature_dim, num_classes):
    expected = model_dim(feature_dim, num_classes)
    if model.shape != (expected,):
        raise ValueError(f"model length {model.shape} does not match "
                         f"(d+1)*k = {expected}")
    return model.reshape(feature_dim + 1, num_classes)


def loss_and_gradient(model, features, labels, num_classes, l2: float = 0.0):
    """Mean cross-entropy of the linear softmax classifier and its gradient.

    With l2 > 0 the objective gains (l2/2)*||model||^2, which makes every
    per-user loss l2-strongly convex.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    W = _unflatten(np.asarray(model, dtype=np.float64), features.shape[1], num_classes)
    logits = features @ W[:-1] + W[-1]
    logits -= logits.max(axis=1, keepdims=True)
    expz = np.exp(logits)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = features.shape[0]
    loss = -np.log(probs[np.arange(n), labels]).mean()
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grad = np.empty_like(W)
    grad[:-1] = features.T @ delta
    grad[-1] = delta.sum(axis=0)
    if l2:
        loss += 0.5 * l2 * float(model @ model)
        grad += l2 * W
    return float(loss), grad.reshape(-1)


def evaluate(model, test: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if len(test) == 0:
        raise ValueError("test set must be non-empty")
    W = _unflatten(np.asarray(model, dtype=np.float64), test.feature_dim,
                   test.num_classes)
    logits = test.features @ W[:-1] + W[-1]
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


def model_difference(end, ref) -> np.ndarray:
    end = np.asarray(end)
    ref = np.asarray(ref)
    if end.shape != ref.shape:
        raise ValueError("model length mismatch")
    return end - ref


# ---------------------------------------------------------------------------
# partitioning

def partition_iid(data: Dataset, C: int, M: int, rng):
    """Shuffle and split into C*M disjoint shards, sizes differing by <= 1.

    Returns a (C, M) nested list; flattening it row-major gives the same
    shards a flat C=1, M=C*M split would, so hierarchical and flat runs see
    identical user data.
    """
    n_users = C * M
    if len(data) < n_users:
        raise ValueError(f"{len(data)} samples cannot cover {n_users} users")
    gen = as_generator(rng)
    order = gen.permutation(len(data))
    splits = np.array_split(order, n_users)
    return [[data.subset(np.sort(splits[c * M + m])) for m in range(M)]
            for c in range(C)]


def partition_noniid(data: Dataset, C: int, M: int, rng, groups_per_user: int = 5):
    """Label-sorted shard assignment: 5*M*C single-label groups, 5 per user.

    Groups are allocated to labels proportionally to label frequency
    (largest remainder), each label's samples are split into near-equal
    single-label groups, and a random permutation deals groups_per_user
    groups to every user.
    """
    n_groups = groups_per_user * M * C
    counts = np.bincount(data.labels, minlength=data.num_classes)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one sample")
    if len(data) < n_groups:
        raise ValueError("fewer samples than groups")
    # largest-remainder apportionment of groups to labels
    quota = counts / counts.sum() * n_groups
    alloc = np.floor(quota).astype(int)
    alloc = np.maximum(alloc, 1)
    while alloc.sum() > n_groups:
        alloc[np.argmax(alloc - quota)] -= 1
    rem = n_groups - alloc.sum()
    if rem > 0:
        order = np.argsort(-(quota - alloc))
        alloc[order[:rem]] += 1
    if np.any(alloc > counts):
        raise ValueError("a class has fewer samples than its group count")

    gen = as_generator(rng)
    groups = []
    for label in range(data.num_classes):
        idx = np.flatnonzero(data.labels == label)
        idx = gen.permutation(idx)
        groups.extend(np.array_split(idx, alloc[label]))
    assert len(groups) == n_groups
    deal = gen.permutation(n_groups)
    shards = []
    for c in range(C):
        row = []
        for m in range(M):
            u = c * M + m
            picked = deal[u * groups_per_user:(u + 1) * groups_per_user]
            idx = np.sort(np.concatenate([groups[g] for g in picked]))
            row.append(data.subset(idx))
        shards.append(row)
    return shards


# ---------------------------------------------------------------------------
# user-side SGD

class UserLearnerState:
    """One user's shard, batch cursor, and private RNG stream.

    Batches are sampled without replacement within an epoch and the shard is
    reshuffled whenever fewer than batch_size samples remain.
    """

    def __init__(self, shard: Dataset, batch_size: int, rng):
        if batch_size < 1 or batch_size > len(shard):
            raise ValueError(f"batch_size {batch_size} not in [1, {len(shard)}]")
        self.shard = shard
        self.batch_size = batch_size
        self.rng = as_generator(rng)
        self._order = self.rng.permutation(len(shard))
        self._cursor = 0

    def next_batch(self):
        if self._cursor + self.batch_size > len(self.shard):
            self._order = self.rng.permutation(len(self.shard))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return idx


def sgd_user_iterations(state: UserLearnerState, start, tau: int, eta: float,
                        l2: float = 0.0, record_grads=None,
                        optimizer: str = "sgd", adam_state=None):
    """Run tau SGD steps from `start` with freshly sampled batches.

    The default update is theta <- theta - eta * grad.  optimizer="adam"
    switches to an Adam step sharing the same interface (kept out of any
    bound comparison).  If record_grads is a list, the sampled gradients are
    appended so callers can replay the accumulated-update identity.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    theta = np.array(start, dtype=np.float64, copy=True)
    for _ in range(tau):
        idx = state.next_batch()
        _, grad = loss_and_gradient(theta, state.shard.features[idx],
                                    state.shard.labels[idx],
                                    state.shard.num_classes, l2)
        if record_grads is not None:
            record_grads.append(grad)
        if optimizer == "sgd":
            theta -= eta * grad
        elif optimizer == "adam":
            theta = _adam_step(theta, grad, eta, adam_state)
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    return theta


def _adam_step(theta, grad, eta, state, beta1=0.9, beta2=0.999, eps=1e-8):
    state["t"] = state.get("t", 0) + 1
    m = state.setdefault("m", np.zeros_like(theta))
    v = state.setdefault("v", np.zeros_like(theta))
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    mhat = m / (1 - beta1 ** state["t"])
    vhat = v / (1 - beta2 ** state["t"])
    return theta - eta * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# data sources

def make_synthetic(num_samples: int, feature_dim: int, num_classes: int,
                   rng, separation: float = 4.0) -> Dataset:
    """Linearly separable Gaussian blobs with round-robin labels."""
    if num_samples < 1 or feature_dim < 1 or num_classes < 1:
        raise ValueError("sizes must be positive")
    gen = as_generator(rng)
    dirs = gen.standard_normal((num_classes, feature_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.arange(num_samples) % num_classes
    feats = separation * dirs[labels] + gen.standard_normal((num_samples, feature_dim))
    return Dataset(feats, labels, num_classes)


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path):
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        magic, = struct.unpack(">I", fh.read(4))
        if magic == _IDX_IMAGES_MAGIC:
            n, rows, cols = struct.unpack(">III", fh.read(12))
            data = np.frombuffer(fh.read(n * rows * cols), dtype=np.uint8)
            return magic, data.reshape(n, rows * cols)
        if magic == _IDX_LABELS_MAGIC:
            n, = struct.unpack(">I", fh.read(4))
            return magic, np.frombuffer(fh.read(n), dtype=np.uint8)
        raise ValueError(f"{path}: unrecognized IDX magic 0x{magic:08x}")


def load_mnist(data_dir: str, split: str = "train") -> Dataset:
    """Load MNIST IDX files (optionally gzipped) with pixels scaled to [0, 1]."""
    prefix = {"train": "train", "test": "t10k"}[split]
    img_path = lbl_path = None
    for suffix in ("", ".gz"):
        ip = os.path.join(data_dir, f"{prefix}-images-idx3-ubyte{suffix}")
        lp = os.path.join(data_dir, f"{prefix}-labels-idx1-ubyte{suffix}")
        if os.path.exists(ip) and os.path.exists(lp):
            img_path, lbl_path = ip, lp
            break
    if img_path is None:
        raise FileNotFoundError(f"no MNIST {split} IDX files under {data_dir}")
    magic_i, images = _read_idx(img_path)
    magic_l, labels = _read_idx(lbl_path)
    if magic_i != _IDX_IMAGES_MAGIC or magic_l != _IDX_LABELS_MAGIC:
        raise ValueError("image/label files swapped or corrupt")
    return Dataset(images.astype(np.float64) / 255.0,
                   labels.astype(np.int64), 10)
