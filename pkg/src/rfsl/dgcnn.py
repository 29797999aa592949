"""Graph counting network with hand-written backpropagation.

Message passing over the normalized adjacency produces K node embeddings.
The last (1-unit) embedding orders the nodes; the others are concatenated,
sorted by that order and fed to a small 1-D CNN with a dense regression
head. Everything runs in float64 numpy so that finite-difference checks are
meaningful.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError, ShapeMismatchError, TooFewNodesError

log = logging.getLogger(__name__)

COUNT_RANGE = (0, 20)


@dataclass(frozen=True)
class Architecture:
    n_nodes: int
    feature_width: int
    mp_widths: tuple[int, ...] = (32, 32, 32, 1)
    conv1_filters: int = 16
    conv2_filters: int = 32
    conv2_kernel: int = 5
    pool: int = 2
    dense_units: int = 128
    include_sort_key: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mp_widths", tuple(int(w) for w in self.mp_widths))
        if not self.mp_widths or self.mp_widths[-1] != 1:
            raise ValueError("the last message-passing layer must have width 1")
        if self.feature_width < 1:
            raise ValueError("feature_width must be positive")
        if self.pooled_length < self.conv2_kernel:
            raise TooFewNodesError(
                f"{self.n_nodes} nodes pool to {self.pooled_length} positions, "
                f"fewer than the kernel size {self.conv2_kernel}"
            )

    @classmethod
    def for_iterations(cls, k: int, n_nodes: int, feature_width: int, **kw) -> "Architecture":
        if k < 1:
            raise ValueError("need at least one message-passing iteration")
        return cls(n_nodes, feature_width, tuple([32] * (k - 1) + [1]), **kw)

    @property
    def n_iterations(self) -> int:
        return len(self.mp_widths)

    @property
    def readout_channels(self) -> int:
        if self.n_iterations == 1:
            return 1
        return sum(self.mp_widths[:-1]) + (1 if self.include_sort_key else 0)

    @property
    def pooled_length(self) -> int:
        return self.n_nodes // self.pool

    @property
    def conv2_length(self) -> int:
        return self.pooled_length - self.conv2_kernel + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, tuple[int, ...]] = {}
        prev = self.feature_width
        for k, w in enumerate(self.mp_widths, start=1):
            out[f"mp{k}_W"] = (prev, w)
            out[f"mp{k}_b"] = (w,)
            prev = w
        c = self.readout_channels
        out["conv1_W"] = (c, self.conv1_filters)
        out["conv1_b"] = (self.conv1_filters,)
        out["conv2_W"] = (self.conv2_kernel * self.conv1_filters, self.conv2_filters)
        out["conv2_b"] = (self.conv2_filters,)
        out["dense_W"] = (self.conv2_length * self.conv2_filters, self.dense_units)
        out["dense_b"] = (self.dense_units,)
        out["out_W"] = (self.dense_units, 1)
        out["out_b"] = (1,)
        return out

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "feature_width": self.feature_width,
            "mp_widths": list(self.mp_widths),
            "conv1_filters": self.conv1_filters,
            "conv2_filters": self.conv2_filters,
            "conv2_kernel": self.conv2_kernel,
            "pool": self.pool,
            "dense_units": self.dense_units,
            "include_sort_key": self.include_sort_key,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["mp_widths"] = tuple(d["mp_widths"])
        return cls(**d)


@dataclass
class ModelParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray

    def __post_init__(self):
        shapes = self.arch.shapes()
        if set(shapes) != set(self.tensors):
            raise ShapeMismatchError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatchError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        if self.feature_mean.shape != (self.arch.feature_width,) or self.feature_std.shape != self.feature_mean.shape:
            raise ShapeMismatchError("normalization statistics do not match the feature width")
        if np.any(self.feature_std <= 0):
            raise ValueError("normalization std must be positive")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()},
                           self.feature_mean.copy(), self.feature_std.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in self.arch.shapes()])


def init_params(arch: Architecture, rng_seed, feature_mean=None, feature_std=None) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng_seed)
    tensors = {}
    for name, shape in arch.shapes().items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    f = arch.feature_width
    mean = np.zeros(f) if feature_mean is None else np.asarray(feature_mean, dtype=float)
    std = np.ones(f) if feature_std is None else np.asarray(feature_std, dtype=float)
    return ModelParams(arch, tensors, mean, std)


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalized D + I."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError("adjacency must be square")
    a = a + np.eye(len(a))
    return a / a.sum(axis=1, keepdims=True)


def feature_stats(features: np.ndarray, floor: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std over every node of every sample."""
    flat = np.asarray(features, dtype=float).reshape(-1, features.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return mean, np.where(std < floor, 1.0, std)


@dataclass(frozen=True)
class LabeledGraphSample:
    adjacency: np.ndarray
    features: np.ndarray
    label: int


@dataclass(eq=False)
class GraphDataset:
    """Samples that share one network: a single adjacency and stacked features."""

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency)
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        v = self.adjacency.shape[0]
        if self.features.ndim != 3 or self.features.shape[1] != v:
            raise ShapeMismatchError(f"features must be (samples, {v}, width); got {self.features.shape}")
        if len(self.labels) != len(self.features):
            raise ShapeMismatchError("one label per sample is required")
        lo, hi = COUNT_RANGE
        if len(self.labels) and (self.labels.min() < lo or self.labels.max() > hi):
            raise ValueError(f"labels must lie in [{lo}, {hi}]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "GraphDataset":
        idx = np.asarray(idx, dtype=int)
        return GraphDataset(self.adjacency, self.features[idx], self.labels[idx])

    def samples(self) -> Iterable[LabeledGraphSample]:
        for f, y in zip(self.features, self.labels):
            yield LabeledGraphSample(self.adjacency, f, int(y))

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledGraphSample]) -> "GraphDataset":
        adj = samples[0].adjacency
        if any(not np.array_equal(s.adjacency, adj) for s in samples[1:]):
            raise ShapeMismatchError("all samples in a dataset must share the adjacency")
        return cls(adj, np.stack([s.features for s in samples]), np.array([s.label for s in samples]))


def _check_input(params: ModelParams, adjacency: np.ndarray, features: np.ndarray):
    arch = params.arch
    if adjacency.shape[-2:] != (arch.n_nodes, arch.n_nodes):
        raise ShapeMismatchError(f"adjacency is {adjacency.shape}, model expects {arch.n_nodes} nodes")
    if features.shape[-2:] != (arch.n_nodes, arch.feature_width):
        raise ShapeMismatchError(
            f"features are {features.shape[-2:]}, model expects ({arch.n_nodes}, {arch.feature_width})"
        )


def message_passing_forward(params: ModelParams, adjacency: np.ndarray, features: np.ndarray) -> list[np.ndarray]:
    """Node embeddings Z_1..Z_K; accepts one graph or a leading batch axis."""
    adjacency = np.asarray(adjacency)
    features = np.asarray(features, dtype=float)
    _check_input(params, adjacency, features)
    a_hat = normalized_adjacency(adjacency)
    z = (features - params.feature_mean) / params.feature_std
    out = []
    for k in range(1, params.arch.n_iterations + 1):
        z = np.tanh(a_hat @ z @ params.tensors[f"mp{k}_W"] + params.tensors[f"mp{k}_b"])
        out.append(z)
    return out


def _sort_order(key: np.ndarray) -> np.ndarray:
    # descending by key, ties resolved by node index
    return np.argsort(-key, axis=-1, kind="stable")


def _readout_input(arch: Architecture, embeddings: Sequence[np.ndarray]) -> np.ndarray:
    if arch.n_iterations == 1:
        return embeddings[0]
    parts = list(embeddings[:-1]) + ([embeddings[-1]] if arch.include_sort_key else [])
    return np.concatenate(parts, axis=-1)


def _forward(params: ModelParams, a_hat: np.ndarray, x: np.ndarray):
    """Batched forward pass keeping every intermediate needed for backprop."""
    arch, t = params.arch, params.tensors
    b, v = x.shape[0], x.shape[1]
    cache: dict = {"a_hat": a_hat}
    z = (x - params.feature_mean) / params.feature_std
    hs, zs = [], []
    for k in range(1, arch.n_iterations + 1):
        h = a_hat @ z
        z = np.tanh(h @ t[f"mp{k}_W"] + t[f"mp{k}_b"])
        hs.append(h)
        zs.append(z)
    order = _sort_order(zs[-1][..., 0])
    cat = _readout_input(arch, zs)
    s = np.take_along_axis(cat, order[..., None], axis=1)
    y1 = np.tanh(s @ t["conv1_W"] + t["conv1_b"])
    p, f1 = arch.pooled_length, arch.conv1_filters
    windows = y1[:, : p * arch.pool].reshape(b, p, arch.pool, f1)
    arg = windows.argmax(axis=2)
    pooled = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    length, kern = arch.conv2_length, arch.conv2_kernel
    cols = np.concatenate([pooled[:, j:j + length] for j in range(kern)], axis=-1)
    y2 = np.tanh(cols @ t["conv2_W"] + t["conv2_b"])
    flat = y2.reshape(b, -1)
    d1 = np.tanh(flat @ t["dense_W"] + t["dense_b"])
    out = (d1 @ t["out_W"] + t["out_b"])[:, 0]
    cache.update(hs=hs, zs=zs, order=order, s=s, y1=y1, arg=arg, cols=cols, y2=y2, flat=flat, d1=d1, v=v)
    return out, cache


def _backward(params: ModelParams, cache: dict, g_out: np.ndarray) -> dict[str, np.ndarray]:
    arch, t = params.arch, params.tensors
    grads: dict[str, np.ndarray] = {}
    b = g_out.shape[0]
    d1 = cache["d1"]
    g = g_out[:, None]
    grads["out_W"] = d1.T @ g
    grads["out_b"] = g.sum(axis=0)
    g = (g @ t["out_W"].T) * (1 - d1**2)
    grads["dense_W"] = cache["flat"].T @ g
    grads["dense_b"] = g.sum(axis=0)
    g = (g @ t["dense_W"].T).reshape(cache["y2"].shape) * (1 - cache["y2"] ** 2)
    cols = cache["cols"]
    grads["conv2_W"] = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    grads["conv2_b"] = g.sum(axis=(0, 1))
    g_cols = g @ t["conv2_W"].T
    p, f1, length = arch.pooled_length, arch.conv1_filters, arch.conv2_length
    g_pooled = np.zeros((b, p, f1))
    for j in range(arch.conv2_kernel):
        g_pooled[:, j:j + length] += g_cols[..., j * f1:(j + 1) * f1]
    g_windows = np.zeros((b, p, arch.pool, f1))
    np.put_along_axis(g_windows, cache["arg"][:, :, None, :], g_pooled[:, :, None, :], axis=2)
    y1 = cache["y1"]
    g_y1 = np.zeros_like(y1)
    g_y1[:, : p * arch.pool] = g_windows.reshape(b, p * arch.pool, f1)
    g = g_y1 * (1 - y1**2)
    s = cache["s"]
    grads["conv1_W"] = s.reshape(-1, s.shape[-1]).T @ g.reshape(-1, f1)
    grads["conv1_b"] = g.sum(axis=(0, 1))
    g_s = g @ t["conv1_W"].T
    g_cat = np.zeros_like(g_s)
    np.put_along_axis(g_cat, cache["order"][..., None], g_s, axis=1)

    zs, hs, a_hat = cache["zs"], cache["hs"], cache["a_hat"]
    n_it = arch.n_iterations
    g_z = [np.zeros_like(z) for z in zs]
    if n_it == 1:
        g_z[0] += g_cat
    else:
        col = 0
        for k in range(n_it - 1):
            w = zs[k].shape[-1]
            g_z[k] += g_cat[..., col:col + w]
            col += w
        if arch.include_sort_key:
            g_z[-1] += g_cat[..., col:col + 1]
    a_t = np.swapaxes(a_hat, -1, -2)
    for k in range(n_it, 0, -1):
        gp = g_z[k - 1] * (1 - zs[k - 1] ** 2)
        h = hs[k - 1]
        grads[f"mp{k}_W"] = h.reshape(-1, h.shape[-1]).T @ gp.reshape(-1, gp.shape[-1])
        grads[f"mp{k}_b"] = gp.sum(axis=(0, 1))
        if k > 1:
            g_z[k - 2] += a_t @ (gp @ t[f"mp{k}_W"].T)
    return grads


def _prepare(params: ModelParams, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(batch, GraphDataset):
        adj, x, y = batch.adjacency, batch.features, batch.labels
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("batch is empty")
        adj = np.stack([np.asarray(s.adjacency) for s in batch])
        x = np.stack([np.asarray(s.features, dtype=float) for s in batch])
        y = np.array([s.label for s in batch])
    adj = np.asarray(adj)
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    _check_input(params, adj, x)
    return normalized_adjacency(adj) if adj.ndim == 2 else np.stack([normalized_adjacency(a) for a in adj]), x, \
        np.asarray(y, dtype=float)


def readout_forward(params: ModelParams, embeddings: Sequence[np.ndarray]) -> np.ndarray | float:
    """Regression output from node embeddings (one graph or a batch)."""
    single = embeddings[0].ndim == 2
    zs = [z[None] if single else z for z in embeddings]
    arch, t = params.arch, params.tensors
    if arch.n_nodes < 2:
        raise TooFewNodesError("pooling needs at least two nodes")
    order = _sort_order(zs[-1][..., 0])
    s = np.take_along_axis(_readout_input(arch, zs), order[..., None], axis=1)
    y1 = np.tanh(s @ t["conv1_W"] + t["conv1_b"])
    b, p = y1.shape[0], arch.pooled_length
    pooled = y1[:, : p * arch.pool].reshape(b, p, arch.pool, -1).max(axis=2)
    cols = np.concatenate([pooled[:, j:j + arch.conv2_length] for j in range(arch.conv2_kernel)], axis=-1)
    y2 = np.tanh(cols @ t["conv2_W"] + t["conv2_b"])
    d1 = np.tanh(y2.reshape(b, -1) @ t["dense_W"] + t["dense_b"])
    out = (d1 @ t["out_W"] + t["out_b"])[:, 0]
    return float(out[0]) if single else out


def forward(params: ModelParams, adjacency: np.ndarray, features: np.ndarray) -> np.ndarray | float:
    """Raw (unclamped) count estimate."""
    return readout_forward(params, message_passing_forward(params, adjacency, features))


def loss_and_gradients(params: ModelParams, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over the batch and its gradient for every tensor."""
    a_hat, x, y = _prepare(params, batch)
    if len(y) == 0:
        raise ValueError("batch is empty")
    out, cache = _forward(params, a_hat, x)
    resid = out - y
    loss = float(np.mean(resid**2))
    if not math.isfinite(loss):
        raise DivergenceError(f"loss became {loss}")
    grads = _backward(params, cache, 2.0 * resid / len(y))
    return loss, grads


def discretize(estimates) -> np.ndarray:
    """Round half up, then clamp to the supported count range."""
    lo, hi = COUNT_RANGE
    return np.clip(np.floor(np.asarray(estimates, dtype=float) + 0.5), lo, hi).astype(np.int64)


def predict(params: ModelParams, data: GraphDataset, batch_size: int = 256) -> np.ndarray:
    return discretize(predict_raw(params, data, batch_size))


def predict_raw(params: ModelParams, data: GraphDataset, batch_size: int = 256) -> np.ndarray:
    out = []
    a_hat = normalized_adjacency(data.adjacency)
    _check_input(params, data.adjacency, data.features)
    for i in range(0, len(data), batch_size):
        o, _ = _forward(params, a_hat, data.features[i:i + batch_size])
        out.append(o)
    return np.concatenate(out) if out else np.zeros(0)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 300
    early_stop_patience: int = 10
    validation_fraction: float = 0.2
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be at least 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        c1 = 1 - self.beta1**self.step_count
        c2 = 1 - self.beta2**self.step_count
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            s = self.s.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            s *= self.beta2
            s += (1 - self.beta2) * g * g
            tensors[name] -= self.lr * (m / c1) / (np.sqrt(s / c2) + self.eps)


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_loss))


def split_indices(n: int, fraction: float, rng_seed) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split into (train, validation) index arrays."""
    perm = np.random.default_rng(rng_seed).permutation(n)
    n_val = int(round(n * fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mse(params: ModelParams, data: GraphDataset) -> float:
    return float(np.mean((predict_raw(params, data) - data.labels) ** 2))


def train(dataset: GraphDataset, config: TrainConfig = TrainConfig(), arch: Architecture | None = None,
          ) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam on squared error with early stopping on a validation split."""
    if len(dataset) < 2:
        raise ValueError("need at least two samples to train")
    if len(np.unique(dataset.labels)) < 2:
        log.warning("training data holds a single label; the model can only learn a constant")
    v, f = dataset.features.shape[1:]
    if arch is None:
        arch = Architecture(v, f)
    tr_idx, val_idx = split_indices(len(dataset), config.validation_fraction, [config.rng_seed, 1])
    train_set = dataset.subset(tr_idx)
    val_set = dataset.subset(val_idx) if len(val_idx) else train_set
    mean, std = feature_stats(train_set.features)
    params = init_params(arch, [config.rng_seed, 2], mean, std)
    params.tensors["out_b"][:] = train_set.labels.mean()
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.rng_seed, 3])
    a_hat = normalized_adjacency(dataset.adjacency)
    history = TrainHistory()
    best = params.copy()
    best_val = _mse(params, val_set)
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(train_set))
        total = 0.0
        for i in range(0, len(perm), config.batch_size):
            idx = perm[i:i + config.batch_size]
            out, cache = _forward(params, a_hat, train_set.features[idx])
            resid = out - train_set.labels[idx]
            loss = float(np.mean(resid**2))
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}")
            opt.step(params.tensors, _backward(params, cache, 2.0 * resid / len(idx)))
            total += loss * len(idx)
        val = _mse(params, val_set)
        history.epochs.append(epoch)
        history.train_loss.append(total / len(train_set))
        history.val_loss.append(val)
        if val < best_val:
            best_val, best, stale = val, params.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
        log.debug("epoch %d train %.4f val %.4f", epoch, history.train_loss[-1], val)
        if stale >= config.early_stop_patience:
            break
    log.info("trained %d epochs in %.1fs, best val mse %.4f at epoch %d",
             history.epochs[-1], time.perf_counter() - t0, best_val, history.best_epoch)
    return best, history


@dataclass(frozen=True)
class EvalResult:
    overall: float
    per_n: dict[int, float]
    counts: dict[int, int]


def evaluate_predictions(predictions, labels) -> EvalResult:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    hit = predictions == labels
    per_n, counts = {}, {}
    for n in np.unique(labels):
        sel = labels == n
        per_n[int(n)] = float(hit[sel].mean())
        counts[int(n)] = int(sel.sum())
    return EvalResult(float(hit.mean()) if len(hit) else float("nan"), per_n, counts)


def evaluate(params: ModelParams, dataset: GraphDataset) -> EvalResult:
    return evaluate_predictions(predict(params, dataset), dataset.labels)


def iteration_sweep(train_set: GraphDataset, test_set: GraphDataset, k_values: Sequence[int],
                    config: TrainConfig = TrainConfig()) -> list[tuple[int, float, float]]:
    """(K, held-out accuracy, training seconds) for each number of message-passing iterations."""
    rows = []
    v, f = train_set.features.shape[1:]
    for k in k_values:
        if not 1 <= k <= 8:
            raise ValueError("iterations must lie in 1..8")
        t0 = time.perf_counter()
        params, _ = train(train_set, config, Architecture.for_iterations(k, v, f))
        rows.append((k, evaluate(params, test_set).overall, time.perf_counter() - t0))
    return rows


def oracle_params(arch: Architecture, value: float = 0.0) -> ModelParams:
    """All-zero network whose output is the constant ``value``."""
    p = init_params(arch, 0)
    for v in p.tensors.values():
        v[...] = 0.0
    p.tensors["out_b"][:] = value
    return p

