"""Learned surrogate mapping antenna positions to the achievable sum rate.

The surrogate is a small fully connected network trained on labeled rows
(position, cluster-core channel features, optimized rate).  Labels come from
solving the fast-timescale pattern selection at sampled positions.  Inputs
are the flattened real and imaginary channel parts scaled by the dataset's
peak magnitude; labels are scaled by the dataset's peak rate.
"""

from dataclasses import dataclass
import logging
import struct

import numpy as np

from .beamform import Beamformer, broadside_index, round_selector, solve_relaxed
from .channel import sample_multipath_channels, sum_rate
from .scenario import rng_from

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass(frozen=True)
class NormStats:
    """Input and label scales fixed at pretraining time."""

    input_scale: float
    label_scale: float


@dataclass
class MlpParams:
    """Dense network parameters; ReLU hidden layers, identity output."""

    weights: list   # W_i with shape (n_out, n_in)
    biases: list    # b_i with shape (n_out,)

    @property
    def layer_sizes(self):
        return tuple(w.shape[1] for w in self.weights) + (self.weights[-1].shape[0],)

    def copy(self):
        return MlpParams(weights=[w.copy() for w in self.weights],
                         biases=[b.copy() for b in self.biases])


@dataclass(frozen=True)
class LabeledDataset:
    """Rows of (position, raw channel features, rate label)."""

    positions: np.ndarray   # (n, N)
    features: np.ndarray    # (n, d) unscaled
    labels: np.ndarray      # (n,) bit/s/Hz

    def __post_init__(self):
        n = self.positions.shape[0]
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise ValueError("dataset arrays disagree on the row count")

    def __len__(self):
        return self.positions.shape[0]


def flatten_channel(core_channel):
    """Real parts then imaginary parts, row-major over (bin*antenna, user)."""
    core = np.asarray(core_channel)
    return np.concatenate([core.real.ravel(), core.imag.ravel()])


def featurize(core_channel, norm: NormStats):
    return flatten_channel(core_channel) / norm.input_scale


def unflatten_channel(x, norm: NormStats, shape):
    """Inverse of :func:`featurize` for a known channel shape."""
    x = np.asarray(x) * norm.input_scale
    half = x.size // 2
    return (x[:half] + 1j * x[half:]).reshape(shape)


def init_mlp(layer_sizes, seed):
    """Uniform fan-in scaled init, zero biases."""
    rng = rng_from(seed, 3)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights=weights, biases=biases)


def forward(params: MlpParams, x):
    """Network output for one feature vector or a batch of rows."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.maximum(a @ W.T + b, 0.0)
    out = (a @ params.weights[-1].T + params.biases[-1])[:, 0]
    return float(out[0]) if np.ndim(x) == 1 else out


def loss_and_gradients(params: MlpParams, X, y):
    """Mean-squared error and its gradients for one batch."""
    acts = [np.atleast_2d(X)]
    pre = []
    a = acts[0]
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = (a @ params.weights[-1].T + params.biases[-1])[:, 0]
    err = out - y
    loss = float(np.mean(err ** 2))

    B = X.shape[0]
    delta = (2.0 / B) * err[:, None]
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    grads_w[-1] = delta.T @ acts[-1]
    grads_b[-1] = delta.sum(axis=0)
    back = delta @ params.weights[-1]
    for i in range(len(params.weights) - 2, -1, -1):
        delta = back * (pre[i] > 0)
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            back = delta @ params.weights[i]
    return loss, grads_w, grads_b


class _Adam:
    """Adam state over a subset of layers."""

    def __init__(self, params, trainable, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.trainable = trainable
        self.t = 0
        self.m_w = {i: np.zeros_like(params.weights[i]) for i in trainable}
        self.v_w = {i: np.zeros_like(params.weights[i]) for i in trainable}
        self.m_b = {i: np.zeros_like(params.biases[i]) for i in trainable}
        self.v_b = {i: np.zeros_like(params.biases[i]) for i in trainable}

    def step(self, params, grads_w, grads_b):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i in self.trainable:
            for store_m, store_v, grad, target in (
                (self.m_w, self.v_w, grads_w[i], params.weights[i]),
                (self.m_b, self.v_b, grads_b[i], params.biases[i]),
            ):
                store_m[i] = self.b1 * store_m[i] + (1.0 - self.b1) * grad
                store_v[i] = self.b2 * store_v[i] + (1.0 - self.b2) * grad ** 2
                target -= self.lr * (store_m[i] / c1) / (
                    np.sqrt(store_v[i] / c2) + self.eps
                )


def compute_norm_stats(dataset: LabeledDataset) -> NormStats:
    """Peak input magnitude and peak label; zero peaks fall back to 1."""
    peak_x = float(np.max(np.abs(dataset.features))) if len(dataset) else 0.0
    peak_y = float(np.max(dataset.labels)) if len(dataset) else 0.0
    return NormStats(input_scale=peak_x if peak_x > 0 else 1.0,
                     label_scale=peak_y if peak_y > 0 else 1.0)


def _run_adam(params, norm, dataset, cfg, seed, iters, trainable, rng_tag):
    X = dataset.features / norm.input_scale
    y = dataset.labels / norm.label_scale
    n = len(dataset)
    rng = rng_from(seed, rng_tag)
    adam = _Adam(params, trainable, cfg.learning_rate, cfg.adam_beta1,
                 cfg.adam_beta2, cfg.adam_epsilon)
    losses = []
    for it in range(iters):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        loss, gw, gb = loss_and_gradients(params, X[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite training loss at iteration {it}"
            )
        adam.step(params, gw, gb)
        losses.append(loss)
    return losses


def train(dataset: LabeledDataset, cfg, seed):
    """Pretrain a fresh network; returns (params, norm, per-iteration loss)."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    norm = compute_norm_stats(dataset)
    sizes = (dataset.features.shape[1],) + tuple(cfg.hidden_layers) + (1,)
    params = init_mlp(sizes, seed)
    trainable = list(range(len(params.weights)))
    losses = _run_adam(params, norm, dataset, cfg, seed, cfg.pretrain_iters,
                       trainable, rng_tag=3)
    return params, norm, losses


def evaluate_mse(params: MlpParams, norm: NormStats, dataset: LabeledDataset):
    """MSE in the normalized training space."""
    X = dataset.features / norm.input_scale
    y = dataset.labels / norm.label_scale
    pred = forward(params, X)
    return float(np.mean((pred - y) ** 2))


def fine_tune(params: MlpParams, norm: NormStats, dataset: LabeledDataset,
              cfg, seed):
    """Adapt the trailing layers to a small post-drift dataset.

    The first ``cfg.freeze_depth`` layers keep their exact parameters.  The
    returned network is the best full-dataset iterate seen, never worse on
    ``dataset`` than the input network.
    """
    tuned = MlpParams(
        weights=[w if i < cfg.freeze_depth else w.copy()
                 for i, w in enumerate(params.weights)],
        biases=[b if i < cfg.freeze_depth else b.copy()
                for i, b in enumerate(params.biases)],
    )
    trainable = list(range(cfg.freeze_depth, len(tuned.weights)))
    if not trainable:
        return tuned, []

    X = dataset.features / norm.input_scale
    y = dataset.labels / norm.label_scale
    n = len(dataset)
    rng = rng_from(seed, 5)
    adam = _Adam(tuned, trainable, cfg.learning_rate, cfg.adam_beta1,
                 cfg.adam_beta2, cfg.adam_epsilon)

    def full_loss(p):
        return float(np.mean((forward(p, X) - y) ** 2))

    best_loss = full_loss(tuned)
    best = tuned.copy()
    losses = [best_loss]
    for it in range(cfg.finetune_iters):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        loss, gw, gb = loss_and_gradients(tuned, X[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite fine-tune loss at iteration {it}"
            )
        adam.step(tuned, gw, gb)
        current = full_loss(tuned)
        losses.append(current)
        if current < best_loss:
            best_loss = current
            best = tuned.copy()
    # hand frozen arrays back unchanged (bitwise), keep best trainable set
    out = MlpParams(
        weights=[params.weights[i] if i < cfg.freeze_depth else best.weights[i]
                 for i in range(len(best.weights))],
        biases=[params.biases[i] if i < cfg.freeze_depth else best.biases[i]
                for i in range(len(best.biases))],
    )
    return out, losses


def generate_labels(em_map, grid, dictionary, positions, rho, sigma2,
                    num_samples, seed, max_iters=60, tol=1.0e-3,
                    line_search=True, away_steps=True, counter=None):
    """Label every position with its pattern-optimized cluster-core rate.

    Row j draws its own (seed, j) sample batch, solves the relaxed selection,
    rounds, and keeps the better of the rounded choice and the all-broadside
    fallback on the cluster-core channel.  Failed rows are logged and
    skipped.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    bi = broadside_index(dictionary)
    rows_p, rows_x, rows_y = [], [], []
    for j, p in enumerate(positions):
        try:
            batch = sample_multipath_channels(
                em_map, grid, p, num_samples, _row_seed(seed, j)
            )
            sol = solve_relaxed(batch.samples, dictionary, rho, sigma2,
                                max_iters=max_iters, tol=tol,
                                line_search=line_search, away_steps=away_steps,
                                counter=counter)
            _, combiner = round_selector(sol.weights, dictionary)
            rate = sum_rate(batch.core, combiner, rho, sigma2)
            fallback = Beamformer(
                dictionary=dictionary,
                pattern_indices=np.full(len(p), bi, dtype=int),
            )
            fb_rate = sum_rate(batch.core, fallback, rho, sigma2)
            if fb_rate > rate:
                rate = fb_rate
            rows_p.append(p)
            rows_x.append(flatten_channel(batch.core))
            rows_y.append(rate)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            log.warning("label row %d at p=%s failed: %s", j, p, exc)
    if not rows_p:
        raise RuntimeError("label generation produced no usable rows")
    return LabeledDataset(positions=np.array(rows_p),
                          features=np.array(rows_x),
                          labels=np.array(rows_y))


def _row_seed(seed, j):
    if isinstance(seed, (tuple, list)):
        return tuple(seed) + (j,)
    return (int(seed), j)


DATASET_MAGIC = "flexcoupler-dataset-v1"
MODEL_MAGIC = b"FCMLP\x00\x00\x00"
MODEL_VERSION = 1


def save_dataset(dataset: LabeledDataset, path):
    """Text container: one row per label, positions then features then label."""
    n, N = dataset.positions.shape
    d = dataset.features.shape[1]
    header = [f"p{i}" for i in range(N)] + [f"x{i}" for i in range(d)] + ["label"]
    lines = [f"# {DATASET_MAGIC}",
             f"# num_rows={n} num_antennas={N} num_features={d}",
             ",".join(header)]
    for i in range(n):
        vals = list(dataset.positions[i]) + list(dataset.features[i]) + \
            [dataset.labels[i]]
        lines.append(",".join(f"{v:.17g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    with open(path) as fh:
        if fh.readline().strip() != f"# {DATASET_MAGIC}":
            raise ValueError(f"{path}: not a labeled dataset container")
        meta = dict(item.split("=") for item in fh.readline().lstrip("# ").split())
        n = int(meta["num_rows"])
        N = int(meta["num_antennas"])
        d = int(meta["num_features"])
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (n, N + d + 1):
        raise ValueError(f"{path}: row block has shape {data.shape}, "
                         f"expected {(n, N + d + 1)}")
    return LabeledDataset(positions=data[:, :N], features=data[:, N:N + d],
                          labels=data[:, N + d])


def save_model(params: MlpParams, norm: NormStats, path):
    """Versioned flat binary: magic, version, layer sizes, scales, weights.

    Layout (little endian): 8-byte magic, uint32 version, uint32 layer
    count P, P uint32 sizes, 2 float64 scales (input, label), then for each
    layer the row-major float64 weight matrix followed by the bias vector.
    """
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<dd", norm.input_scale, norm.label_scale))
        for W, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a surrogate model file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        sizes = struct.unpack(f"<{count}I", fh.read(4 * count))
        input_scale, label_scale = struct.unpack("<dd", fh.read(16))
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            W = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8")
            weights.append(W.reshape(n_out, n_in).copy())
            biases.append(np.frombuffer(fh.read(8 * n_out), dtype="<f8").copy())
    params = MlpParams(weights=weights, biases=biases)
    return params, NormStats(input_scale=input_scale, label_scale=label_scale)


def predict_rate(params: MlpParams, norm: NormStats, core_channel):
    """Surrogate rate in bit/s/Hz for one cluster-core channel."""
    return forward(params, featurize(core_channel, norm)) * norm.label_scale
