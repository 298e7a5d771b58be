"""Desk-scale continual learner.

A linear softmax classifier or one-hidden-layer-style MLP (any number of
hidden layers is supported) trained with mini-batch SGD on cross-entropy.
The output head covers all classes from the start (single-head, closed
world). Two strategies are expressed at the training-loop level: naive
fine-tuning trains on experience data only; experience replay mixes a
fixed fraction of each mini-batch in from a rehearsal buffer.

Parameters are grouped into named blocks (one per layer) so that per-block
weight diagnostics and layer-wise activation probes have stable handles.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    weights: list[np.ndarray]  # layer l: (fan_in, fan_out)
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching weight/bias lists")

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dim_in(self) -> int:
        return self.weights[0].shape[0]

    def blocks(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [
            (f"block{i}", w, b)
            for i, (w, b) in enumerate(zip(self.weights, self.biases))
        ]

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs_per_experience: int = 2
    batch_size: int = 32
    replay_mix: float = 0.5  # fraction of each mini-batch drawn from the buffer

    def validate(self) -> None:
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.epochs_per_experience < 0:
            raise ValueError("epochs_per_experience must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.replay_mix <= 1.0:
            raise ValueError("replay_mix must lie in [0, 1]")


def init_params(
    dim_in: int,
    hidden: tuple[int, ...],
    num_classes: int,
    activation: str,
    rng: np.random.Generator,
) -> ModelParams:
    sizes = [dim_in, *hidden, num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = math.sqrt(2.0 / fan_in)
        weights.append(rng.normal(scale=scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights=weights, biases=biases, activation=activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _forward(params: ModelParams, x: np.ndarray):
    """Returns (pre-activations, post-activations incl. input, logits)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    pre, post = [], [a]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = post[-1] @ w + b
        pre.append(z)
        if i < len(params.weights) - 1:
            post.append(_act(z, params.activation))
    return pre, post, pre[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class ids and the full softmax probability matrix."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    if features.shape[-1] != params.dim_in:
        raise ValueError(
            f"feature dimension {features.shape[-1]} does not match model input {params.dim_in}"
        )
    _, _, logits = _forward(params, features)
    probs = softmax(logits)
    labels = probs.argmax(axis=1)
    if single:
        return labels[0], probs[0]
    return labels, probs


def activations(params: ModelParams, features: np.ndarray) -> list[np.ndarray]:
    """Per-layer representations on a probe batch: each hidden layer's
    post-activation output, then the logits."""
    _, post, logits = _forward(params, features)
    return [*post[1:], logits]


def loss_and_grads(params: ModelParams, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradients w.r.t. every weight and bias."""
    y = np.asarray(y, dtype=np.int64)
    pre, post, logits = _forward(params, x)
    n = logits.shape[0]
    probs = softmax(logits)
    eps = np.finfo(float).tiny
    loss = float(-np.log(probs[np.arange(n), y] + eps).mean())

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = post[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _act_grad(
                pre[i - 1], post[i], params.activation
            )
    return loss, grads_w, grads_b


def accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    labels, _ = predict(params, x)
    return float((labels == np.asarray(y)).mean())


def train_on_experience(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    buffer=None,
    dataset=None,
) -> ModelParams:
    """SGD over one experience; with a buffer, every mini-batch mixes in
    ceil(replay_mix * batch_size) rehearsal samples. The buffer itself is
    not modified here (storage updates happen once per experience, after
    training)."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("experience data must be nonempty")
    if buffer is not None and dataset is None:
        raise ValueError("replay training needs the source dataset for feature lookup")

    replay_k = 0
    if buffer is not None and buffer.total_stored() > 0:
        replay_k = min(math.ceil(cfg.replay_mix * cfg.batch_size), cfg.batch_size)
    current_bs = max(cfg.batch_size - replay_k, 1)

    for _ in range(cfg.epochs_per_experience):
        order = rng.permutation(x.shape[0])
        for start in range(0, order.size, current_bs):
            batch = order[start : start + current_bs]
            bx, by = x[batch], y[batch]
            if replay_k:
                inst, labs = buffer.sample(replay_k, rng)
                bx = np.concatenate([bx, dataset.features[inst]])
                by = np.concatenate([by, labs])
            loss, gw, gb = loss_and_grads(params, bx, by)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} (lr={cfg.lr}, batch={bx.shape[0]}, "
                    f"experience_size={x.shape[0]})"
                )
            for i in range(len(params.weights)):
                params.weights[i] -= cfg.lr * gw[i]
                params.biases[i] -= cfg.lr * gb[i]
    return params


# -- checkpoints ------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    experience_index: int
    meta: dict = field(default_factory=dict)


def snapshot(params: ModelParams, experience_index: int, **meta) -> Checkpoint:
    return Checkpoint(params=params.copy(), experience_index=experience_index, meta=dict(meta))


def restore(checkpoint: Checkpoint) -> ModelParams:
    return checkpoint.params.copy()


def _params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for w, b in zip(params.weights, params.biases):
        h.update(np.ascontiguousarray(w, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(b, dtype=np.float64).tobytes())
    return h.hexdigest()


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Single .npz holding the named blocks plus a JSON header with a
    content digest; ``load_checkpoint`` refuses files whose digest differs."""
    params = checkpoint.params
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "experience_index": checkpoint.experience_index,
        "activation": params.activation,
        "n_layers": len(params.weights),
        "digest": _params_digest(params),
        "meta": checkpoint.meta,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError("unsupported checkpoint format version")
        n = header["n_layers"]
        params = ModelParams(
            weights=[data[f"w{i}"] for i in range(n)],
            biases=[data[f"b{i}"] for i in range(n)],
            activation=header["activation"],
        )
    if _params_digest(params) != header["digest"]:
        raise CheckpointError(f"checkpoint digest mismatch in {path}")
    return Checkpoint(
        params=params,
        experience_index=header["experience_index"],
        meta=header.get("meta", {}),
    )
