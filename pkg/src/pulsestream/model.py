"""LSTM sentiment classifier built from scratch on numpy.

Architecture: embedding -> LSTM -> dense(ReLU) -> dense(softmax), two classes.
Training is mini-batch Adam over exact BPTT gradients; everything is float64
and deterministic for fixed seeds. The recurrence only runs over a sequence's
true length, so padding never influences the final state.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import FormatError, InvalidArgument, VersionMismatch
from .textprep import (CleanConfig, Label, TokenSeq, Vocabulary, clean_text,
                       default_clean_config, one_hot, vectorize)

MODEL_MAGIC = b"PSTM"
MODEL_FORMAT_VERSION = 1
PROB_FLOOR = 1e-12

# Serialization order of the trainable tensors.
PARAM_FIELDS = (
    "E",
    "W_i", "W_f", "W_g", "W_o",
    "U_i", "U_f", "U_g", "U_o",
    "b_i", "b_f", "b_g", "b_o",
    "W1", "b1", "W2", "b2",
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_len: int
    embed_dim: int = 64
    lstm_hidden: int = 64
    dense_hidden: int = 32
    num_classes: int = 2
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_len", "embed_dim", "lstm_hidden", "dense_hidden", "max_len"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.num_classes != 2:
            raise InvalidArgument("num_classes must be 2")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ModelParams:
    config: ModelConfig
    version: str
    E: np.ndarray
    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_g: np.ndarray
    U_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def packed_lstm(self):
        Wx = np.concatenate((self.W_i, self.W_f, self.W_g, self.W_o), axis=1)
        Wh = np.concatenate((self.U_i, self.U_f, self.U_g, self.U_o), axis=1)
        b = np.concatenate((self.b_i, self.b_f, self.b_g, self.b_o))
        return Wx, Wh, b


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_model(config: ModelConfig, version: str = "m1") -> ModelParams:
    rng = np.random.default_rng(config.seed)
    V, D, H, Dh = config.vocab_len, config.embed_dim, config.lstm_hidden, config.dense_hidden
    t = {}
    t["E"] = _glorot(rng, V, D, (V, D))
    for g in "ifgo":
        t[f"W_{g}"] = _glorot(rng, D, H, (D, H))
    for g in "ifgo":
        t[f"U_{g}"] = _glorot(rng, H, H, (H, H))
    for g in "ifgo":
        t[f"b_{g}"] = np.ones(H) if g == "f" else np.zeros(H)
    t["W1"] = _glorot(rng, H, Dh, (H, Dh))
    t["b1"] = np.zeros(Dh)
    t["W2"] = _glorot(rng, Dh, 2, (Dh, 2))
    t["b2"] = np.zeros(2)
    return ModelParams(config=config, version=version, **t)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_ids(params: ModelParams, ids: np.ndarray) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= params.config.vocab_len):
        raise InvalidArgument("token id out of range for this model's vocabulary")


def forward_batch(params: ModelParams, ids: np.ndarray, lens: np.ndarray):
    """Returns (probs [B, 2], cache) for sequences ids [B, T] with true lengths lens."""
    _check_ids(params, ids)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    lens = np.ascontiguousarray(lens, dtype=np.int64)
    Wx, Wh, b = params.packed_lstm()
    emb = np.ascontiguousarray(params.E[ids])
    hs, cs, gates = kernels.lstm_forward_batch(emb, lens, Wx, Wh, b)
    hT = hs[np.arange(len(lens)), lens]
    z1 = hT @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + params.b2
    probs = _softmax(z2)
    cache = (ids, lens, emb, Wx, Wh, hs, cs, gates, hT, z1, a1, probs)
    return probs, cache


def forward(params: ModelParams, seq: TokenSeq) -> np.ndarray:
    probs, _ = forward_batch(params, seq.ids[None, :], np.array([seq.true_len]))
    return probs[0]


def loss(probs: np.ndarray, target_one_hot: np.ndarray) -> float:
    p = np.maximum(probs, PROB_FLOOR)
    return float(-(target_one_hot * np.log(p)).sum(axis=-1).mean())


def _backward_arrays(params: ModelParams, ids: np.ndarray, lens: np.ndarray,
                     targets: np.ndarray):
    """Exact gradients of the mean batch loss. Returns (grads dict, probs)."""
    probs, cache = forward_batch(params, ids, lens)
    ids, lens, emb, Wx, Wh, hs, cs, gates, hT, z1, a1, _ = cache
    B = len(lens)

    dz2 = (probs - targets) / B
    dW2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.W2.T
    dz1 = da1 * (z1 > 0.0)
    dW1 = hT.T @ dz1
    db1 = dz1.sum(axis=0)
    dhT = dz1 @ params.W1.T

    demb, dWx, dWh, db = kernels.lstm_backward_batch(
        emb, lens, Wx, Wh, hs, cs, gates, np.ascontiguousarray(dhT))

    dE = np.zeros_like(params.E)
    for bi in range(B):
        n = lens[bi]
        if n:
            np.add.at(dE, ids[bi, :n], demb[bi, :n])

    H = params.config.lstm_hidden
    grads = {"E": dE, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
    for k, sl in zip("ifgo", (slice(0, H), slice(H, 2 * H), slice(2 * H, 3 * H), slice(3 * H, 4 * H))):
        grads[f"W_{k}"] = dWx[:, sl]
        grads[f"U_{k}"] = dWh[:, sl]
        grads[f"b_{k}"] = db[sl]
    return grads, probs


def backward(params: ModelParams, batch: Sequence) -> dict:
    """batch: sequence of (TokenSeq, one-hot target). Gradients of the mean loss."""
    if not batch:
        raise InvalidArgument("batch must be non-empty")
    ids = np.stack([seq.ids for seq, _ in batch])
    lens = np.array([seq.true_len for seq, _ in batch], dtype=np.int64)
    targets = np.stack([t for _, t in batch]).astype(np.float64)
    grads, _ = _backward_arrays(params, ids, lens, targets)
    return grads


# -- optimizer --

@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None  # opt-in, 5.0 is a reasonable value


class AdamState:
    def __init__(self, params: ModelParams):
        self.m = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.t = 0


def adam_step(params: ModelParams, grads: dict, state: AdamState,
              cfg: AdamConfig) -> None:
    if cfg.clip_norm is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > cfg.clip_norm:
            scale = cfg.clip_norm / total
            grads = {k: g * scale for k, g in grads.items()}
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        arr = getattr(params, name)
        arr -= update


# -- training --

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-3
    train_fraction: float = 0.8
    shuffle_seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgument("train_fraction must be in (0, 1)")


@dataclass
class EpochStats:
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epochs": [e.to_dict() for e in self.epochs]}


def _eval_arrays(params: ModelParams, ids, lens, targets, batch_size=256):
    losses = []
    correct = 0
    for i in range(0, len(lens), batch_size):
        probs, _ = forward_batch(params, ids[i:i + batch_size], lens[i:i + batch_size])
        tgt = targets[i:i + batch_size]
        p = np.maximum(probs, PROB_FLOOR)
        losses.append(-(tgt * np.log(p)).sum(axis=-1))
        correct += int((probs.argmax(axis=1) == tgt.argmax(axis=1)).sum())
    all_losses = np.concatenate(losses)
    return float(all_losses.mean()), correct / len(lens)


def train(dataset: Sequence, model_config: ModelConfig, train_config: TrainConfig,
          vocab: Vocabulary, clean_config: CleanConfig | None = None,
          version: str = "m1") -> tuple[ModelParams, TrainHistory]:
    """dataset: sequence of (text, Label). Deterministic for fixed seeds."""
    if len(dataset) < 10:
        raise InvalidArgument("dataset must have at least 10 samples")
    labels = {lab for _, lab in dataset}
    if len(labels) < 2:
        raise InvalidArgument("dataset must contain both classes")
    if clean_config is None:
        clean_config = default_clean_config()

    max_len = model_config.max_len
    seqs = [vectorize(clean_text(t, clean_config), vocab, max_len) for t, _ in dataset]
    ids = np.stack([s.ids for s in seqs])
    lens = np.array([s.true_len for s in seqs], dtype=np.int64)
    targets = np.stack([one_hot(lab) for _, lab in dataset])

    rng = np.random.default_rng(train_config.shuffle_seed)
    perm = rng.permutation(len(dataset))
    n_train = int(round(train_config.train_fraction * len(dataset)))
    n_train = min(max(n_train, 1), len(dataset) - 1)
    train_idx, val_idx = perm[:n_train], perm[n_train:]

    params = init_model(model_config, version=version)
    state = AdamState(params)
    adam_cfg = AdamConfig(learning_rate=train_config.learning_rate,
                          clip_norm=train_config.clip_norm)
    history = TrainHistory()
    bs = train_config.batch_size
    for _ in range(train_config.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total_loss = 0.0
        total_correct = 0
        for i in range(0, len(order), bs):
            sel = order[i:i + bs]
            grads, probs = _backward_arrays(params, ids[sel], lens[sel], targets[sel])
            adam_step(params, grads, state, adam_cfg)
            p = np.maximum(probs, PROB_FLOOR)
            total_loss += float(-(targets[sel] * np.log(p)).sum())
            total_correct += int((probs.argmax(axis=1) == targets[sel].argmax(axis=1)).sum())
        val_loss, val_acc = _eval_arrays(params, ids[val_idx], lens[val_idx], targets[val_idx])
        history.epochs.append(EpochStats(
            train_loss=total_loss / len(order),
            train_acc=total_correct / len(order),
            val_loss=val_loss, val_acc=val_acc))
    return params, history


# -- inference --

@dataclass(frozen=True)
class Prediction:
    label: Label
    confidence: float


def check_compatible(params: ModelParams, vocab: Vocabulary) -> None:
    if params.config.vocab_len != len(vocab):
        raise VersionMismatch(
            f"model expects vocab_len {params.config.vocab_len}, "
            f"vocabulary file has {len(vocab)}")


def predict(params: ModelParams, vocab: Vocabulary, raw_text: str,
            clean_config: CleanConfig | None = None) -> Prediction:
    check_compatible(params, vocab)
    if clean_config is None:
        clean_config = default_clean_config()
    seq = vectorize(clean_text(raw_text, clean_config), vocab, params.config.max_len)
    probs = forward(params, seq)
    idx = int(probs.argmax())
    return Prediction(label=Label(idx), confidence=float(probs[idx]))


# -- serialization --

def save_params(params: ModelParams, path) -> None:
    header = json.dumps({
        "config": params.config.to_dict(),
        "version": params.version,
        "tensors": [[name, list(getattr(params, name).shape)] for name in PARAM_FIELDS],
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_FORMAT_VERSION, len(header)))
        f.write(header)
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            f.write(arr.tobytes())


def load_params(path) -> ModelParams:
    try:
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != MODEL_MAGIC:
                raise FormatError(f"not a model file (bad magic {magic!r})")
            head = f.read(8)
            if len(head) != 8:
                raise FormatError("truncated model file header")
            fmt, header_len = struct.unpack("<II", head)
            if fmt != MODEL_FORMAT_VERSION:
                raise FormatError(f"unsupported model format version {fmt}")
            header_bytes = f.read(header_len)
            if len(header_bytes) != header_len:
                raise FormatError("truncated model file header")
            header = json.loads(header_bytes.decode("utf-8"))
            config = ModelConfig(**header["config"])
            tensors = {}
            for name, shape in header["tensors"]:
                count = int(np.prod(shape)) if shape else 1
                raw = f.read(count * 8)
                if len(raw) != count * 8:
                    raise FormatError(f"truncated tensor {name}")
                tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            missing = set(PARAM_FIELDS) - set(tensors)
            if missing:
                raise FormatError(f"missing tensors: {sorted(missing)}")
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError,
            struct.error) as e:
        raise FormatError(f"bad model file {path}: {e}") from e
    return ModelParams(config=config, version=header["version"], **tensors)
