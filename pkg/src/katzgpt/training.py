"""Batched training: AdamW with decoupled decay, three selectable losses,
two-stage sequential fine-tuning, and bit-exact binary checkpoints.

The loop is deliberately simple: per epoch a seeded shuffle, then for every
batch one forward/loss/backward per example with gradients averaged, one
optimizer update, fresh gradients. Shuffle and dropout streams are derived
from (seed, purpose, epoch), so a run resumed from an epoch-boundary
checkpoint reproduces the uninterrupted run bitwise.

Checkpoint wire format (all integers little-endian):
  magic "KATZ" | u32 version=1 | u32 header-JSON length | header JSON |
  u32 tensor count | per tensor: u16 name length, UTF-8 name, u8 rank,
  u64 dims each, u8 dtype tag (0 = float32), raw little-endian data.
Optimizer moments ride along as tensors named "opt.m.<param>" and
"opt.v.<param>".
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import ops
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .model import Model, ModelConfig, backward_from_logits, forward_with_cache, init_model
from .rng import RngStream, derive

LOSS_KINDS = ("cross_entropy", "hinge", "mse")
STAGES = ("pretrain", "sentence_completion", "qa")

# Purpose tags for derived rng streams (stable across versions).
_STREAM_SHUFFLE = 1
_STREAM_DROPOUT = 2

CHECKPOINT_MAGIC = b"KATZ"
CHECKPOINT_VERSION = 1
_DTYPE_TAG_F32 = 0


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    batch_size: int = 8
    loss_kind: str = "cross_entropy"
    seed: int = 0
    mask_prompt_loss: bool = False
    stage: str = "pretrain"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.weight_decay < 1.0:
            raise ConfigError(f"weight_decay must be in [0, 1), got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epochs_done: int = 0
    rng: RngStream | None = None
    history: list[float] = field(default_factory=list)


def init_state(model: Model) -> TrainState:
    names = model.trainable_names()
    return TrainState(
        m={n: np.zeros_like(model.params[n]) for n in names},
        v={n: np.zeros_like(model.params[n]) for n in names},
    )


# --- losses ---

def _check_labels(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    t_len, n_classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask)
    if labels.shape != (t_len,) or mask.shape != (t_len,):
        raise ShapeError(
            f"labels {labels.shape} and mask {mask.shape} must both match logits rows ({t_len},)"
        )
    active = mask.astype(bool)
    count = int(active.sum())
    if count == 0:
        raise DataError("all positions are masked; loss is undefined")
    for t in np.nonzero(active)[0]:
        if not 0 <= labels[t] < n_classes:
            raise DataError(
                f"label {int(labels[t])} out of range [0, {n_classes}) at position {int(t)}"
            )
    return labels, active, count


def compute_loss(logits: np.ndarray, labels, mask, kind: str):
    """Mean loss over unmasked positions and its gradient w.r.t. logits.

    cross_entropy: softmax negative log likelihood.
    hinge: multiclass margin max(0, 1 + max_{j != y} z_j - z_y).
    mse: ||softmax(z) - onehot(y)||^2 / C.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    if kind == "cross_entropy":
        return ops.cross_entropy(logits, labels, mask)

    labels, active, count = _check_labels(logits, np.asarray(labels), np.asarray(mask))
    d_logits = np.zeros_like(logits)
    total = 0.0
    if kind == "hinge":
        for t in np.nonzero(active)[0]:
            z = logits[t]
            y = int(labels[t])
            others = z.copy()
            others[y] = -np.inf
            j_star = int(np.argmax(others))
            margin = 1.0 + z[j_star] - z[y]
            if margin > 0:
                total += float(margin)
                d_logits[t, j_star] += 1.0 / count
                d_logits[t, y] -= 1.0 / count
        return total / count, d_logits

    # mse over softmax probabilities
    n_classes = logits.shape[1]
    probs = ops.softmax_rows(logits)
    for t in np.nonzero(active)[0]:
        r = probs[t].copy()
        r[int(labels[t])] -= 1.0
        total += float(r @ r) / n_classes
        d_probs = (2.0 / n_classes) * r
        d_logits[t] = ops.softmax_backward(d_probs[None, :], probs[t][None, :])[0] / count
    return total / count, d_logits


# --- optimizer ---

def is_decay_exempt(name: str) -> bool:
    """Layer-norm gains/offsets (names ending .g/.b) skip weight decay."""
    return name.rsplit(".", 1)[-1] in ("g", "b")


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: TrainState, config: TrainConfig) -> None:
    """One decoupled-decay AdamW update in place; state.step advances by 1."""
    if set(grads) != set(state.m):
        missing = set(state.m) ^ set(grads)
        raise ShapeError(f"gradient/moment name mismatch: {sorted(missing)}")
    t = state.step + 1
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    decay_factor = 1.0 - config.lr * config.weight_decay
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        if config.weight_decay != 0.0 and not is_decay_exempt(name):
            p *= decay_factor
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    state.step = t


# --- training loop ---

def epoch_order(config: TrainConfig, epoch: int, n: int) -> np.ndarray:
    """The seeded visiting order for one epoch: a permutation of range(n)."""
    return derive(config.seed, _STREAM_SHUFFLE, epoch).permutation(n)


def _example_fields(example):
    return example.input_ids, example.label_ids, example.loss_mask


def train(model: Model, dataset: Sequence, config: TrainConfig,
          state: TrainState | None = None) -> TrainState:
    """Run epochs state.epochs_done .. config.epochs - 1 over the dataset.

    Per epoch: seeded shuffle, batches of config.batch_size (last may be
    short); per batch one forward/backward per example with the logit
    gradient scaled by 1/batch so gradients average, then one AdamW update.
    history records the mean per-example loss of each epoch.
    """
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    if state is None:
        state = init_state(model)
    n = len(dataset)
    for epoch in range(state.epochs_done, config.epochs):
        order = epoch_order(config, epoch, n)
        state.rng = derive(config.seed, _STREAM_DROPOUT, epoch)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [dataset[int(j)] for j in order[start:start + config.batch_size]]
            grads: dict[str, np.ndarray] | None = None
            for example in batch:
                inputs, labels, loss_mask = _example_fields(example)
                logits, cache = forward_with_cache(model, inputs, training=True, rng=state.rng)
                loss, d_logits = compute_loss(logits, labels, loss_mask, config.loss_kind)
                total += float(loss)
                example_grads = backward_from_logits(model, cache, d_logits / len(batch))
                if grads is None:
                    grads = example_grads
                else:
                    for name, g in example_grads.items():
                        grads[name] += g
            adamw_step(model.params, grads, state, config)
        state.history.append(total / n)
        state.epochs_done = epoch + 1
    return state


def finetune_sequential(model: Model, sc_dataset: Sequence, qa_dataset: Sequence,
                        sc_config: TrainConfig, qa_config: TrainConfig,
                        save_dir: str | None = None):
    """Stage 1 on sentence completion, then stage 2 on QA with the same
    weights but fresh optimizer moments. An empty sc_dataset skips stage 1
    (reducing to plain QA training). Returns (model, stage states dict)."""
    if len(qa_dataset) == 0:
        raise DataError("QA dataset is empty")
    states: dict[str, TrainState] = {}
    if len(sc_dataset) > 0:
        sc_config = replace(sc_config, stage="sentence_completion")
        states["sentence_completion"] = train(model, sc_dataset, sc_config)
        if save_dir is not None:
            save_checkpoint(os.path.join(save_dir, "stage1_sentence_completion.katz"),
                            model, states["sentence_completion"], sc_config)
    qa_config = replace(qa_config, stage="qa")
    states["qa"] = train(model, qa_dataset, qa_config)
    if save_dir is not None:
        save_checkpoint(os.path.join(save_dir, "stage2_qa.katz"),
                        model, states["qa"], qa_config)
    return model, states


# --- checkpoints ---

@dataclass
class Checkpoint:
    header: dict[str, Any]
    tensors: dict[str, np.ndarray]


def _header_dict(model: Model, state: TrainState | None,
                 train_config: TrainConfig | None) -> dict[str, Any]:
    header: dict[str, Any] = {"model": model.config.to_dict()}
    header["stage"] = train_config.stage if train_config is not None else None
    if train_config is not None:
        header["train_config"] = train_config.to_dict()
    if state is not None:
        header["train_state"] = {
            "step": state.step,
            "epochs_done": state.epochs_done,
            "history": state.history,
            "rng": [state.rng.seed, state.rng.counter] if state.rng else None,
        }
    return header


def save_checkpoint(path: str, model: Model, state: TrainState | None = None,
                    train_config: TrainConfig | None = None) -> None:
    """Write model (and optional optimizer state) in the binary format."""
    tensors = dict(model.params)
    if state is not None:
        for name, tensor in state.m.items():
            tensors["opt.m." + name] = tensor
        for name, tensor in state.v.items():
            tensors["opt.v." + name] = tensor
    header_bytes = json.dumps(_header_dict(model, state, train_config),
                              separators=(",", ":")).encode("utf-8")

    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(header_bytes)), header_bytes,
             struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        if tensor.dtype != np.float32:
            raise CheckpointError(
                f"checkpoint format stores float32 only; {name} has dtype {tensor.dtype}"
            )
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            parts.append(struct.pack("<Q", dim))
        parts.append(struct.pack("<B", _DTYPE_TAG_F32))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())

    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at byte offset {self.off}"
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u8(self, what): return struct.unpack("<B", self.take(1, what))[0]
    def u16(self, what): return struct.unpack("<H", self.take(2, what))[0]
    def u32(self, what): return struct.unpack("<I", self.take(4, what))[0]
    def u64(self, what): return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str) -> Checkpoint:
    """Parse the binary format; corrupt input raises with the byte offset."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at byte offset 0")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION}) at byte offset 4"
        )
    header_len = r.u32("header length")
    header_start = r.off
    try:
        header = json.loads(r.take(header_len, "header JSON").decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"invalid header JSON at byte offset {header_start}: {e}") from e
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u16(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = r.u8(f"tensor {name} rank")
        dims = tuple(r.u64(f"tensor {name} dim {d}") for d in range(rank))
        tag = r.u8(f"tensor {name} dtype tag")
        if tag != _DTYPE_TAG_F32:
            raise CheckpointError(
                f"unknown dtype tag {tag} for tensor {name} at byte offset {r.off - 1}"
            )
        n_items = 1
        for dim in dims:
            n_items *= dim
        raw = r.take(4 * n_items, f"tensor {name} data")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r} at byte offset {r.off}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if r.off != len(r.buf):
        raise CheckpointError(
            f"trailing data after last tensor at byte offset {r.off}"
        )
    return Checkpoint(header=header, tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    try:
        config = ModelConfig.from_dict(ckpt.header["model"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"checkpoint header lacks a valid model config: {e}") from e
    params = {n: t for n, t in ckpt.tensors.items() if not n.startswith("opt.")}
    model = Model(config, params)
    expected = init_model(config, seed=0)  # shape template
    if set(params) != set(expected.params):
        missing = set(expected.params) ^ set(params)
        raise CheckpointError(f"checkpoint tensor names mismatch: {sorted(missing)}")
    for name, t in expected.params.items():
        if params[name].shape != t.shape:
            raise CheckpointError(
                f"tensor {name} has shape {params[name].shape}, config implies {t.shape}"
            )
    return model


def state_from_checkpoint(ckpt: Checkpoint, model: Model) -> TrainState | None:
    meta = ckpt.header.get("train_state")
    if meta is None:
        return None
    names = model.trainable_names()
    m = {n: ckpt.tensors.get("opt.m." + n) for n in names}
    v = {n: ckpt.tensors.get("opt.v." + n) for n in names}
    if any(t is None for t in m.values()) or any(t is None for t in v.values()):
        raise CheckpointError("checkpoint declares train state but lacks optimizer tensors")
    rng = None
    if meta.get("rng") is not None:
        rng = RngStream(int(meta["rng"][0]), int(meta["rng"][1]))
    return TrainState(m=m, v=v, step=int(meta["step"]),
                      epochs_done=int(meta["epochs_done"]),
                      rng=rng, history=[float(x) for x in meta["history"]])
