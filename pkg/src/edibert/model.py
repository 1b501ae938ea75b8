"""Bidirectional transformer over token grids, its perturbation objective, and checkpoints."""
from __future__ import annotations

import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .autodiff import (
    Adam,
    Tape,
    Tensor,
    cross_entropy_from_logits,
    embedding,
    gelu,
    layer_norm,
    softmax,
)
from .autodiff.tensor import log_softmax_np
from .masks import sample_training_rectangle
from .rng import make_rng

CHECKPOINT_MAGIC = b"EDBT"
CHECKPOINT_VERSION = 1
_CONFIG_STRUCT = struct.Struct("<IIIIIIIIfI")


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 64
    grid: tuple[int, int] = (8, 8)
    layers: int = 4
    width: int = 64
    heads: int = 4
    ff_mult: int = 4
    p_rand: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        if not 0.0 <= self.p_rand <= 1.0:
            raise ValueError("p_rand must be in [0, 1]")
        if min(self.vocab, self.layers, self.width, self.heads, self.ff_mult, *self.grid) < 1:
            raise ValueError("all model dimensions must be positive")

    @property
    def seq_len(self) -> int:
        return self.grid[0] * self.grid[1]

    def to_bytes(self) -> bytes:
        return _CONFIG_STRUCT.pack(self.vocab, self.seq_len, self.grid[0], self.grid[1], self.layers,
                                   self.width, self.heads, self.ff_mult, self.p_rand, self.seed)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelConfig":
        vocab, seq_len, gh, gw, layers, width, heads, ff, p_rand, seed = _CONFIG_STRUCT.unpack(data)
        if seq_len != gh * gw:
            raise ValueError(f"stored sequence length {seq_len} != grid {gh}x{gw}")
        # shortest decimal that maps to the stored f32, so 0.9 reloads as 0.9
        return cls(vocab, (gh, gw), layers, width, heads, ff, float(str(np.float32(p_rand))), seed)


def param_shapes(cfg: ModelConfig) -> Iterator[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in declaration (and serialization) order."""
    w, ff = cfg.width, cfg.width * cfg.ff_mult
    yield "tok_emb", (cfg.vocab, w)
    yield "pos_emb", (cfg.seq_len, w)
    for i in range(cfg.layers):
        p = f"h{i}."
        yield p + "ln1.g", (w,)
        yield p + "ln1.b", (w,)
        for n in "qkvo":
            yield p + f"w{n}", (w, w)
            yield p + f"b{n}", (w,)
        yield p + "ln2.g", (w,)
        yield p + "ln2.b", (w,)
        yield p + "fc1.w", (w, ff)
        yield p + "fc1.b", (ff,)
        yield p + "fc2.w", (ff, w)
        yield p + "fc2.b", (w,)
    yield "lnf.g", (w,)
    yield "lnf.b", (w,)
    yield "out.w", (w, cfg.vocab)
    yield "out.b", (cfg.vocab,)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    rng = make_rng(cfg.seed, 10)
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        elif name.endswith("emb"):
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if name.endswith(("wo", "fc2.w")):
                std /= math.sqrt(2 * cfg.layers)
            if name == "out.w":
                std = 0.02
            data = rng.normal(0.0, std, size=shape)
        params[name] = Tensor(data.astype(np.float32), requires_grad=True, name=name)
    return params


class EdiBERT:
    """Pre-LN transformer encoder with learned absolute positions and no attention mask."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = dict(param_shapes(config))
        if list(self.params) != list(expected):
            raise ValueError("parameter names/order do not match the config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def astype(self, dtype) -> "EdiBERT":
        return EdiBERT(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k)
                                     for k, v in self.params.items()})

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None]
        if tokens.ndim != 2 or tokens.shape[1] != self.config.seq_len:
            raise ValueError(f"expected sequences of length {self.config.seq_len}, got shape {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab):
            raise ValueError(f"token index outside [0, {self.config.vocab})")
        return tokens

    def forward(self, tokens) -> Tensor:
        """Logits of shape ``(B, l, N)`` for ``(B, l)`` tokens (a ``(l,)`` input gets B = 1)."""
        tokens = self._check_tokens(tokens)
        cfg, p = self.config, self.params
        b, l = tokens.shape
        hd = cfg.width // cfg.heads
        x = embedding(p["tok_emb"], tokens) + p["pos_emb"]
        for i in range(cfg.layers):
            pre = f"h{i}."
            h = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

            def heads(t):
                return t.reshape(b, l, cfg.heads, hd).transpose(0, 2, 1, 3)

            q = heads(h @ p[pre + "wq"] + p[pre + "bq"])
            k = heads(h @ p[pre + "wk"] + p[pre + "bk"])
            v = heads(h @ p[pre + "wv"] + p[pre + "bv"])
            att = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd)), axis=-1)
            ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, l, cfg.width)
            x = x + (ctx @ p[pre + "wo"] + p[pre + "bo"])
            h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h = gelu(h @ p[pre + "fc1.w"] + p[pre + "fc1.b"])
            x = x + (h @ p[pre + "fc2.w"] + p[pre + "fc2.b"])
        x = layer_norm(x, p["lnf.g"], p["lnf.b"])
        return x @ p["out.w"] + p["out.b"]

    def log_probs(self, tokens) -> np.ndarray:
        """``log p^i(. | s)`` as a float64 array ``(B, l, N)`` (or ``(l, N)`` for one sequence)."""
        single = np.ndim(tokens) == 1
        out = log_softmax_np(self.forward(tokens).data)
        return out[0] if single else out

    def conditional_distribution(self, tokens, i: int) -> np.ndarray:
        if not 0 <= i < self.config.seq_len:
            raise IndexError(f"position {i} outside [0, {self.config.seq_len})")
        return np.exp(self.log_probs(np.asarray(tokens).reshape(-1))[i])

    def loss(self, batch: "PerturbedBatch") -> Tensor:
        return cross_entropy_from_logits(self.forward(batch.perturbed), batch.targets, batch.active)


# ---------------------------------------------------------------------------
# perturbation objective


@dataclass
class PerturbedBatch:
    perturbed: np.ndarray  # s~, (B, l)
    targets: np.ndarray    # original s, (B, l); only read where active
    active: np.ndarray     # phi as a boolean mask, (B, l)


def perturb(s: np.ndarray, active: np.ndarray, p_rand: float, vocab: int,
            rng: np.random.Generator | int) -> PerturbedBatch:
    """Each active position independently becomes a uniform random token with prob ``p_rand``."""
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, 6)
    s = np.asarray(s, dtype=np.int64)
    active = np.asarray(active, dtype=bool)
    if active.shape != s.shape:
        raise ValueError(f"active mask {active.shape} does not match sequences {s.shape}")
    draw = rng.random(s.shape) < p_rand
    repl = rng.integers(0, vocab, size=s.shape)
    out = np.where(active & draw, repl, s)
    return PerturbedBatch(out, s.copy(), active.copy())


def rectangle_batch(sequences: np.ndarray, cfg: ModelConfig, rng: np.random.Generator) -> PerturbedBatch:
    """One training rectangle per sequence, perturbed inside the rectangle."""
    sequences = np.asarray(sequences, dtype=np.int64)
    hl, wl = cfg.grid
    active = np.stack([sample_training_rectangle(hl, wl, rng).positions((hl, wl)).reshape(-1)
                       for _ in range(sequences.shape[0])])
    return perturb(sequences, active, cfg.p_rand, cfg.vocab, rng)


def training_step(model: EdiBERT, sequences: np.ndarray, optimizer: Adam, rng: np.random.Generator) -> float:
    batch = rectangle_batch(sequences, model.config, rng)
    optimizer.zero_grad()
    with Tape() as tape:
        loss = model.loss(batch)
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite training loss {value}")
    tape.backward(loss)
    optimizer.step()
    return value


def train(model: EdiBERT, sequences: np.ndarray, steps: int, batch_size: int = 32, lr: float = 1e-3,
          seed: int = 0, warmup: int = 100, log: Callable[[int, float], None] | None = None) -> list[float]:
    """Adam training on random minibatches; linear warmup then constant rate."""
    sequences = np.asarray(sequences, dtype=np.int64).reshape(len(sequences), -1)
    if len(sequences) == 0:
        raise ValueError("empty training set")
    rng = make_rng(seed, 7)
    opt = Adam(model.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        opt.lr = lr * min(1.0, (step + 1) / max(1, warmup))
        idx = rng.integers(0, len(sequences), size=batch_size)
        value = training_step(model, sequences[idx], opt, rng)
        losses.append(value)
        if log is not None:
            log(step, value)
    return losses


def evaluate(model: EdiBERT, sequences: np.ndarray, seed: int = 0, forced: np.ndarray | None = None,
             batch_size: int = 64) -> tuple[float, float]:
    """Held-out objective and top-1 accuracy on perturbed positions.

    Accuracy counts only positions that are active and, when ``forced`` is
    given (a grid-shaped boolean mask), marked there.
    """
    sequences = np.asarray(sequences, dtype=np.int64).reshape(len(sequences), -1)
    rng = make_rng(seed, 8)
    total, n_seq, hit, n_pos = 0.0, 0, 0, 0
    keep = None if forced is None else np.asarray(forced, dtype=bool).reshape(-1)
    for start in range(0, len(sequences), batch_size):
        batch = rectangle_batch(sequences[start:start + batch_size], model.config, rng)
        logits = model.forward(batch.perturbed).data
        loss = cross_entropy_from_logits(Tensor(logits), batch.targets, batch.active)
        total += float(loss.data) * len(batch.targets)
        n_seq += len(batch.targets)
        sel = batch.active if keep is None else batch.active & keep[None]
        hit += int((logits.argmax(-1) == batch.targets)[sel].sum())
        n_pos += int(sel.sum())
    return total / n_seq, hit / max(n_pos, 1)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(model: EdiBERT) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), model.config.to_bytes()]
    for name, _ in param_shapes(model.config):
        parts.append(model.params[name].data.astype("<f4").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> EdiBERT:
    head = 8 + _CONFIG_STRUCT.size
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if len(data) < head:
        raise ValueError("checkpoint truncated inside the config block")
    cfg = ModelConfig.from_bytes(data[8:head])
    shapes = list(param_shapes(cfg))
    need = head + 4 * sum(int(np.prod(s)) for _, s in shapes)
    if len(data) != need:
        raise ValueError(f"checkpoint is {len(data)} bytes, config implies {need}")
    params, off = {}, head
    for name, shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name} holds non-finite values")
        params[name] = Tensor(arr, requires_grad=True, name=name)
        off += 4 * n
    return EdiBERT(cfg, params)


def save_checkpoint(model: EdiBERT, path: str | os.PathLike) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path: str | os.PathLike) -> EdiBERT:
    try:
        return checkpoint_from_bytes(Path(path).read_bytes())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
