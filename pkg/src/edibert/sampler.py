"""Editing samplers: likelihood-guided denoising and mask-guided inpainting/compositing.

Both work on a token grid through a trained ``EdiBERT``; the inpainting path
moves between pixels and tokens through a ``PatchTokenizer``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .masks import (
    LatentEditSet,
    dilate,
    downsample_mask,
    gaussian_soft_mask,
    random_order,
    spiral_order,
    validate_pixel_mask,
)
from .model import EdiBERT
from .rng import make_rng
from .tokenizer import PatchTokenizer, as_image

_TINY = np.nextafter(0.0, 1.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SamplerConfig:
    epochs: int = 2
    collages: int = 4        # collage re-encodings per epoch
    top_k: int = 100         # clamped to the vocabulary size at run time
    dilation: int = 1
    sigma: float = 1.0       # gaussian soft-mask sigma in pixels; 0 gives a binary collage
    ordering: str = "spiral"
    randomize_init: bool = True
    re_randomize_second_epoch: bool = True
    final_collage: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.collages < 0:
            raise ValueError("collages per epoch must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.dilation < 0:
            raise ValueError("dilation must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.ordering not in ("spiral", "random"):
            raise ValueError(f"unknown ordering {self.ordering!r} (spiral or random)")


# ---------------------------------------------------------------------------
# shared pieces


def _log_probs(model: EdiBERT, s: np.ndarray) -> np.ndarray:
    return model.log_probs(np.asarray(s, dtype=np.int64).reshape(-1))


def token_likelihood_heatmap(model: EdiBERT, s: np.ndarray) -> np.ndarray:
    """``q_i = p^i(s_i | s)`` per position, clipped into the open interval (0, 1)."""
    s = np.asarray(s, dtype=np.int64).reshape(-1)
    lp = _log_probs(model, s)
    return np.clip(np.exp(lp[np.arange(len(s)), s]), _TINY, _BELOW_ONE)


def _categorical(weights: np.ndarray, rng: np.random.Generator) -> int:
    # inverse CDF with one uniform draw; zero-weight entries are never chosen
    cdf = np.cumsum(weights)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(weights) - 1))


def position_weights(log_q: np.ndarray) -> np.ndarray:
    """Selection weights proportional to ``1 / q_i``, from log-likelihoods."""
    z = -np.asarray(log_q, dtype=np.float64)
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def select_suspicious_position(q: np.ndarray, rng: np.random.Generator | int) -> int:
    """Draw a position with probability proportional to ``1 / q_i``."""
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, 21)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size == 0 or np.any(q <= 0) or not np.all(np.isfinite(q)):
        raise ValueError("q must hold positive finite likelihoods")
    return _categorical(position_weights(np.log(q)), rng)


def top_k_multinomial(dist: np.ndarray, k: int, rng: np.random.Generator | int) -> int:
    """Sample from the ``k`` most likely entries, renormalized; ties keep the smaller index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, 22)
    dist = np.asarray(dist, dtype=np.float64).reshape(-1)
    keep = np.argsort(-dist, kind="stable")[:k]
    keep.sort()
    return int(keep[_categorical(dist[keep], rng)])


def denoise(model: EdiBERT, s: np.ndarray, steps: int, top_k: int = 100, seed: int = 0) -> np.ndarray:
    """Repeatedly resample a likely-corrupted position; returns a new grid shaped like ``s``."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    s = np.array(s, dtype=np.int64)
    flat = s.reshape(-1)
    k = min(top_k, model.config.vocab)
    rng = make_rng(seed, 20)
    for _ in range(steps):
        lp = _log_probs(model, flat)
        p = _categorical(position_weights(lp[np.arange(len(flat)), flat]), rng)
        flat[p] = top_k_multinomial(np.exp(lp[p]), k, rng)
    return s


# ---------------------------------------------------------------------------
# inpainting / compositing


def collage_schedule(n: int, c: int) -> dict[int, int]:
    """Update count (1-based, per epoch) -> number of collages after it.

    Collage k of c fires after update ceil(k * n / c), so every epoch holds
    exactly ``c`` of them and the last lands on the final position.
    """
    out: dict[int, int] = {}
    for k in range(1, c + 1):
        u = max(1, math.ceil(k * n / c))
        out[u] = out.get(u, 0) + 1
    return out


@dataclass
class EditSession:
    model: EdiBERT
    tokenizer: PatchTokenizer
    source: np.ndarray        # i_m, float32 (H, W, C)
    mask: np.ndarray          # pixel mask, 1 = preserved
    soft: np.ndarray          # soft mask used for collages
    edit: LatentEditSet
    order: list[tuple[int, int]]
    s: np.ndarray             # current token grid
    steps: int = 0
    collages: int = 0
    visited: set = field(default_factory=set)

    def collage(self) -> None:
        """``s <- E(src * soft + D(s) * (1 - soft))``."""
        self.s = self.tokenizer.encode(self.blend())
        self.collages += 1

    def blend(self) -> np.ndarray:
        soft = self.soft[:, :, None]
        return (self.source * soft + self.tokenizer.decode(self.s) * (1.0 - soft)).astype(np.float32)

    def resample(self, pos: tuple[int, int], k: int, rng: np.random.Generator, randomize: bool) -> None:
        if randomize:
            self.s[pos] = rng.integers(0, self.model.config.vocab)
        lp = _log_probs(self.model, self.s)[pos[0] * self.s.shape[1] + pos[1]]
        self.s[pos] = top_k_multinomial(np.exp(lp), k, rng)
        self.visited.add(pos)
        self.steps += 1


@dataclass
class EditResult:
    image: np.ndarray
    tokens: np.ndarray
    session: EditSession | None  # None when composite had nothing to edit


def start_session(model: EdiBERT, tokenizer: PatchTokenizer, image: np.ndarray, mask: np.ndarray,
                  cfg: SamplerConfig) -> EditSession:
    src = as_image(image).astype(np.float32)
    if src.shape[2] != tokenizer.channels:
        raise ValueError(f"image has {src.shape[2]} channels, tokenizer expects {tokenizer.channels}")
    m = validate_pixel_mask(mask)
    if m.shape != src.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {src.shape[:2]}")
    if m.all() or not m.any():
        raise ValueError("degenerate mask: it must hold both preserved (1) and edit (0) pixels")
    s = tokenizer.encode(src)
    if s.shape != model.config.grid:
        raise ValueError(f"image encodes to a {s.shape} grid, model expects {model.config.grid}")
    edit = dilate(downsample_mask(m, tokenizer.f), cfg.dilation)
    order = spiral_order(edit) if cfg.ordering == "spiral" else random_order(edit, cfg.seed)
    return EditSession(model, tokenizer, src, m, gaussian_soft_mask(m, cfg.sigma), edit, order, s)


def run_session(session: EditSession, cfg: SamplerConfig) -> EditResult:
    rng = make_rng(cfg.seed, 23)
    vocab = session.model.config.vocab
    k = min(cfg.top_k, vocab)
    if cfg.randomize_init:
        base = session.edit.base
        session.s[base] = rng.integers(0, vocab, size=int(base.sum()))
    schedule = collage_schedule(len(session.order), cfg.collages)
    for epoch in range(cfg.epochs):
        redo = cfg.randomize_init and cfg.re_randomize_second_epoch and epoch >= 1
        for u, pos in enumerate(session.order, start=1):
            session.resample(pos, k, rng, redo)
            for _ in range(schedule.get(u, 0)):
                session.collage()
    if cfg.final_collage:
        image = session.blend()
    else:
        image = session.tokenizer.decode(session.s).astype(np.float32)
    return EditResult(image, session.s.copy(), session)


def inpaint(model: EdiBERT, tokenizer: PatchTokenizer, image: np.ndarray, mask: np.ndarray,
            cfg: SamplerConfig = SamplerConfig()) -> EditResult:
    """Fill the zero region of ``mask``; base-set tokens start from uniform noise."""
    return run_session(start_session(model, tokenizer, image, mask, cfg), cfg)


def composite(model: EdiBERT, tokenizer: PatchTokenizer, edited: np.ndarray, mask: np.ndarray,
              cfg: SamplerConfig = SamplerConfig()) -> EditResult:
    """Harmonize a user edit: same loop as ``inpaint`` but no token is randomized.

    An all-ones mask has nothing to edit and returns the input unchanged.
    """
    cfg = replace(cfg, randomize_init=False, re_randomize_second_epoch=False)
    m = validate_pixel_mask(mask)
    if m.all():
        img = as_image(edited).astype(np.float32)
        return EditResult(img.copy(), tokenizer.encode(img), None)
    return run_session(start_session(model, tokenizer, edited, m, cfg), cfg)


def paste(source: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``source * m + target * (1 - m)``: the edited image for compositing."""
    m = validate_pixel_mask(mask).astype(np.float32)[:, :, None]
    src, tgt = as_image(source), as_image(target)
    if src.shape != tgt.shape or src.shape[:2] != m.shape[:2]:
        raise ValueError(f"shape mismatch: source {src.shape}, target {tgt.shape}, mask {m.shape[:2]}")
    return (src * m + tgt * (1.0 - m)).astype(np.float32)


# ---------------------------------------------------------------------------
# ablations

ABLATIONS = {
    "full": {},
    "no_randomization": {"randomize_init": False},
    "no_collage": {"collages": 0, "final_collage": False},
    "random_order": {"ordering": "random"},
}


def ablation_report(model: EdiBERT, tokenizer: PatchTokenizer,
                    cases: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
                    cfg: SamplerConfig = SamplerConfig()) -> dict[str, dict[str, float]]:
    """Run every ablation of ``inpaint`` on ``(image, mask, reference_grid)`` cases.

    Per variant: ``token_accuracy`` on base-set positions against the
    reference grid and ``masked_l1`` against the source over preserved pixels.
    Case ``i`` uses seed ``cfg.seed + i`` in every variant.
    """
    from .metrics import masked_l1

    report = {}
    for name, overrides in ABLATIONS.items():
        hits = total = 0
        l1 = []
        for i, (image, mask, ref) in enumerate(cases):
            run_cfg = replace(cfg, seed=cfg.seed + i, **overrides)
            res = inpaint(model, tokenizer, image, mask, run_cfg)
            base = res.session.edit.base
            hits += int((res.tokens[base] == np.asarray(ref)[base]).sum())
            total += int(base.sum())
            l1.append(masked_l1(res.image, image, mask))
        report[name] = {"token_accuracy": hits / max(total, 1), "masked_l1": float(np.mean(l1)),
                        "cases": float(len(cases))}
    return report


def format_ablation_report(report: dict[str, dict[str, float]]) -> str:
    lines = []
    for name in ABLATIONS:
        for key, value in report[name].items():
            lines.append(f"{name}.{key} = {value:.6f}")
    return "\n".join(lines) + "\n"
