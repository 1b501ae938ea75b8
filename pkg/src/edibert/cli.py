"""Command line driver: ``edibert <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (non-finite training loss).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .data import SceneSpec, generate_scenes, load_image_dir
from .imageio import PNMError, read_image, read_mask, to_uint8, write_image, write_pnm
from .masks import latent_to_pixel
from .metrics import MetricReport, coverage, density, extract_features, frechet_distance, masked_l1
from .model import EdiBERT, ModelConfig, load_checkpoint, save_checkpoint, train
from .sampler import SamplerConfig, composite, denoise, inpaint, paste, token_likelihood_heatmap
from .tokenizer import Codebook, PatchTokenizer, build_sequence_dataset, learn_codebook

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config files


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """``key = value`` lines, ``#`` starts a comment; later keys override earlier ones."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str], path: str) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise UsageError(f"{path}: unknown key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}: {key} expects true/false, got {raw!r}")
            defaults[key] = low in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError):
            raise UsageError(f"{path}: bad value {raw!r} for {key}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)
    for action in parser._actions:
        if action.dest in defaults:
            action.required = False


# ---------------------------------------------------------------------------
# helpers


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} {p} does not exist")
    return p


def _need_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} {p} is not a directory")
    return p


def _tokenizer(codebook_path: str, channels: int | None = None, patch: int | None = None) -> PatchTokenizer:
    cb = Codebook.load(_need_file(codebook_path, "codebook"))
    if patch is not None:
        return PatchTokenizer(cb, patch, cb.dim // (patch * patch))
    for c in ((channels,) if channels else (3, 1)):
        f = int(round((cb.dim / c) ** 0.5))
        if f * f * c == cb.dim:
            return PatchTokenizer(cb, f, c)
    raise ValueError(f"codebook dimension {cb.dim} is not f*f*channels")


def _model_for(tok: PatchTokenizer, checkpoint: str) -> EdiBERT:
    model = load_checkpoint(_need_file(checkpoint, "checkpoint"))
    if model.config.vocab != tok.codebook.size:
        raise ValueError(f"checkpoint vocabulary {model.config.vocab} != codebook size {tok.codebook.size}")
    return model


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(epochs=args.epochs, collages=args.collages, top_k=args.top_k, dilation=args.dilation,
                         sigma=args.sigma, ordering=args.order, randomize_init=not args.no_randomize,
                         re_randomize_second_epoch=not args.no_re_randomize,
                         final_collage=not args.no_final_collage, seed=args.seed)


def _log(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> None:
    spec = SceneSpec(size=args.size, background=args.background, min_shapes=args.min_shapes,
                     max_shapes=args.max_shapes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = generate_scenes(spec, args.n, args.seed)
    for i, img in enumerate(images):
        write_image(out / f"scene_{i:05d}.ppm", img)
    _log(f"wrote {len(images)} scenes to {out}")


def cmd_train_tokenizer(args) -> None:
    images, names = load_image_dir(_need_dir(args.data, "data dir"))
    if not images:
        raise ValueError(f"no PGM/PPM images in {args.data}")
    cb = learn_codebook(images, args.codes, args.patch, iters=args.iters, seed=args.seed)
    cb.save(args.out)
    tok = PatchTokenizer(cb, args.patch, images[0].shape[2])
    exact = np.mean([np.all(to_uint8(tok.decode(tok.encode(im))) == to_uint8(im), axis=-1).mean()
                     for im in images])
    _log(f"codebook {cb.id}: {cb.size} codes of dim {cb.dim} from {len(images)} images; "
         f"exact pixel reconstruction {exact:.4f}")


def cmd_train_model(args) -> None:
    tok = _tokenizer(args.codebook, patch=args.patch)
    images, _ = load_image_dir(_need_dir(args.data, "data dir"))
    if not images:
        raise ValueError(f"no PGM/PPM images in {args.data}")
    ds = build_sequence_dataset(images, tok)
    cfg = ModelConfig(vocab=tok.codebook.size, grid=ds.grids.shape[1:], layers=args.layers, width=args.width,
                      heads=args.heads, ff_mult=args.ff_mult, p_rand=args.p_rand, seed=args.seed)
    model = EdiBERT(cfg)
    lines = ["step,loss"]

    def log(step, value):
        lines.append(f"{step},{value!r}")
        if step % 100 == 0 or step == args.steps - 1:
            _log(f"step {step} loss {value:.4f}")

    try:
        train(model, ds.sequences(), args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
              warmup=args.warmup, log=log)
    finally:
        if args.log:
            Path(args.log).write_text("\n".join(lines) + "\n")
    save_checkpoint(model, args.out)
    _log(f"saved {args.out}")


def cmd_denoise(args) -> None:
    tok = _tokenizer(args.codebook)
    model = _model_for(tok, args.checkpoint)
    img = read_image(_need_file(args.image, "image"))
    s = tok.encode(img)
    q = token_likelihood_heatmap(model, s).reshape(s.shape)
    out = denoise(model, s, args.steps, args.top_k, args.seed)
    write_image(args.out, tok.decode(out))
    if args.heatmap:
        # brighter = less likely token
        heat = np.round((1.0 - q) * 255.0).astype(np.uint8)
        write_pnm(args.heatmap, latent_to_pixel(heat, tok.f))
    _log(f"denoise: {int((out != s).sum())} of {s.size} tokens changed")


def _edit(args, run) -> None:
    tok = _tokenizer(args.codebook)
    model = _model_for(tok, args.checkpoint)
    mask = read_mask(_need_file(args.mask, "mask"))
    if run is inpaint:
        image = read_image(_need_file(args.image, "image"))
    elif args.edited:
        image = read_image(_need_file(args.edited, "edited image"))
    else:
        if not (args.source and args.target):
            raise UsageError("composite needs --edited or both --source and --target")
        image = paste(read_image(_need_file(args.source, "source")),
                      read_image(_need_file(args.target, "target")), mask)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    res = run(model, tok, image, mask, _sampler_config(args))
    write_image(args.out, res.image)
    _log(f"wrote {args.out}")


def cmd_inpaint(args) -> None:
    _edit(args, inpaint)


def cmd_composite(args) -> None:
    _edit(args, composite)


def cmd_evaluate(args) -> None:
    real, _ = load_image_dir(_need_dir(args.real_dir, "real dir"))
    fake, fake_names = load_image_dir(_need_dir(args.fake_dir, "fake dir"))
    if len(real) < 2 or len(fake) < 1:
        raise ValueError(f"need >= 2 real and >= 1 generated images, got {len(real)} and {len(fake)}")
    if args.feature_mode == "latent" and args.codebook is None:
        raise UsageError("--feature-mode latent needs --codebook")
    tok = _tokenizer(args.codebook) if args.feature_mode == "latent" else None
    fr = extract_features(real, args.feature_mode, tok, seed=args.seed)
    ff = extract_features(fake, args.feature_mode, tok, seed=args.seed)
    l1 = None
    if args.sources or args.masks:
        if not (args.sources and args.masks):
            raise UsageError("--sources and --masks go together")
        sources, _ = load_image_dir(_need_dir(args.sources, "sources dir"))
        mdir = _need_dir(args.masks, "masks dir")
        masks = [read_mask(p) for p in sorted(mdir.iterdir()) if p.suffix.lower() == ".pgm"]
        if not len(sources) == len(masks) == len(fake):
            raise ValueError(f"{len(fake)} generated images, {len(sources)} sources, {len(masks)} masks")
        l1 = float(np.mean([masked_l1(g, s, m) for g, s, m in zip(fake, sources, masks)]))
    report = MetricReport(
        masked_l1=l1,
        frechet=frechet_distance(fr, ff) if len(fake) >= 2 else float("nan"),
        density=density(fr, ff, args.k),
        coverage=coverage(fr, ff, args.k),
        n_real=len(real), n_fake=len(fake), feature_mode=args.feature_mode, k=args.k,
        config={"real_dir": str(args.real_dir), "fake_dir": str(args.fake_dir), "seed": str(args.seed),
                "first_fake": fake_names[0]},
    )
    text = report.to_text()
    if args.out:
        report.save(args.out)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# parser


def _sampler_flags(p) -> None:
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--collages", type=int, default=4, help="collage re-encodings per epoch")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--sigma", type=float, default=1.0, help="soft-mask blur in pixels; 0 = binary")
    p.add_argument("--order", choices=["spiral", "random"], default="spiral")
    p.add_argument("--no-randomize", action="store_true", help="(inpaint) keep masked tokens at start")
    p.add_argument("--no-re-randomize", action="store_true", help="(inpaint) skip later-epoch re-randomization")
    p.add_argument("--no-final-collage", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file; flags given on the command line win")
    common.add_argument("--threads", type=int, default=None, help="cap numba worker threads")

    parser = _Parser(prog="edibert", description="Token-grid image editing with a bidirectional transformer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic palette scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--background", choices=["flat", "gradient"], default="flat")
    p.add_argument("--min-shapes", type=int, default=1)
    p.add_argument("--max-shapes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-tokenizer", parents=[common], help="learn a patch codebook with k-means")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--codes", type=int, default=64)
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train-model", parents=[common], help="train the transformer on tokenized images")
    p.add_argument("--data", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="CSV of step,loss")
    p.add_argument("--patch", type=int, default=None, help="patch size (default: inferred from codebook)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-mult", type=int, default=4)
    p.add_argument("--p-rand", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("denoise", parents=[common], help="likelihood-guided token resampling")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--heatmap", help="PGM of 1 - p(token), one cell per token")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("inpaint", parents=[common], help="fill the zero region of a mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="P5 mask, 255 = keep, 0 = edit")
    p.add_argument("--out", required=True)
    _sampler_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("composite", parents=[common], help="harmonize a pasted or scribbled edit")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--edited")
    p.add_argument("--source", help="image kept where the mask is 255")
    p.add_argument("--target", help="image pasted where the mask is 0")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    _sampler_flags(p)
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("evaluate", parents=[common], help="masked L1, Frechet distance, density, coverage")
    p.add_argument("--real-dir", required=True)
    p.add_argument("--fake-dir", required=True)
    p.add_argument("--sources")
    p.add_argument("--masks")
    p.add_argument("--codebook")
    p.add_argument("--feature-mode", choices=["latent", "randproj"], default="randproj")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(subparser, values, args.config)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            if _kernels.HAVE_NUMBA:
                import numba

                numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        args.func(args)
    except UsageError as exc:
        print(f"edibert: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"edibert: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PNMError, ValueError, IndexError, OSError) as exc:
        print(f"edibert: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
