import time
from types import SimpleNamespace

import numpy as np
import pytest

from edibert.data import SceneSpec, ToyLanguageSpec, generate_scenes, generate_toy_language, rule_forced_mask
from edibert.model import EdiBERT, ModelConfig, evaluate, train
from edibert.tokenizer import PatchTokenizer, lattice_codebook, learn_codebook

TRAIN_STEPS = 2000


@pytest.fixture(scope="session")
def toy():
    """Default toy config trained for 2000 steps on the noise-free 8x8 language (one run per session)."""
    spec = ToyLanguageSpec()
    train_set, _ = generate_toy_language(spec, 4000, 0)
    held_out, _ = generate_toy_language(spec, 256, 1)
    forced = rule_forced_mask(spec)
    model = EdiBERT(ModelConfig())
    init_loss, _ = evaluate(model, held_out, 0, forced)
    t0 = time.process_time()
    losses = train(model, train_set, TRAIN_STEPS, batch_size=32, lr=1e-3, seed=0)
    seconds = time.process_time() - t0
    loss, acc = evaluate(model, held_out, 0, forced)
    return SimpleNamespace(model=model, spec=spec, losses=np.array(losses), init_loss=init_loss,
                           held_out=held_out, loss=loss, accuracy=acc, seconds=seconds,
                           # 8x8 tokens <-> 32x32 single-channel images, exact both ways
                           tokenizer=PatchTokenizer(lattice_codebook(64, 4, 1), 4, 1))


@pytest.fixture(scope="session")
def scene_tokenizer():
    imgs = generate_scenes(SceneSpec(), 300, 11)
    return PatchTokenizer(learn_codebook(imgs, 64, 4, seed=0), 4, 3), imgs


@pytest.fixture(scope="session")
def small_model():
    return EdiBERT(ModelConfig(vocab=64, grid=(8, 8), layers=1, width=16, heads=2, seed=3))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record and print one PASS/FAIL line; the terminal summary repeats them all."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
