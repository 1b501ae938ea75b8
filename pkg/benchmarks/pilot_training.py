"""Pilot run behind the training thresholds used by the acceptance suite.

Trains the default toy config for 2000 steps on the noise-free 8x8 toy
language and writes held-out loss / rule-forced accuracy to
``pilot_training.log`` next to this file.
"""
import math
import sys
import time
from pathlib import Path

from edibert.data import ToyLanguageSpec, generate_toy_language, rule_forced_mask
from edibert.model import EdiBERT, ModelConfig, evaluate, train


def main(steps: int = 2000) -> None:
    spec = ToyLanguageSpec()
    train_set, _ = generate_toy_language(spec, 4000, 0)
    held_out, _ = generate_toy_language(spec, 256, 1)
    model = EdiBERT(ModelConfig())
    forced = rule_forced_mask(spec)
    lines = [f"ln N = {math.log(spec.n_codes):.4f}  threshold 0.2 ln N = {0.2 * math.log(spec.n_codes):.4f}"]
    loss, acc = evaluate(model, held_out, 0, forced)
    lines.append(f"init held-out loss {loss:.4f} accuracy {acc:.4f}")
    t0 = time.perf_counter()

    def log(step, value):
        if step % 100 == 0 or step == steps - 1:
            lines.append(f"step {step} train loss {value:.4f} elapsed {time.perf_counter() - t0:.1f}s")
            print(lines[-1], flush=True)

    train(model, train_set, steps, batch_size=32, lr=1e-3, seed=0, log=log)
    loss, acc = evaluate(model, held_out, 0, forced)
    lines.append(f"final held-out loss {loss:.4f} rule-forced accuracy {acc:.4f}")
    print(lines[-1])
    (Path(__file__).parent / "pilot_training.log").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 2000)
