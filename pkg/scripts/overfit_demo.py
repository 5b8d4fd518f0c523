#!/usr/bin/env python3
"""Memorization experiment: train a tiny model until it reproduces every
synthetic QA answer exactly.

Trains in chunks, printing answer-masked loss and greedy exact-match after
each chunk, and stops early once both targets are met. With the defaults
(32 pairs, 2 blocks, d_model 64) this takes well under a minute on one CPU
core and ends at 32/32 exact answers.

    python3 scripts/overfit_demo.py
    python3 scripts/overfit_demo.py --pairs 64 --epochs 800 --save model.katz
"""
from __future__ import annotations

import argparse
import time
from dataclasses import dataclass, replace

from katzgpt.corpus import QAPair, build_examples
from katzgpt.evaluation import answer_question
from katzgpt.model import ModelConfig, init_model
from katzgpt.tokenizer import ByteTokenizer
from katzgpt.training import TrainConfig, save_checkpoint, train


@dataclass(frozen=True)
class DemoConfig:
    pairs: int = 32
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_ctx: int = 64
    epochs: int = 500
    chunk: int = 50
    lr: float = 3e-3
    batch_size: int = 8
    seed: int = 0
    target_loss: float = 0.1
    save: str | None = None


def run(config: DemoConfig) -> int:
    tok = ByteTokenizer()
    model_config = ModelConfig(
        n_blocks=config.n_blocks, d_model=config.d_model,
        n_heads=config.n_heads, d_head=config.d_model // config.n_heads,
        d_ff=config.d_ff, n_ctx=config.n_ctx, vocab=tok.vocab_size,
        dropout_p=0.0)
    pairs = [QAPair(f"what is item {i}?", f"answer {i}")
             for i in range(config.pairs)]
    examples = build_examples(pairs, tok, model_config.n_ctx, "qa",
                              mask_prompt_loss=True).examples

    model = init_model(model_config, seed=config.seed)
    base = TrainConfig(lr=config.lr, weight_decay=0.0,
                       batch_size=config.batch_size, seed=config.seed,
                       mask_prompt_loss=True)

    start = time.perf_counter()
    state = None
    exact = 0
    print(f"{'epochs':>7} {'loss':>8} {'exact':>7} {'elapsed':>8}")
    for target in range(config.chunk, config.epochs + 1, config.chunk):
        state = train(model, examples, replace(base, epochs=target), state)
        exact = sum(
            answer_question(model, tok, p.question, max_new_tokens=16)
            == p.answer for p in pairs)
        loss = state.history[-1]
        print(f"{state.epochs_done:>7} {loss:>8.4f} "
              f"{exact:>3}/{len(pairs):<3} {time.perf_counter() - start:>7.1f}s")
        if loss < config.target_loss and exact == len(pairs):
            break

    done = state.history[-1] < config.target_loss and exact == len(pairs)
    status = "memorized" if done else "did not fully memorize"
    print(f"{status}: {exact}/{len(pairs)} exact, "
          f"loss {state.history[-1]:.4f}")
    if config.save:
        save_checkpoint(config.save, model, state,
                        replace(base, epochs=state.epochs_done))
        print(f"checkpoint written to {config.save}")
    return 0 if done else 1


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    defaults = DemoConfig()
    parser.add_argument("--pairs", type=int, default=defaults.pairs)
    parser.add_argument("--n-blocks", type=int, default=defaults.n_blocks)
    parser.add_argument("--d-model", type=int, default=defaults.d_model)
    parser.add_argument("--epochs", type=int, default=defaults.epochs)
    parser.add_argument("--chunk", type=int, default=defaults.chunk)
    parser.add_argument("--lr", type=float, default=defaults.lr)
    parser.add_argument("--batch-size", type=int, default=defaults.batch_size)
    parser.add_argument("--seed", type=int, default=defaults.seed)
    parser.add_argument("--save", help="write the final checkpoint here")
    args = parser.parse_args()
    return run(DemoConfig(
        pairs=args.pairs, n_blocks=args.n_blocks, d_model=args.d_model,
        epochs=args.epochs, chunk=args.chunk, lr=args.lr,
        batch_size=args.batch_size, seed=args.seed, save=args.save))


if __name__ == "__main__":
    raise SystemExit(main())
