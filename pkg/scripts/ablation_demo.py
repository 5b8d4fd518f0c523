#!/usr/bin/env python3
"""Run both ablation sweeps (block count, loss function) on a toy corpus
and print their tables.

Every run in a sweep shares seeds and data order except the ablated
variable, and a sweep rerun from the same spec is byte-identical — this
script reruns the block sweep to demonstrate that.

    python3 scripts/ablation_demo.py
    python3 scripts/ablation_demo.py --data-dir /tmp/toy --epochs 10
"""
from __future__ import annotations

import argparse
import subprocess
import sys
import tempfile
from pathlib import Path

from katzgpt.evaluation import AblationSpec, render_ablation, run_ablation
from katzgpt.model import ModelConfig
from katzgpt.tokenizer import ByteTokenizer
from katzgpt.training import TrainConfig


def ensure_data(data_dir: str | None) -> Path:
    if data_dir and (Path(data_dir) / "qa_train.json").exists():
        return Path(data_dir)
    target = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="katz-toy-"))
    script = Path(__file__).with_name("make_toy_data.py")
    subprocess.run([sys.executable, str(script), "--out-dir", str(target)],
                   check=True, stdout=subprocess.DEVNULL)
    return target


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--data-dir",
                        help="directory from make_toy_data.py (created if missing)")
    parser.add_argument("--epochs", type=int, default=25)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    data = ensure_data(args.data_dir)
    tok = ByteTokenizer()
    model = ModelConfig(n_blocks=2, d_model=64, n_heads=4, d_head=16,
                        d_ff=256, n_ctx=64, vocab=tok.vocab_size,
                        dropout_p=0.0)
    train = TrainConfig(epochs=args.epochs, lr=5e-3, weight_decay=0.0,
                        batch_size=8, seed=args.seed)
    common = dict(model_config=model, train_config=train,
                  qa_train_path=str(data / "qa_train.json"),
                  qa_test_path=str(data / "qa_test.json"),
                  sc_path=str(data / "sc_train.csv"),
                  max_new_tokens=16)

    blocks = AblationSpec(variable="n_blocks", values=[2, 3], **common)
    losses = AblationSpec(variable="loss_kind",
                          values=["cross_entropy", "hinge", "mse"], **common)

    first = render_ablation(blocks, run_ablation(blocks, tok))
    print(first)
    print()
    print(render_ablation(losses, run_ablation(losses, tok)))

    rerun = render_ablation(blocks, run_ablation(blocks, tok))
    print()
    print("block sweep rerun identical:", rerun == first)
    return 0 if rerun == first else 1


if __name__ == "__main__":
    raise SystemExit(main())
