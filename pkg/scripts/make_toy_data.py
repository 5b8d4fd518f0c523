#!/usr/bin/env python3
"""Write a synthetic toy corpus plus ready-to-run config files.

Produces, under --out-dir:
  qa_train.json   item-lookup QA pairs ("what is item 3?" -> "answer 3")
  qa_test.json    a slice of the training items (memorization probe)
  sc_train.csv    sentence-completion pairs for fine-tuning stage 1
  config.json     tokenizer/model/train sections sized for a laptop CPU
  ablation.json   a small block-count sweep over the same files
  glossary.tsv    zh<->en entries so the chat service can round-trip Chinese

The quick-start in the README drives `katzgpt train` / `generate` / `serve`
with these files.
"""
from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path


def qa_pairs(n: int) -> list[dict[str, str]]:
    return [{"question": f"what is item {i}?", "answer": f"answer {i}"}
            for i in range(n)]


def sentence_pairs(n: int) -> list[tuple[str, str]]:
    return [(f"sentence {i} continues", f"as line {i}") for i in range(n)]


CONFIG = {
    "tokenizer": {"kind": "byte"},
    "model": {"n_blocks": 2, "d_model": 64, "n_heads": 4, "d_head": 16,
              "d_ff": 256, "n_ctx": 64, "vocab": 259, "dropout_p": 0.0},
    "train": {"epochs": 450, "lr": 3e-3, "weight_decay": 0.0,
              "batch_size": 8, "seed": 0, "mask_prompt_loss": True},
    "sc_train": {"epochs": 150, "lr": 3e-3, "weight_decay": 0.0,
                 "batch_size": 8, "seed": 0},
    "qa_train": {"epochs": 300, "lr": 3e-3, "weight_decay": 0.0,
                 "batch_size": 8, "seed": 0, "mask_prompt_loss": True},
}

GLOSSARY = [
    ("项目 3 是什么？", "what is item 3?"),
    ("项目 3 是什么", "what is item 3?"),
    ("answer 3", "答案 3"),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--pairs", type=int, default=32,
                        help="number of QA training pairs")
    parser.add_argument("--sentences", type=int, default=16,
                        help="number of sentence-completion pairs")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train = qa_pairs(args.pairs)
    test = train[:: max(1, args.pairs // 8)]
    (out / "qa_train.json").write_text(json.dumps(train, indent=2))
    (out / "qa_test.json").write_text(json.dumps(test, indent=2))

    with (out / "sc_train.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sentence1", "sentence2"])
        writer.writerows(sentence_pairs(args.sentences))

    (out / "config.json").write_text(json.dumps(CONFIG, indent=2))

    ablation = {
        "variable": "n_blocks",
        "values": [2, 3],
        "model": CONFIG["model"],
        "train": {"epochs": 25, "lr": 5e-3, "weight_decay": 0.0,
                  "batch_size": 8, "seed": 1},
        "qa_train": str(out / "qa_train.json"),
        "qa_test": str(out / "qa_test.json"),
        "sc": str(out / "sc_train.csv"),
        "max_new_tokens": 16,
        "tokenizer": {"kind": "byte"},
    }
    (out / "ablation.json").write_text(json.dumps(ablation, indent=2))

    with (out / "glossary.tsv").open("w", encoding="utf-8") as f:
        f.write("# toy zh<->en glossary for the chat service\n")
        for source, target in GLOSSARY:
            f.write(f"{source}\t{target}\n")

    for name in ("qa_train.json", "qa_test.json", "sc_train.csv",
                 "config.json", "ablation.json", "glossary.tsv"):
        print(out / name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
