"""Command line entry points for every pipeline stage.

Every subcommand accepts a JSON config file plus flag overrides. Exit codes:
0 success, 1 usage error, 2 runtime error (bad data, missing files,
corrupt checkpoints, provider failures).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .corpus import (
    build_examples,
    corpus_stats,
    dedupe,
    load_qa,
    load_sentence_pairs,
    train_test_split,
)
from .errors import ConfigError, KatzGPTError
from .evaluation import (
    AblationSpec,
    evaluate_file,
    render_ablation,
    run_ablation,
)
from .model import ModelConfig, generate, init_model
from .rng import RngStream
from .service import ServerConfig, run_server
from .tokenizer import ByteTokenizer, Tokenizer, load_bpe
from .training import (
    TrainConfig,
    finetune_sequential,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures remapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return raw


def _tokenizer_from(config: dict) -> Tokenizer:
    spec = config.get("tokenizer", {})
    kind = spec.get("kind", "byte")
    if kind == "byte":
        return ByteTokenizer()
    if kind == "bpe":
        try:
            return load_bpe(spec["vocab_path"], spec["merges_path"])
        except KeyError as exc:
            raise ConfigError(f"bpe tokenizer config needs {exc}") from exc
    raise ConfigError(f"tokenizer kind must be 'byte' or 'bpe', got {kind!r}")


def _train_config(config: dict, section: str, args=None) -> TrainConfig:
    merged = dict(config.get(section, {}))
    if args is not None:
        for flag, key in (("epochs", "epochs"), ("lr", "lr"),
                          ("batch_size", "batch_size"), ("seed", "seed"),
                          ("loss", "loss_kind")):
            value = getattr(args, flag, None)
            if value is not None:
                merged[key] = value
    return TrainConfig.from_dict(merged)


def _load_records(path: str, kind: str):
    if kind == "qa":
        return load_qa(path)
    if kind == "sc":
        return load_sentence_pairs(path)
    raise ConfigError(f"corpus kind must be 'qa' or 'sc', got {kind!r}")


def _write_records(path: str, records, kind: str) -> None:
    if kind == "qa":
        payload = [{"question": r.question, "answer": r.answer} for r in records]
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, indent=2)
            f.write("\n")
    else:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["sentence1", "sentence2"])
            for r in records:
                writer.writerow([r.sentence1, r.sentence2])


# --- subcommands ---

def cmd_preprocess(args) -> int:
    config = _read_config(args.config)
    tokenizer = _tokenizer_from(config)
    records = _load_records(args.input, args.kind)
    if args.dedupe:
        records = dedupe(records)
    if args.out_train or args.out_test:
        if not (args.out_train and args.out_test and args.test_fraction):
            raise ConfigError(
                "splitting needs --out-train, --out-test and --test-fraction"
            )
        head, tail = train_test_split(records, args.test_fraction, args.seed or 0)
        _write_records(args.out_train, head, args.kind)
        _write_records(args.out_test, tail, args.kind)
    result = build_examples(records, tokenizer, args.n_ctx, args.kind)
    print(json.dumps(corpus_stats(result), indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    config = _read_config(args.config)
    tokenizer = _tokenizer_from(config)
    model_config = ModelConfig.from_dict(config.get("model", {}))
    train_config = _train_config(config, "train", args)
    records = _load_records(args.corpus, args.kind)
    result = build_examples(records, tokenizer, model_config.n_ctx, args.kind,
                            mask_prompt_loss=train_config.mask_prompt_loss)
    model = init_model(model_config, seed=train_config.seed)
    state = train(model, result.examples, train_config)
    if os.path.dirname(args.save):
        os.makedirs(os.path.dirname(args.save), exist_ok=True)
    save_checkpoint(args.save, model, state, train_config)
    print(json.dumps({
        "examples": len(result.examples),
        "epochs": state.epochs_done,
        "first_epoch_loss": float(state.history[0]),
        "last_epoch_loss": float(state.history[-1]),
        "checkpoint": args.save,
    }, indent=2, sort_keys=True))
    return 0


def cmd_finetune(args) -> int:
    config = _read_config(args.config)
    tokenizer = _tokenizer_from(config)
    if args.checkpoint:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    else:
        model_config = ModelConfig.from_dict(config.get("model", {}))
        model = init_model(model_config, seed=args.seed or 0)
    sc_config = _train_config(config, "sc_train", args)
    qa_config = _train_config(config, "qa_train", args)
    mask = qa_config.mask_prompt_loss
    n_ctx = model.config.n_ctx
    sc = (build_examples(load_sentence_pairs(args.sc_corpus), tokenizer, n_ctx,
                         "sc", mask_prompt_loss=sc_config.mask_prompt_loss).examples
          if args.sc_corpus else [])
    qa = build_examples(load_qa(args.qa_corpus), tokenizer, n_ctx, "qa",
                        mask_prompt_loss=mask).examples
    if args.save_dir:
        os.makedirs(args.save_dir, exist_ok=True)
    _, states = finetune_sequential(model, sc, qa, sc_config, qa_config,
                                    save_dir=args.save_dir)
    print(json.dumps({
        stage: {"epochs": s.epochs_done, "last_epoch_loss": float(s.history[-1])}
        for stage, s in states.items()
    }, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_file(args.predictions)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.format_table())
    return 0


def cmd_ablate(args) -> int:
    raw = _read_config(args.spec)
    tokenizer = _tokenizer_from(raw)
    try:
        spec = AblationSpec(
            variable=raw["variable"],
            values=raw["values"],
            model_config=ModelConfig.from_dict(raw.get("model", {})),
            train_config=TrainConfig.from_dict(raw.get("train", {})),
            qa_train_path=raw["qa_train"],
            qa_test_path=raw["qa_test"],
            sc_path=raw.get("sc"),
            max_new_tokens=raw.get("max_new_tokens", 32),
        )
    except KeyError as exc:
        raise ConfigError(f"ablation spec is missing key {exc}") from exc
    rows = run_ablation(spec, tokenizer)
    print(render_ablation(spec, rows))
    return 0


def cmd_generate(args) -> int:
    config = _read_config(args.config)
    tokenizer = _tokenizer_from(config)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    ids = tokenizer.encode(args.prompt)
    if args.qa:
        ids.append(tokenizer.sep_id)
    rng = RngStream(args.seed) if args.seed is not None else None
    out = generate(model, ids, args.max_new_tokens,
                   temperature=args.temperature, top_k=args.top_k,
                   stop_id=tokenizer.eot_id, rng=rng)
    new = out[len(ids):]
    if new and new[-1] == tokenizer.eot_id:
        new = new[:-1]
    print(tokenizer.decode(new, hide_specials=True))
    return 0


def cmd_serve(args) -> int:
    if args.config:
        server_config = ServerConfig.from_file(args.config)
    else:
        server_config = ServerConfig()
    server_config = server_config.with_env_overrides()
    overrides = {}
    if args.addr is not None:
        overrides["addr"] = args.addr
    if args.port is not None:
        overrides["port"] = args.port
    if args.checkpoint is not None:
        overrides["checkpoint_path"] = args.checkpoint
    if overrides:
        server_config = dataclasses.replace(server_config, **overrides)
    run_server(server_config)
    return 0


# --- parser wiring ---

def build_parser() -> _Parser:
    parser = _Parser(prog="katzgpt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="clean, dedupe, split, and report corpus stats")
    p.add_argument("--config", help="JSON config (tokenizer section)")
    p.add_argument("--input", required=True, help="corpus file")
    p.add_argument("--kind", choices=("qa", "sc"), default="qa")
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--n-ctx", type=int, default=1024)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-train")
    p.add_argument("--out-test")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train from scratch on one corpus")
    p.add_argument("--config", help="JSON config (model/train/tokenizer sections)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=("qa", "sc"), default="qa")
    p.add_argument("--save", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=("cross_entropy", "hinge", "mse"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="two-stage sequential fine-tuning")
    p.add_argument("--config", help="JSON config (model/sc_train/qa_train/tokenizer)")
    p.add_argument("--checkpoint", help="starting weights; omit to init fresh")
    p.add_argument("--sc-corpus", help="sentence-completion CSV (stage 1)")
    p.add_argument("--qa-corpus", required=True, help="QA JSON (stage 2)")
    p.add_argument("--save-dir", help="directory for per-stage checkpoints")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=("cross_entropy", "hinge", "mse"))
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a predictions JSONL file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep from a spec file")
    p.add_argument("--spec", required=True, help="JSON ablation spec")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("generate", help="one-shot generation from a checkpoint")
    p.add_argument("--config", help="JSON config (tokenizer section)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-new-tokens", type=int, default=64, dest="max_new_tokens")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--top-k", type=int, default=0, dest="top_k")
    p.add_argument("--seed", type=int)
    p.add_argument("--qa", action="store_true",
                   help="treat the prompt as a question (append the separator)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--config", help="server JSON config")
    p.add_argument("--addr")
    p.add_argument("--port", type=int)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 0
    except (KatzGPTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
