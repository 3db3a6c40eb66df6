"""Command-line surface: train, eval, predict, report, gradcheck,
corpus-summary.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``SILT_SEED`` provides the default seed; ``--threads N`` caps BLAS worker
threads (set before numeric modules load).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# table the corpus-summary --expect check verifies against
SICK_EXPECTED = {
    "train": {"contradiction": 641, "entailment": 1274, "neutral": 2524},
    "valid": {"contradiction": 71, "entailment": 143, "neutral": 281},
    "test": {"contradiction": 712, "entailment": 1404, "neutral": 2790},
}

_GROUP_ALIASES = {
    "label": "label",
    "language": "language_pair",
    "language_pair": "language_pair",
    "relatedness": "relatedness",
    "genre": "genre",
    "length": "length",
}


def default_seed():
    return int(os.environ.get("SILT_SEED", "0"))


# ---------------------------------------------------------------------------
# config file: "key = value" lines, '#' comments


CONFIG_KEYS = {
    "head": ("dim", "heads", "ff_dim", "dropout", "in_states", "in_dim"),
    "optimizer": (
        "beta1",
        "beta2",
        "epsilon",
        "alpha0",
        "alpha_max",
        "step_size",
        "gamma",
        "clip_norm",
    ),
    "run": ("epochs", "batch_size", "dropout", "seed", "lcap"),
}


def parse_config_text(text, path="<config>"):
    from .errors import ConfigError

    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_value(value.strip())
    return values


def _parse_value(text):
    if text.lower() in ("none", "null", ""):
        return None
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            continue
    return text


def build_configs(values, store=None):
    """Split flat key=value pairs into head/optimizer/run configs."""
    from . import model as md
    from . import trainer as tr
    from .errors import ConfigError

    known = set().union(*CONFIG_KEYS.values())
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    head_kwargs = {k: v for k, v in values.items() if k in CONFIG_KEYS["head"] and v is not None}
    if store is not None:
        head_kwargs.setdefault("in_states", store.hidden_states)
        head_kwargs.setdefault("in_dim", store.width)
    opt_kwargs = {k: v for k, v in values.items() if k in CONFIG_KEYS["optimizer"]}
    run_kwargs = {
        k: v for k, v in values.items() if k in CONFIG_KEYS["run"] and k != "dropout"
    }
    if "dropout" in values:
        run_kwargs["dropout"] = values["dropout"]
    return (
        md.HeadConfig(**head_kwargs),
        tr.OptimizerConfig(**{k: v for k, v in opt_kwargs.items() if v is not None}),
        tr.TrainRunConfig(**{k: v for k, v in run_kwargs.items() if v is not None}),
    )


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _split_examples(corpus):
    by_split = {"train": [], "valid": [], "test": []}
    for ex in corpus.examples:
        by_split[ex.split].append(ex)
    return by_split


def _parse_groupings(text):
    from .errors import ConfigError

    groupings = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part not in _GROUP_ALIASES:
            raise ConfigError(f"unknown grouping {part!r}; valid: {sorted(_GROUP_ALIASES)}")
        name = _GROUP_ALIASES[part]
        if name not in groupings:
            groupings.append(name)
    return groupings


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    from dataclasses import asdict

    from . import trainer as tr
    from .corpus import load_jsonl
    from .store import EmbedStore

    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), args.config)
    for override in args.set or []:
        values.update(parse_config_text(override, "--set"))
    for flag in ("epochs", "batch_size", "seed", "dropout", "lcap"):
        v = getattr(args, flag)
        if v is not None:
            values[flag] = v
    values.setdefault("seed", default_seed())

    corpus = load_jsonl(args.corpus)
    splits = _split_examples(corpus)
    store = EmbedStore(args.store)
    head_cfg, opt_cfg, run_cfg = build_configs(values, store)

    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "command": "train",
        "baseline": bool(args.baseline),
        "head": json.loads(head_cfg.to_json()),
        "optimizer": asdict(opt_cfg),
        "run": asdict(run_cfg),
        "seed": run_cfg.seed,
        "corpus_path": os.path.abspath(args.corpus),
        "store_path": os.path.abspath(args.store),
        "hashes": {
            "corpus": _sha256(args.corpus),
            "store_manifest": _sha256(os.path.join(args.store, "manifest.json")),
        },
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(os.path.join(args.out, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)

    if args.baseline:
        result = tr.train_baseline(
            splits["train"], splits["valid"], store, opt_cfg, run_cfg
        )
        tr.save_baseline_checkpoint(args.out, result, opt_cfg, run_cfg)
        last = result.history[-1] if result.history else None
    else:
        resume = (
            tr.load_checkpoint(args.resume, expect_head_cfg=head_cfg) if args.resume else None
        )
        result = tr.train(
            splits["train"], splits["valid"], store, head_cfg, opt_cfg, run_cfg, resume=resume
        )
        tr.save_checkpoint(args.out, result, head_cfg, opt_cfg, run_cfg, run_cfg.epochs)
        last = result.history[-1] if result.history else None
    store.close()
    if last:
        print(
            f"trained {len(result.history)} epochs, {result.step} steps; "
            f"val loss {last.val_loss:.4f}, val acc {last.val_accuracy:.4f}"
        )
    if getattr(result, "diverged", False):
        print("warning: training diverged; checkpoint holds the last good state")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args):
    from . import model as md
    from . import trainer as tr
    from .corpus import load_jsonl
    from .evalreport import PredRecord, grouped_report, write_preds, write_report
    from .store import EmbedStore, assemble_batch
    from .corpus import LABELS

    import numpy as np

    corpus = load_jsonl(args.corpus)
    examples = _split_examples(corpus)[args.split]
    if not examples:
        from .errors import DataError

        raise DataError(f"no examples in split {args.split!r}")
    store = EmbedStore(args.store)
    groupings = _parse_groupings(args.group_by)

    preds = []
    if args.baseline:
        bparams = tr.load_baseline_checkpoint(args.ckpt, store.width)
        forward_fn = lambda batch: md.baseline_forward(batch, bparams).data
    else:
        which = "best" if args.best else "."
        params, head_cfg = md.load_head(os.path.join(args.ckpt, which))
        if head_cfg.in_states != store.hidden_states or head_cfg.in_dim != store.width:
            from .errors import ConfigError

            raise ConfigError(
                f"checkpoint expects H={head_cfg.in_states}, D={head_cfg.in_dim}; "
                f"store provides H={store.hidden_states}, D={store.width}"
            )
        forward_fn = lambda batch: md.forward(batch, params, head_cfg)[0].data

    for start in range(0, len(examples), args.batch_size):
        chunk = examples[start : start + args.batch_size]
        batch = assemble_batch(store, chunk, args.lcap)
        logits = forward_fn(batch)
        for ex, row in zip(chunk, logits):
            preds.append(
                PredRecord(
                    pair_id=ex.pair_id,
                    language_pair=ex.language_pair,
                    gold=ex.label,
                    pred=LABELS[int(np.argmax(row))],
                    logits=[float(x) for x in row],
                )
            )
    store.close()

    os.makedirs(args.out, exist_ok=True)
    write_preds(os.path.join(args.out, "preds.jsonl"), preds)
    report = grouped_report(examples, preds, groupings)
    write_report(
        report, os.path.join(args.out, "report.json"), os.path.join(args.out, "report.md")
    )
    print(
        f"evaluated {report.overall.count} examples: accuracy {report.overall.accuracy:.4f}, "
        f"macro F1 {report.overall.macro_f1:.4f}"
    )
    print(f"reports written to {args.out}")
    return 0


def cmd_predict(args):
    from . import model as md
    from .corpus import LABELS, PairExample
    from .store import EmbedStore, assemble_batch

    import numpy as np

    store = EmbedStore(args.store)
    params, head_cfg = md.load_head(os.path.join(args.ckpt, "best" if args.best else "."))
    pair = PairExample(
        pair_id="adhoc",
        premise_id=args.premise_id,
        hypothesis_id=args.hypothesis_id,
        premise_lang=store.read_record(args.premise_id).language,
        hypothesis_lang=store.read_record(args.hypothesis_id).language,
        label=None,
        split="test",
    )
    batch = assemble_batch(store, [pair], args.lcap)
    logits, _ = md.forward(batch, params, head_cfg)
    store.close()
    row = logits.data[0]
    print(
        json.dumps(
            {
                "premise_id": args.premise_id,
                "hypothesis_id": args.hypothesis_id,
                "label": LABELS[int(np.argmax(row))],
                "logits": [float(x) for x in row],
            }
        )
    )
    return 0


def cmd_report(args):
    from .corpus import load_jsonl
    from .evalreport import grouped_report, read_preds, write_report

    corpus = load_jsonl(args.corpus)
    examples = _split_examples(corpus)[args.split] if args.split else corpus.examples
    preds = read_preds(args.preds)
    keys = {(p.pair_id, p.language_pair) for p in preds}
    examples = [ex for ex in examples if (ex.pair_id, ex.language_pair) in keys]
    report = grouped_report(examples, preds, _parse_groupings(args.group_by))
    os.makedirs(args.out, exist_ok=True)
    write_report(
        report, os.path.join(args.out, "report.json"), os.path.join(args.out, "report.md")
    )
    print(f"report over {report.overall.count} predictions written to {args.out}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_gradcheck

    corrupt = os.environ.get("SILT_GRADCHECK_CORRUPT") == "1"
    errors, passed = run_gradcheck(args.seed, args.trials, corrupt=corrupt)
    for k, err in enumerate(errors):
        status = "ok" if err <= TOLERANCE else "FAIL"
        print(f"trial {k} (seed {args.seed + k}): max relative error {err:.3e} [{status}]")
    print(f"gradcheck {'PASS' if passed else 'FAIL'} (tolerance {TOLERANCE:g})")
    return 0 if passed else 1


def cmd_corpus_summary(args):
    from .corpus import expand_language_pairs, load_mnli_xnli, load_sick, save_jsonl, summarize
    from .errors import ConfigError

    if args.sick_en:
        corpus = load_sick(args.sick_en, args.sick_es)
    elif args.mnli:
        corpus = load_mnli_xnli(args.mnli, args.mnli_mt, args.xnli or [])
    else:
        raise ConfigError("provide --sick-en (and --sick-es) or --mnli/--mnli-mt/--xnli")
    expanded = expand_language_pairs(corpus)
    summary = summarize(expanded.examples)

    pairs = summary.language_pairs()
    print(f"{'split':<8} {'label':<14}" + "".join(f"{lp:>8}" for lp in pairs))
    for split in ("train", "valid", "test"):
        table = summary.table(split)
        for label in sorted(table):
            row = table[label]
            print(f"{split:<8} {label:<14}" + "".join(f"{row.get(lp, 0):>8}" for lp in pairs))
    print(f"total expanded examples: {summary.total()}")
    for key, n in sorted(expanded.warnings.items()):
        print(f"warning: {key} x {n}")

    if args.out:
        save_jsonl(expanded, args.out)
        print(f"expanded corpus written to {args.out}")

    if args.expect == "sick":
        mismatches = []
        for split, by_label in SICK_EXPECTED.items():
            for label, expected in by_label.items():
                for lp in pairs:
                    got = summary.count(split, lp, label)
                    if got != expected:
                        mismatches.append(f"{split}/{lp}/{label}: {got} != {expected}")
        if mismatches:
            print("table check FAILED:")
            for m in mismatches:
                print(f"  {m}")
            return 1
        print("table check PASS")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="silt", description="siamese inter-lingual NLI head over frozen embeddings"
    )
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the head on cached embeddings")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--corpus", required=True, help="corpus.jsonl")
    p.add_argument("--store", required=True, help="embedding store directory")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument("--baseline", action="store_true", help="train the linear baseline instead")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lcap", type=int)
    p.add_argument("--set", action="append", help="extra 'key = value' override")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write reports")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--group-by", dest="group_by", default="label,language")
    p.add_argument("--baseline", action="store_true", help="evaluate the linear baseline")
    p.add_argument("--best", action="store_true", default=True,
                   help="use the best-validation weights (default)")
    p.add_argument("--final", dest="best", action="store_false",
                   help="use the final weights instead of the best")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--lcap", type=int, default=125)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="classify one stored sentence pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--premise-id", required=True)
    p.add_argument("--hypothesis-id", required=True)
    p.add_argument("--best", action="store_true", default=True)
    p.add_argument("--final", dest="best", action="store_false")
    p.add_argument("--lcap", type=int, default=125)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("report", help="re-aggregate a preds.jsonl into reports")
    p.add_argument("--preds", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=("train", "valid", "test"))
    p.add_argument("--group-by", dest="group_by", default="label,language")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full graph")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("corpus-summary", help="load corpora and print split tables")
    p.add_argument("--sick-en")
    p.add_argument("--sick-es")
    p.add_argument("--mnli")
    p.add_argument("--mnli-mt", dest="mnli_mt")
    p.add_argument("--xnli", action="append")
    p.add_argument("--out", help="also write the expanded corpus.jsonl here")
    p.add_argument("--expect", choices=("sick",), help="verify counts against the known table")
    p.set_defaults(fn=cmd_corpus_summary)

    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        if args.command == "gradcheck":
            args.seed = default_seed()

    from .errors import ConfigError, SiltError

    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except SiltError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
