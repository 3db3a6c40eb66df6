"""silt-extract: populate an embedding store from a corpus.jsonl.

Default invocation extracts:
    silt-extract --model distilbert --corpus corpus.jsonl --out store/ --max-len 125
The auxiliary `verify` subcommand checks an existing store:
    silt-extract verify --store store/ --corpus corpus.jsonl
"""

from __future__ import annotations

import argparse
import json
import sys


def build_run_parser():
    parser = argparse.ArgumentParser(
        prog="silt-extract",
        description="dump frozen multilingual transformer hidden states",
    )
    parser.add_argument("--model", required=True, choices=("mbert", "distilbert", "xlmr"))
    parser.add_argument("--corpus", required=True, help="corpus.jsonl")
    parser.add_argument("--out", required=True, help="output store directory")
    parser.add_argument("--max-len", dest="max_len", type=int, default=125)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    parser.add_argument("--init", choices=("pretrained", "random"), default="pretrained",
                        help="'random' builds the architecture offline with random weights")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    return parser


def build_verify_parser():
    parser = argparse.ArgumentParser(
        prog="silt-extract verify", description="check a store against its corpus"
    )
    parser.add_argument("--store", required=True)
    parser.add_argument("--corpus", required=True)
    return parser


def cmd_run(args):
    from .extract import ExtractJob, extract

    job = ExtractJob(
        model=args.model,
        corpus_path=args.corpus,
        out_path=args.out,
        max_len=args.max_len,
        batch_size=args.batch_size,
        init=args.init,
        seed=args.seed,
        device=args.device,
    )
    report = extract(job)
    print(
        f"{report.model_name}: {report.records_written} records "
        f"(+{report.aliases} aliases) for {report.sentences} sentence ids; "
        f"H={report.hidden_states}, D={report.width}"
    )
    if report.truncated:
        print(f"truncated {len(report.truncated)} sentences, e.g. {report.truncated[:5]}")
    return 0


def cmd_verify(args):
    from .extract import verify_store

    report = verify_store(args.store, args.corpus)
    print(json.dumps(report, indent=2))
    ok = (
        not report["missing_ids"]
        and not report["crc_failures"]
        and not report["dangling_index_entries"]
        and report["uniform"]
    )
    print(f"verify {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None):
    from .extract import ExtractError

    argv = sys.argv[1:] if argv is None else list(argv)
    if argv[:1] == ["verify"]:
        args = build_verify_parser().parse_args(argv[1:])
        fn = cmd_verify
    else:
        # bare "run" prefix tolerated for symmetry with the verify form
        if argv[:1] == ["run"]:
            argv = argv[1:]
        args = build_run_parser().parse_args(argv)
        fn = cmd_run
    try:
        return fn(args)
    except ExtractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
