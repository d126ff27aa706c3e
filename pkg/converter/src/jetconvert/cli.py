"""CLI: jet-convert --in corpus.h5 --out jets.jsonl --split train [--limit N]"""

import argparse
import sys

from .converter import SchemaError, convert


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="jet-convert")
    ap.add_argument("--in", dest="in_path", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--split", choices=("train", "val", "test"), default="train")
    ap.add_argument("--limit", type=int, default=None)
    ap.add_argument("--key", default="table", help="HDF5 group holding the table")
    args = ap.parse_args(argv)
    try:
        report = convert(args.in_path, args.out, split=args.split,
                         limit=args.limit, key=args.key)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
