#!/usr/bin/env python3
"""Write a small synthetic meeting-arrangement corpus as canonical JSONL."""
import argparse

from mvsumm.corpus import save_corpus
from mvsumm.trainer import make_synthetic_pairs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output JSONL path")
    ap.add_argument("--pairs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    convs = make_synthetic_pairs(args.pairs, args.seed)
    save_corpus(convs, args.out)
    print(f"wrote {len(convs)} conversations to {args.out}")


if __name__ == "__main__":
    main()
