"""Run a manifest and print the aggregator x attack table.

    python scripts/run_table.py scripts/manifests/mnist_table.toml [--out DIR] [--threads N]
"""
import argparse
import logging
import sys

from fedsa.cli import run_manifest, summarize
from fedsa.config import parse_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("manifest")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    manifest = parse_config(args.manifest)
    code = run_manifest(manifest, args.out, args.seed, args.threads)
    print(summarize(args.out or manifest.out_dir)["text"], end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
