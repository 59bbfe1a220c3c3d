#!/usr/bin/env python3
"""Recompute mu + n*sigma straight from a losses file.

Independent cross-check for filter reports: parses the file with plain
json, uses numpy's mean and population std, and prints the threshold.
"""

from __future__ import annotations

import argparse
import json

import numpy as np


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("losses", help="losses .jsonl file")
    parser.add_argument("--n", type=float, default=2.0)
    args = parser.parse_args()

    values = []
    with open(args.losses, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values.append(json.loads(line)["loss"])
    arr = np.asarray(values, dtype=np.float64)
    print(repr(float(arr.mean() + args.n * arr.std())))


if __name__ == "__main__":
    main()
