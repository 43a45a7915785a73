#!/usr/bin/env python3
"""Materialize the standard grayscale test corpus as PGM files.

The images ship with scikit-image; they are squared, grayscaled, resized,
and written as 16-bit PGMs so the CLI tools can consume them.
"""

import argparse
import os

from spisim.analyze import STANDARD_CORPUS_NAMES, standard_corpus
from spisim.imgcore import save_image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--out-dir", default="corpus")
    ap.add_argument("--names", nargs="*", default=list(STANDARD_CORPUS_NAMES))
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    for name, img in standard_corpus(size=args.size, names=args.names):
        path = os.path.join(args.out_dir, f"{name}.pgm")
        save_image(img, path, depth=16)
        print(f"wrote {path} ({img.width}x{img.height})")


if __name__ == "__main__":
    main()
