#!/usr/bin/env python3
"""Reference external despeckler: N x N moving average of |s|^2 with
mirror (reflect-101) boundaries.

Usage: boxcar_despeckler.py [N] INPUT.mcslc OUTPUT.refl   (N defaults to 5)
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from identity_despeckler import read_mcslc, write_reflectivity  # noqa: E402


def boxcar(intensity, n):
    r = n // 2
    padded = np.pad(intensity, r, mode="reflect")
    out = np.zeros_like(intensity)
    h, w = intensity.shape
    for dy in range(n):
        for dx in range(n):
            out += padded[dy:dy + h, dx:dx + w]
    return out / (n * n)


def main():
    args = sys.argv[1:]
    if len(args) == 3:
        n = int(args.pop(0))
    elif len(args) == 2:
        n = 5
    else:
        sys.exit(__doc__)
    if n < 1 or n % 2 == 0:
        sys.exit("window size must be a positive odd integer")
    z = read_mcslc(args[0])
    if z.shape[0] != 1:
        sys.exit("expected a single-channel image")
    write_reflectivity(args[1], boxcar(np.abs(z[0]) ** 2, n))


if __name__ == "__main__":
    main()
