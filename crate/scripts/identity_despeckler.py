#!/usr/bin/env python3
"""Reference external despeckler: writes |s|^2.

Usage: identity_despeckler.py INPUT.mcslc OUTPUT.refl
"""
import struct
import sys

import numpy as np


def read_mcslc(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != b"MCSL" or raw[4] != 1:
        raise ValueError("not an MCSL version 1 file")
    d, h, w = struct.unpack("<III", raw[5:17])
    data = np.frombuffer(raw[17:], dtype="<f4")
    if data.size != 2 * d * h * w:
        raise ValueError("payload length does not match header")
    z = data[0::2].astype(np.float64) + 1j * data[1::2].astype(np.float64)
    return z.reshape(d, h, w)


def write_reflectivity(path, v):
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(b"MCCV" + bytes([1]) + struct.pack("<III", 1, h, w))
        f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    z = read_mcslc(sys.argv[1])
    if z.shape[0] != 1:
        sys.exit("expected a single-channel image")
    write_reflectivity(sys.argv[2], np.abs(z[0]) ** 2)


if __name__ == "__main__":
    main()
