#!/usr/bin/env python3
"""Reference TOY_MIX implementation, written from docs/toy_mix.md only.

Prints the golden vectors frozen in the crypto tests.
"""
import struct

M64 = (1 << 64) - 1


def ctx_bytes(label: bytes, nonce: bytes, ids):
    out = struct.pack(">I", len(label)) + label
    out += struct.pack(">I", len(nonce)) + nonce
    out += struct.pack(">I", len(ids))
    for i in ids:
        out += struct.pack(">I", len(i)) + i
    return out


def toy_mix(key: bytes, ctx: bytes, length: int) -> bytes:
    h = 0xCBF29CE484222325
    for b in struct.pack(">I", len(key)) + key + ctx:
        h = ((h ^ b) * 0x100000001B3) & M64
    out = b""
    ctr = h
    while len(out) < length:
        ctr = (ctr + 0x9E3779B97F4A7C15) & M64
        z = ctr
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        z ^= z >> 31
        out += struct.pack("<Q", z)
    return out[:length]


VECTORS = [
    (bytes(16), b"t", bytes([1] * 16), [], 16),
    (bytes(range(16)), b"otk", bytes([0xAA] * 16), [], 16),
    (bytes(range(16)), b"otk", bytes([0xAA] * 16), [b"A", b"B", b"C"], 16),
    (bytes([0xFF] * 32), b"group", bytes(range(16)), [], 32),
]

if __name__ == "__main__":
    for key, label, nonce, ids, n in VECTORS:
        print(key.hex(), label.decode(), nonce.hex(), [i.decode() for i in ids], n)
        print("  ->", toy_mix(key, ctx_bytes(label, nonce, ids), n).hex())
