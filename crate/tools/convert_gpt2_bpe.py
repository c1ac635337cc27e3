#!/usr/bin/env python3
"""Convert a GPT-2 style `encoder.json` + `vocab.bpe` pair into the
byte-level tokenizer asset format read by ssmzip.

Usage: convert_gpt2_bpe.py encoder.json vocab.bpe out.json
"""

import json
import sys


def bytes_to_unicode():
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


def main():
    enc_path, bpe_path, out_path = sys.argv[1:4]
    decoder = {v: k for k, v in bytes_to_unicode().items()}
    with open(enc_path, encoding="utf-8") as f:
        encoder = json.load(f)
    size = max(encoder.values()) + 1
    vocab = [None] * size
    for text, idx in encoder.items():
        if text == "<|endoftext|>":
            raw = text.encode("utf-8")
        else:
            raw = bytes(decoder[ch] for ch in text)
        vocab[idx] = raw.hex()
    assert all(v is not None for v in vocab)

    merges = []
    with open(bpe_path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    for line in lines[1:]:
        if not line.strip():
            continue
        left, right = line.split(" ")
        merges.append([encoder[left], encoder[right]])

    with open(out_path, "w", encoding="utf-8") as f:
        f.write('{"format":"byte-bpe/1",\n"vocab":[\n')
        f.write(",\n".join(json.dumps(v) for v in vocab))
        f.write('\n],\n"merges":[\n')
        f.write(",\n".join(f"[{a},{b}]" for a, b in merges))
        f.write("\n]}\n")


if __name__ == "__main__":
    main()
