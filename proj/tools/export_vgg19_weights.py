#!/usr/bin/env python3
"""Export torchvision VGG-19 ImageNet weights to a featxlate tensor archive (.fxar).

All 16 convolution layers and the first two classifier layers (fc6, fc7) are
written; the embedding head runs the full convolutional trunk.

    python3 tools/export_vgg19_weights.py vgg19.fxar
    python3 tools/export_vgg19_weights.py vgg19.fxar --state-dict vgg19-dcbb9e9d.pth
"""

import argparse
import json
import struct
import zlib

import numpy as np
import torch

MAGIC = b"FXAR"
VERSION = 1
DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}
# Indices of the conv layers in torchvision's vgg19.features.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]
CLASSIFIER_INDICES = [0, 3]


def load_state_dict(path):
    if path:
        return torch.load(path, map_location="cpu")
    import torchvision

    weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
    return torchvision.models.vgg19(weights=weights).state_dict()


def select(state):
    names = []
    for i in CONV_INDICES:
        names += [f"features.{i}.weight", f"features.{i}.bias"]
    for i in CLASSIFIER_INDICES:
        names += [f"classifier.{i}.weight", f"classifier.{i}.bias"]
    missing = [n for n in names if n not in state]
    if missing:
        raise SystemExit(f"state dict lacks {missing[0]}")
    return {n: state[n].detach().cpu().contiguous().numpy().astype(np.float32) for n in names}


def encode(tensors, meta):
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta).encode("utf-8")
    out += struct.pack("<I", len(meta_bytes)) + meta_bytes
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        name_bytes = name.encode("utf-8")
        out += struct.pack("<I", len(name_bytes)) + name_bytes
        out += struct.pack("<B", DTYPE_TAGS[arr.dtype])
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}q", *arr.shape)
        out += struct.pack("<Q", len(raw)) + raw
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("output")
    parser.add_argument("--state-dict", help="local .pth file instead of the torchvision download")
    args = parser.parse_args()
    tensors = select(load_state_dict(args.state_dict))
    with open(args.output, "wb") as f:
        f.write(encode(tensors, {"source": "torchvision vgg19 IMAGENET1K_V1"}))
    print(f"wrote {len(tensors)} tensors to {args.output}")


if __name__ == "__main__":
    main()
