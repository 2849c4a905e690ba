#!/usr/bin/env python3
# Copyright 2026 The SpikeForge Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Fits the committed fixture networks.

Reads train/test SFT files written by `spikeforge fixture --data-only` and
writes an SFM model with unfused BatchNorm and AvgPool nodes.

  python3 tools/train_fixture.py --kind two-moons-conv --data /tmp/tm --out data/fixtures
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn


def read_sft(path):
    raw = Path(path).read_bytes()
    assert raw[:4] == b"SFT1", path
    version, n, c, h, w, classes = struct.unpack_from("<6I", raw, 4)
    assert version == 1
    off = 28
    count = n * c * h * w
    x = np.frombuffer(raw, "<f4", count, off).reshape(n, c, h, w)
    y = np.frombuffer(raw, "<u4", n, off + 4 * count)
    return torch.tensor(x.copy()), torch.tensor(y.astype(np.int64)), classes


class Writer:
    def __init__(self):
        self.blob = []
        self.size = 0

    def tensor(self, t):
        a = t.detach().cpu().numpy().astype("<f4")
        ref = {"shape": list(a.shape), "offset": self.size * 4, "count": int(a.size)}
        self.blob.append(a.ravel())
        self.size += a.size
        return ref


def build(kind):
    if kind == "two-moons-conv":
        return nn.Sequential(
            nn.Conv2d(1, 6, 3, padding=1), nn.BatchNorm2d(6), nn.ReLU(), nn.AvgPool2d(2),
            nn.Conv2d(6, 12, 3, padding=1), nn.BatchNorm2d(12), nn.ReLU(), nn.AvgPool2d(2),
            nn.Flatten(), nn.Linear(48, 8))
    if kind == "blob-mlp":
        return nn.Sequential(
            nn.AvgPool2d(2), nn.Flatten(),
            nn.Linear(8, 32), nn.BatchNorm1d(32), nn.ReLU(),
            nn.Linear(32, 32), nn.BatchNorm1d(32), nn.ReLU(),
            nn.Linear(32, 5))
    raise SystemExit(f"unknown kind {kind}")


NAMES = {nn.Conv2d: "conv", nn.BatchNorm2d: "bn", nn.BatchNorm1d: "bn", nn.ReLU: "relu",
         nn.AvgPool2d: "pool", nn.Flatten: "flatten", nn.Linear: "fc"}


def export(model, input_shape, classes):
    w = Writer()
    nodes = [{"id": "input", "kind": "Input", "inputs": []}]
    prev = "input"
    counters = {}
    for m in model:
        base = NAMES[type(m)]
        counters[base] = counters.get(base, 0) + 1
        nid = f"{base}{counters[base]}"
        node = {"id": nid, "inputs": [prev]}
        if isinstance(m, nn.Conv2d):
            node.update(kind="Conv", stride=list(m.stride), padding=list(m.padding), groups=m.groups,
                        tensors={"weight": w.tensor(m.weight), "bias": w.tensor(m.bias)})
        elif isinstance(m, nn.Linear):
            node.update(kind="Linear", tensors={"weight": w.tensor(m.weight), "bias": w.tensor(m.bias)})
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            node.update(kind="BatchNorm", epsilon=m.eps,
                        tensors={"gamma": w.tensor(m.weight), "beta": w.tensor(m.bias),
                                 "running_mean": w.tensor(m.running_mean),
                                 "running_var": w.tensor(m.running_var)})
        elif isinstance(m, nn.AvgPool2d):
            k = m.kernel_size if isinstance(m.kernel_size, tuple) else (m.kernel_size,) * 2
            s = m.stride if isinstance(m.stride, tuple) else (m.stride,) * 2
            node.update(kind="AvgPool", kernel=list(k), stride=list(s))
        elif isinstance(m, nn.ReLU):
            node["kind"] = "ReLU"
        elif isinstance(m, nn.Flatten):
            node["kind"] = "Flatten"
        nodes.append(node)
        prev = nid
    nodes.append({"id": "output", "kind": "Output", "inputs": [prev]})
    manifest = {"format_version": 1,
                "metadata": {"input_shape": list(input_shape), "class_count": classes},
                "blob_floats": int(w.size), "nodes": nodes}
    text = json.dumps(manifest, separators=(",", ":")).encode()
    blob = np.concatenate(w.blob).astype("<f4").tobytes() if w.blob else b""
    return b"SFM1" + struct.pack("<IQ", 1, len(text)) + text + blob


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", required=True)
    ap.add_argument("--data", required=True, help="directory with train.sft and test.sft")
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    xtr, ytr, classes = read_sft(Path(args.data) / "train.sft")
    xte, yte, _ = read_sft(Path(args.data) / "test.sft")
    model = build(args.kind)
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(args.epochs):
        model.train()
        perm = torch.randperm(len(xtr))
        for i in range(0, len(xtr), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss_fn(model(xtr[idx]), ytr[idx]).backward()
            opt.step()
        sched.step()
    model.eval()
    with torch.no_grad():
        acc = (model(xte).argmax(1) == yte).float().mean().item() * 100
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.kind}.sfm").write_bytes(export(model, xtr.shape[1:], classes))
    print(f"{args.kind}: torch test accuracy {acc:.2f}%")


if __name__ == "__main__":
    main()
