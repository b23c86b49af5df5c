#!/usr/bin/env python3
"""Export a torchvision classifier to the weights.json + weights.bin format.

Writes <out>/weights.json, <out>/weights.bin and <out>/model_spec.json; the
resulting spec loads with `unitscope --model-spec <out>/model_spec.json` or
`_unitscope.load_model`. BatchNorm layers are folded into the preceding conv,
so the exported graph is conv/relu/maxpool/add/avgpool/linear only.

Examples:
  python tools/export_torchvision.py --arch resnet50 --out models/resnet50
  python tools/export_torchvision.py --arch alexnet --no-pretrained --out /tmp/ax
"""

import argparse
import json
import pathlib

import numpy as np
import torch
import torchvision


class GraphBuilder:
    def __init__(self):
        self.tensors = {}
        self.ops = []
        self.blob = bytearray()
        self.last = "input"

    def tensor(self, name, array):
        arr = np.ascontiguousarray(
            array.detach().cpu().numpy() if torch.is_tensor(array) else array,
            dtype=np.float32,
        )
        self.tensors[name] = {"shape": list(arr.shape), "offset": len(self.blob)}
        self.blob += arr.tobytes()
        return name

    def op(self, name, kind, inputs=None, **kw):
        entry = {"name": name, "op": kind, "in": inputs if inputs is not None else self.last}
        entry.update(kw)
        self.ops.append(entry)
        self.last = name
        return name

    def conv(self, name, conv, bn=None):
        w = conv.weight.detach()
        b = (
            conv.bias.detach()
            if conv.bias is not None
            else torch.zeros(w.shape[0], dtype=w.dtype)
        )
        if bn is not None:
            # Standard eval-mode folding: scale by gamma/sqrt(var+eps).
            scale = bn.weight.detach() / torch.sqrt(bn.running_var.detach() + bn.eps)
            w = w * scale.reshape(-1, 1, 1, 1)
            b = bn.bias.detach() + (b - bn.running_mean.detach()) * scale
        if conv.stride[0] != conv.stride[1] or conv.padding[0] != conv.padding[1]:
            raise SystemExit(f"{name}: only square stride/padding supported")
        self.tensor(name + ".w", w)
        self.tensor(name + ".b", b)
        return self.op(
            name,
            "conv2d",
            weight=name + ".w",
            bias=name + ".b",
            stride=int(conv.stride[0]),
            padding=int(conv.padding[0]),
        )

    def linear(self, name, fc):
        self.tensor(name + ".w", fc.weight.detach())
        self.tensor(
            name + ".b",
            fc.bias.detach()
            if fc.bias is not None
            else torch.zeros(fc.weight.shape[0]),
        )
        return self.op(name, "linear", weight=name + ".w", bias=name + ".b")

    def relu(self, name):
        return self.op(name, "relu")


def export_resnet(model, g, catalog, aliases):
    g.conv("conv1", model.conv1, model.bn1)
    g.relu("relu1")
    g.op("maxpool", "maxpool2d", kernel=3, stride=2, padding=1)

    for stage_idx in (1, 2, 3, 4):
        stage = getattr(model, f"layer{stage_idx}")
        for block_idx, block in enumerate(stage):
            base = f"layer{stage_idx}.{block_idx}"
            entry = g.last
            if block.downsample is not None:
                shortcut = g.conv(
                    base + ".downsample", block.downsample[0], block.downsample[1]
                )
                g.last = entry
            else:
                shortcut = entry
            if hasattr(block, "conv3"):  # bottleneck
                g.conv(base + ".conv1", block.conv1, block.bn1)
                g.relu(base + ".relu1")
                g.conv(base + ".conv2", block.conv2, block.bn2)
                g.relu(base + ".relu2")
                last_conv = g.conv(base + ".conv3", block.conv3, block.bn3)
            else:  # basic block
                g.conv(base + ".conv1", block.conv1, block.bn1)
                g.relu(base + ".relu1")
                last_conv = g.conv(base + ".conv2", block.conv2, block.bn2)
            g.op(base + ".add", "add", inputs=[last_conv, shortcut])
            g.relu(base + ".relu_out")
        # The stage's final pre-residual conv is the occlusion target;
        # post == producer because the relu sits after the residual add.
        catalog.append(
            {"layer": last_conv, "kind": "conv-feature-map", "producer": last_conv}
        )
    g.op("avgpool", "global_avg_pool")
    g.op("flatten", "flatten")
    g.linear("fc", model.fc)
    aliases["last-conv"] = catalog[-1]["layer"]
    return {"op": "fc", "feature_layer": catalog[-1]["layer"]}


def export_alexnet(model, g, catalog, aliases):
    # Only the conv stack is cataloged: the flattened classifier features have
    # no spatial or token structure for the activation probes to aggregate.
    for i, m in enumerate(model.features):
        name = f"features.{i}"
        if isinstance(m, torch.nn.Conv2d):
            g.conv(name, m)
            catalog.append(
                {
                    "layer": name,
                    "kind": "conv-feature-map",
                    "producer": name,
                    "post": f"features.{i + 1}",
                }
            )
        elif isinstance(m, torch.nn.ReLU):
            g.relu(name)
        elif isinstance(m, torch.nn.MaxPool2d):
            g.op(
                name,
                "maxpool2d",
                kernel=int(m.kernel_size),
                stride=int(m.stride),
                padding=int(m.padding),
            )
        else:
            raise SystemExit(f"unsupported feature layer {type(m).__name__}")
    # 224 input lands exactly on the 6x6 the adaptive pool wants.
    g.op("flatten", "flatten")
    for i, m in enumerate(model.classifier):
        name = f"classifier.{i}"
        if isinstance(m, torch.nn.Dropout):
            continue  # identity at eval time
        if isinstance(m, torch.nn.Linear):
            g.linear(name, m)
        elif isinstance(m, torch.nn.ReLU):
            g.relu(name)
        else:
            raise SystemExit(f"unsupported classifier layer {type(m).__name__}")
    aliases["last-conv"] = catalog[-1]["layer"]
    # The class head reads flattened FC features, not a cataloged conv layer,
    # so there is no head mapping to export.
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", choices=["resnet18", "resnet50", "alexnet"], required=True)
    ap.add_argument("--out", type=pathlib.Path, required=True)
    ap.add_argument("--input-size", type=int, default=224)
    ap.add_argument(
        "--no-pretrained",
        action="store_true",
        help="export random initialization (no weight download)",
    )
    args = ap.parse_args()

    weights = None if args.no_pretrained else "DEFAULT"
    model = getattr(torchvision.models, args.arch)(weights=weights)
    model.eval()

    g = GraphBuilder()
    catalog, aliases = [], {}
    if args.arch.startswith("resnet"):
        head = export_resnet(model, g, catalog, aliases)
    else:
        if args.input_size != 224:
            raise SystemExit("alexnet export requires --input-size 224")
        head = export_alexnet(model, g, catalog, aliases)

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "weights.bin").write_bytes(bytes(g.blob))
    weights_doc = {
        "schema_version": 1,
        "name": args.arch,
        "input": {"shape": [3, args.input_size, args.input_size]},
        "binary": "weights.bin",
        "tensors": g.tensors,
        "ops": g.ops,
        "output": g.last,
        "catalog": catalog,
        "head": head,
        "layer_aliases": aliases,
    }
    (args.out / "weights.json").write_text(json.dumps(weights_doc) + "\n")

    spec = {
        "architecture_tag": "conv",
        "weight_source": "weights.json",
        "input_shape": [args.input_size, args.input_size, 3],
        "preprocessing": {
            "resize": [args.input_size, args.input_size],
            "mean": [0.485, 0.456, 0.406],
            "std": [0.229, 0.224, 0.225],
        },
        "aggregation": "max",
        "activation_site": "post",
    }
    (args.out / "model_spec.json").write_text(json.dumps(spec, indent=2) + "\n")
    print(f"wrote {args.out}/model_spec.json ({len(g.blob) / 1e6:.1f} MB of weights)")


if __name__ == "__main__":
    main()
