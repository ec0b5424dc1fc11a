"""Bundled architecture manifests.

Four CNN families used throughout the docs and tests: VGG-16 and GoogLeNet
as trained on CIFAR-10, the 56-layer CIFAR ResNet with parameter-free
shortcut padding, and the ImageNet ResNet-50 with projection shortcuts.
Node ids follow the checkpoint naming of the reference implementations so
exported weights map one-to-one.

Run ``python3 -m prunekit.zoo OUTDIR`` to (re)generate the manifest files.
"""
from __future__ import annotations

import os
import sys

from .errors import ConfigError
from .graph import Edge, ModelGraph, Node

ARCHITECTURES = ("vgg16_cifar", "resnet56", "googlenet_cifar", "resnet50")

VGG16_LAYOUT = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
                512, 512, 512, "M", 512, 512, 512, "M")


def vgg16_cifar() -> ModelGraph:
    nodes: list[Node] = []
    edges: list[Edge] = []
    prev = "input"
    idx = 0
    in_ch = 3
    for item in VGG16_LAYOUT:
        if item == "M":
            nid = f"feature.{idx}"
            nodes.append(Node(nid, "pool", mode="max", kernel=2, stride=2, padding=0))
            edges.append(Edge(prev, nid))
            prev = nid
            idx += 1
            continue
        conv = f"feature.{idx}"
        nodes.append(Node(conv, "conv", in_channels=in_ch, out_channels=item,
                          kernel=3, stride=1, padding=1, weight=f"{conv}.weight",
                          bias=f"{conv}.bias", prunable=True))
        edges.append(Edge(prev, conv))
        bn = f"feature.{idx + 1}"
        nodes.append(Node(bn, "bn", channels=item, gamma=f"{bn}.gamma",
                          beta=f"{bn}.beta", mean=f"{bn}.mean", var=f"{bn}.var"))
        edges.append(Edge(conv, bn))
        relu = f"feature.{idx + 2}"
        nodes.append(Node(relu, "relu"))
        edges.append(Edge(bn, relu))
        prev = relu
        idx += 3
        in_ch = item
    nodes.append(Node("flatten", "flatten"))
    edges.append(Edge(prev, "flatten"))
    nodes.append(Node("classifier", "fc", in_features=512, out_features=10,
                      weight="classifier.weight", bias="classifier.bias"))
    edges.append(Edge("flatten", "classifier"))
    return ModelGraph("vgg16_cifar", (3, 32, 32), "classifier", nodes, edges)


def _bn(nid: str, channels: int) -> Node:
    return Node(nid, "bn", channels=channels, gamma=f"{nid}.gamma",
                beta=f"{nid}.beta", mean=f"{nid}.mean", var=f"{nid}.var")


def resnet56() -> ModelGraph:
    nodes: list[Node] = [
        Node("conv1", "conv", in_channels=3, out_channels=16, kernel=3,
             stride=1, padding=1, weight="conv1.weight", prunable=True),
        _bn("bn1", 16),
        Node("relu1", "relu"),
    ]
    edges: list[Edge] = [Edge("input", "conv1"), Edge("conv1", "bn1"),
                         Edge("bn1", "relu1")]
    prev = "relu1"
    in_ch = 16
    for stage, width in ((1, 16), (2, 32), (3, 64)):
        for block in range(9):
            base = f"layer{stage}.{block}"
            stride = 2 if stage > 1 and block == 0 else 1
            shortcut_src = prev
            c1 = f"{base}.conv1"
            nodes.append(Node(c1, "conv", in_channels=in_ch, out_channels=width,
                              kernel=3, stride=stride, padding=1,
                              weight=f"{c1}.weight", prunable=True))
            edges.append(Edge(prev, c1))
            nodes.append(_bn(f"{base}.bn1", width))
            edges.append(Edge(c1, f"{base}.bn1"))
            nodes.append(Node(f"{base}.relu1", "relu"))
            edges.append(Edge(f"{base}.bn1", f"{base}.relu1"))
            c2 = f"{base}.conv2"
            nodes.append(Node(c2, "conv", in_channels=width, out_channels=width,
                              kernel=3, stride=1, padding=1,
                              weight=f"{c2}.weight", prunable=True))
            edges.append(Edge(f"{base}.relu1", c2))
            nodes.append(_bn(f"{base}.bn2", width))
            edges.append(Edge(c2, f"{base}.bn2"))
            if stride == 2:
                # parameter-free shortcut: stride-2 subsample, zero channels
                # appended symmetrically to double the width
                sc = f"{base}.shortcut"
                nodes.append(Node(sc, "pad", out_channels=width, stride=2,
                                  front=(width - in_ch) // 2))
                edges.append(Edge(shortcut_src, sc))
                shortcut_src = sc
            add = f"{base}.add"
            nodes.append(Node(add, "add"))
            edges.append(Edge(f"{base}.bn2", add))
            edges.append(Edge(shortcut_src, add))
            nodes.append(Node(f"{base}.relu2", "relu"))
            edges.append(Edge(add, f"{base}.relu2"))
            prev = f"{base}.relu2"
            in_ch = width
    nodes.append(Node("avgpool", "gap"))
    edges.append(Edge(prev, "avgpool"))
    nodes.append(Node("linear", "fc", in_features=64, out_features=10,
                      weight="linear.weight", bias="linear.bias"))
    edges.append(Edge("avgpool", "linear"))
    return ModelGraph("resnet56", (3, 32, 32), "linear", nodes, edges)


# (n1x1, n3x3red, n3x3, n5x5red, n5x5, pool_planes) per inception module;
# the 5x5 branch is realized as two stacked 3x3 convs
GOOGLENET_CFG = {
    "a3": (192, 64, 96, 128, 16, 32, 32),
    "b3": (256, 128, 128, 192, 32, 96, 64),
    "a4": (480, 192, 96, 208, 16, 48, 64),
    "b4": (512, 160, 112, 224, 24, 64, 64),
    "c4": (512, 128, 128, 256, 24, 64, 64),
    "d4": (512, 112, 144, 288, 32, 64, 64),
    "e4": (528, 256, 160, 320, 32, 128, 128),
    "a5": (832, 256, 160, 320, 32, 128, 128),
    "b5": (832, 384, 192, 384, 48, 128, 128),
}


def _gconv(nodes, edges, nid: str, src: str, in_ch: int, out_ch: int,
           kernel: int) -> str:
    nodes.append(Node(nid, "conv", in_channels=in_ch, out_channels=out_ch,
                      kernel=kernel, stride=1, padding=kernel // 2,
                      weight=f"{nid}.weight", bias=f"{nid}.bias", prunable=True))
    edges.append(Edge(src, nid))
    stem, i = nid.rsplit(".", 1)
    bn = f"{stem}.{int(i) + 1}"
    nodes.append(_bn(bn, out_ch))
    edges.append(Edge(nid, bn))
    relu = f"{stem}.{int(i) + 2}"
    nodes.append(Node(relu, "relu"))
    edges.append(Edge(bn, relu))
    return relu


def googlenet_cifar() -> ModelGraph:
    nodes: list[Node] = []
    edges: list[Edge] = []
    prev = _gconv(nodes, edges, "pre_layers.0", "input", 3, 192, 3)
    pool_idx = 0
    for name, cfg in GOOGLENET_CFG.items():
        in_ch, n1, n3r, n3, n5r, n5, pp = cfg
        b1 = _gconv(nodes, edges, f"{name}.b1.0", prev, in_ch, n1, 1)
        t = _gconv(nodes, edges, f"{name}.b2.0", prev, in_ch, n3r, 1)
        b2 = _gconv(nodes, edges, f"{name}.b2.3", t, n3r, n3, 3)
        t = _gconv(nodes, edges, f"{name}.b3.0", prev, in_ch, n5r, 1)
        t = _gconv(nodes, edges, f"{name}.b3.3", t, n5r, n5, 3)
        b3 = _gconv(nodes, edges, f"{name}.b3.6", t, n5, n5, 3)
        bp = f"{name}.b4.0"
        nodes.append(Node(bp, "pool", mode="max", kernel=3, stride=1, padding=1))
        edges.append(Edge(prev, bp))
        b4 = _gconv(nodes, edges, f"{name}.b4.1", bp, in_ch, pp, 1)
        cat = f"{name}.concat"
        nodes.append(Node(cat, "concat"))
        for i, br in enumerate((b1, b2, b3, b4)):
            edges.append(Edge(br, cat, ordinal=i))
        prev = cat
        if name in ("b3", "e4"):
            pool_idx += 1
            pid = f"maxpool{pool_idx}"
            nodes.append(Node(pid, "pool", mode="max", kernel=3, stride=2, padding=1))
            edges.append(Edge(prev, pid))
            prev = pid
    nodes.append(Node("avgpool", "gap"))
    edges.append(Edge(prev, "avgpool"))
    nodes.append(Node("linear", "fc", in_features=1024, out_features=10,
                      weight="linear.weight", bias="linear.bias"))
    edges.append(Edge("avgpool", "linear"))
    return ModelGraph("googlenet_cifar", (3, 32, 32), "linear", nodes, edges)


RESNET50_STAGES = ((3, 64, 256, 1), (4, 128, 512, 2), (6, 256, 1024, 2),
                   (3, 512, 2048, 2))


def resnet50() -> ModelGraph:
    nodes: list[Node] = [
        Node("conv1", "conv", in_channels=3, out_channels=64, kernel=7,
             stride=2, padding=3, weight="conv1.weight", prunable=True),
        _bn("bn1", 64),
        Node("relu1", "relu"),
        Node("maxpool", "pool", mode="max", kernel=3, stride=2, padding=1),
    ]
    edges: list[Edge] = [Edge("input", "conv1"), Edge("conv1", "bn1"),
                         Edge("bn1", "relu1"), Edge("relu1", "maxpool")]
    prev = "maxpool"
    in_ch = 64
    for stage, (blocks, mid, out, first_stride) in enumerate(RESNET50_STAGES, start=1):
        for block in range(blocks):
            base = f"layer{stage}.{block}"
            stride = first_stride if block == 0 else 1
            block_in = prev

            def conv(i: int, ic: int, oc: int, k: int, s: int, src: str) -> str:
                cid = f"{base}.conv{i}"
                nodes.append(Node(cid, "conv", in_channels=ic, out_channels=oc,
                                  kernel=k, stride=s, padding=k // 2,
                                  weight=f"{cid}.weight", prunable=True))
                edges.append(Edge(src, cid))
                nodes.append(_bn(f"{base}.bn{i}", oc))
                edges.append(Edge(cid, f"{base}.bn{i}"))
                return f"{base}.bn{i}"

            t = conv(1, in_ch, mid, 1, 1, block_in)
            nodes.append(Node(f"{base}.relu1", "relu"))
            edges.append(Edge(t, f"{base}.relu1"))
            t = conv(2, mid, mid, 3, stride, f"{base}.relu1")
            nodes.append(Node(f"{base}.relu2", "relu"))
            edges.append(Edge(t, f"{base}.relu2"))
            trunk = conv(3, mid, out, 1, 1, f"{base}.relu2")
            if block == 0:
                ds = f"{base}.downsample.0"
                nodes.append(Node(ds, "conv", in_channels=in_ch, out_channels=out,
                                  kernel=1, stride=stride, padding=0,
                                  weight=f"{ds}.weight", prunable=True))
                edges.append(Edge(block_in, ds))
                nodes.append(_bn(f"{base}.downsample.1", out))
                edges.append(Edge(ds, f"{base}.downsample.1"))
                shortcut = f"{base}.downsample.1"
            else:
                shortcut = block_in
            nodes.append(Node(f"{base}.add", "add"))
            edges.append(Edge(trunk, f"{base}.add"))
            edges.append(Edge(shortcut, f"{base}.add"))
            nodes.append(Node(f"{base}.relu3", "relu"))
            edges.append(Edge(f"{base}.add", f"{base}.relu3"))
            prev = f"{base}.relu3"
            in_ch = out
    nodes.append(Node("avgpool", "gap"))
    edges.append(Edge(prev, "avgpool"))
    nodes.append(Node("fc", "fc", in_features=2048, out_features=1000,
                      weight="fc.weight", bias="fc.bias"))
    edges.append(Edge("avgpool", "fc"))
    return ModelGraph("resnet50", (3, 224, 224), "fc", nodes, edges)


def build(name: str) -> ModelGraph:
    if name not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {name!r}, expected one of {ARCHITECTURES}")
    return {"vgg16_cifar": vgg16_cifar, "resnet56": resnet56,
            "googlenet_cifar": googlenet_cifar, "resnet50": resnet50}[name]()


def generate_manifests(out_dir: str) -> list[str]:
    from .model_io import save_manifest
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in ARCHITECTURES:
        path = os.path.join(out_dir, f"{name}.model.json")
        save_manifest(build(name), path)
        paths.append(path)
    return paths


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "models"
    for p in generate_manifests(target):
        print(p)
