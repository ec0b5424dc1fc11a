"""Layer graph: validation, shape propagation, and channel routing.

The graph answers one central question: for a producer conv's filter j0,
which downstream channel slices consume the feature map it generates?
Routing walks forward through passthrough nodes (bn, relu, pool, flatten,
gap, pad), accumulates channel offsets at concat nodes, flows through
elementwise adds, and stops at conv/fc consumers.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .errors import ConfigError, StructuralError, ValidationError

KINDS = ("conv", "fc", "bn", "relu", "pool", "concat", "add", "flatten", "gap", "pad")
INPUT = "input"  # reserved edge source naming the graph input

# Nodes that preserve channel identity between producer and consumer.
PASSTHROUGH = ("bn", "relu", "pool", "flatten", "gap", "pad", "concat", "add")


@dataclass
class Node:
    id: str
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    weight: str | None = None
    bias: str | None = None
    prunable: bool = False
    channels: int | None = None       # bn
    gamma: str | None = None
    beta: str | None = None
    mean: str | None = None
    var: str | None = None
    eps: float = 1e-5
    mode: str | None = None           # pool: "max" | "avg"
    in_features: int | None = None    # fc
    out_features: int | None = None
    front: int = 0                    # pad: zero channels inserted before the input

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "kind": self.kind}
        if self.kind == "conv":
            d.update(in_channels=self.in_channels, out_channels=self.out_channels,
                     kernel=self.kernel, stride=self.stride, padding=self.padding,
                     weight=self.weight, prunable=self.prunable)
            if self.bias is not None:
                d["bias"] = self.bias
        elif self.kind == "fc":
            d.update(in_features=self.in_features, out_features=self.out_features,
                     weight=self.weight)
            if self.bias is not None:
                d["bias"] = self.bias
        elif self.kind == "bn":
            d.update(channels=self.channels, gamma=self.gamma, beta=self.beta,
                     mean=self.mean, var=self.var)
            if self.eps != 1e-5:
                d["eps"] = self.eps
        elif self.kind == "pool":
            d.update(mode=self.mode, kernel=self.kernel, stride=self.stride,
                     padding=self.padding)
        elif self.kind == "pad":
            d.update(out_channels=self.out_channels, stride=self.stride)
            if self.front:
                d["front"] = self.front
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Node":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"node {d.get('id')!r}: unknown fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    ordinal: int | None = None


@dataclass(frozen=True)
class ChannelUse:
    """One place a producer's output channels are read downstream.

    ``offset`` maps producer channel j to index offset+j at this node.
    ``spatial`` is the flatten multiplicity for fc uses (1 after gap,
    H*W after flatten); it is 1 for conv and bn uses.
    """
    node: str
    kind: str        # "conv" | "fc" | "bn" | "pad"
    offset: int
    spatial: int = 1


@dataclass(frozen=True)
class ConsumerEntry:
    consumer: str
    filter_index: int
    channel_index: int
    slice: np.ndarray          # (kh, kw) float32
    position: int | None = None  # flat spatial position for fc-after-flatten


@dataclass
class ConsumerSlices:
    producer: str
    filter_index: int
    entries: list[ConsumerEntry]


@dataclass
class PruneGroup:
    """Conv nodes whose output channels are coupled by elementwise adds."""
    members: tuple[str, ...]
    channels: int
    identity: bool  # True when any shortcut path is parameter-free (rule (1) of
                    # the residual handling: members are not pruned by default)


class ModelGraph:
    def __init__(self, name: str, input_shape: tuple[int, int, int], output: str,
                 nodes: Iterable[Node], edges: Iterable[Edge]):
        self.name = name
        self.input_shape = tuple(int(x) for x in input_shape)
        self.output = output
        self.nodes: dict[str, Node] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ValidationError(f"duplicate node id {n.id!r}")
            if n.id == INPUT:
                raise ValidationError(f"node id {INPUT!r} is reserved")
            self.nodes[n.id] = n
        self.edges: list[Edge] = list(edges)
        self._in: dict[str, list[Edge]] = {}
        self._out: dict[str, list[Edge]] = {}
        self.topo: list[str] = []
        self.shapes: dict[str, tuple] = {}  # id -> ("map", C, H, W) | ("flat", F)
        self.validate()

    # -- construction / serialization -------------------------------------

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelGraph":
        for key in ("input", "output", "nodes", "edges"):
            if key not in d:
                raise ValidationError(f"manifest missing {key!r}")
        nodes = [Node.from_dict(nd) for nd in d["nodes"]]
        edges = []
        for ed in d["edges"]:
            if "src" not in ed or "dst" not in ed:
                raise ValidationError(f"edge missing src/dst: {ed}")
            edges.append(Edge(ed["src"], ed["dst"], ed.get("ordinal")))
        return cls(d.get("name", ""), tuple(d["input"]), d["output"], nodes, edges)

    def to_dict(self) -> dict[str, Any]:
        edges = []
        for e in self.edges:
            ed: dict[str, Any] = {"src": e.src, "dst": e.dst}
            if e.ordinal is not None:
                ed["ordinal"] = e.ordinal
            edges.append(ed)
        return {
            "name": self.name,
            "input": list(self.input_shape),
            "output": self.output,
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": edges,
        }

    def copy(self) -> "ModelGraph":
        return ModelGraph.from_dict(self.to_dict())

    # -- adjacency ---------------------------------------------------------

    def in_edges(self, node: str) -> list[Edge]:
        return self._in.get(node, [])

    def out_edges(self, node: str) -> list[Edge]:
        return self._out.get(node, [])

    def producers(self, node: str) -> list[str]:
        return [e.src for e in self.in_edges(node)]

    # -- validation & shape propagation ------------------------------------

    def validate(self) -> None:
        self._in = {nid: [] for nid in self.nodes}
        self._out = {nid: [] for nid in self.nodes}
        self._out[INPUT] = []
        for e in self.edges:
            if e.src != INPUT and e.src not in self.nodes:
                raise ValidationError(f"edge {e.src!r}->{e.dst!r}: unknown source node")
            if e.dst not in self.nodes:
                raise ValidationError(f"edge {e.src!r}->{e.dst!r}: unknown destination node")
            self._out[e.src].append(e)
            self._in[e.dst].append(e)
        if self.output not in self.nodes:
            raise ValidationError(f"output node {self.output!r} not in graph")
        for nid, n in self.nodes.items():
            if n.kind not in KINDS:
                raise ValidationError(f"node {nid!r}: unknown kind {n.kind!r}")
            arity = len(self._in[nid])
            if n.kind in ("concat", "add"):
                if arity < 2:
                    raise ValidationError(f"node {nid!r}: {n.kind} needs >= 2 inputs, has {arity}")
            elif arity != 1:
                raise ValidationError(f"node {nid!r}: expected 1 input, has {arity}")
        roots = [e.dst for e in self._out[INPUT]]
        if len(roots) != 1:
            raise ValidationError(f"graph must have exactly one input consumer, found {roots}")
        # concat ordinals must be a permutation of 0..k-1
        for nid, n in self.nodes.items():
            if n.kind == "concat":
                ords = sorted(e.ordinal for e in self._in[nid])
                if any(o is None for o in ords) or ords != list(range(len(ords))):
                    raise ValidationError(f"node {nid!r}: concat ordinals {ords} are not 0..k-1")
                self._in[nid] = sorted(self._in[nid], key=lambda e: e.ordinal)
        self._toposort()
        self._propagate_shapes()

    def _toposort(self) -> None:
        indeg = {nid: len(self._in[nid]) for nid in self.nodes}
        ready = deque(nid for nid, d in indeg.items() if d == 0 or
                      all(e.src == INPUT for e in self._in[nid]))
        order: list[str] = []
        seen = set()
        while ready:
            nid = ready.popleft()
            if nid in seen:
                continue
            seen.add(nid)
            order.append(nid)
            for e in self._out[nid]:
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    ready.append(e.dst)
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - seen)
            raise ValidationError(f"graph has a cycle or unreachable nodes: {stuck}")
        self.topo = order

    @staticmethod
    def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
        out = (size + 2 * padding - kernel) // stride + 1
        if out < 1:
            raise ValidationError(f"spatial size {size} too small for kernel {kernel}")
        return out

    def _propagate_shapes(self) -> None:
        shapes: dict[str, tuple] = {INPUT: ("map",) + self.input_shape}
        for nid in self.topo:
            n = self.nodes[nid]
            ins = [shapes[e.src] for e in self._in[nid]]
            try:
                shapes[nid] = self._node_shape(n, ins)
            except ValidationError:
                raise
            except Exception as exc:  # pragma: no cover - defensive
                raise ValidationError(f"node {nid!r}: shape propagation failed: {exc}")
        self.shapes = shapes

    def _node_shape(self, n: Node, ins: list[tuple]) -> tuple:
        def need_map(s):
            if s[0] != "map":
                raise ValidationError(f"node {n.id!r}: needs a spatial input, got {s}")
            return s[1:]

        if n.kind == "conv":
            c, h, w = need_map(ins[0])
            if c != n.in_channels:
                raise ValidationError(
                    f"node {n.id!r}: in_channels {n.in_channels} != producer channels {c}")
            ho = self._conv_out(h, n.kernel, n.stride, n.padding)
            wo = self._conv_out(w, n.kernel, n.stride, n.padding)
            return ("map", n.out_channels, ho, wo)
        if n.kind == "bn":
            c, h, w = need_map(ins[0])
            if c != n.channels:
                raise ValidationError(f"node {n.id!r}: bn channels {n.channels} != input {c}")
            return ins[0]
        if n.kind == "relu":
            return ins[0]
        if n.kind == "pool":
            c, h, w = need_map(ins[0])
            ho = self._conv_out(h, n.kernel, n.stride, n.padding)
            wo = self._conv_out(w, n.kernel, n.stride, n.padding)
            return ("map", c, ho, wo)
        if n.kind == "concat":
            dims = [need_map(s) for s in ins]
            if len({(h, w) for _, h, w in dims}) != 1:
                raise ValidationError(f"node {n.id!r}: concat spatial mismatch {dims}")
            return ("map", sum(c for c, _, _ in dims), dims[0][1], dims[0][2])
        if n.kind == "add":
            if len(set(ins)) != 1:
                raise ValidationError(f"node {n.id!r}: add inputs differ: {ins}")
            need_map(ins[0])
            return ins[0]
        if n.kind == "pad":
            c, h, w = need_map(ins[0])
            if n.out_channels < c + n.front:
                raise ValidationError(
                    f"node {n.id!r}: pad to {n.out_channels} channels cannot hold "
                    f"{c} inputs at front {n.front}")
            s = n.stride
            return ("map", n.out_channels, (h - 1) // s + 1, (w - 1) // s + 1)
        if n.kind == "flatten":
            c, h, w = need_map(ins[0])
            return ("flat", c * h * w)
        if n.kind == "gap":
            c, _, _ = need_map(ins[0])
            return ("flat", c)
        if n.kind == "fc":
            if ins[0][0] != "flat":
                raise ValidationError(f"node {n.id!r}: fc needs flatten/gap input, got {ins[0]}")
            if ins[0][1] != n.in_features:
                raise ValidationError(
                    f"node {n.id!r}: in_features {n.in_features} != input width {ins[0][1]}")
            return ("flat", n.out_features)
        raise ValidationError(f"node {n.id!r}: unhandled kind {n.kind!r}")

    # -- channel routing -----------------------------------------------------

    def _concat_base(self, concat_id: str, via_edge: Edge) -> int:
        base = 0
        for e in self._in[concat_id]:
            if e is via_edge:
                return base
            shape = self.shapes[e.src]
            base += shape[1]
        raise StructuralError(f"edge into {concat_id!r} not found")  # pragma: no cover

    def channel_uses(self, producer: str) -> list[ChannelUse]:
        """All downstream reads of ``producer``'s output channels.

        Returns conv/fc consumers plus the bn and pad nodes the channels flow
        through, each with the channel offset of producer channel 0 at that
        node. Walks through passthrough nodes, accumulates concat offsets,
        and flows through elementwise adds.
        """
        if producer not in self.nodes:
            raise StructuralError(f"unknown node {producer!r}")
        uses: list[ChannelUse] = []
        seen_use: set[tuple] = set()
        # state: (node reached, channel offset, flatten multiplicity or None)
        queue: deque[tuple[str, int, int | None]] = deque()
        visited: set[tuple[str, int, int | None]] = set()

        def push_successors(nid: str, offset: int, flat: int | None):
            for e in self._out[nid]:
                dst = self.nodes[e.dst]
                off = offset
                if dst.kind == "concat":
                    off = offset + self._concat_base(e.dst, e)
                state = (e.dst, off, flat)
                if state not in visited:
                    visited.add(state)
                    queue.append(state)

        push_successors(producer, 0, None)
        while queue:
            nid, offset, flat = queue.popleft()
            n = self.nodes[nid]
            if n.kind == "conv":
                key = ("conv", nid, offset)
                if key not in seen_use:
                    seen_use.add(key)
                    uses.append(ChannelUse(nid, "conv", offset))
                continue
            if n.kind == "fc":
                if flat is None:
                    raise StructuralError(f"node {nid!r}: fc reached without flatten/gap")
                key = ("fc", nid, offset, flat)
                if key not in seen_use:
                    seen_use.add(key)
                    uses.append(ChannelUse(nid, "fc", offset, flat))
                continue
            if n.kind == "bn":
                key = ("bn", nid, offset)
                if key not in seen_use:
                    seen_use.add(key)
                    uses.append(ChannelUse(nid, "bn", offset))
            elif n.kind == "pad":
                key = ("pad", nid, offset)
                if key not in seen_use:
                    seen_use.add(key)
                    uses.append(ChannelUse(nid, "pad", offset))
                offset += n.front
            elif n.kind == "flatten":
                shape = self.shapes[self._in[nid][0].src]
                flat = shape[2] * shape[3]
            elif n.kind == "gap":
                flat = 1
            push_successors(nid, offset, flat)
        return uses

    # -- coupled groups -----------------------------------------------------

    def _walk_back(self, edge: Edge) -> tuple[str, bool]:
        """Walk an add input backward through passthroughs.

        Returns (terminal node id, branched) where branched means some node
        on the path also feeds another consumer, i.e. the add arm shares its
        source with the trunk. Terminates at conv, add, pad, or the graph
        input.
        """
        cur = edge.src
        branched = False
        while True:
            if cur == INPUT:
                return cur, branched
            n = self.nodes[cur]
            if n.kind in ("conv", "add", "pad"):
                return cur, branched
            # bn/relu/pool preserve channel identity; flatten/gap/fc cannot
            # appear before an add (shape validation rejects them)
            if len(self._out[cur]) > 1:
                branched = True
            cur = self._in[cur][0].src

    def coupled_groups(self) -> list[PruneGroup]:
        """Partition conv nodes whose outputs meet at elementwise adds.

        Chained adds merge transitively. A group is identity-coupled when any
        of its adds is fed by a parameter-free path (graph input, a pad
        shortcut, or a branch point that also feeds the trunk); such groups
        are excluded from pruning by default. Groups formed purely by
        dedicated convs (projection shortcuts + trunk tails) are prunable as
        a unit.
        """
        adds = [nid for nid, n in self.nodes.items() if n.kind == "add"]
        parent: dict[str, str] = {a: a for a in adds}

        def find(x: str) -> str:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a: str, b: str) -> None:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        members: dict[str, set[str]] = {a: set() for a in adds}
        identity: dict[str, bool] = {a: False for a in adds}
        for a in adds:
            for e in self._in[a]:
                term, branched = self._walk_back(e)
                if term != INPUT and self.nodes[term].kind == "add":
                    union(a, term)
                elif term == INPUT or self.nodes[term].kind == "pad":
                    identity[a] = True
                else:  # conv
                    members[a].add(term)
                    if branched or len(self._out[term]) > 1:
                        # the arm shares its source with the trunk, so the
                        # shortcut is an identity path, not a dedicated conv
                        identity[a] = True
        merged_members: dict[str, set[str]] = {}
        merged_identity: dict[str, bool] = {}
        for a in adds:
            r = find(a)
            merged_members.setdefault(r, set()).update(members[a])
            merged_identity[r] = merged_identity.get(r, False) or identity[a]
        groups = []
        for r in sorted(merged_members, key=self.topo.index):
            mem = tuple(sorted(merged_members[r], key=self.topo.index))
            if not mem:
                continue
            chans = {self.nodes[m].out_channels for m in mem}
            if len(chans) != 1:
                raise ValidationError(f"coupled group {mem}: unequal channel counts {chans}")
            groups.append(PruneGroup(mem, chans.pop(), merged_identity[r]))
        return groups


def prunable_layers(graph: ModelGraph, exclude: Iterable[str] = (),
                    exclude_last: bool = True) -> list[str]:
    """Conv nodes eligible for pruning, in topological order.

    Starts from the manifest ``prunable`` flags, drops explicit exclusions,
    drops convs that feed the classifier when ``exclude_last`` is set, and
    drops identity-coupled groups entirely. Any exclusion hitting a coupled
    group removes the whole group (coupled nodes prune together or not at
    all).
    """
    exclude = list(exclude)
    for nid in exclude:
        if nid not in graph.nodes:
            raise ConfigError(f"exclude names unknown node {nid!r}")
    excluded = set(exclude)
    groups = graph.coupled_groups()
    for g in groups:
        if g.identity:
            excluded.update(g.members)
    candidates = [nid for nid in graph.topo
                  if graph.nodes[nid].kind == "conv" and graph.nodes[nid].prunable]
    for nid in candidates:
        uses = graph.channel_uses(nid)
        if not any(u.kind in ("conv", "fc") for u in uses):
            excluded.add(nid)  # feeds the output directly; nothing to score
        elif exclude_last and any(u.kind == "fc" for u in uses):
            excluded.add(nid)
    # partial group exclusion removes the whole group
    for g in groups:
        if excluded & set(g.members):
            excluded.update(g.members)
    return [nid for nid in candidates if nid not in excluded]


def resolve_consumers(graph: ModelGraph, store: dict[str, np.ndarray],
                      producer: str, j0: int) -> ConsumerSlices:
    """Pool every consumer channel slice for one producer filter.

    For each consuming conv, emits one (kh, kw) slice per consumer filter at
    channel offset+j0. For an fc after gap, emits one 1x1 slice per output
    neuron; after flatten with spatial size S^2, emits S^2 slices per neuron.
    """
    if producer not in graph.nodes:
        raise StructuralError(f"no node {producer!r} in graph")
    node = graph.nodes[producer]
    if node.kind != "conv":
        raise StructuralError(f"node {producer!r} is not a conv")
    if not 0 <= j0 < node.out_channels:
        raise StructuralError(f"filter index {j0} out of range for {producer!r}")
    entries: list[ConsumerEntry] = []
    for use in graph.channel_uses(producer):
        if use.kind == "conv":
            w = store[graph.nodes[use.node].weight]
            m = use.offset + j0
            for jn in range(w.shape[0]):
                entries.append(ConsumerEntry(use.node, jn, m, w[jn, m]))
        elif use.kind == "fc":
            w = store[graph.nodes[use.node].weight]
            m = use.offset + j0
            for k in range(w.shape[0]):
                for s in range(use.spatial):
                    col = m * use.spatial + s
                    entries.append(ConsumerEntry(
                        use.node, k, m, w[k, col].reshape(1, 1), position=s))
    return ConsumerSlices(producer, j0, entries)
