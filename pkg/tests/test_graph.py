import numpy as np
import pytest

from prunekit.errors import StructuralError, ValidationError
from prunekit.graph import (Edge, ModelGraph, Node, prunable_layers,
                            resolve_consumers)


def conv(nid, cin, cout, k=3, stride=1, bias=False, prunable=True):
    return Node(nid, "conv", in_channels=cin, out_channels=cout, kernel=k,
                stride=stride, padding=k // 2, weight=f"{nid}.weight",
                bias=f"{nid}.bias" if bias else None, prunable=prunable)


def bn(nid, c):
    return Node(nid, "bn", channels=c, gamma=f"{nid}.g", beta=f"{nid}.b",
                mean=f"{nid}.m", var=f"{nid}.v")


def store_for(graph, seed=0):
    rng = np.random.default_rng(seed)
    store = {}
    for n in graph.nodes.values():
        if n.kind == "conv":
            store[n.weight] = rng.standard_normal(
                (n.out_channels, n.in_channels, n.kernel, n.kernel)).astype(np.float32)
            if n.bias:
                store[n.bias] = rng.standard_normal(n.out_channels).astype(np.float32)
        elif n.kind == "fc":
            store[n.weight] = rng.standard_normal(
                (n.out_features, n.in_features)).astype(np.float32)
            if n.bias:
                store[n.bias] = rng.standard_normal(n.out_features).astype(np.float32)
        elif n.kind == "bn":
            for ref in (n.gamma, n.beta, n.mean):
                store[ref] = rng.standard_normal(n.channels).astype(np.float32)
            store[n.var] = rng.uniform(0.5, 1.5, n.channels).astype(np.float32)
    return store


# -- validation ----------------------------------------------------------


def test_duplicate_node_id_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        ModelGraph("g", (3, 8, 8), "a",
                   [conv("a", 3, 4), conv("a", 4, 2)],
                   [Edge("input", "a"), Edge("a", "a")])


def test_unknown_kind_rejected():
    with pytest.raises(ValidationError, match="unknown kind"):
        ModelGraph("g", (3, 8, 8), "a", [Node("a", "softmax")], [Edge("input", "a")])


def test_cycle_rejected():
    nodes = [conv("a", 3, 3), Node("r", "relu")]
    edges = [Edge("input", "a"), Edge("a", "r"), Edge("r", "a")]
    with pytest.raises(ValidationError):
        ModelGraph("g", (3, 8, 8), "a", nodes, edges)


def test_concat_ordinals_must_cover_range():
    nodes = [conv("a", 3, 2), conv("b", 2, 2), conv("c", 2, 2),
             Node("cat", "concat")]
    edges = [Edge("input", "a"), Edge("a", "b"), Edge("a", "c"),
             Edge("b", "cat", ordinal=0), Edge("c", "cat", ordinal=2)]
    with pytest.raises(ValidationError, match="ordinals"):
        ModelGraph("g", (3, 8, 8), "cat", nodes, edges)


def test_add_shape_mismatch_rejected():
    nodes = [conv("a", 3, 2), conv("b", 3, 4), Node("s", "add")]
    edges = [Edge("input", "a"), Edge("input", "b"),
             Edge("a", "s"), Edge("b", "s")]
    # two consumers of the graph input is itself invalid; build a fork instead
    with pytest.raises(ValidationError):
        ModelGraph("g", (3, 8, 8), "s", nodes, edges)
    nodes = [conv("a", 3, 4), conv("b", 4, 2), Node("s", "add")]
    edges = [Edge("input", "a"), Edge("a", "b"), Edge("a", "s"), Edge("b", "s")]
    with pytest.raises(ValidationError, match="add inputs differ"):
        ModelGraph("g", (3, 8, 8), "s", nodes, edges)


def test_fc_needs_flat_input():
    nodes = [conv("a", 3, 4),
             Node("f", "fc", in_features=4, out_features=2, weight="f.w")]
    with pytest.raises(ValidationError, match="flatten"):
        ModelGraph("g", (3, 8, 8), "f", nodes,
                   [Edge("input", "a"), Edge("a", "f")])


def test_shape_propagation_chain():
    nodes = [conv("a", 3, 4, k=3), Node("p", "pool", mode="max", kernel=2, stride=2),
             Node("fl", "flatten"),
             Node("f", "fc", in_features=4 * 4 * 4, out_features=5, weight="f.w")]
    edges = [Edge("input", "a"), Edge("a", "p"), Edge("p", "fl"), Edge("fl", "f")]
    g = ModelGraph("g", (3, 8, 8), "f", nodes, edges)
    assert g.shapes["a"] == ("map", 4, 8, 8)
    assert g.shapes["p"] == ("map", 4, 4, 4)
    assert g.shapes["fl"] == ("flat", 64)
    assert g.shapes["f"] == ("flat", 5)


# -- channel routing -----------------------------------------------------


def test_plain_chain_consumers():
    g = ModelGraph("g", (3, 8, 8), "c2",
                   [conv("c1", 3, 4), conv("c2", 4, 2, k=3)],
                   [Edge("input", "c1"), Edge("c1", "c2")])
    store = store_for(g)
    out = resolve_consumers(g, store, "c1", 2)
    assert len(out.entries) == 2
    assert sorted(e.filter_index for e in out.entries) == [0, 1]
    assert all(e.consumer == "c2" and e.channel_index == 2 for e in out.entries)
    for e in out.entries:
        np.testing.assert_array_equal(e.slice, store["c2.weight"][e.filter_index, 2])


def test_concat_offset():
    # branches a (8 ch) and b (16 ch) concatenated into a 24-channel consumer
    nodes = [conv("stem", 3, 4), conv("a", 4, 8), conv("b", 4, 16),
             Node("cat", "concat"), conv("c", 24, 2)]
    edges = [Edge("input", "stem"), Edge("stem", "a"), Edge("stem", "b"),
             Edge("a", "cat", ordinal=0), Edge("b", "cat", ordinal=1),
             Edge("cat", "c")]
    g = ModelGraph("g", (3, 8, 8), "c", nodes, edges)
    store = store_for(g)
    out = resolve_consumers(g, store, "b", 0)
    assert {e.channel_index for e in out.entries} == {8}
    for j0 in range(16):
        out = resolve_consumers(g, store, "b", j0)
        assert {e.channel_index for e in out.entries} == {8 + j0}
    out = resolve_consumers(g, store, "a", 3)
    assert {e.channel_index for e in out.entries} == {3}


def inception_pair():
    """Two concat modules back to back, pool branch included."""
    nodes = [conv("pre", 3, 6)]
    edges = [Edge("input", "pre")]
    for mod, cin in (("m1", 6), ("m2", 7)):
        nodes += [conv(f"{mod}.b1", cin, 2, k=1), conv(f"{mod}.b2", cin, 3, k=3),
                  Node(f"{mod}.pool", "pool", mode="max", kernel=3, stride=1,
                       padding=1),
                  conv(f"{mod}.b3", cin, 2, k=1), Node(f"{mod}.cat", "concat")]
        src = "pre" if mod == "m1" else "m1.cat"
        edges += [Edge(src, f"{mod}.b1"), Edge(src, f"{mod}.b2"),
                  Edge(src, f"{mod}.pool"), Edge(f"{mod}.pool", f"{mod}.b3"),
                  Edge(f"{mod}.b1", f"{mod}.cat", ordinal=0),
                  Edge(f"{mod}.b2", f"{mod}.cat", ordinal=1),
                  Edge(f"{mod}.b3", f"{mod}.cat", ordinal=2)]
    g = ModelGraph("g", (3, 8, 8), "m2.cat", nodes, edges)
    return g, store_for(g)


def test_module_producer_pools_all_branch_entries():
    g, store = inception_pair()
    # m1.b1 occupies channels [0, 2) of m1.cat; consumers are all three
    # branch-entry convs of m2, including the one behind the pool
    out = resolve_consumers(g, store, "m1.b1", 1)
    consumers = {e.consumer for e in out.entries}
    assert consumers == {"m2.b1", "m2.b2", "m2.b3"}
    assert {e.channel_index for e in out.entries} == {1}
    # entry count pools every consumer filter
    assert len(out.entries) == 2 + 3 + 2
    # m1.b2 sits at concat offset 2
    out = resolve_consumers(g, store, "m1.b2", 0)
    assert {e.channel_index for e in out.entries} == {2}


def test_passthrough_transparency():
    g1 = ModelGraph("g", (3, 8, 8), "c2",
                    [conv("c1", 3, 4), conv("c2", 4, 2)],
                    [Edge("input", "c1"), Edge("c1", "c2")])
    nodes = [conv("c1", 3, 4), bn("n", 4), Node("r", "relu"), conv("c2", 4, 2)]
    edges = [Edge("input", "c1"), Edge("c1", "n"), Edge("n", "r"), Edge("r", "c2")]
    g2 = ModelGraph("g", (3, 8, 8), "c2", nodes, edges)
    store = store_for(g1)
    store.update(store_for(g2))
    for j0 in range(4):
        e1 = {(e.consumer, e.filter_index, e.channel_index)
              for e in resolve_consumers(g1, store, "c1", j0).entries}
        e2 = {(e.consumer, e.filter_index, e.channel_index)
              for e in resolve_consumers(g2, store, "c1", j0).entries}
        assert e1 == e2


def test_fc_consumers_after_gap_and_flatten():
    nodes = [conv("c1", 3, 4), Node("g", "gap"),
             Node("f", "fc", in_features=4, out_features=3, weight="f.weight")]
    edges = [Edge("input", "c1"), Edge("c1", "g"), Edge("g", "f")]
    g = ModelGraph("g", (3, 8, 8), "f", nodes, edges)
    store = store_for(g)
    out = resolve_consumers(g, store, "c1", 2)
    assert len(out.entries) == 3  # one per neuron
    for e in out.entries:
        assert e.slice.shape == (1, 1)
        assert e.slice[0, 0] == store["f.weight"][e.filter_index, 2]

    nodes = [conv("c1", 3, 4), Node("fl", "flatten"),
             Node("f", "fc", in_features=4 * 64, out_features=3, weight="f.weight")]
    edges = [Edge("input", "c1"), Edge("c1", "fl"), Edge("fl", "f")]
    g = ModelGraph("g", (3, 8, 8), "f", nodes, edges)
    store = store_for(g)
    out = resolve_consumers(g, store, "c1", 1)
    assert len(out.entries) == 3 * 64  # one per neuron per spatial position
    e = [x for x in out.entries if x.filter_index == 0 and x.position == 5][0]
    assert e.slice[0, 0] == store["f.weight"][0, 1 * 64 + 5]


def test_resolve_consumers_requires_conv_and_range():
    g = ModelGraph("g", (3, 8, 8), "c2",
                   [conv("c1", 3, 4), conv("c2", 4, 2)],
                   [Edge("input", "c1"), Edge("c1", "c2")])
    store = store_for(g)
    with pytest.raises(StructuralError):
        resolve_consumers(g, store, "missing", 0)
    with pytest.raises(StructuralError):
        resolve_consumers(g, store, "c1", 4)


# -- coupled groups -------------------------------------------------------


def residual_identity_graph():
    """Two basic blocks with identity shortcuts off a stem conv."""
    nodes = [conv("stem", 3, 4), Node("r0", "relu")]
    edges = [Edge("input", "stem"), Edge("stem", "r0")]
    prev = "r0"
    for b in range(2):
        nodes += [conv(f"b{b}.c1", 4, 4), Node(f"b{b}.r1", "relu"),
                  conv(f"b{b}.c2", 4, 4), Node(f"b{b}.add", "add"),
                  Node(f"b{b}.r2", "relu")]
        edges += [Edge(prev, f"b{b}.c1"), Edge(f"b{b}.c1", f"b{b}.r1"),
                  Edge(f"b{b}.r1", f"b{b}.c2"), Edge(f"b{b}.c2", f"b{b}.add"),
                  Edge(prev, f"b{b}.add"), Edge(f"b{b}.add", f"b{b}.r2")]
        prev = f"b{b}.r2"
    return ModelGraph("g", (3, 8, 8), prev, nodes, edges)


def test_identity_residual_group():
    g = residual_identity_graph()
    groups = g.coupled_groups()
    assert len(groups) == 1
    group = groups[0]
    assert group.identity
    # chained adds merge: both block tails and the branching stem couple
    assert set(group.members) == {"stem", "b0.c2", "b1.c2"}
    assert group.channels == 4


def projection_residual_graph():
    """One bottleneck-style block with a dedicated projection shortcut."""
    nodes = [conv("stem", 3, 4), Node("r0", "relu"),
             conv("trunk1", 4, 6), Node("tr", "relu"), conv("trunk2", 6, 8, k=1),
             conv("proj", 4, 8, k=1), Node("add", "add"), Node("r1", "relu"),
             conv("head", 8, 5)]
    edges = [Edge("input", "stem"), Edge("stem", "r0"),
             Edge("r0", "trunk1"), Edge("trunk1", "tr"), Edge("tr", "trunk2"),
             Edge("r0", "proj"), Edge("trunk2", "add"), Edge("proj", "add"),
             Edge("add", "r1"), Edge("r1", "head")]
    return ModelGraph("g", (3, 8, 8), "head", nodes, edges)


def test_projection_group_is_prunable():
    g = projection_residual_graph()
    groups = g.coupled_groups()
    assert len(groups) == 1
    assert not groups[0].identity
    assert set(groups[0].members) == {"trunk2", "proj"}
    layers = prunable_layers(g, exclude_last=False)
    assert "trunk2" in layers and "proj" in layers

    # excluding one member removes the whole group
    layers = prunable_layers(g, exclude=("proj",), exclude_last=False)
    assert "trunk2" not in layers and "proj" not in layers


def test_groups_partition_no_conv_twice():
    g = residual_identity_graph()
    seen = []
    for group in g.coupled_groups():
        seen.extend(group.members)
    assert len(seen) == len(set(seen))


# -- prunable_layers ------------------------------------------------------


def test_prunable_layers_exclusions():
    nodes = [conv("c1", 3, 4), conv("c2", 4, 6), Node("g", "gap"),
             Node("f", "fc", in_features=6, out_features=2, weight="f.weight")]
    edges = [Edge("input", "c1"), Edge("c1", "c2"), Edge("c2", "g"), Edge("g", "f")]
    g = ModelGraph("g", (3, 8, 8), "f", nodes, edges)
    assert prunable_layers(g) == ["c1"]
    assert prunable_layers(g, exclude_last=False) == ["c1", "c2"]
    assert prunable_layers(g, exclude=("c1",)) == []
    from prunekit.errors import ConfigError
    with pytest.raises(ConfigError):
        prunable_layers(g, exclude=("nope",))


def test_prunable_flag_respected():
    nodes = [conv("c1", 3, 4, prunable=False), conv("c2", 4, 6), conv("c3", 6, 2)]
    edges = [Edge("input", "c1"), Edge("c1", "c2"), Edge("c2", "c3")]
    g = ModelGraph("g", (3, 8, 8), "c3", nodes, edges)
    # c3 feeds the output directly: nothing downstream consumes it
    assert prunable_layers(g, exclude_last=False) == ["c2"]
