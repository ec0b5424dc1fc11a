import json
import os
import subprocess
import sys

import numpy as np
import pytest

from prunekit.cli import main
from prunekit.engine import forward
from prunekit.model_io import load_archive, load_manifest, save_archive, save_manifest
from prunekit.synth import random_plain_cnn

from oracles import naive_spearman


@pytest.fixture()
def model_dir(tmp_path):
    # seed 7 gives widths 6/6/8/5 with mixed 1/3/5 kernels
    rng = np.random.default_rng(7)
    graph, store = random_plain_cnn(rng, depth=4, max_channels=8,
                                    input_size=12, head="gap")
    manifest = tmp_path / "toy.model.json"
    archive = tmp_path / "toy.pkt"
    save_manifest(graph, str(manifest))
    save_archive(store, str(archive))
    return tmp_path, str(manifest), str(archive)


def run_cli(*argv):
    return main(list(argv))


def test_score_writes_table(model_dir, capsys):
    tmp, manifest, archive = model_dir
    out = tmp / "score_out"
    rc = run_cli("score", "--model", manifest, "--weights", archive,
                 "--out-dir", str(out))
    assert rc == 0
    data = json.loads((out / "scores.json").read_text())
    assert data["criterion"] == "fscl_l1"
    graph = load_manifest(manifest)
    convs = [n.id for n in graph.nodes.values() if n.kind == "conv"]
    # default exclude-last drops the classifier feeder
    assert set(data["layers"]) == set(convs[:-1])
    for nid, vec in data["layers"].items():
        assert len(vec) == graph.nodes[nid].out_channels
        assert all(v >= 0 for v in vec)
    captured = capsys.readouterr()
    assert "scores.json" in captured.out


def test_score_no_exclude_last(model_dir):
    tmp, manifest, archive = model_dir
    out = tmp / "score_all"
    rc = run_cli("score", "--model", manifest, "--weights", archive,
                 "--out-dir", str(out), "--no-exclude-last")
    assert rc == 0
    data = json.loads((out / "scores.json").read_text())
    graph = load_manifest(manifest)
    convs = [n.id for n in graph.nodes.values() if n.kind == "conv"]
    assert set(data["layers"]) == set(convs)


def test_unknown_criterion_exits_2(model_dir):
    tmp, manifest, archive = model_dir
    with pytest.raises(SystemExit) as exc:
        run_cli("score", "--model", manifest, "--weights", archive,
                "--criterion", "taxicab")
    assert exc.value.code == 2


def test_bad_ratio_exits_2(model_dir, capsys):
    tmp, manifest, archive = model_dir
    rc = run_cli("prune", "--model", manifest, "--weights", archive,
                 "--out-dir", str(tmp / "x"), "--ratio", "1.0")
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_missing_model_exits_1(tmp_path, capsys):
    rc = run_cli("score", "--model", str(tmp_path / "no_such.model.json"),
                 "--out-dir", str(tmp_path))
    assert rc == 1


def test_corrupt_archive_exits_1(model_dir, capsys):
    tmp, manifest, archive = model_dir
    bad = tmp / "bad.pkt"
    raw = bytearray(open(archive, "rb").read())
    raw[:4] = b"NOPE"
    bad.write_bytes(bytes(raw))
    rc = run_cli("score", "--model", manifest, "--weights", str(bad),
                 "--out-dir", str(tmp / "y"))
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_prune_ratio_zero_preserves_function(model_dir):
    tmp, manifest, archive = model_dir
    out = tmp / "prune0"
    rc = run_cli("prune", "--model", manifest, "--weights", archive,
                 "--out-dir", str(out), "--ratio", "0.0")
    assert rc == 0
    g0 = load_manifest(manifest)
    s0 = load_archive(archive)
    g1 = load_manifest(str(out / "pruned.model.json"))
    s1 = load_archive(str(out / "pruned.pkt"))
    x = np.random.default_rng(5).standard_normal((2,) + g0.input_shape).astype(np.float32)
    np.testing.assert_array_equal(forward(g0, s0, x), forward(g1, s1, x))
    plan = json.loads((out / "plan.json").read_text())
    assert all(lp["removed"] == [] for lp in plan.values())


def test_prune_with_ratios_file(model_dir, capsys):
    tmp, manifest, archive = model_dir
    graph = load_manifest(manifest)
    convs = [n.id for n in graph.nodes.values() if n.kind == "conv"]
    target = convs[0]
    n_out = graph.nodes[target].out_channels
    ratios = tmp / "ratios.json"
    ratios.write_text(json.dumps({target: 0.5}))
    out = tmp / "prune_file"
    rc = run_cli("prune", "--model", manifest, "--weights", archive,
                 "--out-dir", str(out), "--ratios-file", str(ratios))
    assert rc == 0
    plan = json.loads((out / "plan.json").read_text())
    removed = n_out - max(1, -(-n_out // 2))  # ceil(n/2) kept at ratio 0.5
    assert len(plan[target]["removed"]) == removed
    assert all(lp["removed"] == [] for nid, lp in plan.items() if nid != target)
    pruned = load_manifest(str(out / "pruned.model.json"))
    assert pruned.nodes[target].out_channels == n_out - removed
    # forward still runs on the rewritten pair
    s1 = load_archive(str(out / "pruned.pkt"))
    x = np.zeros((1,) + pruned.input_shape, np.float32)
    assert forward(pruned, s1, x).shape[0] == 1


def test_ratios_file_invalid_json_exits_2(model_dir):
    tmp, manifest, archive = model_dir
    ratios = tmp / "broken.json"
    ratios.write_text("{not json")
    rc = run_cli("prune", "--model", manifest, "--weights", archive,
                 "--out-dir", str(tmp / "z"), "--ratios-file", str(ratios))
    assert rc == 2


def test_report_outputs(model_dir, capsys):
    tmp, manifest, archive = model_dir
    pruned_dir = tmp / "pr"
    assert run_cli("prune", "--model", manifest, "--weights", archive,
                   "--out-dir", str(pruned_dir), "--ratio", "0.25") == 0
    capsys.readouterr()
    out = tmp / "rep"
    rc = run_cli("report", "--model", manifest,
                 "--pruned", str(pruned_dir / "pruned.model.json"),
                 "--out-dir", str(out))
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "total" in stdout
    assert (out / "report.csv").exists()
    assert (out / "report.json").exists()
    assert (out / "report.png").stat().st_size > 0
    rows = (out / "report.csv").read_text().strip().split("\n")
    assert rows[0].startswith("node,")
    body = json.loads((out / "report.json").read_text())
    assert body["total"]["flops_before"] > body["total"]["flops_after"]


def test_verify_passes_on_toy(model_dir, capsys):
    tmp, manifest, archive = model_dir
    rc = run_cli("verify", "--model", manifest, "--weights", archive,
                 "--out-dir", str(tmp))
    out = capsys.readouterr().out
    assert rc == 0
    assert "FAIL" not in out
    assert "checks passed" in out


def test_compare_outputs_and_spearman(model_dir, capsys):
    tmp, manifest, archive = model_dir
    out = tmp / "cmp"
    rc = run_cli("compare", "--model", manifest, "--weights", archive,
                 "--criteria", "fscl_l1,l1,fpgm", "--out-dir", str(out))
    assert rc == 0
    capsys.readouterr()
    rows = json.loads((out / "compare.json").read_text())
    pairs = {r["pair"] for r in rows}
    assert pairs == {"fscl_l1 vs l1", "fscl_l1 vs fpgm", "l1 vs fpgm"}
    assert (out / "compare.csv").exists()
    assert (out / "compare.png").stat().st_size > 0
    # spearman column matches an independent rank correlation
    from prunekit.criteria import score_model
    graph = load_manifest(manifest)
    store = load_archive(archive)
    ta = score_model(graph, store, "fscl_l1", (), True)
    tb = score_model(graph, store, "l1", (), True)
    for r in rows:
        if r["pair"] != "fscl_l1 vs l1":
            continue
        want = naive_spearman(ta.layers[r["layer"]], tb.layers[r["layer"]])
        assert abs(r["spearman"] - want) < 1e-9
    # overlap of a criterion with itself is total
    rc = run_cli("compare", "--model", manifest, "--weights", archive,
                 "--criteria", "l1,l1", "--out-dir", str(out))
    assert rc == 0
    rows = json.loads((out / "compare.json").read_text())
    assert all(r["spearman"] == 1.0 and r["bottom_k_overlap"] == 1.0 for r in rows)


def test_compare_single_criterion_exits_2(model_dir):
    tmp, manifest, archive = model_dir
    rc = run_cli("compare", "--model", manifest, "--weights", archive,
                 "--criteria", "l1", "--out-dir", str(tmp / "c1"))
    assert rc == 2


def _run_proc(argv, threads=None):
    env = dict(os.environ)
    env.pop("PRUNEKIT_THREADS", None)
    if threads is not None:
        env["PRUNEKIT_THREADS"] = str(threads)
    return subprocess.run([sys.executable, "-m", "prunekit"] + argv,
                          capture_output=True, env=env, text=True)


def test_score_bytes_stable_across_runs_and_threads(model_dir):
    tmp, manifest, archive = model_dir
    blobs = {}
    for tag, threads in [("a", None), ("b", None), ("t1", 1), ("t4", 4)]:
        out = tmp / f"det_{tag}"
        proc = _run_proc(["score", "--model", manifest, "--weights", archive,
                          "--out-dir", str(out)], threads)
        assert proc.returncode == 0, proc.stderr
        blobs[tag] = (out / "scores.json").read_bytes()
    assert blobs["a"] == blobs["b"] == blobs["t1"] == blobs["t4"]


def test_prune_bytes_stable_across_threads(model_dir):
    tmp, manifest, archive = model_dir
    blobs = []
    for tag, threads in [("t1", 1), ("t4", 4)]:
        out = tmp / f"pd_{tag}"
        proc = _run_proc(["prune", "--model", manifest, "--weights", archive,
                          "--out-dir", str(out), "--ratio", "0.3"], threads)
        assert proc.returncode == 0, proc.stderr
        blobs.append(((out / "pruned.pkt").read_bytes(),
                      (out / "pruned.model.json").read_bytes(),
                      (out / "plan.json").read_bytes()))
    assert blobs[0] == blobs[1]


def test_seeded_init_without_weights(model_dir):
    tmp, manifest, _ = model_dir
    out_a, out_b = tmp / "ia", tmp / "ib"
    for out in (out_a, out_b):
        assert run_cli("score", "--model", manifest, "--out-dir", str(out),
                       "--criterion", "l2") == 0
    assert (out_a / "scores.json").read_bytes() == (out_b / "scores.json").read_bytes()
