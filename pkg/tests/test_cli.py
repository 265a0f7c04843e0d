import os

import numpy as np
import pytest

from shapecodes.cli import heatmap_text, main
from shapecodes.evaluation import (AVG_VIEWGRID, NetReconstructor, evaluate_reconstruction, fit_avg_from_dataset,
                                   per_view_mse_heatmap)
from shapecodes.formats import read_checkpoint, read_dataset, sha256_file, write_dataset
from shapecodes.shapeforge import TEST, TRAIN
from shapecodes.training import net_from_tensors
from shapecodes.viewgrid import read_pgm, shift_images, untile


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, small_dataset):
    d = tmp_path_factory.mktemp("cli")
    write_dataset(d / "ds.vgds", small_dataset)
    assert run("train", "--data", d / "ds.vgds", "--out", d / "net.scpt", "--lr-grid", "0.1,0.03",
               "--max-epochs", 3) == 0
    return d


def test_gen_counts_and_determinism(tmp_path):
    args = ["gen", "--classes", 6, "--per-class", 40, "--azimuths", 12, "--elevations", "0,±30,±60,±90",
            "--seed", 1, "--image-size", 8]
    assert run(*args, "--out", tmp_path / "a.vgds") == 0
    ds = read_dataset(tmp_path / "a.vgds")
    assert len(ds) == 240 and ds.spec.size == 84
    assert ds.spec.elevations == (-90.0, -60.0, -30.0, 0.0, 30.0, 60.0, 90.0)
    assert run(*args, "--out", tmp_path / "b.vgds") == 0
    assert sha256_file(tmp_path / "a.vgds") == sha256_file(tmp_path / "b.vgds")
    manifest = (tmp_path / "a.vgds.manifest").read_text()
    assert sha256_file(tmp_path / "a.vgds") in manifest and "seed" in manifest


def test_usage_errors(tmp_path, capsys):
    assert run("gen", "--out", tmp_path / "x", "--bogus-flag", 1) == 2
    assert "usage" in capsys.readouterr().err
    assert run("gen", "--out", tmp_path / "x", "--classes", 99) == 2
    assert run("nonsense") == 2
    assert run("gen", "--out", tmp_path / "x", "--elevations", "0,0") == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# small\nclasses = 2\nper-class = 3\nazimuths = 4\nelevations = 0\nimage_size = 8\n"
                   f"out = {tmp_path / 'c.vgds'}\n")
    assert run("gen", "--config", cfg) == 0
    ds = read_dataset(tmp_path / "c.vgds")
    assert len(ds) == 6 and ds.spec.grid_shape == (1, 4)
    # flags win over the file
    assert run("gen", "--config", cfg, "--classes", 3, "--out", tmp_path / "d.vgds") == 0
    assert len(read_dataset(tmp_path / "d.vgds")) == 9
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert run("gen", "--config", bad, "--out", tmp_path / "e.vgds") == 2
    assert run("gen", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "e.vgds") == 2


def test_data_errors(tmp_path, workdir):
    assert run("train", "--data", tmp_path / "missing.vgds", "--out", tmp_path / "n.scpt") == 3
    (tmp_path / "junk.vgds").write_bytes(b"not a dataset")
    assert run("eval-recon", "--data", tmp_path / "junk.vgds") == 3
    assert run("export", "--data", workdir / "ds.vgds", "--checkpoint", workdir / "net.scpt", "--object", 999,
               "--out", tmp_path / "m.pgm") == 3
    other = tmp_path / "other.vgds"
    assert run("gen", "--classes", 2, "--per-class", 3, "--azimuths", 4, "--elevations", 0, "--image-size", 16,
               "--out", other) == 0
    assert run("eval-recon", "--data", other, "--checkpoint", workdir / "net.scpt") == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, workdir):
    assert run("train", "--data", workdir / "ds.vgds", "--out", tmp_path / "n.scpt", "--lr-grid", "1e9",
               "--max-epochs", 2) == 4


def test_train_outputs(workdir, small_dataset):
    tensors, meta = read_checkpoint(workdir / "net.scpt")
    assert meta["dataset_sha256"] == sha256_file(workdir / "ds.vgds")
    log_lines = (workdir / "net.scpt.log.tsv").read_text().splitlines()
    assert log_lines[0] == "lr\tepoch\tstep\ttrain_loss\tval_loss\tbest"
    rows = [line.split("\t") for line in log_lines[1:]]
    lr = float(meta["learning_rate"])
    vals = [float(r[4]) for r in rows if float(r[0]) == lr]
    best = [float(r[4]) for r in rows if float(r[0]) == lr and r[5] == "1"]
    assert best == sorted(best, reverse=True) and min(vals) == best[-1]


def test_variants_accepted(tmp_path, workdir):
    for variant in ("ours", "ca", "autoencoder"):
        assert run("train", "--data", workdir / "ds.vgds", "--out", tmp_path / f"{variant}.scpt",
                   "--variant", variant, "--lr-grid", "0.03", "--max-epochs", 1) == 0
        assert read_checkpoint(tmp_path / f"{variant}.scpt")[1]["net_config"]["variant"] in (variant, "relative",
                                                                                            "canonical")


def _table(path):
    lines = path.read_text().splitlines()
    return lines[0].split("\t"), [line.split("\t") for line in lines[1:]]


def test_eval_recon_table(tmp_path, workdir, small_dataset):
    ds = small_dataset
    out = tmp_path / "recon.tsv"
    assert run("eval-recon", "--data", workdir / "ds.vgds", "--checkpoint", workdir / "net.scpt", "--out", out) == 0
    header, rows = _table(out)
    assert header == ["method", "split", "class", "mse_x1000"]
    overall = {(r[0], r[1]): float(r[3]) for r in rows if r[2] == "all"}
    assert {("ours", "seen"), ("ours", "unseen"), ("avg_view", "unseen"), ("class_avg_viewgrid", "seen")} <= set(overall)
    assert ("class_avg_view", "unseen") not in overall and ("class_avg_viewgrid", "unseen") not in overall
    lib = evaluate_reconstruction(fit_avg_from_dataset(ds, AVG_VIEWGRID), ds, TEST).overall
    assert overall[("avg_viewgrid", "seen")] == float(f"{lib:.6f}")
    tensors, meta = read_checkpoint(workdir / "net.scpt")
    net = net_from_tensors(tensors, meta)
    lib = evaluate_reconstruction(NetReconstructor(net, ds.spec.elevations), ds, TEST).overall
    assert overall[("ours", "seen")] == float(f"{lib:.6f}")
    # baselines alone need no checkpoint
    assert run("eval-recon", "--data", workdir / "ds.vgds", "--out", tmp_path / "b.tsv") == 0


def test_eval_knn_table(tmp_path, workdir):
    out = tmp_path / "knn.tsv"
    assert run("eval-knn", "--data", workdir / "ds.vgds", "--methods", "pixels", "--per-class", 50,
               "--splits", "unseen", "--out", out) == 0
    header, rows = _table(out)
    assert header == ["method", "layer", "split", "metric", "value"]
    assert rows == [["pixels", "-", "unseen", "accuracy", rows[0][4]]]
    assert run("eval-knn", "--data", workdir / "ds.vgds", "--checkpoint", workdir / "net.scpt", "--per-class", 50,
               "--seeds", "0,1", "--splits", "seen", "--out", out) == 0
    _, rows = _table(out)
    ours = [r for r in rows if r[0] == "ours" and r[3] == "accuracy"]
    assert [r[1] for r in ours][:3] == ["fc1", "fc2", "fc3"] and ours[-1][1].startswith("best(")
    best_layer = ours[-1][1][5:-1]
    assert ours[-1][4] == max(r[4] for r in ours[:3] if r[1] == best_layer)
    assert {r[0] for r in rows} == {"ours", "pixels", "random"}
    assert any(r[3] == "accuracy_seed1" for r in rows)
    assert run("eval-knn", "--data", workdir / "ds.vgds", "--methods", "ours") == 2


def test_export_montage(tmp_path, workdir, small_dataset):
    ds = small_dataset
    out = tmp_path / "m.pgm"
    assert run("export", "--data", workdir / "ds.vgds", "--checkpoint", workdir / "net.scpt", "--object", 3,
               "--row", 2, "--col", 5, "--out", out) == 0
    n, m = ds.spec.grid_shape
    h = ds.image_size
    canvas = read_pgm(out)
    assert canvas.shape == (2 * n * (h + 1) + 1, m * (h + 1) + 1)
    np.testing.assert_array_equal(untile(canvas, n, m, h, h), ds.pixels[3])
    tensors, meta = read_checkpoint(workdir / "net.scpt")
    net = net_from_tensors(tensors, meta)
    pred = net.predict(ds.images(3)[2, 5][None], [ds.spec.elevations[2]])[0]
    expected = np.round(np.clip(shift_images(pred, -5), 0, 1) * 255).astype(np.uint8)
    np.testing.assert_array_equal(untile(canvas, n, m, h, h, offset_rows=n * (h + 1)), expected)
    manifest = (tmp_path / "m.pgm.manifest").read_text()
    assert "row 2 col 5" in manifest


def test_heatmap_matches_library(tmp_path, workdir, small_dataset):
    ds = small_dataset
    prefix = tmp_path / "hm"
    assert run("heatmap", "--data", workdir / "ds.vgds", "--checkpoint", workdir / "net.scpt", "--classes", "1",
               "--out", prefix) == 0
    name = ds.class_names[1]
    text = (tmp_path / f"hm_{name}.tsv").read_text()
    tensors, meta = read_checkpoint(workdir / "net.scpt")
    rec = NetReconstructor(net_from_tensors(tensors, meta), ds.spec.elevations)
    idx = ds.split_indices(TEST)
    mat = per_view_mse_heatmap(rec, ds, idx[ds.class_ids[idx] == 1])
    assert text == heatmap_text(mat)
    parsed = np.array([[float(v) for v in line.split("\t")] for line in text.splitlines()])
    assert parsed.shape == ds.spec.grid_shape and parsed.tobytes() == mat.tobytes()
    img = read_pgm(tmp_path / f"hm_{name}.pgm")
    assert img.shape == (5 * 8, 8 * 8) and img.max() == 255
    assert run("heatmap", "--data", workdir / "ds.vgds", "--baseline", "avg_view", "--out", prefix) == 0
    assert run("heatmap", "--data", workdir / "ds.vgds", "--out", prefix) == 2


def test_gradcheck_command(tmp_path):
    out = tmp_path / "gc.tsv"
    assert run("gradcheck", "--instances", 2, "--checks", "linear,relu", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 4 + 1 and lines[-1].startswith("# 4/4 passed")
    assert run("gradcheck", "--checks", "nope") == 2
