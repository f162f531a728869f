import csv
import math

import numpy as np
import pytest

from helpers import small_spec
from pointdeeponet import data as D
from pointdeeponet import geometry as G
from pointdeeponet import training as T
from pointdeeponet.models import LoadCondition, UnsupportedResolutionError


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    return D.generate_synthetic(root, D.SyntheticConfig(n_samples=15, n_nodes=300), seed=1)


def _config(manifest, arch="point_deeponet", **kw):
    base = dict(iterations=12, batch_size=4, n_points=32, eval_interval=5, seed=3)
    base.update(kw)
    return T.TrainConfig(small_spec(arch), str(manifest.root), **base)


@pytest.fixture(scope="module")
def trained(manifest):
    ckpt, _ = T.train(_config(manifest), manifest)
    return ckpt


# metrics -----------------------------------------------------------------

def test_metrics_perfect():
    y = np.array([1.0, 2.0, 5.0])
    assert T.compute_metrics(y, y) == {"mae": 0.0, "rmse": 0.0, "r2": 1.0}


def test_metrics_hand_example():
    m = T.compute_metrics([1, 2, 3, 4], [2, 2, 2, 2])
    assert m["mae"] == 1.0
    assert m["rmse"] == math.sqrt(1.5)
    assert round(m["rmse"], 6) == 1.224745
    assert m["r2"] == pytest.approx(-0.2, abs=1e-15)


def test_metrics_zero_variance():
    with pytest.raises(T.ZeroVarianceError):
        T.compute_metrics([0, 0], [1, 1])


def test_metrics_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        T.compute_metrics([1, 2, 3], [1, 2])


def _naive(y, p):
    n = len(y)
    mae = sum(abs(a - b) for a, b in zip(y, p)) / n
    rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y, p)) / n)
    mean = sum(y) / n
    r2 = 1 - sum((a - b) ** 2 for a, b in zip(y, p)) / sum((a - mean) ** 2 for a in y)
    return mae, rmse, r2


def test_metrics_match_direct_summation():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 200))
        y = rng.normal(size=n) * rng.uniform(0.1, 10)
        p = y + rng.normal(size=n) * rng.uniform(0, 2)
        m = T.compute_metrics(y, p)
        mae, rmse, r2 = _naive(y.tolist(), p.tolist())
        assert abs(m["mae"] - mae) <= 1e-12 * max(1, mae)
        assert abs(m["rmse"] - rmse) <= 1e-12 * max(1, rmse)
        assert abs(m["r2"] - r2) <= 1e-12 * max(1, abs(r2))
        assert m["rmse"] >= m["mae"] and m["r2"] <= 1


# training ----------------------------------------------------------------

def test_config_validation(manifest):
    with pytest.raises(ValueError):
        _config(manifest, iterations=0)
    with pytest.raises(ValueError):
        _config(manifest, batch_size=0)


def test_history_rows(manifest, tmp_path):
    _, hist = T.train(_config(manifest), manifest)
    assert [r["iteration"] for r in hist] == [5, 10, 12]
    assert all(math.isfinite(r["train_loss"]) and math.isfinite(r["val_loss"]) for r in hist)
    T.write_history(hist, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == list(T.HISTORY_COLUMNS) and len(rows) == 4


@pytest.mark.parametrize("arch", ["pointnet", "deeponet", "point_deeponet"])
def test_same_seed_same_history(manifest, arch):
    _, a = T.train(_config(manifest, arch), manifest)
    _, b = T.train(_config(manifest, arch), manifest)
    assert a == b


def test_different_seed_differs(manifest):
    _, a = T.train(_config(manifest), manifest)
    _, b = T.train(_config(manifest, seed=4), manifest)
    assert a != b


def test_zero_lr_is_identity(manifest):
    from pointdeeponet.models import build_model

    cfg = _config(manifest, lr=0.0, weight_decay=0.0, fixed_batch=True, eval_interval=1, iterations=4)
    ckpt, hist = T.train(cfg, manifest)
    fresh = build_model(cfg.spec, cfg.seed)
    for (_, a), (_, b) in zip(ckpt.model.named_parameters(), fresh.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert len({r["train_loss"] for r in hist}) == 1


def test_loss_decreases(manifest):
    _, hist = T.train(_config(manifest, iterations=150, eval_interval=50, fixed_batch=True), manifest)
    assert hist[-1]["train_loss"] < 0.5 * hist[0]["train_loss"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(manifest, tmp_path):
    cfg = _config(manifest, lr=1e30, iterations=30, eval_interval=1, checkpoint=str(tmp_path / "c.pdnc"))
    with pytest.raises(T.TrainingDiverged, match="iteration"):
        T.train(cfg, manifest)


# checkpoints ---------------------------------------------------------------

@pytest.mark.parametrize("arch", ["pointnet", "deeponet", "point_deeponet"])
def test_checkpoint_round_trip_is_bitwise(manifest, tmp_path, arch):
    ckpt, _ = T.train(_config(manifest, arch), manifest)
    path = T.save_checkpoint(ckpt, tmp_path / "m.pdnc")
    back = T.load_checkpoint(path)
    rec = manifest.load(manifest.ids("val")[0])
    idx = G.resample_fixed(rec.n_nodes, 32, seed=0)
    a = T.predict(ckpt, rec, query_idx=idx, cloud_idx=idx).values
    b = T.predict(back, rec, query_idx=idx, cloud_idx=idx).values
    assert a.tobytes() == b.tobytes()
    assert back.iteration == ckpt.iteration and back.history == ckpt.history
    assert back.optimizer.state.step == ckpt.optimizer.state.step
    for x, y in zip(back.optimizer.state.m, ckpt.optimizer.state.m):
        assert x.tobytes() == y.tobytes()
    T.save_checkpoint(back, tmp_path / "again.pdnc")
    assert (tmp_path / "m.pdnc").read_bytes() == (tmp_path / "again.pdnc").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.pdnc").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(D.FormatError, match="magic"):
        T.load_checkpoint(tmp_path / "x.pdnc")


# evaluation ----------------------------------------------------------------

def test_oracle_hook_gives_perfect_report(manifest, trained):
    report = T.evaluate(trained, manifest, predict_fn=lambda rec, idx: rec.targets[idx].astype(np.float64))
    assert all(r["r2"] == 1.0 and r["mae"] == 0.0 for r in report.rows)
    assert report.mean_r2("sampled") == 1.0 and report.mean_r2("full") == 1.0


def test_report_shape_and_csv(manifest, trained, tmp_path):
    report = T.evaluate(trained, manifest)
    labels = {r["label"] for r in report.rows}
    assert len(report.rows) == 2 * 4 * len(labels)
    for r in report.rows:
        assert r["rmse"] >= r["mae"] >= 0 and r["r2"] <= 1
    n_val = {lab: sum(1 for s in manifest.samples if s["split"] == "val" and s["label"] == lab) for lab in labels}
    for lab in labels:
        assert report.cell("sampled", lab, "u_x")["n"] == 32 * n_val[lab]
        assert report.cell("full", lab, "u_x")["n"] == 300 * n_val[lab]
    report.to_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == len(report.rows)
    assert list(rows[0].keys()) == list(T.REPORT_COLUMNS)


def test_pointnet_full_mode_is_rejected(manifest):
    ckpt, _ = T.train(_config(manifest, "pointnet"), manifest)
    with pytest.raises(UnsupportedResolutionError):
        T.evaluate(ckpt, manifest, modes=("full",))
    report = T.evaluate(ckpt, manifest, modes=("sampled",))
    assert {r["mode"] for r in report.rows} == {"sampled"}


def test_predict_matches_evaluate(manifest, trained):
    sid = manifest.ids("val")[0]
    rec = manifest.load(sid)
    sub = D.Manifest(manifest.root, [dict(manifest.entry(sid), split="val")], manifest.stats, 0)
    report = T.evaluate(trained, sub, modes=("full",))
    idx = G.resample_fixed(rec.n_nodes, 32, seed=[trained.seed, 20_000])
    pred = T.predict(trained, rec, cloud_idx=idx).values
    m = T.compute_metrics(rec.targets[:, 0], pred[:, 0])
    assert m["mae"] == pytest.approx(report.cell("full", rec.label, "u_x")["mae"], rel=1e-12)


# inference -----------------------------------------------------------------

def test_chunked_inference_matches_unchunked(trained):
    pts = G.sample_volume(G.Shape.box((0, 0, 0), (1.0, 0.8, 0.6)), 50_000, seed=2)
    cond = LoadCondition(1.2, 4.0, (0.6, 0.0, 0.8))
    a = T.predict(trained, pts, cond, chunk_size=8192).values
    b = T.predict(trained, pts, cond, chunk_size=50_000).values
    assert a.shape == (50_000, 4)
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)


def test_normalized_output_within_head_bounds(trained, manifest):
    rec = manifest.load(manifest.ids("val")[0])
    out = T.predict(trained, rec, physical=False)
    assert out.normalized
    assert np.all(np.isfinite(out.values)) and np.all(np.abs(out.values) < 1)


def test_predict_raw_needs_condition(trained):
    pts = G.sample_volume(G.Shape.sphere(), 10, seed=0)
    with pytest.raises(ValueError, match="LoadCondition"):
        T.predict(trained, pts)
    with pytest.raises(ValueError, match="unit"):
        T.predict(trained, pts, (1.0, 1.0, (1.0, 1.0, 0.0)))
