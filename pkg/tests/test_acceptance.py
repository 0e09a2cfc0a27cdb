"""Primary acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed at the end of the session.
"""

import time

import numpy as np
import pytest

from oracles import decode_oracle, dyadic_cloud, dyadic_translation, encode_oracle, fps_oracle, knn_oracle
from uff.cli import main
from uff.geometry import farthest_point_sample, knn
from uff.metrics import SegEvalInput, miou_report, overall_accuracy, shape_iou
from uff.pipeline import PipelineConfig, encode, extract, fit_uff, point_features
from uff.saab import KeepPolicy, SaabStats, saab_accumulate, saab_bias, saab_fit


def cli(*args):
    assert main([str(a) for a in args]) == 0


def read_kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


@pytest.mark.criterion("oracle equivalence: kNN and FPS on 1000 instances each")
def test_oracle_equivalence(detail):
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    mismatches = 0
    for i in range(1000):
        n = int(rng.integers(1, 65))
        # every fourth instance on a coarse grid to exercise ties
        pts = rng.integers(-2, 3, size=(n, 3)).astype(float) if i % 4 == 0 else rng.normal(size=(n, 3))
        q = pts[int(rng.integers(n))] if i % 2 else rng.normal(size=3)
        k = int(rng.integers(1, n + 1))
        mismatches += knn(pts, q, k).tolist() != knn_oracle(pts, q, k)
    for i in range(1000):
        n = int(rng.integers(1, 41))
        pts = rng.uniform(-1, 1, size=(n, 3))
        m = int(rng.integers(1, n + 1))
        mismatches += farthest_point_sample(pts, m).tolist() != fps_oracle(pts, m)
    elapsed = time.perf_counter() - start
    detail(f"{mismatches} mismatches, {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 5


@pytest.mark.criterion("Saab invariants over 100 random fits")
def test_saab_invariants(detail):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_orth = worst_energy = 0.0
    min_out = np.inf
    for _ in range(100):
        d = int(rng.integers(1, 49))
        n = int(rng.integers(2, 400))
        x = rng.normal(size=(n, d)) * rng.uniform(0.01, 10, size=d) + rng.normal(scale=3, size=d)
        stats = saab_accumulate(SaabStats.empty(d), x)
        full = saab_fit(stats, KeepPolicy(count=d))
        k = full.kernels
        worst_orth = max(worst_orth, np.abs(k @ k.T - np.eye(d)).max())
        out = full.apply(x)
        worst_energy = max(worst_energy, abs((out * out).sum() - (x * x).sum()) / (x * x).sum())
        kept = saab_fit(stats, KeepPolicy(energy=0.99, max_dim=max(1, d // 2)))
        biased = kept.with_bias(saab_bias(kept, [x]))
        min_out = min(min_out, biased.apply(x).min())
    elapsed = time.perf_counter() - start
    detail(f"max|KK'-I|={worst_orth:.1e}, energy rel err={worst_energy:.1e}, min biased output={min_out:.2e}, {elapsed:.2f}s")
    assert worst_orth < 1e-8
    assert worst_energy < 1e-6
    assert min_out >= 0
    assert elapsed < 10


@pytest.fixture(scope="module")
def small_model():
    rng = np.random.default_rng(102)
    cfg = PipelineConfig.uniform(
        num_layers=3, k=8, k_decoder=4, encoder_keep=KeepPolicy(max_dim=16), decoder_keep=KeepPolicy(max_dim=16)
    )
    return fit_uff([dyadic_cloud(rng, 256) for _ in range(8)], cfg)


@pytest.mark.criterion("pipeline invariances on 100 random clouds")
def test_pipeline_invariances(small_model, detail):
    start = time.perf_counter()
    rng = np.random.default_rng(103)
    failures = 0
    for _ in range(100):
        cloud = dyadic_cloud(rng, 256)
        sf, pf = extract(small_model, cloud)
        moved, _ = extract(small_model, cloud + dyadic_translation(rng))
        perm = rng.permutation(len(cloud))
        shuffled, pf_perm = extract(small_model, cloud[perm])
        ok = (
            np.array_equal(sf, moved)
            and np.array_equal(sf, shuffled)
            and pf.shape[0] == len(cloud)
            and np.array_equal(pf[perm], pf_perm)
        )
        failures += not ok
    elapsed = time.perf_counter() - start
    detail(f"{failures} failing clouds, {elapsed:.2f}s")
    assert failures == 0
    assert elapsed < 30


@pytest.mark.criterion("composition: fused pipeline equals per-point oracle")
def test_composition(small_model, detail):
    start = time.perf_counter()
    rng = np.random.default_rng(104)
    worst = 0.0
    for n in (128, 160, 256):
        cloud = rng.normal(size=(n, 3))
        layers = encode_oracle(small_model, cloud)
        records = encode(small_model, cloud)
        for rec, (_, attrs) in zip(records, layers):
            worst = max(worst, np.abs(rec.attributes - attrs).max())
        worst = max(worst, np.abs(point_features(records, small_model) - decode_oracle(small_model, layers)).max())
    elapsed = time.perf_counter() - start
    detail(f"max abs diff {worst:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-10
    assert elapsed < 30


@pytest.mark.criterion("synthetic classification: OA >= 0.95 with least-squares head")
def test_synthetic_classification(tmp_path, detail):
    start = time.perf_counter()
    data = tmp_path / "cls"
    model = tmp_path / "cls.uffm"
    cli("synth", "--task", "cls", "--classes", 3, "--n", 100, "--n-test", 50, "--points", 512, "--seed", 0, "--out", data)
    manifest = data / "manifest.json"
    cli("fit", "--manifest", manifest, "--out", model)
    cli("train-cls", "--model", model, "--manifest", manifest, "--head", "lsq")
    cli("eval-cls", "--model", model, "--manifest", manifest, "--split", "test", "--head", "lsq", "--report", tmp_path / "report")
    oa = float(read_kv(tmp_path / "report.kv")["overall_accuracy"])
    elapsed = time.perf_counter() - start
    detail(f"OA {oa:.4f}, {elapsed:.1f}s")
    assert oa >= 0.95
    assert elapsed < 120


@pytest.mark.criterion("synthetic segmentation: Ins. mIoU >= 0.90, ground truth >= predicted")
def test_synthetic_segmentation(tmp_path, detail):
    start = time.perf_counter()
    data = tmp_path / "seg"
    model = tmp_path / "seg.uffm"
    cli("synth", "--task", "seg", "--classes", 2, "--n", 40, "--n-test", 25, "--points", 512, "--seed", 0, "--out", data)
    manifest = data / "manifest.json"
    cli("fit", "--manifest", manifest, "--out", model)
    cli("train-cls", "--model", model, "--manifest", manifest, "--head", "lsq")
    cli("train-seg", "--model", model, "--manifest", manifest)
    ins = {}
    for mode in ("predicted", "ground-truth"):
        report = tmp_path / mode
        cli("eval-seg", "--model", model, "--manifest", manifest, "--label-mode", mode, "--report", report)
        ins[mode] = float(read_kv(report.with_suffix(".kv"))["ins_miou"])
    elapsed = time.perf_counter() - start
    detail(f"Ins. mIoU predicted {ins['predicted']:.4f}, ground truth {ins['ground-truth']:.4f}, {elapsed:.1f}s")
    assert ins["predicted"] >= 0.90
    assert ins["ground-truth"] >= ins["predicted"]
    assert elapsed < 180


@pytest.mark.criterion("metric hand examples are exact")
def test_metric_examples(detail):
    labels = np.zeros(10000, dtype=int)
    pred = labels.copy()
    pred[9043:] = 1
    assert overall_accuracy(pred, labels) == 0.9043
    assert shape_iou([0, 0, 1, 1], [0, 1, 1, 1], [0, 1]) == 7 / 12
    parts = np.array([0, 1, 0, 1])
    shapes = [SegEvalInput(0, np.arange(5), np.array([0, 1, 2, 4, 3]), range(5))]
    shapes += [SegEvalInput(1, parts, parts, [0, 1]) for _ in range(3)]
    report = miou_report(shapes)
    detail(f"Cat. {report.cat_miou!r}, Ins. {report.ins_miou!r}")
    assert report.shape_ious[0] == 0.6
    assert report.cat_miou == 0.8
    assert report.ins_miou == 0.9


@pytest.mark.criterion("determinism: byte-identical model files across two runs")
def test_determinism(tmp_path, detail):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("num_layers = 3\nk_encoder = 16\nk_decoder = 4\nrf_trees = 10\nseg_rf_trees = 5\nseed = 7\n")
    files = []
    for run in ("a", "b"):
        data = tmp_path / f"data_{run}"
        model = tmp_path / f"{run}.uffm"
        cli("synth", "--task", "seg", "--classes", 2, "--n", 10, "--n-test", 2, "--points", 256, "--seed", 3, "--out", data)
        manifest = data / "manifest.json"
        cli("fit", "--manifest", manifest, "--config", cfg, "--out", model)
        cli("train-cls", "--model", model, "--manifest", manifest, "--config", cfg)
        cli("train-seg", "--model", model, "--manifest", manifest, "--config", cfg)
        files.append(model.read_bytes())
    detail(f"{len(files[0])} bytes")
    assert files[0] == files[1]
