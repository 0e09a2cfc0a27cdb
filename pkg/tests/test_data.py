import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uff.config import ConfigError, RunConfig
from uff.data import (
    CLOUD_MAGIC,
    DatasetManifest,
    ParseError,
    SampleEntry,
    label_colors,
    load_cloud,
    load_labels,
    normalize_cloud,
    parse_binary_cloud,
    stratified_subset,
    write_cloud,
    write_labels,
    write_ply,
)
from uff.saab import KeepPolicy

CUBE = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]


class TestLoadCloud:
    def test_ascii(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("# three points\n0 0 0\n1.5, 2, -3\n\n4 5 6 extra\n")
        pts = load_cloud(p)
        assert pts.tolist() == [[0, 0, 0], [1.5, 2, -3], [4, 5, 6]]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 50), st.integers(0, 2**32 - 1))
    def test_binary_round_trip(self, tmp_path_factory, n, seed):
        pts = np.random.default_rng(seed).normal(size=(n, 3)).astype(np.float32)
        p = tmp_path_factory.mktemp("bin") / "c.uffp"
        write_cloud(p, pts)
        assert p.read_bytes()[:8] == CLOUD_MAGIC
        np.testing.assert_array_equal(load_cloud(p), pts.astype(np.float64))

    def test_off_matches_ascii(self, tmp_path):
        off = tmp_path / "cube.off"
        faces = "4 0 1 3 2\n4 4 5 7 6\n4 0 1 5 4\n4 2 3 7 6\n4 0 2 6 4\n4 1 3 7 5\n"
        off.write_text("OFF\n8 6 0\n" + "".join(f"{x} {y} {z}\n" for x, y, z in CUBE) + faces)
        asc = tmp_path / "cube.xyz"
        asc.write_text("".join(f"{x} {y} {z}\n" for x, y, z in CUBE))
        a, b = load_cloud(off), load_cloud(asc)
        assert a.shape == (8, 3)
        np.testing.assert_array_equal(a, b)

    def test_off_counts_on_header_line(self, tmp_path):
        p = tmp_path / "c.off"
        p.write_text("OFF 2 0 0\n1 2 3\n4 5 6\n")
        assert load_cloud(p).tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_ascii_nan_offset(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("1 2 3\nnan 0 0\n")
        with pytest.raises(ParseError) as info:
            load_cloud(p)
        assert info.value.offset == 6

    def test_ascii_bad_number(self, tmp_path):
        p = tmp_path / "bad.xyz"
        p.write_text("1 2 3\n4 x 6\n")
        with pytest.raises(ParseError, match="byte 6"):
            load_cloud(p)

    def test_binary_bad_magic(self, tmp_path):
        p = tmp_path / "bad.uffp"
        write_cloud(p, np.zeros((2, 3)))
        data = bytearray(p.read_bytes())
        data[7] ^= 0xFF
        with pytest.raises(ParseError) as info:
            parse_binary_cloud(bytes(data))
        assert info.value.offset == 0

    def test_binary_truncated(self, tmp_path):
        p = tmp_path / "t.uffp"
        write_cloud(p, np.zeros((3, 3)))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(ParseError) as info:
            load_cloud(p)
        assert info.value.offset == 16 + 12 * 3 - 4

    def test_binary_nan_offset(self, tmp_path):
        p = tmp_path / "n.uffp"
        pts = np.zeros((3, 3))
        pts[2, 1] = np.nan
        write_cloud(p, pts)
        with pytest.raises(ParseError) as info:
            load_cloud(p)
        assert info.value.offset == 16 + 24

    def test_binary_header_layout(self, tmp_path):
        p = tmp_path / "h.uffp"
        write_cloud(p, [[1, 2, 3]])
        data = p.read_bytes()
        assert struct.unpack("<8sQ3f", data) == (CLOUD_MAGIC, 1, 1.0, 2.0, 3.0)

    def test_off_too_few_vertices(self, tmp_path):
        p = tmp_path / "c.off"
        p.write_text("OFF\n3 0 0\n1 2 3\n")
        with pytest.raises(ParseError, match="expected 3 vertices"):
            load_cloud(p)


class TestNormalize:
    def test_sphere(self):
        pts = np.random.default_rng(0).normal(size=(50, 3)) * 5 + 3
        out = normalize_cloud(pts)
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
        assert np.linalg.norm(out, axis=1).max() == pytest.approx(1.0)

    def test_cube(self):
        out = normalize_cloud(np.array(CUBE, dtype=float) * 4 + 1, "cube")
        np.testing.assert_allclose(out, CUBE)

    def test_unknown(self):
        with pytest.raises(ValueError):
            normalize_cloud(np.zeros((2, 3)), "ball")


def make_manifest(tmp_path, n_per=3, classes=2, points=5):
    rng = np.random.default_rng(1)
    entries = []
    for cls in range(classes):
        for i in range(n_per):
            name = f"c{cls}_{i}"
            write_cloud(tmp_path / f"{name}.uffp", rng.normal(size=(points, 3)))
            write_labels(tmp_path / f"{name}.seg", rng.integers(0, 2, points) + 2 * cls)
            entries.append(SampleEntry(f"{name}.uffp", cls, f"{name}.seg"))
    m = DatasetManifest(tmp_path, {"train": entries}, points, ["a", "b"][:classes], {0: [0, 1], 1: [2, 3]})
    m.save(tmp_path / "manifest.json")
    return tmp_path / "manifest.json"


class TestManifest:
    def test_round_trip(self, tmp_path):
        path = make_manifest(tmp_path)
        m = DatasetManifest.load(path)
        assert m.num_classes == 2 and m.point_count == 5
        assert m.part_vocabularies == {0: [0, 1], 1: [2, 3]}
        samples = m.load_split("train", normalize="none")
        assert [s.label for s in samples] == [0, 0, 0, 1, 1, 1]
        assert all(len(s.parts) == 5 for s in samples)
        np.testing.assert_array_equal(samples[0].points, load_cloud(tmp_path / "c0_0.uffp"))

    def test_missing_file(self, tmp_path):
        path = make_manifest(tmp_path)
        (tmp_path / "c1_2.uffp").unlink()
        with pytest.raises(FileNotFoundError):
            DatasetManifest.load(path)

    def test_label_length_mismatch(self, tmp_path):
        path = make_manifest(tmp_path)
        write_labels(tmp_path / "c0_1.seg", [0, 1])
        with pytest.raises(ParseError, match="2 part labels for 5 points"):
            DatasetManifest.load(path).load_split("train")

    def test_point_count_mismatch(self, tmp_path):
        path = make_manifest(tmp_path)
        write_cloud(tmp_path / "c0_0.uffp", np.zeros((4, 3)))
        with pytest.raises(ParseError, match="expected 5 points"):
            DatasetManifest.load(path).load_split("train")

    def test_bad_format(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ParseError):
            DatasetManifest.load(p)

    def test_unknown_split(self, tmp_path):
        with pytest.raises(KeyError):
            DatasetManifest.load(make_manifest(tmp_path)).entries("val")

    def test_labels_file(self, tmp_path):
        write_labels(tmp_path / "l.seg", [3, 1, 2])
        assert load_labels(tmp_path / "l.seg").tolist() == [3, 1, 2]


class TestStratifiedSubset:
    def test_covers_every_class(self):
        labels = np.repeat(np.arange(16), 40)
        idx = stratified_subset(labels, 0.01, seed=0)
        assert set(labels[idx]) == set(range(16))

    def test_fraction_and_seed(self):
        labels = np.repeat(np.arange(4), 100)
        a = stratified_subset(labels, 0.05, seed=3)
        assert len(a) == 20 and np.all(np.bincount(labels[a]) == 5)
        np.testing.assert_array_equal(a, stratified_subset(labels, 0.05, seed=3))
        assert not np.array_equal(a, stratified_subset(labels, 0.05, seed=4))
        assert np.all(np.diff(a) > 0)

    def test_full(self):
        assert stratified_subset([1, 0, 1], 1.0, 0).tolist() == [0, 1, 2]

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_invalid(self, fraction):
        with pytest.raises(ValueError):
            stratified_subset([0, 1], fraction, 0)


class TestPly:
    def test_header_and_colors(self, tmp_path):
        p = tmp_path / "o.ply"
        write_ply(p, [[0, 0, 0], [1, 2, 3]], [0, 1])
        lines = p.read_text().splitlines()
        assert lines[0] == "ply" and "element vertex 2" in lines
        colors = label_colors([0, 1])
        assert [float(v) for v in lines[-1].split()[:3]] == [1.0, 2.0, 3.0]
        assert [int(v) for v in lines[-1].split()[3:6]] == colors[1].tolist()
        assert not np.array_equal(colors[0], colors[1])


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig.parse("")
        pipe = cfg.pipeline()
        assert pipe.k_encoder == (32, 32, 32, 32) and pipe.k_decoder == (8, 8, 8)
        assert pipe.encoder_keep[3] == KeepPolicy(energy=0.999, max_dim=64)

    def test_values_and_comments(self):
        cfg = RunConfig.parse("num_layers = 2\nk_encoder = 8, 4  # per layer\n; note\nencoder_max_dims = 5\ndecoder_max_dims = 7\nseed = 3\n")
        pipe = cfg.pipeline()
        assert pipe.k_encoder == (8, 4) and pipe.k_decoder == (8,)
        assert [k.max_dim for k in pipe.encoder_keep] == [5, 5]
        assert cfg.seed == 3

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.parse("learning_rate = 0.1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("seed = many\n")

    def test_inconsistent(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("num_layers = 3\nk_encoder = 1, 2\n")

    def test_dumps_round_trip(self):
        cfg = RunConfig.parse("num_layers = 2\nk_decoder = 3\nencoder_max_dims = 4,5\ndecoder_max_dims = 6\naggregations = mean, max\n")
        assert RunConfig.parse(cfg.dumps()) == cfg
