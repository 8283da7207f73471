import json
import logging

import numpy as np
import pytest

from didark.datagen import (
    fit_pair_stats,
    generate_glyph_pair,
    generate_well_lit,
    load_paired_dataset,
    sample_stats_subset,
    write_glyph_dataset,
)
from didark.degrade import DegradeParams
from didark.errors import ArgumentError, IngestionError
from didark.imagecore import Domain, Image, srgb_decode, write_png


def write_pair(root, name, size=(256, 256), value=0.5):
    write_png(Image(np.full(size + (3,), value * 0.4)), root / "low" / name)
    write_png(Image(np.full(size + (3,), value)), root / "high" / name)


class TestLoad:
    def test_matched_and_sorted(self, tmp_path):
        for name in ["b.png", "a.png", "Z.png"]:
            write_pair(tmp_path, name)
        pairs = load_paired_dataset(tmp_path)
        assert len(pairs) == 3
        assert all(lo.shape == hi.shape == (256, 256, 3) for lo, hi in pairs)

    def test_bytewise_order(self, tmp_path):
        for i, name in enumerate(["b.png", "a.png", "Z.png"]):
            write_pair(tmp_path, name, value=0.2 + 0.2 * i)
        values = [round(float(hi.data[0, 0, 0]), 2) for _, hi in load_paired_dataset(tmp_path)]
        assert values == [0.6, 0.4, 0.2]  # Z < a < b

    def test_center_crop(self, tmp_path):
        data = np.zeros((300, 300, 3))
        data[22:278, 22:278] = 1.0
        write_png(Image(data), tmp_path / "low" / "x.png")
        write_png(Image(data), tmp_path / "high" / "x.png")
        (lo, _), = load_paired_dataset(tmp_path)
        assert lo.data.min() == 1.0

    def test_orphans_listed(self, tmp_path):
        write_pair(tmp_path, "a.png")
        write_png(Image(np.zeros((256, 256, 3))), tmp_path / "low" / "only_low.png")
        write_png(Image(np.zeros((256, 256, 3))), tmp_path / "high" / "only_high.png")
        with pytest.raises(IngestionError, match="low/only_low.png, high/only_high.png"):
            load_paired_dataset(tmp_path)

    def test_missing_dir(self, tmp_path):
        (tmp_path / "low").mkdir()
        with pytest.raises(IngestionError):
            load_paired_dataset(tmp_path)

    def test_size_mismatch(self, tmp_path):
        write_png(Image(np.zeros((256, 256, 3))), tmp_path / "low" / "a.png")
        write_png(Image(np.zeros((260, 256, 3))), tmp_path / "high" / "a.png")
        with pytest.raises(IngestionError):
            load_paired_dataset(tmp_path)

    def test_small_skipped_with_warning(self, tmp_path, caplog):
        write_pair(tmp_path, "a.png")
        write_pair(tmp_path, "small.png", size=(100, 300))
        with caplog.at_level(logging.WARNING):
            assert len(load_paired_dataset(tmp_path)) == 1
        assert "small.png" in caplog.text


class TestStatsSubset:
    def test_distinct_and_seeded(self):
        items = list(range(100))
        a = sample_stats_subset(items, 30, np.random.default_rng(1))
        b = sample_stats_subset(items, 30, np.random.default_rng(1))
        assert a == b and len(set(a)) == 30

    def test_small_dataset(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert sample_stats_subset([1, 2, 3], 30) == [1, 2, 3]
        assert "fewer than 30" in caplog.text

    def test_fit_pair_stats(self):
        pairs = [generate_glyph_pair(np.random.default_rng(i), 64) for i in range(3)]
        stats = fit_pair_stats(pairs)
        assert stats["lowlight"].domain == "lowlight" and stats["welllit"].domain == "welllit"
        assert stats["lowlight"].mu < stats["welllit"].mu


class TestGlyphs:
    def test_deterministic(self):
        a = generate_glyph_pair(np.random.default_rng(3))
        b = generate_glyph_pair(np.random.default_rng(3))
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))

    def test_has_strokes_and_degradation(self):
        low, high = generate_glyph_pair(np.random.default_rng(4))
        assert high.domain == low.domain == Domain.SRGB and high.shape == (256, 256, 3)
        # strong local contrast from the strokes
        assert np.abs(np.diff(high.data, axis=1)).max() > 0.4
        assert low.data.mean() < 0.6 * high.data.mean()

    def test_low_light_is_right_tailed(self):
        low, _ = generate_glyph_pair(np.random.default_rng(5))
        lin = srgb_decode(low.data.ravel())
        assert np.mean(lin) > np.median(lin)

    def test_size_validation(self):
        with pytest.raises(ArgumentError):
            generate_glyph_pair(np.random.default_rng(0), size=40)

    def test_clean_when_noise_free(self):
        rng = np.random.default_rng(6)
        high = generate_well_lit(np.random.default_rng(6), 64)
        low, high2 = generate_glyph_pair(rng, 64, DegradeParams(1.0, 0.0))
        np.testing.assert_allclose(low.data, high2.data, atol=1e-9)
        assert np.array_equal(high.data, high2.data)

    def test_write_and_reload(self, tmp_path):
        write_glyph_dataset(tmp_path, 3, seed=2, size=256)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest == {"count": 3, "seed": 2, "size": 256,
                            "degrade": {"brightness": 0.4, "noise_level": 0.25, "seed": 0}}
        pairs = load_paired_dataset(tmp_path)
        assert len(pairs) == 3
        _, high = generate_glyph_pair(np.random.default_rng([2, 1]))
        np.testing.assert_allclose(pairs[1][1].data, high.data, atol=0.5 / 65535 + 1e-12)

    def test_write_is_byte_identical(self, tmp_path):
        write_glyph_dataset(tmp_path / "a", 2, seed=1, size=64)
        write_glyph_dataset(tmp_path / "b", 2, seed=1, size=64)
        for sub in ["low/0000.png", "high/0001.png", "manifest.json"]:
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
