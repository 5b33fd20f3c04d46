import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilemark.watermarks import (
    Watermark,
    WatermarkError,
    generate_letter_set,
    load_watermark_set,
    overlay,
    parse_letters,
    save_watermark_set,
    tile,
)

LETTERS = list("ABCDEFGHIJ")


def brute_force_tile(bitmap: np.ndarray, h: int, w: int) -> np.ndarray:
    out = np.empty((h, w), dtype=bitmap.dtype)
    wh, ww = bitmap.shape
    for y in range(h):
        for x in range(w):
            out[y, x] = bitmap[y % wh, x % ww]
    return out


class TestGenerate:
    def test_ten_letters_at_publication_size(self):
        wset = generate_letter_set(LETTERS, (64, 60))
        assert len(wset) == 10
        seen = set()
        for i, wm in enumerate(wset.watermarks):
            assert wm.id == i
            assert wm.bitmap.shape == (64, 60)
            assert set(np.unique(wm.bitmap)) == {-1.0, 1.0}
            seen.add(wm.bitmap.tobytes())
        assert len(seen) == 10

    def test_deterministic_and_hash_stable(self):
        a = generate_letter_set(["A", "B"], (8, 8))
        b = generate_letter_set(["A", "B"], (8, 8))
        assert a.manifest_hash == b.manifest_hash
        for wa, wb in zip(a.watermarks, b.watermarks):
            assert np.array_equal(wa.bitmap, wb.bitmap)

    def test_hash_depends_on_content(self):
        a = generate_letter_set(["A", "B"], (8, 8))
        b = generate_letter_set(["A", "C"], (8, 8))
        c = generate_letter_set(["A", "B"], (16, 16))
        assert len({a.manifest_hash, b.manifest_hash, c.manifest_hash}) == 3

    def test_duplicate_letters_rejected(self):
        with pytest.raises(WatermarkError, match="duplicate"):
            generate_letter_set(["A", "A"], (8, 8))

    def test_below_minimum_size_rejected(self):
        with pytest.raises(WatermarkError, match="below minimum"):
            generate_letter_set(["A", "B"], (3, 8))

    def test_single_letter_rejected(self):
        with pytest.raises(WatermarkError, match="at least 2"):
            generate_letter_set(["A"], (8, 8))

    def test_unknown_glyph_rejected(self):
        with pytest.raises(WatermarkError, match="no glyph"):
            generate_letter_set(["A", "7"], (8, 8))

    def test_collision_detected_at_tiny_size(self):
        # The full alphabet loses too much detail at 4x4 to stay distinct.
        with pytest.raises(WatermarkError, match="collide"):
            generate_letter_set(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ"), (4, 4))

    def test_default_letters_distinct_at_every_sweep_size(self):
        for size in [(4, 4), (8, 8), (16, 16), (32, 30), (40, 40), (64, 60)]:
            wset = generate_letter_set(LETTERS, size)
            assert len({wm.bitmap.tobytes() for wm in wset.watermarks}) == 10


class TestTile:
    def test_matches_brute_force_on_hd_frame(self):
        wm = generate_letter_set(LETTERS, (64, 60))[3]
        plane = tile(wm, (720, 1280))
        assert plane.shape == (720, 1280, 1)
        oracle = wm.bitmap[np.arange(720) % 64][:, np.arange(1280) % 60]
        assert np.array_equal(plane[:, :, 0], oracle)

    def test_complete_tile_counts(self):
        wm = generate_letter_set(LETTERS, (64, 60))[0]
        plane = tile(wm, (720, 1280))[:, :, 0]
        # 720/64 = 11 complete tile rows, 1280/60 = 21 complete columns
        for ty in range(720 // 64):
            for tx in range(1280 // 60):
                block = plane[ty * 64 : (ty + 1) * 64, tx * 60 : (tx + 1) * 60]
                assert np.array_equal(block, wm.bitmap)

    def test_double_loop_oracle_small(self):
        wm = generate_letter_set(["A", "B"], (5, 7))[1]
        plane = tile(wm, (23, 19))[:, :, 0]
        assert np.array_equal(plane, brute_force_tile(wm.bitmap, 23, 19))

    def test_constant_bitmap_cropped_edges(self):
        wm = Watermark(id=0, glyph="?", bitmap=np.ones((3, 3), dtype=np.float32))
        plane = tile(wm, (4, 4))
        assert plane.shape == (4, 4, 1)
        assert np.all(plane == 1.0)

    def test_frame_smaller_than_watermark_rejected(self):
        wm = generate_letter_set(LETTERS, (8, 8))[0]
        with pytest.raises(WatermarkError, match="smaller"):
            tile(wm, (4, 16))

    @given(st.integers(4, 12), st.integers(4, 12), st.integers(0, 40), st.integers(0, 40))
    @settings(max_examples=60, deadline=None)
    def test_periodicity(self, wh, ww, dy, dx):
        wm = generate_letter_set(["A", "H"], (wh, ww))[0]
        h, w = wh + dy + wh, ww + dx + ww
        plane = tile(wm, (h, w))[:, :, 0]
        assert np.array_equal(plane[: h - wh, :], plane[wh:, :])
        assert np.array_equal(plane[:, : w - ww], plane[:, ww:])


class TestOverlay:
    def test_rgb_passthrough_and_label(self, wset8=None):
        wset = generate_letter_set(LETTERS, (8, 8))
        image = np.random.default_rng(0).uniform(-1, 1, (32, 48, 3)).astype(np.float32)
        ov = overlay(image, wset[3])
        assert ov.label == 3
        assert ov.rgb is image
        stacked = ov.stacked()
        assert stacked.shape == (32, 48, 4)
        assert np.array_equal(stacked[:, :, :3], image)

    def test_wm_channel_matches_oracle(self):
        wset = generate_letter_set(LETTERS, (8, 8))
        image = np.zeros((20, 28, 3), dtype=np.float32)
        ov = overlay(image, wset[7])
        assert np.array_equal(ov.wm_channel[:, :, 0],
                              brute_force_tile(wset[7].bitmap, 20, 28))

    def test_label_round_trip_all_members(self):
        wset = generate_letter_set(LETTERS, (8, 8))
        image = np.zeros((16, 16, 3), dtype=np.float32)
        for wm in wset.watermarks:
            assert overlay(image, wm).label == wm.id

    def test_non_rgb_rejected(self):
        wset = generate_letter_set(LETTERS, (8, 8))
        with pytest.raises(WatermarkError, match=r"\(H, W, 3\)"):
            overlay(np.zeros((16, 16, 4), dtype=np.float32), wset[0])


class TestPersistence:
    def test_round_trip(self, tmp_path):
        wset = generate_letter_set(LETTERS, (16, 16))
        save_watermark_set(wset, tmp_path / "wm")
        loaded = load_watermark_set(tmp_path / "wm")
        assert loaded.manifest_hash == wset.manifest_hash
        assert loaded.size == wset.size
        assert loaded.letters == wset.letters
        for a, b in zip(wset.watermarks, loaded.watermarks):
            assert np.array_equal(a.bitmap, b.bitmap)

    def test_tampered_bitmap_detected(self, tmp_path):
        wset = generate_letter_set(["A", "B"], (8, 8))
        save_watermark_set(wset, tmp_path / "wm")
        victim = next((tmp_path / "wm").glob("wm_00_*.png"))
        from PIL import Image

        img = np.asarray(Image.open(victim)).copy()
        img[0, 0] = 255 - img[0, 0]
        Image.fromarray(img, mode="L").save(victim)
        with pytest.raises(WatermarkError, match="digest"):
            load_watermark_set(tmp_path / "wm")


class TestParseLetters:
    def test_range(self):
        assert parse_letters("A-J") == LETTERS

    def test_comma_list(self):
        assert parse_letters("a,B, c") == ["A", "B", "C"]

    def test_plain_string(self):
        assert parse_letters("xyz") == ["X", "Y", "Z"]

    def test_bad_range(self):
        with pytest.raises(WatermarkError, match="range"):
            parse_letters("J-A")
