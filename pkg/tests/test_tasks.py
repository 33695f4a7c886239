import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ssim_oracle
from PIL import Image

from stremn.errors import ConfigError, ContractError, IngestionError
from stremn.tasks import (
    SyntheticConfig,
    export_davis_style,
    gen_dataset,
    gen_moving_shapes,
    load_davis_style,
    metric_f,
    metric_j,
    metric_prediction,
    psnr,
    sequence_jf,
    ssim,
)


def short(length, **kw):
    kw.setdefault("switch_frames", ())
    kw.setdefault("occlusions", ())
    return SyntheticConfig(length=length, **kw)


def square(size, top, left, side):
    m = np.zeros((size, size), dtype=bool)
    m[top : top + side, left : left + side] = True
    return m


class TestSynthetic:
    def test_deterministic(self):
        cfg = short(12, switch_frames=(5,), occlusions=((8, 2),))
        a, b = gen_moving_shapes(cfg, 7), gen_moving_shapes(cfg, 7)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.masks.tobytes() == b.masks.tobytes()
        assert gen_moving_shapes(cfg, 8).frames.tobytes() != a.frames.tobytes()

    def test_occlusion_shrinks_target(self):
        cfg = SyntheticConfig(length=12, occlusions=((6, 2),), switch_frames=(), speed=(0.0, 0.0), noise=0.0)
        s = gen_moving_shapes(cfg, 3)
        area = (s.masks == cfg.target).sum(axis=(1, 2))
        assert area[6] < area[5] and area[7] < area[8]

    def test_masks_match_rendered_colors(self):
        cfg = SyntheticConfig(length=6, noise=0.0, occlusions=(), switch_frames=())
        s = gen_moving_shapes(cfg, 11)
        for t in range(6):
            img = np.rint(s.frames[t] * 255).astype(int)
            for k in range(1, cfg.n_objects + 1):
                px = img[:, s.masks[t] == k]
                assert px.size and (px == px[:, :1]).all()

    def test_appearance_switch_at_schedule(self):
        cfg = SyntheticConfig(length=10, switch_frames=(4,), occlusions=())
        colors = gen_moving_shapes(cfg, 2).metadata["target_colors"]
        assert colors[3] != colors[4] and colors[4] == colors[9] and colors[0] == colors[3]

    def test_frames_are_quantized(self):
        s = gen_moving_shapes(short(3), 0)
        np.testing.assert_array_equal(np.rint(s.frames * 255) / 255, s.frames)
        assert s.frames.min() >= 0 and s.frames.max() <= 1

    def test_dataset_names_unique(self):
        names = [s.name for s in gen_dataset(short(2), 6, 0)]
        assert len(set(names)) == 6

    def test_bad_schedule(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(length=10, switch_frames=(12,))
        with pytest.raises(ConfigError):
            SyntheticConfig(length=10, occlusions=((8, 5),))


class TestRegionJ:
    def test_identical(self):
        m = square(8, 1, 1, 4)
        assert metric_j(m, m) == 1.0

    def test_disjoint(self):
        assert metric_j(square(8, 0, 0, 2), square(8, 5, 5, 2)) == 0.0

    def test_half_subset(self):
        gt = np.zeros((4, 4), dtype=bool)
        gt[:2, :] = True
        pred = np.zeros((4, 4), dtype=bool)
        pred[0, :] = True
        assert metric_j(pred, gt) == 0.5

    def test_both_empty(self):
        assert metric_j(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_and_bounded(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.random((6, 6)) < 0.4, r.random((6, 6)) < 0.4
        j = metric_j(a, b)
        assert 0.0 <= j <= 1.0 and j == metric_j(b, a)


class TestBoundaryF:
    def test_identical(self):
        m = square(32, 5, 5, 10)
        assert metric_f(m, m) == 1.0

    def test_far_apart(self):
        assert metric_f(square(32, 0, 0, 6), square(32, 20, 20, 6), tol_px=2) == 0.0

    def test_one_pixel_shift_within_tolerance(self):
        assert metric_f(square(32, 5, 5, 10), square(32, 5, 6, 10), tol_px=1) == 1.0

    def test_one_side_empty(self):
        assert metric_f(np.zeros((8, 8)), square(8, 1, 1, 3)) == 0.0

    def test_sequence_oracle_input(self):
        s = gen_moving_shapes(short(6, occlusions=((2, 2),)), 4)
        res = sequence_jf(s.masks, s.masks, s.n_objects)
        assert res["J"] == 1.0 and res["F"] == 1.0 and len(res["J_per_frame"]) == 5


class TestFrameMetrics:
    def test_identical_frames(self, rng):
        x = rng.uniform(0, 1, (2, 3, 16, 16))
        m = metric_prediction(x, x)
        assert m["MSE"] == 0 and m["MAE"] == 0 and m["SSIM"] == pytest.approx(1.0, abs=1e-12) and m["PSNR"] == 99.0

    def test_constant_offset(self, rng):
        gt = rng.uniform(0, 0.9, (2, 3, 16, 16))
        m = metric_prediction(gt + 0.1, gt)
        assert m["MAE"] == pytest.approx(0.1, abs=1e-12)
        assert m["MSE"] == pytest.approx(0.01, abs=1e-12)
        assert m["PSNR"] == pytest.approx(20.0, abs=1e-9)

    def test_psnr_closed_form(self):
        assert psnr(0.01) == pytest.approx(20.0)
        assert psnr(0.0) == 99.0

    def test_ssim_self(self, rng):
        x = rng.uniform(0, 1, (3, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_matches_direct_windows(self, rng):
        x, y = rng.uniform(0, 1, (14, 15)), rng.uniform(0, 1, (14, 15))
        assert abs(ssim(x, y) - ssim_oracle(x, y)) < 1e-8

    def test_ssim_window_too_large(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            metric_prediction(np.zeros((1, 3, 16, 16)), np.zeros((2, 3, 16, 16)))


def write_video(root, name, n, labels=(0, 1), size=8, masks=None):
    (root / "Frames" / name).mkdir(parents=True)
    (root / "Masks" / name).mkdir(parents=True)
    for t in range(n):
        Image.fromarray(np.full((size, size, 3), 10 * t, dtype=np.uint8)).save(root / "Frames" / name / f"{t:05d}.png")
    for t in masks if masks is not None else range(n):
        m = np.zeros((size, size), dtype=np.uint8)
        for i, lab in enumerate(labels):
            m[i::len(labels)] = lab
        Image.fromarray(m, mode="L").save(root / "Masks" / name / f"{t:05d}.png")


class TestDavis:
    def test_two_videos(self, tmp_path):
        write_video(tmp_path, "a", 3)
        write_video(tmp_path, "b", 5)
        samples = load_davis_style(tmp_path)
        assert [s.name for s in samples] == ["a", "b"]
        assert [len(s) for s in samples] == [3, 5]
        assert samples[0].frames.shape == (3, 3, 8, 8)

    def test_label_densification(self, tmp_path):
        write_video(tmp_path, "a", 2, labels=(0, 3, 7))
        s = load_davis_style(tmp_path)[0]
        assert set(np.unique(s.masks)) == {0, 1, 2}
        assert s.metadata["label_map"] == {0: 0, 3: 1, 7: 2}
        assert s.n_objects == 2

    def test_corrupt_image_names_path(self, tmp_path):
        write_video(tmp_path, "a", 2)
        bad = tmp_path / "Frames" / "a" / "00001.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(IngestionError, match="00001.png"):
            load_davis_style(tmp_path)

    def test_missing_first_mask(self, tmp_path):
        write_video(tmp_path, "a", 3, masks=[1, 2])
        with pytest.raises(IngestionError, match="first frame"):
            load_davis_style(tmp_path)

    def test_sparse_masks_allowed(self, tmp_path):
        write_video(tmp_path, "a", 3, masks=[0])
        s = load_davis_style(tmp_path)[0]
        assert s.masks[0] is not None and s.masks[1] is None

    def test_gap_in_numbering(self, tmp_path):
        write_video(tmp_path, "a", 4)
        (tmp_path / "Frames" / "a" / "00002.png").unlink()
        with pytest.raises(IngestionError, match="non-contiguous"):
            load_davis_style(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(IngestionError):
            load_davis_style(tmp_path / "nope")

    def test_export_round_trip(self, tmp_path):
        samples = gen_dataset(short(4, canvas=32, radius=(3, 5)), 2, 5)
        export_davis_style(samples, tmp_path)
        back = load_davis_style(tmp_path)
        for a, b in zip(samples, back):
            np.testing.assert_array_equal(a.frames, b.frames)
            np.testing.assert_array_equal(a.masks, b.masks)
