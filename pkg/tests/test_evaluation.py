import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesr.benchmark import ABLATIONS, benchmark_suite, read_pgm, write_error_map
from nesr.data.io import read_tensor
from nesr.data.scene import SpectralImage, generate_scene, uniform_grid
from nesr.errors import UsageError
from nesr.evaluation import (
    baseline_bi,
    error_map,
    evaluate,
    interpolate_bands,
    mrae,
    rmse,
    spectral_bi,
    two_step,
)
from nesr.model import ModelConfig, NeSR
from nesr.training import TrainConfig, train


class TestMetrics:
    def test_mrae_worked_value(self):
        assert mrae([0.2, 0.4], [0.1, 0.5], 1e-3) == pytest.approx(0.594850, abs=1e-6)

    def test_rmse_worked_value(self):
        assert rmse([0.0, 1.0], [1.0, 1.0]) == pytest.approx(0.707107, abs=1e-6)

    def test_identity_is_exactly_zero(self):
        y = np.random.default_rng(0).uniform(size=(5, 4, 4))
        assert mrae(y, y) == 0.0 and rmse(y, y) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            mrae(np.zeros(3), np.zeros(4))

    def test_error_map_mean_over_bands(self):
        pred = np.array([[[0.2]], [[0.4]]])
        gt = np.array([[[0.1]], [[0.5]]])
        assert error_map(pred, gt)[0, 0] == pytest.approx(mrae(pred, gt), rel=1e-15)


class TestBaseline:
    def test_anchor_hits_and_clamp(self):
        rgb = np.random.default_rng(1).uniform(size=(3, 4, 5))
        out = baseline_bi(rgb, [400.0, 450.0, 500.0, 550.0, 600.0, 700.0]).volume
        r, g, b = rgb
        assert np.array_equal(out[0], b)
        assert np.array_equal(out[1], b)
        np.testing.assert_allclose(out[2], 0.5 * b + 0.5 * g, rtol=1e-15)
        assert np.array_equal(out[3], g)
        assert np.array_equal(out[4], r)
        assert np.array_equal(out[5], r)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.lists(st.floats(400, 700), min_size=1, max_size=10, unique=True))
    def test_anchors_reproduced_for_any_input(self, seed, extra):
        rgb = np.random.default_rng(seed).uniform(-1, 2, size=(3, 2, 3))
        wl = np.unique(np.concatenate([[450.0, 550.0, 600.0], extra]))
        out = baseline_bi(rgb, wl).volume
        assert np.array_equal(out[np.searchsorted(wl, 450.0)], rgb[2])
        assert np.array_equal(out[np.searchsorted(wl, 550.0)], rgb[1])
        assert np.array_equal(out[np.searchsorted(wl, 600.0)], rgb[0])

    def test_spectral_bi_reproduces_input_bands(self):
        low = SpectralImage(uniform_grid(16), np.random.default_rng(2).uniform(size=(16, 3, 3)))
        out = spectral_bi(low, uniform_grid(31))
        # 31 and 16 uniform grids share only 400 and 700 nm
        assert np.array_equal(out.volume[0], low.volume[0])
        assert np.array_equal(out.volume[-1], low.volume[-1])
        np.testing.assert_array_equal(spectral_bi(low, low.wavelengths).volume, low.volume)

    def test_interpolate_single_source(self):
        out = interpolate_bands(np.ones((1, 2, 2)), [500.0], [400.0, 700.0])
        assert out.shape == (2, 2, 2) and np.all(out == 1)


@pytest.fixture(scope="module")
def trained():
    scenes = [generate_scene(s, 12, 12, 3) for s in (1, 2)]
    cfg = TrainConfig(max_iters=3, crop=8, batch_size=1, band_min=3, band_max=5, log_every=0,
                      query_samples=32)
    return train(scenes, ModelConfig(encoder_channels=4, embed_channels=4, encoder_blocks=1), cfg)


@pytest.fixture(scope="module")
def test_scenes():
    return [generate_scene(s, 8, 8, 2) for s in (10, 11, 12)]


class TestEvaluate:
    def test_scene_order_invariant(self, trained, test_scenes):
        wl = uniform_grid(7)
        a = evaluate(trained.model, test_scenes, wl, trained.train_config)
        b = evaluate(trained.model, test_scenes[::-1], wl, trained.train_config)
        assert a["mrae"] == b["mrae"] and a["rmse"] == b["rmse"]

    def test_workers_match_serial(self, trained, test_scenes):
        wl = uniform_grid(5)
        a = evaluate(trained.model, test_scenes, wl, trained.train_config)
        b = evaluate(trained.model, test_scenes, wl, trained.train_config, workers=2)
        assert a == b

    def test_empty(self, trained):
        with pytest.raises(UsageError):
            evaluate(trained.model, [], uniform_grid(5))

    def test_bi_method(self, test_scenes):
        res = evaluate(None, test_scenes, uniform_grid(31), method="bi")
        assert 0 < res["mrae"] < 5 and len(res["per_scene_mrae"]) == 3

    def test_two_step_shape(self, trained):
        rgb = np.random.default_rng(0).uniform(size=(3, 8, 8)).astype(np.float32)
        out = two_step(trained.model, rgb, 7)
        dense = trained.model.forward(rgb, uniform_grid(61)).data
        assert out.shape == (7, 8, 8)
        # endpoints are kept exactly by the endpoint-aligned resize
        np.testing.assert_allclose(out[0], dense[0], rtol=1e-6)
        np.testing.assert_allclose(out[-1], dense[-1], rtol=1e-6)


class TestBenchmark:
    def test_arbitrary_rows(self, trained, test_scenes, tmp_path):
        report = benchmark_suite("arbitrary", {"arbitrary": trained, "fixed_31": trained},
                                 test_scenes, out_dir=tmp_path)
        got = {(r["bands"], r["method"]) for r in report.rows}
        for b in (31, 16, 11, 7):
            assert {(b, "model"), (b, "bi"), (b, "two_step")} <= got
        assert (31, "fixed") in got and (16, "fixed") not in got
        assert (tmp_path / "report_arbitrary.json").exists()
        emap = read_tensor(tmp_path / "error_maps" / "arbitrary_31_model_scene0.nsrt")
        pixels, comment = read_pgm(tmp_path / "error_maps" / "arbitrary_31_model_scene0.pgm")
        assert pixels.shape == emap.shape == (8, 8)
        assert "255 = 1" in comment

    def test_extreme_rows(self, trained, test_scenes):
        report = benchmark_suite("extreme", {"arbitrary": trained}, test_scenes)
        assert sorted({r["bands"] for r in report.rows}) == [41, 51, 61]

    def test_missing_checkpoint_names_mode(self, test_scenes):
        with pytest.raises(UsageError, match="ssr"):
            benchmark_suite("ssr", {}, test_scenes)
        with pytest.raises(UsageError, match="unknown bench mode"):
            benchmark_suite("tables", {}, test_scenes)

    def test_ssr_rows(self, test_scenes):
        scenes = [generate_scene(s, 12, 12, 3) for s in (1, 2)]
        cfg = TrainConfig(max_iters=2, crop=8, batch_size=1, band_min=17, band_max=20,
                          input_mode="spectral", input_bands=16, log_every=0, query_samples=32)
        ck = train(scenes, ModelConfig(in_channels=16, encoder_channels=4, embed_channels=4,
                                       encoder_blocks=1), cfg)
        report = benchmark_suite("ssr", {"ssr": ck}, test_scenes)
        assert {(r["bands"], r["method"]) for r in report.rows} == {
            (31, "model"), (31, "spectral_bi"), (61, "model"), (61, "spectral_bi")}

    def test_ablation_trains_variants_and_reports_ordering(self, test_scenes):
        scenes = [generate_scene(s, 12, 12, 3) for s in (1, 2)]
        cfg = TrainConfig(max_iters=2, crop=8, batch_size=1, band_min=3, band_max=5,
                          log_every=0, query_samples=32)
        report = benchmark_suite("ablation", {}, test_scenes[:1], train_scenes=scenes,
                                 ablation_train=cfg,
                                 ablation_model={"encoder_channels": 4, "embed_channels": 4,
                                                 "encoder_blocks": 1})
        assert [r["method"] for r in report.rows] == list(ABLATIONS)
        assert set(report.ordering) == {"holds", "full", "violations"}
        assert report.ordering["holds"] == (not report.ordering["violations"])

    def test_report_is_deterministic(self, trained, test_scenes, tmp_path):
        benchmark_suite("extreme", {"arbitrary": trained}, test_scenes, out_dir=tmp_path / "a")
        benchmark_suite("extreme", {"arbitrary": trained}, test_scenes, out_dir=tmp_path / "b")
        a = (tmp_path / "a" / "report_extreme.json").read_bytes()
        b = (tmp_path / "b" / "report_extreme.json").read_bytes()
        assert a == b

    def test_error_map_pgm_scale(self, tmp_path):
        emap = np.array([[0.0, 0.5], [1.0, 3.0]])
        _, pgm = write_error_map(tmp_path / "m", emap, vmax=1.0)
        pixels, _ = read_pgm(pgm)
        assert pixels.tolist() == [[0, 128], [255, 255]]

    def test_untrained_model_runs(self, test_scenes):
        model = NeSR.create(ModelConfig(encoder_channels=4, embed_channels=4, encoder_blocks=1))
        res = evaluate(model, test_scenes, uniform_grid(3))
        assert np.isfinite(res["mrae"])
