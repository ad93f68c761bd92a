import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesr.data import io
from nesr.data.dataset import generate_dataset, in_memory_scenes, load_manifest_scenes
from nesr.data.scene import (
    CameraResponse,
    Endmember,
    SpectralImage,
    generate_scene,
    project_to_rgb,
    sample_bands,
    uniform_grid,
)
from nesr.errors import DimensionError, DomainError, FormatError


@pytest.fixture(scope="module")
def scene():
    return generate_scene(11, 16, 12, 4)


class TestGenerateScene:
    def test_deterministic(self):
        a, b = generate_scene(5, 10, 9, 3), generate_scene(5, 10, 9, 3)
        assert np.array_equal(a.abundances, b.abundances)
        assert a.scale == b.scale
        for ea, eb in zip(a.endmembers, b.endmembers):
            assert ea.to_dict() == eb.to_dict()

    def test_single_endmember_abundance_is_one(self):
        s = generate_scene(0, 8, 8, 1)
        assert np.array_equal(s.abundances, np.ones((1, 8, 8)))

    def test_abundances_on_simplex(self, scene):
        assert np.all(scene.abundances >= 0)
        np.testing.assert_allclose(scene.abundances.sum(axis=0), 1.0, atol=1e-6)

    def test_endmember_parameter_ranges(self, scene):
        for e in scene.endmembers:
            assert 2 <= e.centers.size <= 4
            assert np.all((e.centers >= 400) & (e.centers <= 700))
            assert np.all((e.widths >= 15) & (e.widths <= 80))

    @pytest.mark.parametrize("seed", range(10))
    def test_radiance_in_unit_range_at_61_bands(self, seed):
        s = generate_scene(seed, 12, 12, 2 + seed % 7)
        vol = sample_bands(s, uniform_grid(61)).volume
        assert vol.min() >= 0.0 and vol.max() <= 1.0

    def test_upper_bound_dominates_dense_evaluation(self):
        e = Endmember(np.array([500.0, 520.0]), np.array([15.0, 20.0]), np.array([1.0, 0.7]))
        dense = e(np.linspace(400, 700, 30001))
        assert e.upper_bound() >= dense.max()

    @pytest.mark.parametrize("h,w,k", [(7, 8, 2), (8, 4, 2), (8, 8, 0), (8, 8, 9)])
    def test_degenerate_sizes(self, h, w, k):
        with pytest.raises(DomainError):
            generate_scene(0, h, w, k)


class TestSampleBands:
    def test_31_band_grid(self, scene):
        wl = np.arange(400, 701, 10)
        img = sample_bands(scene, wl)
        assert img.bands == 31 and img.volume.shape == (31, 16, 12)

    def test_shared_wavelengths_exact(self, scene):
        a = sample_bands(scene, uniform_grid(31)).volume
        b = sample_bands(scene, uniform_grid(61)).volume
        np.testing.assert_allclose(b[::2], a, rtol=0, atol=1e-12)

    def test_single_wavelength_formula(self, scene):
        img = sample_bands(scene, [550.0])
        expected = np.zeros(scene.abundances.shape[1:])
        for k, e in enumerate(scene.endmembers):
            value = e.offset + sum(a * np.exp(-0.5 * ((550.0 - c) / w) ** 2)
                                   for c, w, a in zip(e.centers, e.widths, e.amplitudes))
            expected += scene.abundances[k] * value / scene.scale
        assert img.volume.shape == (1, 16, 12)
        np.testing.assert_allclose(img.volume[0], expected, rtol=1e-13)

    @pytest.mark.parametrize("wl", [[399.0, 500.0], [500.0, 700.5], [500.0, 500.0], [600.0, 500.0]])
    def test_invalid_wavelengths(self, scene, wl):
        with pytest.raises(DomainError):
            sample_bands(scene, wl)

    def test_region(self, scene):
        full = sample_bands(scene, [450.0, 600.0]).volume
        part = sample_bands(scene, [450.0, 600.0], region=(3, 2, 8, 5)).volume
        assert np.array_equal(part, full[:, 3:11, 2:7])

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(400, 700, allow_nan=False), min_size=1, max_size=12, unique=True),
           st.lists(st.floats(400, 700, allow_nan=False), min_size=1, max_size=12, unique=True))
    def test_grid_consistency_property(self, a, b):
        s = generate_scene(3, 8, 8, 3)
        ga, gb = np.sort(a), np.sort(b)
        shared = np.intersect1d(ga, gb)
        va = sample_bands(s, ga).volume[np.searchsorted(ga, shared)]
        vb = sample_bands(s, gb).volume[np.searchsorted(gb, shared)]
        assert np.array_equal(va, vb)


class TestProjectToRgb:
    def test_weights_normalized(self):
        for bands in (1, 3, 7, 31, 61):
            w = CameraResponse().weights(uniform_grid(bands))
            assert np.all(w >= 0)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)

    def test_constant_spectrum(self):
        img = SpectralImage(uniform_grid(31), np.full((31, 4, 5), 0.37))
        np.testing.assert_allclose(project_to_rgb(img), 0.37, rtol=1e-12)

    def test_one_hot_response(self):
        vol = np.random.default_rng(0).uniform(size=(31, 3, 3))
        img = SpectralImage(uniform_grid(31), vol)
        w = np.zeros((3, 31))
        w[0, 4] = w[1, 17] = w[2, 30] = 1.0
        rgb = project_to_rgb(img, weights=w)
        assert np.array_equal(rgb[0], vol[4])
        assert np.array_equal(rgb[1], vol[17])
        assert np.array_equal(rgb[2], vol[30])

    def test_ramp_against_scalar_sum(self):
        wl = uniform_grid(31)
        ramp = (wl - 400.0) / 300.0
        img = SpectralImage(wl, np.broadcast_to(ramp[:, None, None], (31, 2, 2)).copy())
        rgb = project_to_rgb(img)
        for c, peak in enumerate((600.0, 550.0, 450.0)):
            raw = [np.exp(-0.5 * ((x - peak) / 40.0) ** 2) for x in wl]
            total = sum(raw)
            expected = sum(r / total * v for r, v in zip(raw, ramp))
            assert rgb[c, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_weight_shape_checked(self):
        img = SpectralImage(uniform_grid(5), np.zeros((5, 2, 2)))
        with pytest.raises(DimensionError):
            project_to_rgb(img, weights=np.ones((3, 4)))

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000), bands=st.integers(1, 40))
    def test_linear(self, a, b, seed, bands):
        rng = np.random.default_rng(seed)
        wl = uniform_grid(bands)
        i1, i2 = rng.uniform(size=(2, bands, 3, 4))
        lhs = project_to_rgb(SpectralImage(wl, a * i1 + b * i2))
        rhs = a * project_to_rgb(SpectralImage(wl, i1)) + b * project_to_rgb(SpectralImage(wl, i2))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_scene_rgb_in_unit_range(self, scene):
        rgb = project_to_rgb(sample_bands(scene, uniform_grid(61)))
        assert rgb.min() >= 0 and rgb.max() <= 1


class TestTensorIO:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(), (5,), (2, 3), (3, 1, 4, 2)])
    def test_round_trip_bitwise(self, tmp_path, dtype, shape):
        arr = np.random.default_rng(1).standard_normal(shape).astype(dtype)
        io.write_tensor(tmp_path / "t.nsrt", arr)
        back = io.read_tensor(tmp_path / "t.nsrt")
        assert back.dtype == dtype and back.shape == shape
        assert back.tobytes() == arr.tobytes()

    def test_spectral_image_round_trip(self, tmp_path, scene):
        img = sample_bands(scene, [410.0, 523.5, 699.0])
        io.write_spectral_image(tmp_path / "s.nsrt", img)
        back = io.read_spectral_image(tmp_path / "s.nsrt")
        assert np.array_equal(back.wavelengths, img.wavelengths)
        assert back.volume.tobytes() == img.volume.tobytes()

    def test_file_size_31x64x64_f32(self, tmp_path):
        io.write_tensor(tmp_path / "v.nsrt", np.zeros((31, 64, 64), np.float32))
        size = (tmp_path / "v.nsrt").stat().st_size
        assert io.header_size(3) == 4 + 2 + 1 + 1 + 3 * 4
        assert size == 20 + 31 * 64 * 64 * 4

    def test_header_layout(self):
        blob = io.encode_tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
        assert blob[:4] == b"NSRT"
        assert blob[4:6] == b"\x01\x00"  # version 1, little-endian
        assert blob[6] == 0 and blob[7] == 2
        assert blob[8:16] == b"\x01\x00\x00\x00\x03\x00\x00\x00"
        assert np.frombuffer(blob[16:], "<f4").tolist() == [1.0, 2.0, 3.0]

    def test_bad_magic(self, tmp_path):
        blob = bytearray(io.encode_tensor(np.ones(3)))
        blob[0:4] = b"XXXX"
        (tmp_path / "bad.nsrt").write_bytes(bytes(blob))
        with pytest.raises(FormatError) as exc:
            io.read_tensor(tmp_path / "bad.nsrt")
        assert exc.value.offset == 0

    def test_truncated_payload(self):
        blob = io.encode_tensor(np.ones((4, 4)))
        with pytest.raises(FormatError, match="offset 16"):
            io.decode_tensor(blob[:-1])

    def test_rank_overflow(self):
        blob = bytearray(io.encode_tensor(np.ones(2)))
        blob[7] = 9
        with pytest.raises(FormatError) as exc:
            io.decode_tensor(bytes(blob))
        assert exc.value.offset == 7

    def test_unknown_dtype_and_version(self):
        blob = bytearray(io.encode_tensor(np.ones(2)))
        blob[6] = 5
        with pytest.raises(FormatError):
            io.decode_tensor(bytes(blob))
        blob[6] = 1
        blob[4] = 2
        with pytest.raises(FormatError):
            io.decode_tensor(bytes(blob))

    def test_failed_read_leaves_no_partial_file(self, tmp_path):
        io.write_tensor(tmp_path / "a.nsrt", np.ones(4))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.nsrt"]

    @settings(max_examples=30, deadline=None)
    @given(st.binary(max_size=64))
    def test_random_bytes_never_crash(self, data):
        try:
            io.decode_tensor(data)
        except FormatError:
            pass

    def test_container_round_trip(self, tmp_path):
        tensors = {"b": np.arange(3.0, dtype=np.float32), "a/x": np.eye(2)}
        io.write_container(tmp_path / "c.nsrk", {"k": [1, 2]}, tensors)
        meta, back = io.read_container(tmp_path / "c.nsrk")
        assert meta == {"k": [1, 2]}
        assert set(back) == set(tensors)
        for k in tensors:
            assert back[k].tobytes() == tensors[k].tobytes()

    def test_container_truncated(self, tmp_path):
        io.write_container(tmp_path / "c.nsrk", {}, {"w": np.ones(8)})
        raw = (tmp_path / "c.nsrk").read_bytes()
        (tmp_path / "c.nsrk").write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            io.read_container(tmp_path / "c.nsrk")


class TestDataset:
    def test_generate_and_reload(self, tmp_path):
        paths = generate_dataset(tmp_path, n_train=3, n_test=2, seed=4, size=16)
        manifest = io.read_manifest(paths["train"])
        assert manifest["split"] == "train" and len(manifest["scenes"]) == 3
        ids = [e["id"] for e in manifest["scenes"]]
        assert ids == sorted(ids)
        for entry in manifest["scenes"]:
            assert {"id", "seed", "files", "wavelengths"} <= set(entry)
            for rel in entry["files"].values():
                assert io.resolve(paths["train"], rel).exists()
        loaded = load_manifest_scenes(paths["train"])
        fresh = in_memory_scenes(4, 3, "train", size=16)
        for a, b in zip(loaded, fresh):
            assert np.array_equal(a.abundances, b.abundances)
            wl = uniform_grid(31)
            assert np.array_equal(sample_bands(a, wl).volume, sample_bands(b, wl).volume)
        ref = io.read_spectral_image(io.resolve(paths["train"], manifest["scenes"][0]["files"]["reference"]))
        assert np.array_equal(ref.volume, sample_bands(fresh[0], uniform_grid(31)).volume)

    def test_splits_disjoint(self, tmp_path):
        paths = generate_dataset(tmp_path, n_train=4, n_test=4, seed=0, size=8)
        seeds = {split: {e["seed"] for e in io.read_manifest(p)["scenes"]} for split, p in paths.items()}
        assert not seeds["train"] & seeds["test"]

    def test_manifest_missing_field(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"dataset": "x", "scenes": []}))
        with pytest.raises(FormatError):
            io.read_manifest(tmp_path / "m.json")
