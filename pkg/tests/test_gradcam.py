import numpy as np
import pytest

from carenet.errors import DataError
from carenet.gradcam import (
    Heatmap1D,
    class_average,
    gradcam_spectrum,
    top_bands,
    write_heatmap_csv,
    write_heatmap_svg,
)
from carenet.model import INPUT_LENGTH, build_carenet
from carenet.spectral import build_axis

AXIS = build_axis(1800, 900, 467)


@pytest.fixture(scope="module")
def type_model():
    return build_carenet("type", seed=5)


@pytest.fixture(scope="module")
def spectra(  ):
    rng = np.random.default_rng(8)
    return rng.random((6, INPUT_LENGTH)).astype(np.float32)


class TestGradcamSpectrum:
    def test_nonnegative_and_full_length(self, type_model, spectra):
        maps = gradcam_spectrum(type_model, spectra)
        assert maps.shape == (6, INPUT_LENGTH)
        assert np.all(maps >= 0.0)

    def test_subtype_all_classes(self, spectra):
        model = build_carenet("subtype", seed=5)
        for cls in range(4):
            maps = gradcam_spectrum(model, spectra, target_class=cls)
            assert maps.shape == (6, INPUT_LENGTH)

    def test_type_head_only_exposes_ca(self, type_model, spectra):
        with pytest.raises(DataError):
            gradcam_spectrum(type_model, spectra, target_class=0)

    def test_class_out_of_range(self, spectra):
        model = build_carenet("subtype", seed=5)
        with pytest.raises(DataError):
            gradcam_spectrum(model, spectra, target_class=7)

    def test_logit_and_probability_scores_share_argmax(self, type_model, spectra):
        # sigmoid is monotone: per-sample channel weights scale by sigma'(z) > 0
        from_logit = gradcam_spectrum(type_model, spectra, score="logit")
        from_prob = gradcam_spectrum(type_model, spectra, score="probability")
        for a, b in zip(from_logit, from_prob):
            assert int(a.argmax()) == int(b.argmax())

    def test_interpolation_pins_endpoints(self, type_model, spectra):
        # recompute the 30-point cam by hand and compare the pinned endpoints
        feats = type_model.trunk_forward(spectra)
        logits, _ = type_model.head_forward(feats)
        dscore = np.ones_like(logits)
        dfeats = type_model.head_backward_to_features(dscore)
        cam = np.einsum("bc,bcl->bl", dfeats.mean(axis=2), feats)
        cam = np.maximum(cam, 0.0)
        maps = gradcam_spectrum(type_model, spectra)
        np.testing.assert_allclose(maps[:, 0], cam[:, 0], rtol=1e-6)
        np.testing.assert_allclose(maps[:, -1], cam[:, -1], rtol=1e-6)


class TestClassAverage:
    def test_identical_heatmaps_average_to_member(self, rng):
        base = rng.random(INPUT_LENGTH)
        maps = np.stack([base, base, base])
        out = class_average({"CA": maps})["CA"]
        expected = (base - base.min()) / (base.max() - base.min())
        np.testing.assert_allclose(out.values, expected, atol=1e-12)
        assert out.n_samples == 3 and not out.degenerate

    def test_constant_average_flagged_degenerate(self):
        maps = np.full((4, INPUT_LENGTH), 2.5)
        out = class_average({"LA": maps})["LA"]
        assert out.degenerate
        np.testing.assert_array_equal(out.values, 0.0)

    def test_permutation_invariant(self, rng):
        maps = rng.random((9, INPUT_LENGTH))
        a = class_average({"x": maps})["x"]
        b = class_average({"x": maps[rng.permutation(9)]})["x"]
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_empty_class_rejected(self):
        with pytest.raises(DataError):
            class_average({"CA": np.empty((0, INPUT_LENGTH))})

    def test_output_range(self, rng):
        out = class_average({"c": rng.random((5, INPUT_LENGTH))})["c"]
        assert out.values.min() == 0.0
        assert out.values.max() == 1.0


class TestTopBands:
    def test_all_zero_gives_empty(self):
        hm = Heatmap1D(np.zeros(INPUT_LENGTH), "CA")
        assert top_bands(hm, AXIS, threshold=0.5) == []

    def test_single_triangular_bump(self):
        values = np.zeros(INPUT_LENGTH)
        values[200:221] = np.concatenate([np.linspace(0, 1, 11), np.linspace(1, 0, 11)[1:]])
        hm = Heatmap1D(values, "CA")
        bands = top_bands(hm, AXIS, threshold=0.5)
        assert len(bands) == 1
        high, low, peak = bands[0]
        assert peak == 1.0
        axis_values = AXIS.values
        assert high == axis_values[205] and low == axis_values[215]

    def test_two_bumps_above_threshold(self):
        values = np.zeros(INPUT_LENGTH)
        values[50:61] = 0.9
        values[300:321] = 0.8
        hm = Heatmap1D(values, "CA")
        bands = top_bands(hm, AXIS, threshold=0.7)
        assert len(bands) == 2
        assert bands[0][0] > bands[1][0]  # reported high-to-low


class TestExports:
    def test_csv(self, tmp_path, rng):
        hm = class_average({"CA": rng.random((3, INPUT_LENGTH))})["CA"]
        path = tmp_path / "heatmap.csv"
        write_heatmap_csv(hm, AXIS, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "wavenumber,importance"
        assert len(lines) == 1 + INPUT_LENGTH
        wn, imp = lines[1].split(",")
        assert float(wn) == pytest.approx(AXIS.values[0])
        assert 0.0 <= float(imp) <= 1.0

    def test_svg(self, tmp_path, rng):
        hm = class_average({"CA": rng.random((3, INPUT_LENGTH))})["CA"]
        path = tmp_path / "heatmap.svg"
        write_heatmap_svg(hm, AXIS, path)
        text = path.read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert "polyline" in text
