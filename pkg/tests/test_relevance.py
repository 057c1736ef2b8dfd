import json

import numpy as np
import pytest
import torch

from cyclexplain.models import StateError, build_bundle, build_classifier
from cyclexplain.relevance import (
    RelevanceMap,
    auto_gain,
    explain,
    export_map,
    load_raw_map,
    render_overlay,
)

from conftest import TINY_CLF, TINY_DISC, TINY_GEN


def make_bundle(trained=True, same_generators=False, seed=0):
    clf = build_classifier(TINY_CLF, 32, seed=seed)
    bundle = build_bundle(clf, TINY_GEN, TINY_DISC, seed=seed)
    if same_generators:
        bundle.g_minus.load_state_dict(bundle.g_plus.state_dict())
    bundle.trained = trained
    return bundle


def rand_image(seed=0, size=32):
    return np.random.default_rng(seed).random((size, size)).astype(np.float32)


class TestExplain:
    def test_identical_generators_zero_relevance(self):
        bundle = make_bundle(same_generators=True)
        rmap = explain(bundle, rand_image())
        assert np.abs(rmap.relevance).max() == 0.0

    def test_relevance_is_delta_difference(self):
        rmap = explain(make_bundle(), rand_image(1))
        assert np.allclose(rmap.relevance,
                           rmap.delta_plus - rmap.delta_minus, atol=1e-6)

    def test_swapping_generators_negates(self):
        bundle = make_bundle()
        swapped = make_bundle()
        swapped.g_plus.load_state_dict(bundle.g_minus.state_dict())
        swapped.g_minus.load_state_dict(bundle.g_plus.state_dict())
        x = rand_image(2)
        r1 = explain(bundle, x).relevance
        r2 = explain(swapped, x).relevance
        assert np.array_equal(r1, -r2)

    def test_triangle_bound(self):
        rmap = explain(make_bundle(), rand_image(3))
        assert np.all(np.abs(rmap.relevance)
                      <= np.abs(rmap.delta_plus) + np.abs(rmap.delta_minus) + 1e-7)

    def test_probabilities_recorded(self):
        rmap = explain(make_bundle(), rand_image(4))
        for p in (rmap.prob_before, rmap.prob_plus, rmap.prob_minus):
            assert 0.0 <= p <= 1.0

    def test_untrained_bundle_raises(self):
        with pytest.raises(StateError):
            explain(make_bundle(trained=False), rand_image())

    def test_localization_on_synthetic(self, desk_bundle, desk_dataset):
        bundle, _ = desk_bundle
        positives = [s for s in desk_dataset
                     if s.split == "test" and s.label == 1]
        hits = 0
        for s in positives:
            rmap = explain(bundle, s.image)
            a = np.abs(rmap.relevance)
            if a[s.mask].mean() > a[~s.mask].mean():
                hits += 1
        assert hits / len(positives) >= 0.9


class TestRenderOverlay:
    def test_zero_relevance_pure_grayscale(self):
        x = rand_image(5)
        out = render_overlay(x, np.zeros_like(x), gain=2.0)
        assert np.allclose(out, np.repeat(x[..., None], 3, axis=2))

    def test_sign_flip_swaps_hues(self):
        x = rand_image(6)
        r = np.random.default_rng(7).normal(0, 0.3, x.shape)
        a = render_overlay(x, r, gain=1.5)
        b = render_overlay(x, -r, gain=1.5)
        pos, neg = r > 0, r < 0
        # red channel dominates where R>0, blue where R<0, and vice versa
        assert np.all(a[pos][:, 0] >= a[pos][:, 2])
        assert np.all(a[neg][:, 2] >= a[neg][:, 0])
        assert np.all(b[pos][:, 2] >= b[pos][:, 0])
        assert np.all(b[neg][:, 0] >= b[neg][:, 2])

    def test_sign_flip_exact_swap(self):
        x = np.full((8, 8), 0.5)
        r = np.zeros((8, 8))
        r[2, 3] = 0.4
        a = render_overlay(x, r, gain=1.0)
        b = render_overlay(x, -r, gain=1.0)
        # same alpha, opposite colors at the single tinted pixel
        from cyclexplain.relevance import NEGATIVE_COLOR, POSITIVE_COLOR
        alpha = 0.4
        assert np.allclose(a[2, 3], 0.6 * 0.5 + alpha * POSITIVE_COLOR)
        assert np.allclose(b[2, 3], 0.6 * 0.5 + alpha * NEGATIVE_COLOR)

    def test_locality(self):
        x = np.full((8, 8), 0.3)
        r = np.zeros((8, 8))
        r[4, 5] = 1.0
        out = render_overlay(x, r, gain=1.0)
        untouched = np.ones((8, 8), dtype=bool)
        untouched[4, 5] = False
        assert np.allclose(out[untouched], 0.3)
        assert not np.allclose(out[4, 5], 0.3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            render_overlay(np.zeros((8, 8)), np.zeros((9, 9)), gain=1.0)

    def test_invalid_gain(self):
        with pytest.raises(ValueError):
            render_overlay(np.zeros((8, 8)), np.zeros((8, 8)), gain=0.0)


class TestExport:
    def _rmap(self):
        rng = np.random.default_rng(8)
        dp = rng.normal(0, 0.1, (16, 16)).astype(np.float32)
        dm = rng.normal(0, 0.1, (16, 16)).astype(np.float32)
        return RelevanceMap(delta_plus=dp, delta_minus=dm, relevance=dp - dm,
                            source_id="sample1", prob_before=0.4,
                            prob_plus=0.9, prob_minus=0.1)

    def test_roundtrip_bit_identical(self, tmp_path):
        rmap = self._rmap()
        paths = export_map(rmap, tmp_path)
        reloaded = load_raw_map(paths["raw"])
        assert reloaded.tobytes() == rmap.relevance.astype("<f4").tobytes()

    def test_sidecar_schema(self, tmp_path):
        paths = export_map(self._rmap(), tmp_path)
        meta = json.loads(paths["sidecar"].read_text())
        assert set(meta) == {"height", "width", "gain"}
        assert meta["height"] == meta["width"] == 16
        assert meta["gain"] > 0

    def test_auto_gain_recorded(self, tmp_path):
        rmap = self._rmap()
        paths = export_map(rmap, tmp_path)
        meta = json.loads(paths["sidecar"].read_text())
        assert meta["gain"] == pytest.approx(auto_gain(rmap.relevance))

    def test_probability_record_matches(self, tmp_path):
        rmap = self._rmap()
        paths = export_map(rmap, tmp_path)
        probs = json.loads(paths["probs"].read_text())
        assert probs["prob_before"] == rmap.prob_before
        assert probs["prob_plus"] == rmap.prob_plus
        assert probs["prob_minus"] == rmap.prob_minus

    def test_overlay_written(self, tmp_path):
        paths = export_map(self._rmap(), tmp_path)
        assert paths["overlay"].exists()

    def test_inconsistent_map_rejected(self):
        with pytest.raises(ValueError):
            RelevanceMap(delta_plus=np.ones((4, 4)),
                         delta_minus=np.zeros((4, 4)),
                         relevance=np.zeros((4, 4)), source_id="x",
                         prob_before=0.5, prob_plus=0.5, prob_minus=0.5)
