import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from factories import full_layout, random_layout, random_primitive
from primscene.categories import CATEGORIES, CATEGORY_BY_CODE, TOTAL_SLOTS
from primscene.exceptions import (
    ConfigError,
    InvalidEditError,
    LayoutParseError,
    MissingStatsError,
    NotFoundError,
    UnsupportedVersionError,
)
from primscene.normalization import (
    NormalizationStats,
    PrimitiveNormalizer,
    denormalize_features,
    fit_stats,
    normalize_features,
)
from primscene.scene import (
    FOV,
    GroundPolygon,
    Rotate,
    Scale,
    SceneLayout,
    ScenePrimitive,
    Translate,
    apply_edit,
    compute_scene_label,
    density_thresholds,
    dumps_layout,
    filter_fov,
    is_padded,
    layout_to_dict,
    load_layout,
    loads_layout,
    pad_category,
    pad_layout,
    save_layout,
    threshold_existence,
    vegetation_stats,
)
from primscene.synth import synth_corpus, synth_scene


def box(code, center, scale=(1.0, 1.0, 1.0), instance_id=0, confidence=None):
    return ScenePrimitive.from_pose(code, np.eye(3), scale, center, instance_id, confidence)


class TestPrimitive:
    def test_padding_must_have_zero_geometry(self):
        with pytest.raises(ConfigError):
            ScenePrimitive("VC", (1.0, 0, 0), exists=0)

    def test_real_needs_positive_diagonal(self):
        with pytest.raises(ConfigError):
            ScenePrimitive("VC", (0, 0, 0), (1, 0, 0, 0, 0, 1))

    def test_unknown_category(self):
        with pytest.raises(ConfigError):
            ScenePrimitive.pad("XX")

    def test_volume(self):
        assert box("VC", (0, 0, 0), (2.0, 3.0, 4.0)).volume() == pytest.approx(24.0)
        assert box("VE", (0, 0, 0), (2.0, 2.0, 2.0)).volume() == pytest.approx(8 * math.pi / 6)

    def test_ground_polygon_needs_three_vertices(self):
        with pytest.raises(ConfigError):
            GroundPolygon("road", [(0, 0, 0), (1, 0, 0)])
        with pytest.raises(ConfigError):
            GroundPolygon("river", [(0, 0, 0), (1, 0, 0), (0, 1, 0)])


class TestSerialization:
    def test_full_layout_reserializes_byte_identical(self, rng):
        layout = full_layout(rng)
        assert len(layout.primitives) == TOTAL_SLOTS
        text = dumps_layout(layout)
        assert dumps_layout(loads_layout(text)) == text

    def test_stream_and_file(self, tmp_path, rng):
        layout = random_layout(rng, with_confidence=True)
        buf = io.StringIO()
        save_layout(layout, buf)
        buf.seek(0)
        assert load_layout(buf) == layout
        save_layout(layout, tmp_path / "l.json")
        assert load_layout(tmp_path / "l.json") == layout

    def test_fields_survive(self, rng):
        layout = full_layout(rng)
        back = loads_layout(dumps_layout(layout))
        for a, b in zip(layout.primitives, back.primitives):
            assert np.max(np.abs(np.subtract(a.center + a.cholesky, b.center + b.cholesky))) < 1e-9

    def test_malformed_json_reports_position(self):
        with pytest.raises(LayoutParseError, match="line 1, column"):
            loads_layout('{"format": ')

    def test_version_mismatch(self, rng):
        doc = layout_to_dict(random_layout(rng))
        doc["version"] = 99
        with pytest.raises(UnsupportedVersionError):
            loads_layout(json.dumps(doc))

    def test_missing_field(self, rng):
        doc = layout_to_dict(random_layout(rng, n_prims=2))
        del doc["primitives"][0]["center"]
        with pytest.raises(LayoutParseError):
            loads_layout(json.dumps(doc))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, seed):
        layout = random_layout(np.random.default_rng(seed), with_confidence=seed % 2 == 0)
        assert loads_layout(dumps_layout(layout)) == layout


class TestFOV:
    def test_polygon_with_one_vertex_inside_is_kept(self):
        poly = GroundPolygon("road", [(10, 0, 0), (-20, -50, 0), (-20, 50, 0)])
        outside = GroundPolygon("road", [(-1, 0, 0), (-20, -50, 0), (-20, 50, 0)])
        layout = filter_fov(SceneLayout(ground=[poly, outside]))
        assert layout.ground == (poly,)

    def test_primitives_outside_dropped(self):
        layout = SceneLayout(primitives=[box("VS", (10, 0, 1)), box("VS", (-1, 0, 1), instance_id=1),
                                         box("VS", (10, 33, 1), instance_id=2)])
        assert [p.instance_id for p in filter_fov(layout).primitives] == [0]

    def test_boundary_is_inside(self):
        assert FOV().contains((64.0, -32.0)) and FOV().contains((0.0, 32.0))

    def test_synth_scene_is_fov_fixed_point(self):
        layout = synth_scene(0)
        assert filter_fov(layout) == layout


class TestPadding:
    def test_excess_cars_keep_closest(self):
        # listed far to near, so the kept ones are not simply the first 18
        cars = [box("VS", (float(20 - i), 0, 1), instance_id=i) for i in range(20)]
        kept = pad_category(cars, CATEGORY_BY_CODE["VS"])
        assert len(kept) == 18
        assert [p.instance_id for p in kept] == list(range(2, 20))

    def test_pad_layout_has_fixed_counts(self):
        layout = pad_layout(synth_scene(1))
        assert len(layout.primitives) == TOTAL_SLOTS and is_padded(layout)
        assert len(layout.real_primitives()) == len(synth_scene(1).primitives)
        # padding is idempotent
        assert pad_layout(layout) == layout

    def test_wrong_category_rejected(self):
        with pytest.raises(ConfigError):
            pad_category([box("VC", (1, 0, 0))], CATEGORY_BY_CODE["VE"])

    def test_threshold(self):
        layout = SceneLayout(primitives=[box("P", (1, 0, 0), confidence=0.2),
                                         box("P", (2, 0, 0), confidence=0.3, instance_id=1),
                                         box("P", (3, 0, 0), instance_id=2),
                                         ScenePrimitive.pad("P")])
        assert [p.instance_id for p in threshold_existence(layout).primitives] == [1, 2]


class TestDensity:
    def layout(self, n, size):
        return SceneLayout(primitives=[box("VC", (i + 1.0, 0, 1), (size,) * 3, i) for i in range(n)])

    def test_labels(self):
        p25, p75 = (2.0, 10.0), (6.0, 100.0)
        assert compute_scene_label(self.layout(8, 5.0), p25, p75) == "high"
        assert compute_scene_label(self.layout(1, 1.0), p25, p75) == "low"
        assert compute_scene_label(self.layout(1, 6.0), p25, p75) == "medium"
        assert compute_scene_label(self.layout(4, 2.0), p25, p75) == "medium"

    def test_stats_and_thresholds(self):
        layouts = [self.layout(n, 1.0) for n in range(1, 6)]
        assert vegetation_stats(layouts[2]) == (3, pytest.approx(3.0))
        p25, p75 = density_thresholds(layouts)
        assert p25 == (2.0, pytest.approx(2.0)) and p75 == (4.0, pytest.approx(4.0))

    def test_invalid_thresholds(self):
        with pytest.raises(ConfigError):
            compute_scene_label(self.layout(1, 1.0), (0.0, 1.0), (1.0, 1.0))


class TestEdits:
    def test_translate(self):
        layout = SceneLayout(primitives=[box("O", (1, 2, 3), instance_id=4)])
        out = apply_edit(layout, 4, Translate((1, -1, 0.5)))
        assert out.primitives[0].center == (2.0, 1.0, 3.5)

    def test_scale_doubles_eigenvalues(self, rng):
        prim = random_primitive(rng, "VS", instance_id=1)
        out = apply_edit(SceneLayout(primitives=[prim]), 1, Scale((2.0, 2.0, 2.0)))
        np.testing.assert_allclose(out.primitives[0].pose().scale, 2 * prim.pose().scale, rtol=1e-12)
        np.testing.assert_allclose(out.primitives[0].cholesky, np.sqrt(2) * np.array(prim.cholesky),
                                   rtol=1e-12, atol=1e-12)

    def test_rotate_about_z(self):
        prim = ScenePrimitive.from_pose("VS", np.eye(3), (4.0, 2.0, 1.0), (5, 0, 1), 3)
        out = apply_edit(SceneLayout(primitives=[prim]), 3, Rotate("z", np.pi / 2))
        rot = out.primitives[0].pose().rotation
        np.testing.assert_allclose(np.abs(rot[:, 0]), [0, 1, 0], atol=1e-12)
        assert out.primitives[0].center == prim.center

    def test_unknown_id_and_bad_edits(self):
        layout = SceneLayout(primitives=[box("O", (1, 2, 3), instance_id=4)])
        with pytest.raises(NotFoundError):
            apply_edit(layout, 5, Translate((0, 0, 0)))
        with pytest.raises(InvalidEditError):
            apply_edit(layout, 4, Scale((1.0, 0.0, 1.0)))
        with pytest.raises(InvalidEditError):
            apply_edit(layout, 4, "grow")


class TestSynth:
    def test_deterministic(self):
        assert synth_scene(3) == synth_scene(3)
        assert synth_scene(3) != synth_scene(4)

    def test_counts_and_ids(self):
        layout = synth_scene(5, counts={"VS": 3, "P": 2})
        assert [p.category for p in layout.primitives] == ["VS"] * 3 + ["P"] * 2
        assert [p.instance_id for p in layout.primitives] == list(range(5))

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            synth_scene(0, counts={"VB": 3})
        with pytest.raises(ConfigError):
            synth_scene(0, counts={"ZZ": 1})
        with pytest.raises(ConfigError):
            synth_scene(0, road_template="roundabout")

    def test_corpus(self):
        corpus = synth_corpus(4, seed=2)
        assert len({dumps_layout(c) for c in corpus}) == 4
        assert synth_corpus(4, seed=2) == corpus


class TestNormalization:
    def test_features_land_in_unit_interval(self):
        corpus = synth_corpus(5)
        stats = fit_stats(corpus)
        for layout in corpus:
            feats = normalize_features(layout, stats)
            assert feats.n_clamped == 0
            assert feats.features.min() >= 0 and feats.features.max() <= 1
            back = denormalize_features(feats.features, feats.categories, stats)
            ref = np.array([p.center + p.cholesky for p in layout.real_primitives()])
            np.testing.assert_allclose(back, ref, rtol=1e-12, atol=1e-9)

    def test_out_of_range_values_clamp(self):
        stats = fit_stats([SceneLayout(primitives=[box("O", (1, 1, 1)), box("O", (2, 2, 2), (2, 2, 2))])])
        feats = normalize_features(SceneLayout(primitives=[box("O", (5, 1, 1))]), stats)
        assert feats.n_clamped >= 1 and feats.features.max() == 1.0

    def test_stats_json(self, tmp_path):
        stats = fit_stats(synth_corpus(2))
        stats.save(tmp_path / "s.json")
        assert NormalizationStats.load(tmp_path / "s.json") == stats
        with pytest.raises(MissingStatsError):
            NormalizationStats({}, {}).bounds("VC")

    def test_estimator(self):
        corpus = synth_corpus(3)
        norm = clone(PrimitiveNormalizer()).fit(corpus)
        X = norm.transform(corpus)
        assert X.shape == (3, TOTAL_SLOTS, 10)
        assert X[..., 9].sum() == sum(len(c.primitives) for c in corpus)
        decoded = norm.inverse_transform(X)
        reals = [p for p in decoded[0] if p.is_real]
        assert len(decoded[0]) == TOTAL_SLOTS and len(reals) == len(corpus[0].primitives)
        # padded order is table order, and within a category the input order
        originals = [p for spec in CATEGORIES for p in corpus[0].primitives if p.category == spec.code]
        for got, want in zip(reals, originals):
            np.testing.assert_allclose(got.center + got.cholesky, want.center + want.cholesky,
                                       rtol=1e-12, atol=1e-9)

    def test_estimator_needs_fit(self):
        with pytest.raises(NotFittedError):
            PrimitiveNormalizer().transform([synth_scene(0)])
