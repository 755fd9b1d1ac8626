"""Agreement-score math and aggregation contracts."""

from __future__ import annotations

import numpy as np
import pytest

from percept_xai.agreement import (
    AgreementReport,
    aggregate,
    agreement_score,
    read_csv,
    score_maps,
    write_csv,
)
from percept_xai.engine import ImportanceMap


def _map(values, component="overall"):
    values = np.asarray(values, dtype=np.float64)
    return ImportanceMap(component=component, values=values, num_masks=1, fingerprint="t")


class TestAgreementScore:
    def test_self_agreement_is_one(self):
        m = np.array([[0.1, 0.4], [0.3, 0.9]])
        assert agreement_score(m, m) == pytest.approx(1.0, abs=1e-6)

    def test_anticorrelated_pair(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[4.0, 3.0], [2.0, 1.0]])
        assert agreement_score(a, b) == pytest.approx(-1.0, abs=1e-6)

    def test_hand_evaluated_pearson(self):
        # x=(1,2,3,4), y=(1,3,2,4): cov=4, var_x=var_y=5 -> r=0.8
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0, 3.0], [2.0, 4.0]])
        assert agreement_score(a, b) == pytest.approx(0.8, abs=1e-6)

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((6, 6)), rng.random((6, 6))
        base = agreement_score(a, b)
        assert agreement_score(2.5 * a + 0.3, b) == pytest.approx(base, abs=1e-9)
        assert agreement_score(a, 0.01 * b + 7.0) == pytest.approx(base, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((5, 5)), rng.random((5, 5))
        assert agreement_score(a, b) == pytest.approx(agreement_score(b, a), abs=1e-12)

    def test_zero_variance_map_scores_zero_with_warning(self):
        flat = np.full((4, 4), 0.5)
        varied = np.random.default_rng(2).random((4, 4))
        with pytest.warns(UserWarning, match="zero-variance"):
            assert agreement_score(flat, varied) == 0.0

    def test_accepts_importance_map_objects(self):
        values = np.random.default_rng(3).random((4, 4))
        assert agreement_score(_map(values), _map(values)) == pytest.approx(1.0)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            agreement_score(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            agreement_score(np.zeros((2, 2)), np.zeros((2, 2)), mode="kendall")


class TestRawDotMode:
    def test_identical_maps_score_one(self):
        m = np.random.default_rng(4).random((4, 4))
        assert agreement_score(m, m, mode="raw-dot") == pytest.approx(1.0, abs=1e-9)

    def test_nonnegative_maps_score_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = rng.random((4, 4)), rng.random((4, 4))
            assert agreement_score(a, b, mode="raw-dot") >= 0.0

    def test_scale_invariant_after_unit_normalization(self):
        rng = np.random.default_rng(6)
        a, b = rng.random((4, 4)), rng.random((4, 4))
        base = agreement_score(a, b, mode="raw-dot")
        assert agreement_score(3.0 * a, b, mode="raw-dot") == pytest.approx(base, abs=1e-12)

    def test_zero_map_scores_zero_with_warning(self):
        with pytest.warns(UserWarning, match="all-zero"):
            assert agreement_score(np.zeros((3, 3)), np.ones((3, 3)), mode="raw-dot") == 0.0


class TestScoreMaps:
    def test_scores_each_component_against_overall(self):
        rng = np.random.default_rng(7)
        overall = rng.random((6, 6))
        maps = {
            "overall": _map(overall),
            "color": _map(overall.copy(), "color"),
            "shape": _map(rng.random((6, 6)), "shape"),
            "texture": _map(1.0 - overall, "texture"),
        }
        report = score_maps(maps, image_id="img-1")
        assert report.color == pytest.approx(1.0, abs=1e-9)
        assert report.texture == pytest.approx(-1.0, abs=1e-9)
        assert -1.0 <= report.shape <= 1.0
        assert report.image_id == "img-1"

    def test_missing_component_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            score_maps({"overall": _map(np.zeros((2, 2)))})


class TestAggregate:
    def test_single_report_is_itself(self):
        report = AgreementReport(color=0.5, shape=0.2, texture=0.1, image_id="a")
        out = aggregate([report])
        assert (out.color, out.shape, out.texture) == (0.5, 0.2, 0.1)
        assert out.image_id == "aggregate"

    def test_two_reports_average(self):
        reports = [
            AgreementReport(color=0.2, shape=0.0, texture=1.0),
            AgreementReport(color=0.4, shape=1.0, texture=0.0),
        ]
        out = aggregate(reports)
        assert out.color == pytest.approx(0.3)
        assert out.shape == pytest.approx(0.5)
        assert out.count == 2

    def test_thousand_reports_recover_known_means(self):
        rng = np.random.default_rng(8)
        colors = rng.random(1000)
        shapes = rng.random(1000)
        textures = rng.random(1000)
        reports = [
            AgreementReport(color=c, shape=s, texture=t)
            for c, s, t in zip(colors, shapes, textures)
        ]
        out = aggregate(reports)
        assert out.color == pytest.approx(colors.mean(), abs=1e-9)
        assert out.shape == pytest.approx(shapes.mean(), abs=1e-9)
        assert out.texture == pytest.approx(textures.mean(), abs=1e-9)
        assert out.count == 1000

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="zero reports"):
            aggregate([])

    def test_mixed_modes_rejected(self):
        reports = [
            AgreementReport(color=0.1, shape=0.1, texture=0.1, mode="pearson"),
            AgreementReport(color=0.1, shape=0.1, texture=0.1, mode="raw-dot"),
        ]
        with pytest.raises(ValueError, match="mixed modes"):
            aggregate(reports)


class TestCsv:
    def test_round_trip_with_aggregate_footer(self, tmp_path):
        reports = [
            AgreementReport(color=0.25, shape=0.5, texture=0.75, image_id="one.png"),
            AgreementReport(color=0.35, shape=0.4, texture=0.65, image_id="two.png"),
        ]
        path = tmp_path / "scores.csv"
        write_csv(path, reports)
        rows = read_csv(path)
        assert len(rows) == 3
        assert rows[0].image_id == "one.png"
        assert rows[0].color == pytest.approx(0.25)
        assert rows[-1].image_id == "aggregate"
        assert rows[-1].color == pytest.approx(0.30)
        header = path.read_text().splitlines()[0]
        assert header == "image_id,color,shape,texture,mode"


class TestVarianceFloor:
    def test_float_dust_maps_score_zero(self):
        # variation at rounding scale must not produce an arbitrary +-1
        rng = np.random.default_rng(9)
        dust = 0.5 + 1e-15 * rng.random((6, 6))
        real = rng.random((6, 6))
        with pytest.warns(UserWarning, match="zero-variance"):
            assert agreement_score(dust, real) == 0.0

    def test_small_but_real_signals_still_score(self):
        rng = np.random.default_rng(10)
        base = rng.random((6, 6))
        tiny = 0.5 + 1e-4 * base
        assert agreement_score(tiny, base) == pytest.approx(1.0, abs=1e-9)
