import json

import numpy as np
import pytest
from scipy import stats

from lobeforge.analysis import (
    ACTUATORS,
    DIRECTIONS,
    MAX_FORCE,
    WORK,
    ObservationTable,
    anova_two_factor,
    build_report,
    emit_plots,
    group_label,
    parse_trace_csv,
    read_observations,
    shapiro_wilk,
    shapiro_wilk_coefficients,
    tukey_hsd,
    write_report,
)
from lobeforge.errors import DegenerateDesign, EmptyData, FormatError, NonMonotoneStroke, SampleTooSmall

# (sample, W, p) computed once with scipy.stats.shapiro and frozen here
SHAPIRO_REFERENCE = [
    ([1.0289, 1.6419, 1.1467, -0.9732, -1.3928], 0.848572, 0.190048),
    ([0.2394, 0.2339, 0.5192, 0.4343, 0.0864, 1.0208, 0.389, 0.4365, 0.7204, 0.0015, 0.118, 4.6198],
     0.534303, 3.2e-05),
    ([-0.4364, -1.2911, -0.7757, 0.9031, -1.4806, -0.5341, 0.1638, -0.6685, -0.2523, -0.2219, 0.4181,
      -0.4313, 0.2723, 0.0568, 0.4246, 0.2249], 0.972823, 0.881994),
    ([0.4872, 0.468, 0.9649, 0.8982, 0.079, 0.2452, 0.1848, 0.9055, 0.5538, 0.3717, 0.8339, 0.3488,
      0.6817, 0.2284, 0.0239, 0.6961, 0.3369, 0.342, 0.2758, 0.2513, 0.5701, 0.3339, 0.4256, 0.2019,
      0.5052, 0.5854, 0.4203, 0.4034, 0.9439, 0.0482, 0.3261], 0.945845, 0.119805),
    ([1.0, 2.0, 3.0], 1.0, 1.0),
    ([2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 9.7], 0.824017, 0.051418),
]


def balanced_table(rng, n=5, effects=None, metric=WORK, sd=1.0):
    rows = []
    for i, a in enumerate(ACTUATORS):
        for j, d in enumerate(DIRECTIONS):
            mu = 0.0 if effects is None else effects[i, j]
            rows += [(a, d, metric, float(v)) for v in mu + sd * rng.normal(size=n)]
    return ObservationTable.from_rows(rows)


def brute_force_ss(table, metric):
    a_lab, b_lab, y = table.select(metric)
    a_lab, b_lab, y = np.array(a_lab), np.array(b_lab), np.asarray(y)
    grand = y.mean()
    ss_a = sum((a_lab == a).sum() * (y[a_lab == a].mean() - grand) ** 2 for a in set(a_lab))
    ss_b = sum((b_lab == b).sum() * (y[b_lab == b].mean() - grand) ** 2 for b in set(b_lab))
    ss_ab, ss_e = 0.0, 0.0
    for a in set(a_lab):
        for b in set(b_lab):
            cell = y[(a_lab == a) & (b_lab == b)]
            ss_ab += len(cell) * (cell.mean() - y[a_lab == a].mean() - y[b_lab == b].mean() + grand) ** 2
            ss_e += np.sum((cell - cell.mean()) ** 2)
    return ss_a, ss_b, ss_ab, ss_e


class TestShapiroWilk:
    @pytest.mark.parametrize("x,w,p", SHAPIRO_REFERENCE)
    def test_reference_vectors(self, x, w, p):
        r = shapiro_wilk(x)
        assert abs(r.W - w) < 1e-3
        assert abs(r.p - p) < 1e-3
        assert r.n == len(x)

    def test_normal_quantiles(self):
        x = stats.norm.ppf((np.arange(1, 51) - 0.375) / 50.25)
        assert shapiro_wilk(x).W > 0.99

    @pytest.mark.parametrize("n", [2, 5000])
    def test_sample_size_limits(self, n):
        with pytest.raises(SampleTooSmall):
            shapiro_wilk(np.arange(float(n)))

    def test_constant_sample(self):
        with pytest.raises(ValueError):
            shapiro_wilk([1.0, 1.0, 1.0, 1.0])

    def test_affine_invariance(self, rng):
        x = rng.gamma(2.0, size=25)
        a = shapiro_wilk(x)
        b = shapiro_wilk(3.7 * x - 12.0)
        assert b.W == pytest.approx(a.W, abs=1e-12)
        assert b.p == pytest.approx(a.p, abs=1e-12)

    @pytest.mark.parametrize("n", [3, 10, 40])
    def test_coefficients_normalised(self, n):
        # upper half only; the lower half mirrors it with opposite sign
        a = shapiro_wilk_coefficients(n)
        assert len(a) == n // 2
        assert 2 * np.sum(a**2) == pytest.approx(1.0)
        assert np.all(a > 0) and np.all(np.diff(a) < 0)


class TestAnova:
    def test_brute_force_decomposition(self, rng):
        effects = rng.normal(scale=2.0, size=(4, 2))
        table = balanced_table(rng, 6, effects)
        res = anova_two_factor(table, WORK)
        expected = brute_force_ss(table, WORK)
        got = [res[e].ss for e in ("actuator", "direction", "actuator:direction", "residual")]
        np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-8)
        assert res.balanced

    def test_two_by_two(self, rng):
        rows = [(a, d, WORK, float(v)) for a in ACTUATORS[:2] for d in DIRECTIONS for v in rng.normal(size=4)]
        table = ObservationTable.from_rows(rows)
        res = anova_two_factor(table, WORK)
        np.testing.assert_allclose([r.ss for r in res.rows], brute_force_ss(table, WORK), rtol=1e-8, atol=1e-8)
        assert res.total_ss == pytest.approx(np.sum((table.value - table.value.mean()) ** 2))

    def test_degrees_of_freedom(self, rng):
        res = anova_two_factor(balanced_table(rng, 3), WORK)
        assert (res["actuator"].df, res["direction"].df, res["actuator:direction"].df) == (3, 1, 3)
        assert res["residual"].df == 24 - 8

    def test_constant_data(self):
        rows = [(a, d, WORK, 2.5) for a in ACTUATORS for d in DIRECTIONS for _ in range(3)]
        res = anova_two_factor(ObservationTable.from_rows(rows), WORK)
        for e in ("actuator", "direction", "actuator:direction"):
            assert res[e].F == 0.0 and res[e].p == 1.0

    def test_f_matches_scipy_one_way(self, rng):
        # with one direction level collapsed, the actuator F must equal the one-way F
        effects = np.repeat(rng.normal(size=(4, 1)), 2, axis=1)
        table = balanced_table(rng, 5, effects)
        res = anova_two_factor(table, WORK)
        a_lab, _, y = table.select(WORK)
        groups = [np.asarray(y)[np.array(a_lab) == a] for a in ACTUATORS]
        one_way = stats.f_oneway(*groups)
        ss_within = sum(np.sum((g - g.mean()) ** 2) for g in groups)
        assert res["actuator"].ss == pytest.approx(one_way.statistic * ss_within / 36 * 3)

    def test_unbalanced(self, rng):
        table = balanced_table(rng, 4)
        rows = list(table.rows())[1:]
        res = anova_two_factor(ObservationTable.from_rows(rows), WORK)
        assert not res.balanced
        assert res["residual"].df == 31 - 8

    def test_degenerate(self):
        rows = [(a, "Loading", WORK, float(i)) for i, a in enumerate(ACTUATORS) for _ in range(2)]
        with pytest.raises(DegenerateDesign):
            anova_two_factor(ObservationTable.from_rows(rows), WORK)
        rows = [(a, d, WORK, 1.0) for a in ACTUATORS for d in DIRECTIONS]
        with pytest.raises(DegenerateDesign):
            anova_two_factor(ObservationTable.from_rows(rows), WORK)


class TestTukey:
    def test_identical_groups(self, rng):
        base = rng.normal(size=5)
        rows = [(a, d, WORK, float(v)) for a in ACTUATORS for d in DIRECTIONS for v in base]
        res = tukey_hsd(ObservationTable.from_rows(rows), WORK)
        assert min(pr.p_adj for pr in res.pairs) > 0.99
        assert len(res.pairs) == 28

    def test_large_separation(self, rng):
        effects = np.zeros((4, 2))
        effects[0, 0] = 100.0
        res = tukey_hsd(balanced_table(rng, 5, effects), WORK)
        assert res.p(group_label("SG-const", "Loading"), group_label("SG-taper", "Loading")) < 1e-6

    def test_matches_scipy(self, rng):
        effects = rng.normal(scale=1.5, size=(4, 2))
        table = balanced_table(rng, 6, effects)
        res = tukey_hsd(table, WORK)
        a_lab, b_lab, y = table.select(WORK)
        labels = [group_label(a, b) for a, b in zip(a_lab, b_lab)]
        data = [np.asarray(y)[np.array(labels) == g] for g in res.groups]
        ref = stats.tukey_hsd(*data).pvalue
        np.testing.assert_allclose(res.matrix(), ref, atol=1e-6)

    def test_monotone_in_difference(self, rng):
        noise = rng.normal(size=(8, 5))
        ps = []
        for shift in (0.0, 0.5, 1.0, 2.0, 4.0):
            rows = []
            for k, (a, d) in enumerate([(a, d) for a in ACTUATORS for d in DIRECTIONS]):
                rows += [(a, d, WORK, float(v + (shift if k == 0 else 0.0))) for v in noise[k]]
            res = tukey_hsd(ObservationTable.from_rows(rows), WORK)
            ps.append(res.p(res.groups[0], res.groups[1]))
        assert all(b <= a for a, b in zip(ps, ps[1:]))


class TestParsing:
    def write(self, path, text):
        path.write_text(text)
        return path

    def test_sorted_by_time(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "time_s,stroke_mm,force_n\n0.1,2,0.5\n0.0,0,0\n0.05,1,0.2\n")
        tr = parse_trace_csv(p)
        assert list(tr.stroke) == [0, 1, 2]

    def test_bad_header(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "t,s,f\n0,0,0\n")
        with pytest.raises(FormatError) as exc:
            parse_trace_csv(p)
        assert exc.value.line == 1

    def test_non_numeric(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "time_s,stroke_mm,force_n\n0,0,0\n0.1,x,1\n")
        with pytest.raises(FormatError) as exc:
            parse_trace_csv(p)
        assert exc.value.line == 3

    def test_non_monotone(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "time_s,stroke_mm,force_n\n0,0,0\n0.1,2,1\n0.2,1,1\n")
        with pytest.raises(NonMonotoneStroke) as exc:
            parse_trace_csv(p)
        assert exc.value.line == 4

    def test_observation_round_trip(self, tmp_path, rng):
        table = balanced_table(rng, 2)
        table.to_csv(tmp_path / "obs.csv")
        back = read_observations(tmp_path / "obs.csv")
        assert back.actuator == table.actuator
        np.testing.assert_allclose(back.value, table.value)


class TestReport:
    def test_structure(self, rng, tmp_path):
        rows = list(balanced_table(rng, 4, metric=WORK).rows()) + list(balanced_table(rng, 4, metric=MAX_FORCE).rows())
        report = build_report(ObservationTable.from_rows(rows))
        assert set(report["metrics"]) == {WORK, MAX_FORCE}
        assert report["metrics"][WORK]["anova"]["effects"][2]["df"] == 3
        assert len(report["metrics"][WORK]["shapiro_wilk"]) == 8
        write_report(report, tmp_path / "r.json")
        assert json.loads((tmp_path / "r.json").read_text())["alpha"] == 0.005

    def test_empty(self):
        with pytest.raises(EmptyData):
            build_report(ObservationTable.from_rows([]))


class TestPlots:
    def test_single_box(self, tmp_path):
        table = ObservationTable.from_rows([("SG-const", "Loading", WORK, v) for v in (1.0, 2.0, 3.0, 4.0, 10.0)])
        svg = (tmp_path / "b.svg")
        emit_plots(table, "boxplot", svg, metric=WORK)
        text = svg.read_text()
        assert text.startswith("<?xml") and "<svg" in text
        assert 'id="box-0"' in text and 'id="median-0"' in text and 'id="box-1"' not in text

    def test_eight_boxes(self, tmp_path, rng):
        svg = tmp_path / "b.svg"
        emit_plots(balanced_table(rng, 4), "boxplot", svg, metric=WORK)
        text = svg.read_text()
        assert all(f'id="box-{i}"' in text for i in range(8))
        assert 'id="box-8"' not in text
        assert all(a in text for a in ACTUATORS)

    def test_curve_markers(self, tmp_path):
        s = np.array([0.0, 1, 2, 3, 4])
        f = np.array([0, 0.005, 0.5, 1.0, 0.2])
        svg = tmp_path / "c.svg"
        emit_plots([np.column_stack([s, f])], "curve", svg)
        text = svg.read_text()
        assert 'id="curve-0"' in text and 'id="x1-0"' in text and 'id="x2-0"' in text

    def test_byte_identical(self, tmp_path, rng):
        table = balanced_table(rng, 4)
        emit_plots(table, "boxplot", tmp_path / "a.svg", metric=WORK)
        emit_plots(table, "boxplot", tmp_path / "b.svg", metric=WORK)
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyData):
            emit_plots(ObservationTable.from_rows([]), "boxplot", tmp_path / "e.svg", metric=WORK)
