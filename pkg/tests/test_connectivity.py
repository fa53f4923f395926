import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlsc.connectivity import (
    ConnectivityReport,
    ConnectivityRow,
    RegionSpec,
    UndefinedCorrelation,
    connectivity_map,
    emphasis_profile,
    fisher_z,
    fisher_z_inv,
    group_average,
    load_regions,
    load_report,
    pearson,
    region_series,
    save_regions,
)
from dlsc.core import SignalMatrix, ValidationError

from oracles import pearson_two_pass


def report(pairs_r):
    return ConnectivityReport(
        tuple(ConnectivityRow(s, t, r, float(fisher_z(r))) for (s, t), r in pairs_r.items())
    )


def test_region_series():
    m = SignalMatrix(np.array([[1.0, 3.0, 5.0], [2.0, 2.0, 5.0], [3.0, 1.0, 5.0]]), 1.0)
    np.testing.assert_array_equal(region_series(m, RegionSpec("a", (0,))), [1, 2, 3])
    np.testing.assert_array_equal(region_series(m, RegionSpec("b", (0, 1))), [2, 2, 2])
    with pytest.raises(ValidationError):
        region_series(m, RegionSpec("c", (3,)))


def test_region_series_identical_columns():
    col = np.array([0.5, -1.0, 2.0])
    m = SignalMatrix(np.column_stack([col, col]), 1.0)
    np.testing.assert_allclose(region_series(m, RegionSpec("a", (0, 1))), col)


def test_pearson_basics():
    x = np.array([1.0, 2.0, 4.0, 3.0])
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)
    x, y = [1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 10.0]
    assert pearson(x, y) == pytest.approx(pearson_two_pass(x, y), abs=1e-12)
    with pytest.raises(UndefinedCorrelation):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    a=st.floats(0.01, 100.0),
    b=st.floats(-100.0, 100.0),
)
def test_pearson_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(30), rng.standard_normal(30)
    r = pearson(x, y)
    assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-12)
    assert pearson(-a * x + b, y) == pytest.approx(-r, abs=1e-12)


def test_fisher_values():
    assert fisher_z(0.0) == 0.0
    assert fisher_z(0.5) == pytest.approx(0.549306, abs=1e-6)
    assert fisher_z_inv(fisher_z(-0.9)) == pytest.approx(-0.9, abs=1e-12)
    assert math.isfinite(fisher_z(1.0)) and math.isfinite(fisher_z(-1.0))
    assert fisher_z(1.0) == pytest.approx(math.atanh(1 - 1e-15))


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.999999, 0.999999), st.floats(-0.999999, 0.999999))
def test_fisher_round_trip_and_monotone(r, s):
    assert abs(fisher_z_inv(fisher_z(r)) - r) <= 1e-12
    if r < s:
        assert fisher_z(r) < fisher_z(s)


@given(st.floats(-50.0, 50.0))
def test_fisher_inverse_range(z):
    assert -1.0 <= fisher_z_inv(z) <= 1.0


def _matrix(rng, n=50, v=10):
    return SignalMatrix(rng.standard_normal((n, v)), 1.0)


def test_connectivity_map_shapes():
    m = _matrix(np.random.default_rng(0), v=24)
    seeds = [RegionSpec(f"s{i}", (i,)) for i in range(3)]
    targets = [RegionSpec(f"t{i}", (3 + 2 * i, 4 + 2 * i)) for i in range(6)]
    rep = connectivity_map(m, seeds, targets)
    assert len(rep.rows) == 18
    rep_self = connectivity_map(m, seeds[:1], [RegionSpec("same", (0,))])
    assert rep_self.rows[0].r == pytest.approx(1.0, abs=1e-12)


def test_connectivity_map_flags_zero_variance():
    data = np.random.default_rng(1).standard_normal((20, 3))
    data[:, 2] = 4.0
    rep = connectivity_map(SignalMatrix(data, 1.0), [RegionSpec("s", (0,))],
                           [RegionSpec("t", (1,)), RegionSpec("flat", (2,))])
    assert rep.rows[0].valid and not rep.rows[1].valid
    avg = group_average([rep, rep])
    assert avg.rows[0].valid and not avg.rows[1].valid


def test_connectivity_map_permutation_equivariant():
    m = _matrix(np.random.default_rng(2))
    seeds = [RegionSpec("a", (0,)), RegionSpec("b", (1, 2))]
    targets = [RegionSpec("x", (5,)), RegionSpec("y", (6, 7)), RegionSpec("z", (9,))]
    one = connectivity_map(m, seeds, targets).as_dict()
    two = connectivity_map(m, seeds[::-1], targets[::-1]).as_dict()
    assert one == two


def test_group_average_values():
    single = report({("s", "t"): 0.3})
    assert group_average([single]).rows[0].r == pytest.approx(0.3, abs=1e-12)
    pos, neg = report({("s", "t"): 0.4}), report({("s", "t"): -0.4})
    assert group_average([pos, neg]).rows[0].r == pytest.approx(0.0, abs=1e-15)
    three = [report({("s", "t"): r}) for r in (0.2, 0.4, 0.6)]
    expected = math.tanh((math.atanh(0.2) + math.atanh(0.4) + math.atanh(0.6)) / 3)
    avg = group_average(three)
    assert avg.rows[0].r == pytest.approx(expected, abs=1e-12)
    assert avg.rows[0].r == pytest.approx(0.413514, abs=1e-6)
    assert avg.n_subjects == 3 and avg.aggregation == "fisher-mean"


def test_group_average_identical_reports():
    rep = connectivity_map(_matrix(np.random.default_rng(3)), [RegionSpec("a", (0,))],
                           [RegionSpec("b", (1,)), RegionSpec("c", (2,))])
    avg = group_average([rep] * 4)
    for a, b in zip(avg.rows, rep.rows):
        assert a.r == pytest.approx(b.r, abs=1e-12)


def test_group_average_key_mismatch():
    with pytest.raises(ValidationError):
        group_average([report({("s", "t"): 0.1}), report({("s", "u"): 0.1})])


def test_emphasis_profile():
    raw = report({("s", "a"): 0.5, ("s", "b"): 0.1, ("s", "c"): 0.3})
    prof = emphasis_profile(raw, raw)
    assert [row.pair for row in prof] == [("s", "a"), ("s", "c"), ("s", "b")]
    assert all(row.delta_z == 0.0 for row in prof)
    bumped = report({("s", "a"): 0.5, ("s", "b"): 0.6, ("s", "c"): 0.3})
    prof = emphasis_profile(raw, bumped)
    top = max(prof, key=lambda row: abs(row.delta_z))
    assert top.pair == ("s", "b")
    with pytest.raises(ValidationError):
        emphasis_profile(raw, report({("s", "a"): 0.5}))


def test_region_and_report_files(tmp_path):
    regions = [RegionSpec("seed", (4,)), RegionSpec("roi", (1, 2, 3))]
    save_regions(regions, tmp_path / "r.csv")
    assert load_regions(tmp_path / "r.csv") == regions
    rep = report({("s", "t"): 0.25, ("s", "u"): -0.5})
    rep.save(tmp_path / "rep.csv")
    back = load_report(tmp_path / "rep.csv")
    assert [(r.seed, r.target, r.r, r.z) for r in back.rows] == [
        (r.seed, r.target, r.r, r.z) for r in rep.rows
    ]
