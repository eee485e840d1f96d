import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_tc.dataset import (StormSeries, align_by_mslp_minimum, build_target, default_test_ids,
                               design_rows, destandardize, feature_label, gaussian_smooth,
                               load_manifest, load_storm_csv, make_folds, mslp_anchor,
                               panel_from_storms, parse_feature_label, standardize,
                               write_manifest, write_storm_csv, ManifestEntry)
from causal_tc.errors import ParseError, ValidationError
from oracles import gaussian_smooth_reference


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def storm(sid, vmax, mslp=None, **cols):
    n = len(vmax)
    c = {"VMAX": np.asarray(vmax, float)}
    if mslp is not None:
        c["PMIN"] = np.asarray(mslp, float)
    c.update({k: np.asarray(v, float) for k, v in cols.items()})
    return StormSeries(sid, np.arange(n), c)


# ------------------------------------------------------------------ csv io

def test_load_three_rows(tmp_path):
    s = load_storm_csv(_write(tmp_path, "time,VMAX,PMIN\n0,30,1000\n1,35,995\n2,40,990\n"))
    assert len(s) == 3 and s.codes == ["VMAX", "PMIN"]
    np.testing.assert_array_equal(s.vmax, [30, 35, 40])


def test_empty_cell_is_missing(tmp_path):
    s = load_storm_csv(_write(tmp_path, "time,VMAX,PMIN\n0,30,1000\n1,,995\n2,40,990\n"))
    np.testing.assert_array_equal(s.mask("VMAX"), [True, False, True])


def test_non_contiguous_time(tmp_path):
    with pytest.raises(ValidationError, match="non-contiguous time at row 3"):
        load_storm_csv(_write(tmp_path, "time,VMAX\n0,30\n1,35\n3,40\n"))


def test_bad_row_length_reports_row(tmp_path):
    with pytest.raises(ParseError, match="row 2"):
        load_storm_csv(_write(tmp_path, "time,VMAX\n0,30\n1,35,9\n"))


def test_duplicate_code(tmp_path):
    with pytest.raises(ValidationError, match="duplicate"):
        load_storm_csv(_write(tmp_path, "time,VMAX,VMAX\n0,30,1\n"))


def test_non_numeric(tmp_path):
    with pytest.raises(ParseError, match="non-numeric"):
        load_storm_csv(_write(tmp_path, "time,VMAX\n0,abc\n"))


def test_csv_round_trip(tmp_path):
    s = storm("A", [30.1, np.nan, 1 / 3], [1000.0, 999.5, 998.25], SHL0=[0.1, 0.2, np.nan])
    write_storm_csv(s, tmp_path / "a.csv")
    t = load_storm_csv(tmp_path / "a.csv", "A")
    for c in s.codes:
        np.testing.assert_array_equal(s.columns[c], t.columns[c])


def test_manifest(tmp_path):
    write_manifest([ManifestEntry("A", "a.csv", "train"), ManifestEntry("B", "b.csv", "test")],
                   tmp_path / "m.csv")
    es = load_manifest(tmp_path / "m.csv")
    assert [e.storm_id for e in es] == ["A", "B"] and es[1].role == "test"
    assert es[0].path == tmp_path / "a.csv"
    (tmp_path / "bad.csv").write_text("A,a.csv,dev\n")
    with pytest.raises(ValidationError, match="role"):
        load_manifest(tmp_path / "bad.csv")
    (tmp_path / "dup.csv").write_text("A,a.csv,train\nA,b.csv,train\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(tmp_path / "dup.csv")


def test_feature_labels():
    assert feature_label(("SHL0", 4)) == "SHL0@4"
    assert parse_feature_label("SHL0@4") == ("SHL0", 4)


# ------------------------------------------------------------------ target

def test_target_example():
    out = build_target(np.array([50, 50, 50, 50, 60.0]), 24)
    assert out[0] == 10 and np.isnan(out[1:]).all()


def test_target_constant_is_zero():
    out = build_target(np.full(12, 40.0), 48)
    assert np.all(out[:4] == 0) and np.isnan(out[4:]).all()


def test_target_short_series_all_missing():
    assert np.isnan(build_target(np.arange(3.0), 120)).all()


def test_target_lead_must_be_multiple_of_six():
    with pytest.raises(ValidationError):
        build_target(np.arange(10.0), 25)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=1, max_size=40), st.sampled_from([24, 48, 72, 96, 120]))
def test_target_matches_index_oracle(v, lead):
    v = np.array(v)
    k = lead // 6
    out = build_target(v, lead)
    for t in range(len(v)):
        if t + k < len(v):
            assert out[t] == v[t + k] - v[t]
        else:
            assert np.isnan(out[t])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=8, max_size=30), st.integers(1, 5))
def test_target_commutes_with_shift(v, s):
    v = np.array(v)
    padded = np.concatenate([np.full(s, np.nan), v])
    np.testing.assert_array_equal(build_target(padded, 24)[s:], build_target(v, 24))


# ------------------------------------------------------------------ alignment

@settings(max_examples=40, deadline=None)
@given(st.lists(st.one_of(st.floats(900, 1020), st.just(np.nan)), min_size=1, max_size=50),
       st.floats(0.5, 5))
def test_smoothing_matches_reference(x, sigma):
    np.testing.assert_allclose(gaussian_smooth(np.array(x), sigma),
                               gaussian_smooth_reference(x, sigma), rtol=1e-12, atol=1e-9)


def test_v_shape_anchor_at_vertex():
    m = 1000 - 5 * (10 - np.abs(np.arange(21) - 10))
    for sigma in (0.5, 1, 3, 6):
        assert mslp_anchor(m, sigma) == 10


def test_single_storm_no_padding():
    s = storm("A", np.arange(15.0), 1000 - np.minimum(np.arange(15), 7))
    p = align_by_mslp_minimum([s], 1.0)
    assert p.length == 15 and p.offsets.tolist() == [0]


def test_two_storm_shift():
    m1 = 1000 - 5 * (10 - np.abs(np.arange(15) - 5))
    m2 = 1000 - 5 * (10 - np.abs(np.arange(15) - 9))
    p = align_by_mslp_minimum([storm("A", np.zeros(15), m1), storm("B", np.zeros(15), m2)], 1.0)
    assert p.anchor_index == 9
    assert p.offsets.tolist() == [4, 0]
    assert p.length == 19
    for i in range(2):
        sm = p.values[i, :, p.codes.index("PMIN")]
        assert np.nanargmin(sm) == p.anchor_index


def test_alignment_rejects_missing_mslp():
    a = storm("A", np.zeros(5), [1000, 990, 980, 990, 1000])
    b = storm("B", np.zeros(5), [np.nan] * 5)
    p = align_by_mslp_minimum([a, b])
    assert p.storm_ids == ("A",) and p.rejected == ("B",)
    with pytest.raises(ValidationError, match="B"):
        align_by_mslp_minimum([b])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_alignment_preserves_observed_values(seed):
    r = np.random.default_rng(seed)
    storms = []
    for i in range(3):
        n = int(r.integers(5, 20))
        m = r.normal(1000, 5, n)
        x = r.normal(size=n)
        x[r.random(n) < 0.2] = np.nan
        storms.append(storm(f"S{i}", r.normal(50, 10, n), m, X=x))
    p = align_by_mslp_minimum(storms, 2.0)
    for i, s in enumerate(storms):
        for c in s.codes:
            orig = np.sort(s.columns[c][~np.isnan(s.columns[c])])
            got = p.values[i, :, p.codes.index(c)]
            np.testing.assert_array_equal(np.sort(got[~np.isnan(got)]), orig)
        anchors = mslp_anchor(s.mslp, 2.0) + p.offsets[i]
        assert anchors == p.anchor_index


# ------------------------------------------------------------------ standardize

def _panel(r, S=6, L=10):
    storms = [storm(f"S{i}", r.normal(50, 10, L), r.normal(1000, 5, L), X=r.normal(3, 2, L),
                    C=np.full(L, 7.0)) for i in range(S)]
    return panel_from_storms(storms)


def test_standardize_pooled_moments(rng):
    p = _panel(rng)
    train = list(p.storm_ids[:4])
    q = standardize(p, train)
    assert "C" not in q.codes  # constant column dropped
    tr = q.values[q.storm_index(train)]
    for j, c in enumerate(q.codes):
        x = tr[:, :, j][~np.isnan(tr[:, :, j])]
        assert abs(x.mean()) < 1e-9 and abs(x.std() - 1) < 1e-9


def test_standardize_symmetric_example():
    p = panel_from_storms([storm("A", [1.0, 2.0, 3.0])])
    q = standardize(p, ["A"])
    v = q.col("VMAX")[0]
    assert q.standardization["VMAX"][0] == 2.0
    assert v[1] == 0 and v[0] == -v[2] < 0
    assert q.standardization["VMAX"][1] == pytest.approx(np.sqrt(2 / 3))


def test_standardize_idempotent_and_invertible(rng):
    p = standardize(_panel(rng), ["S0", "S1", "S2"])
    q = standardize(p, ["S0", "S1", "S2"])
    np.testing.assert_allclose(q.values, p.values, atol=1e-9)
    back = destandardize(p)
    orig = _panel(np.random.default_rng(12345)).drop_columns(["C"])
    np.testing.assert_allclose(back.values, orig.values, atol=1e-9)


def test_standardize_leaves_targets():
    p = panel_from_storms([storm("A", [1.0, 2.0, 4.0, 8.0, 16.0])]).with_target(lead_hours=6)
    q = standardize(p, ["A"])
    np.testing.assert_array_equal(q.col("DELV6"), p.col("DELV6"))


# ------------------------------------------------------------------ folds

def test_folds_217_storms_seven_ways():
    f = make_folds([f"s{i}" for i in range(217)], 7, 0)
    assert sorted(len(f.fold_ids(k)) for k in range(7)) == [31] * 7


def test_folds_deterministic_and_uneven():
    ids = [f"s{i}" for i in range(10)]
    assert make_folds(ids, 2, 3) == make_folds(ids, 2, 3)
    f = make_folds([f"s{i}" for i in range(11)], 2, 0)
    assert sorted(len(f.fold_ids(k)) for k in range(2)) == [5, 6]


def test_folds_errors():
    with pytest.raises(ValidationError):
        make_folds(["a", "b"], 3, 0)
    with pytest.raises(ValidationError):
        make_folds(["a", "b"], 1, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 60), st.integers(2, 8), st.integers(0, 99), st.integers(0, 3))
def test_folds_partition(n, k, seed, n_test):
    ids = [f"s{i}" for i in range(n)]
    test = ids[:n_test]
    if k > n - n_test:
        return
    f = make_folds(ids, k, seed, test)
    seen = [s for j in range(k) for s in f.fold_ids(j)]
    assert sorted(seen) == sorted(ids[n_test:])
    sizes = [len(f.fold_ids(j)) for j in range(k)]
    assert max(sizes) - min(sizes) <= 1
    assert not set(f.test_ids) & set(seen)
    for j in range(k):
        assert set(f.train_ids(j)) | set(f.fold_ids(j)) == set(seen)


def test_default_test_ids():
    ids = ["AL012020_ARTHUR", "AL252005_WILMA", "AL112005_OTHER", "AL052021_ELSA", "X"]
    assert default_test_ids(ids) == ["AL012020_ARTHUR", "AL252005_WILMA", "AL052021_ELSA"]


# ------------------------------------------------------------------ samples

def test_design_rows_lag_convention():
    s = storm("A", [0.0, 1, 2, 3, 4], X=[10.0, 11, 12, 13, 14])
    p = panel_from_storms([s])
    X, y = design_rows(p, [("X", 2)], "VMAX")
    np.testing.assert_array_equal(X[:, 0], [10, 11, 12])
    np.testing.assert_array_equal(y, [2, 3, 4])
