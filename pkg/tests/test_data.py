import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ubsr.data import (
    CovarianceNotPSD,
    ReturnsTable,
    SyntheticSpec,
    clean_returns,
    generate_synthetic,
    ingest_csv,
    loo_zscores,
    read_vector_csv,
    write_csv,
    write_vector_csv,
)
from ubsr.errors import AllMissingColumnError, ParseError


def test_two_asset_moments():
    spec = SyntheticSpec(n=2, m=10)
    np.testing.assert_allclose(spec.means(), [0.05, 0.50])
    np.testing.assert_allclose(spec.stds(), [0.10, 0.55])
    assert spec.correlation()[0, 1] == pytest.approx(0.35 * math.sqrt(0.10 * 0.55))
    assert spec.correlation()[0, 1] == pytest.approx(0.0820823, abs=1e-7)


def test_means_increasing_and_evenly_spaced():
    m = SyntheticSpec(n=11, m=1).means()
    np.testing.assert_allclose(np.diff(m), 0.045)
    assert m[0] == 0.05 and m[-1] == pytest.approx(0.50)


@given(st.integers(1, 60))
def test_covariance_is_psd_for_default_recipe(n):
    cov = SyntheticSpec(n=n, m=1).covariance()
    np.testing.assert_allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-12


def test_sample_means_within_three_sigma():
    spec = SyntheticSpec(n=3, m=1_000_000, seed=7)
    R = generate_synthetic(spec).returns
    se = spec.stds() / math.sqrt(spec.m)
    assert np.all(np.abs(R.mean(axis=0) - spec.means()) <= 3 * se)
    np.testing.assert_allclose(np.corrcoef(R.T), spec.correlation(), atol=5e-3)


def test_generation_is_deterministic():
    a = generate_synthetic(SyntheticSpec(n=4, m=50, seed=3)).returns
    b = generate_synthetic(SyntheticSpec(n=4, m=50, seed=3)).returns
    assert a.tobytes() == b.tobytes()
    c = generate_synthetic(SyntheticSpec(n=4, m=50, seed=4)).returns
    assert not np.array_equal(a, c)


def test_non_psd_covariance_warns_and_clips():
    spec = SyntheticSpec(n=3, m=10, corr_coef=3.0)
    with pytest.warns(CovarianceNotPSD):
        R = generate_synthetic(spec).returns
    assert np.isfinite(R).all()


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(n=0, m=3)
    with pytest.raises(ValueError):
        SyntheticSpec(n=2, m=0)


def _write(tmp_path, text, name="r.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_mean_imputation(tmp_path):
    for text in ("a\n1\n2\n\n", "a\n1\n2\nNA\n"):
        t = ingest_csv(_write(tmp_path, text))
        np.testing.assert_allclose(t.returns[:, 0], [1, 2, 1.5])
    t = ingest_csv(_write(tmp_path, "a,b\n1,5\n2,\n,7\n"))
    np.testing.assert_allclose(t.returns, [[1, 5], [2, 6], [1.5, 7]])


def test_clean_table_is_identity(tmp_path):
    R = np.array([[0.01, -0.02], [0.03, 0.0], [-0.01, 0.02]])
    p = tmp_path / "clean.csv"
    write_csv(ReturnsTable(R, ["x", "y"]), p)
    t = ingest_csv(p)
    assert t.returns.tobytes() == R.tobytes()
    assert t.labels == ["x", "y"]
    write_csv(t, tmp_path / "again.csv")
    assert ingest_csv(tmp_path / "again.csv").returns.tobytes() == R.tobytes()


def test_outlier_nulled_then_imputed():
    X = clean_returns(np.array([[0.0], [0.0], [0.0], [100.0]]), ["a"], 3.0)
    np.testing.assert_array_equal(X[:, 0], [0, 0, 0, 0])


def test_outlier_cutoff_none_keeps_values():
    X = clean_returns(np.array([[0.0], [0.0], [0.0], [100.0]]), ["a"], None)
    assert X[3, 0] == 100.0


def test_loo_zscores_by_hand():
    z = loo_zscores(np.array([1.0, 2.0, 3.0, 10.0]))
    others = np.array([1.0, 2.0, 3.0])
    assert z[3] == pytest.approx((10 - others.mean()) / others.std())
    assert np.all(loo_zscores(np.array([1.0, math.nan])) == 0)


def test_date_column_dropped(tmp_path):
    t = ingest_csv(_write(tmp_path, "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n"))
    assert t.labels == ["a", "b"]
    np.testing.assert_array_equal(t.returns, [[1, 2], [3, 4]])


def test_parse_error_reports_location(tmp_path):
    with pytest.raises(ParseError) as exc:
        ingest_csv(_write(tmp_path, "a,b\n1,2\n3,oops\n"))
    assert (exc.value.row, exc.value.column) == (3, 2)
    with pytest.raises(ParseError) as exc:
        ingest_csv(_write(tmp_path, "a,b\n1,2\n3\n"))
    assert exc.value.row == 3


def test_all_missing_column(tmp_path):
    with pytest.raises(AllMissingColumnError):
        ingest_csv(_write(tmp_path, "a,b\n1,\n2,NaN\n"))


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        ingest_csv(tmp_path / "nope.csv")


def test_vector_csv_round_trip(tmp_path):
    v = np.array([0.1, -2.5, 1e-300])
    write_vector_csv(v, tmp_path / "v.csv")
    assert read_vector_csv(tmp_path / "v.csv").tobytes() == v.tobytes()
    np.testing.assert_array_equal(read_vector_csv(_write(tmp_path, "1\n2\n", "h.csv")), [1, 2])


def test_table_validation():
    with pytest.raises(ValueError):
        ReturnsTable(np.array([[1.0, math.nan]]))
    with pytest.raises(ValueError):
        ReturnsTable(np.zeros((2, 2)), ["only-one"])
