import json
from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone

from spare.analytics import (
    GridRow,
    analytic_benign_failed_fraction,
    analytic_malicious_failed_fraction,
    cell_seed,
    export,
    first_error_positions,
    heatmap_slice,
    load_table3,
    median_first_error,
    read_first_errors,
    read_grid_rows,
    summarize,
    sweep_grid,
    write_first_errors,
    write_grid_rows,
)
from spare.config import load_preset
from spare.engine import run_preset
from spare.exceptions import SchemaError, SingularDesign
from spare.regression import FailureRateRegression, design_matrix, fit_linear, fit_poly2, ols, r_squared, rows_to_xy

# hand sums: 25+...+45 = 735; excess over R=30 is 1+...+15 = 120
@pytest.mark.parametrize("R, frac", [(30, Fraction(120, 735)), (35, Fraction(55, 735)), (40, Fraction(15, 735)), (45, 0), (20, Fraction(735 - 21 * 20, 735))])
def test_analytic_benign(R, frac):
    assert analytic_benign_failed_fraction(R, 25, 45) == pytest.approx(float(frac), abs=1e-15)


def test_analytic_malicious():
    assert analytic_malicious_failed_fraction(100, 10, 30, 35) == pytest.approx(1 - 300 / 3500)
    assert analytic_malicious_failed_fraction(10, 10, 40, 35) == 0.0
    with pytest.raises(ValueError):
        analytic_malicious_failed_fraction(0, 1, 1, 1)


def test_table3_fixture():
    rows = load_table3()
    assert len(rows) == 27
    assert {(r.users, r.devices, r.threshold) for r in rows} == {
        (u, d, t) for u in (100, 200, 300) for d in (10, 20, 30) for t in (30, 35, 40)
    }
    assert all(r.successful + r.failed == r.total for r in rows)


def test_grid_row_checks_totals():
    with pytest.raises(ValueError):
        GridRow(1, 1, 1, 10, 3, 3)


def test_grid_csv_round_trip(tmp_path):
    rows = load_table3()
    p = tmp_path / "g.csv"
    write_grid_rows(rows, p)
    assert read_grid_rows(p) == rows
    export(rows, tmp_path / "g.json", "json")
    doc = json.loads((tmp_path / "g.json").read_text())
    assert [GridRow(**{k: v for k, v in d.items() if k != "failed_fraction"}) for d in doc] == rows
    p.write_text("users,devices\n1,2\n")
    with pytest.raises(SchemaError):
        read_grid_rows(p)


def test_heatmap_slice():
    rows = load_table3()
    sl = heatmap_slice(rows, threshold=30)
    assert len(sl) == 9 and all(r.threshold == 30 for r in sl)
    assert len(heatmap_slice(rows, users=100, devices=10)) == 3


def test_summarize_and_first_errors(tmp_path):
    r = run_preset("case4_moderate")
    s = summarize(r.records)
    assert (s.total, s.successful, s.failed) == (r.requests, r.accepted, r.rejected)
    firsts = first_error_positions(r.records)
    assert firsts == {u: d["first_error_index"] for u, d in r.per_user.items()}
    assert first_error_positions(r.records, malicious=False) == {}
    assert median_first_error(r.records, malicious=True) is not None

    p = tmp_path / "fe.csv"
    write_first_errors(r.records, p)
    back = read_first_errors(p)
    assert [(d["user_id"], d["first_error_index"]) for d in back] == sorted(firsts.items())
    assert all(d["is_malicious"] for d in back)


def test_cell_seed_ignores_threshold_only():
    assert cell_seed(1, 100, 10) == cell_seed(1, 100, 10)
    assert len({cell_seed(1, u, d) for u in (100, 200) for d in (10, 20)}) == 4


def test_small_sweep_respects_capacity():
    base = load_preset("table3_malicious")
    rows = sweep_grid([20, 40], [2, 4], [30, 35], base)
    assert len(rows) == 8
    for r in rows:
        assert r.successful <= r.devices * r.threshold
    with pytest.raises(ValueError):
        sweep_grid([], [1], [1], base)


def test_export_report_and_fit(tmp_path):
    r = run_preset("case1_benign")
    export(r, tmp_path / "r.json", "json")
    assert json.loads((tmp_path / "r.json").read_text()) == json.loads(r.to_json())
    with pytest.raises(ValueError):
        export(r, tmp_path / "r.csv", "csv")
    fit = fit_linear(load_table3())
    export(fit, tmp_path / "f.json", "json")
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["terms"] == ["1", "U", "D", "T"]
    assert doc["r_squared"] == pytest.approx(fit.r_squared)
    with pytest.raises(ValueError):
        export(load_table3(), tmp_path / "x", "xml")


# regression

def test_design_matrix_order():
    A = design_matrix([[2.0, 3.0, 5.0]], 2)
    assert A.tolist() == [[1, 2, 3, 5, 4, 6, 10, 9, 15, 25]]


def test_ols_matches_svd_oracle():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 300, size=(40, 3))
    y = rng.normal(size=40)
    for degree in (1, 2):
        A = design_matrix(X, degree)
        expected = np.linalg.lstsq(A, y, rcond=None)[0]
        assert np.allclose(ols(A, y), expected, rtol=1e-8, atol=1e-10)


def test_table3_fits_match_svd_oracle():
    rows = load_table3()
    X, y = rows_to_xy(rows)
    for fit, degree in ((fit_linear(rows), 1), (fit_poly2(rows), 2)):
        A = design_matrix(X, degree)
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
        assert np.allclose(fit.coefficients, beta, rtol=1e-6, atol=1e-12)
        resid = y - A @ beta
        assert fit.r_squared == pytest.approx(1 - resid @ resid / np.sum((y - y.mean()) ** 2), abs=1e-12)
        # residuals are orthogonal to every design column
        own = y - fit.predict(X[:, 0], X[:, 1], X[:, 2])
        assert np.max(np.abs(A.T @ own) / np.linalg.norm(A, axis=0)) < 1e-9


def test_poly2_never_worse_than_linear():
    rows = load_table3()
    assert fit_poly2(rows).r_squared >= fit_linear(rows).r_squared


def test_exact_fit():
    X = np.array([[u, d, t] for u in (1, 2, 3) for d in (4, 5) for t in (6, 8)], dtype=float)
    y = 2 * X[:, 0]
    est = FailureRateRegression().fit(X, y)
    assert np.allclose(est.coef_, [0, 2, 0, 0], atol=1e-10)
    assert est.r2_ == pytest.approx(1.0)
    assert est.score(X, y) == pytest.approx(1.0)


def test_constant_target():
    X = np.array([[u, d, t] for u in (1, 2) for d in (4, 5) for t in (6, 8)], dtype=float)
    est = FailureRateRegression().fit(X, np.full(len(X), 0.3))
    assert est.r2_ == 1.0
    assert est.intercept_ == pytest.approx(0.3)
    assert r_squared(np.ones(3), np.zeros(3)) == 0.0


def test_singular_design():
    X = np.array([[1.0, 2.0, 3.0]] * 6)
    with pytest.raises(SingularDesign):
        FailureRateRegression().fit(X, np.arange(6.0))
    with pytest.raises(SingularDesign):
        FailureRateRegression(degree=2).fit(X[:4] + np.arange(4)[:, None], np.arange(4.0))
    with pytest.raises(SingularDesign):
        fit_linear(load_table3()[:4])


def test_estimator_protocol():
    est = FailureRateRegression(degree=2)
    assert clone(est).get_params() == {"degree": 2}
    with pytest.raises(ValueError):
        FailureRateRegression(degree=3).fit(np.ones((5, 3)), np.ones(5))
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        FailureRateRegression().predict([[1, 2, 3]])
    X, y = rows_to_xy(load_table3())
    fitted = FailureRateRegression().fit(X, y)
    with pytest.raises(ValueError):
        fitted.predict([[1, 2]])
    assert fitted.predict(X).shape == (27,)
