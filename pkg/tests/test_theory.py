import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilinkoop.basis import build_basis
from bilinkoop.koopman_id import extract, fit_koopman
from bilinkoop.realization import PredictionEpisode, prediction_error
from bilinkoop.theory import (Polynomial, PolyControlAffineField, check_bilinear, check_linear,
                              classify, field_snapshots, format_field, lie_derivative,
                              parse_field, rebuild_lie_derivatives, simulate_field)

LINEAR = "1 : 1 * x2\n2 : -1 * x1\n2 : -0.5 * x2\n2 : 1 * u1\n"
BILINEAR = "1 : -1 * x1\n1 : 1 * x1 * u1\n"
QUADRATIC = "1 : 1 * x1^2\n"
DUFFING = "1 : 1 * x2\n2 : -1 * x1\n2 : -1 * x1^3\n2 : 1 * u1\n"


def certificate_is_exact(fld, cert):
    drift, inputs = rebuild_lie_derivatives(cert, fld.n, fld.m)
    for i, mi in enumerate(cert.monomials):
        z = Polynomial.monomial(mi)
        for got, exact in [(drift[i], lie_derivative(z, fld.Fx))] + \
                [(inputs[i][j], lie_derivative(z, fld.Fu[j])) for j in range(fld.m)]:
            diff = got - exact
            if diff.max_abs_coefficient() > 1e-12:
                return False
    return True


def test_linear_system_is_linear():
    fld = parse_field(LINEAR)
    cert = check_linear(fld, 1)
    assert cert.verdict == "linear" and certificate_is_exact(fld, cert)
    assert np.allclose(cert.A[:2, :2], [[0, 1], [-1, -0.5]])
    assert np.allclose(cert.B[:, 0], [0, 1, 0])
    # higher degree observables pick up state-dependent input terms
    assert check_linear(fld, 2).verdict == "neither"
    assert check_bilinear(fld, 2).verdict == "bilinear"


@pytest.mark.parametrize("rho", range(1, 7))
def test_scalar_bilinear_is_bilinear_not_linear(rho):
    fld = parse_field(BILINEAR)
    assert check_linear(fld, rho).verdict == "neither"
    cert = check_bilinear(fld, rho)
    assert cert.verdict == "bilinear" and certificate_is_exact(fld, cert)
    # d/dt x^k = -k x^k + k x^k u
    for i, mi in enumerate(cert.monomials):
        k = mi.degree
        assert cert.A[i, i] == -k and cert.H[0, i, i] == k


@pytest.mark.parametrize("rho", range(1, 7))
def test_quadratic_drift_is_neither(rho):
    cert = classify(parse_field(QUADRATIC, m=0), rho)
    assert cert.verdict == "neither"
    top = [r for r in cert.residual_monomials if r.observable.degree == rho]
    assert top and top[0].monomial.degree == rho + 1 and top[0].coefficient == rho


def test_duffing_is_neither_with_named_residuals():
    cert = classify(parse_field(DUFFING), 3)
    assert cert.verdict == "neither"
    found = {(str(r.observable), str(r.monomial)): r.coefficient for r in cert.residual_monomials}
    assert found[("x1*x2", "x1^4")] == -1.0
    assert found[("x2^2", "x1^3*x2")] == -2.0
    assert all(r.source == "drift" for r in cert.residual_monomials)
    assert cert.to_dict()["verdict"] == "neither"


def test_certificate_text():
    cert = check_bilinear(parse_field(BILINEAR), 2)
    d = cert.to_dict()
    assert d["verdict"] == "bilinear" and d["monomials"] == ["x1", "1", "x1^2"]
    assert ["u1", "x1", "x1", 1.0] in d["h"]
    assert cert.to_text().startswith("{")


poly_terms = st.dictionaries(
    st.tuples(st.integers(0, 2), st.integers(0, 2)),
    st.integers(-3, 3).map(float), max_size=4)


@settings(max_examples=50, deadline=None)
@given(poly_terms, poly_terms, poly_terms, poly_terms)
def test_lie_derivative_leibniz(p_terms, q_terms, f1, f2):
    p, q = Polynomial(2, p_terms), Polynomial(2, q_terms)
    fcol = [Polynomial(2, f1), Polynomial(2, f2)]
    lhs = lie_derivative(p * q, fcol)
    rhs = p * lie_derivative(q, fcol) + q * lie_derivative(p, fcol)
    assert (lhs - rhs).max_abs_coefficient() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-3, 3).map(float), min_size=12, max_size=12), st.integers(1, 4))
def test_linear_drift_with_linear_input_fields_is_bilinear(c, rho):
    """Affine-in-state drift and input vector fields stay in every degree-rho span."""
    x1, x2 = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    col = lambda a: [a[0] * x1 + a[1] * x2 + a[2], a[3] * x1 + a[4] * x2 + a[5]]
    fld = PolyControlAffineField(col(c[:6]), [col(c[6:])])
    cert = check_bilinear(fld, rho)
    assert cert.verdict == "bilinear" and certificate_is_exact(fld, cert)


def test_polynomial_evaluation_and_format_round_trip():
    fld = parse_field(DUFFING)
    again = parse_field(format_field(fld))
    assert again.Fx == fld.Fx and again.Fu == fld.Fu
    x = np.array([[0.5, -1.0], [2.0, 0.1]])
    u = np.array([[0.3], [-1.0]])
    expected = np.column_stack([x[:, 1], -x[:, 0] - x[:, 0] ** 3 + u[:, 0]])
    assert np.allclose(fld(x, u), expected)


@pytest.mark.parametrize("bad", ["x : 1", "1 : a * x1", "1 : 1 * y2", "1 : 1 * u1 * u2",
                                 "1 : 1 * u1^2", "0 : 1 * x1", ""])
def test_parse_errors(bad):
    with pytest.raises(ValueError):
        parse_field(bad)


def test_field_simulation_matches_closed_form():
    fld = parse_field(BILINEAR)
    X = simulate_field(fld, [1.5], np.full((10, 1), 0.4), 0.05)
    assert np.allclose(X[:, 0], 1.5 * np.exp(-0.6 * 0.05 * np.arange(11)), rtol=1e-12)


def test_bilinear_certificate_cross_validates_with_identification():
    fld = parse_field("1 : -1 * x1\n1 : 0.5 * x1 * u1\n1 : 1 * u1\n")
    assert check_bilinear(fld, 2).verdict == "bilinear"
    Ts = 0.01
    ds = field_snapshots(fld, 2000, Ts, x_range=1.0, u_range=0.05, seed=0)
    model = extract(fit_koopman(ds, build_basis("bilinear", 1, 1, 2), ridge=0.0))
    rng = np.random.default_rng(1)
    eps = []
    for _ in range(5):
        x0, U = rng.uniform(-1, 1, 1), rng.uniform(-0.05, 0.05, (30, 1))
        eps.append(PredictionEpisode(x0, U, simulate_field(fld, x0, U, Ts)))
    assert prediction_error(model, eps).normalized_error < 1e-4


def test_polynomial_basics():
    x = Polynomial.variable(2, 0)
    p = 3 * x * x - 2
    assert p.degree == 2 and p.coefficient((2, 0)) == 3.0 and p.coefficient((0, 0)) == -2.0
    assert str(p) == "-2 + 3*x1^2"
    assert (p - p).is_zero()
    with pytest.raises(ValueError):
        p + Polynomial.variable(3, 0)
    with pytest.raises(ValueError):
        check_linear(parse_field(LINEAR), 0)
