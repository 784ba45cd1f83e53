import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsource import spectral
from fracsource.errors import ZeroFindingFailed
from fracsource.spectral import (
    AdmissibleSourceConfig,
    EigenSystem,
    eval_eigenfunction,
    find_eigenvalues,
    mode_pairing,
    pairing_matrix,
    project_source,
    synthesize,
)
from oracles import mp_ml, winding_bisection

BETAS = [1.3, 1.5, 1.7]


def test_classical_limit_eigenvalues(systems):
    s = systems(2.0, 10)
    n = np.arange(1, 11)
    assert np.allclose(s.lambdas, -(n * np.pi) ** 2, rtol=1e-8, atol=0)
    assert s.real_mask.all()
    assert s.signed_indices() == list(range(1, 11))


def test_classical_limit_eigenfunction_and_pairing(systems):
    s = systems(2.0, 10)
    assert eval_eigenfunction(s, 1, "primal", 0.5) == pytest.approx(1 / np.pi, rel=1e-12)
    x = np.linspace(0, 1, 11)
    assert np.allclose(eval_eigenfunction(s, 3, "primal", x), np.sin(3 * np.pi * x) / (3 * np.pi), atol=1e-14)
    for n in range(1, 11):
        ref = (-1) ** (n + 1) / (2 * n**2 * np.pi**2)
        assert mode_pairing(s, n) == pytest.approx(ref, rel=1e-10)


def test_lambda1_matches_winding_bisection():
    s = find_eigenvalues(1.5, 3)
    f = lambda z: mp_ml(1.5, 1.5, z)  # noqa: E731
    lam = s.lambdas[0]
    ref = winding_bisection(f, lam.real - 0.37, lam.real + 0.41, -0.29, 0.33)
    assert abs(lam - ref) < 1e-9


def test_complex_zero_matches_winding_bisection(systems):
    s = systems(1.3)
    lam = s.lambdas[1]
    assert lam.imag > 0
    f = lambda z: mp_ml(1.3, 1.3, z)  # noqa: E731
    ref = winding_bisection(f, lam.real - 0.5, lam.real + 0.6, lam.imag - 0.45, lam.imag + 0.55, tol=1e-9)
    assert abs(lam - ref) < 1e-8


@pytest.mark.parametrize("beta", BETAS)
def test_sector_ordering_residual_certificate(systems, beta):
    s = systems(beta)
    lam = s.lambdas
    assert np.all(np.abs(np.angle(lam)) > beta * np.pi / 2)
    assert np.all(np.diff(np.abs(lam)) > 0)
    assert np.all(lam.imag >= 0)
    assert max(p.residual for p in s.pairs) <= s.zero_tol
    assert np.all(np.abs(s.derivs) > s.zero_tol)
    assert s.certificate is not None and s.certificate.ok
    assert s.certificate.expected == 40


@pytest.mark.parametrize("beta", BETAS)
def test_growth_bounded(systems, beta):
    # |lam_n| = O(n**beta): the ratio stays within a fixed band
    s = systems(beta)
    r = np.abs(s.lambdas) / np.arange(1, 41) ** beta
    assert r.max() / r.min() < 3


@pytest.mark.parametrize("beta", BETAS)
def test_growth_flat_in_pair_index(systems, beta):
    s = systems(beta)
    m = s.pair_index()
    assert m[-1] <= len(s) and np.all(np.diff(m) > 0)
    r = (np.abs(s.lambdas) / m**beta)[m >= m[-1] / 2]
    assert r.max() / r.min() < 1.05


def test_real_zero_counted_once(systems):
    s = systems(1.5)
    real = s.real_mask
    assert real[:5].all() and not real[5:].any()
    assert len(s.signed_indices(10)) == 5 + 2 * 5
    assert s.mode_weights(7).tolist() == [1, 1, 1, 1, 1, 2, 2]


def test_boundary_values(systems):
    s = systems(1.5)
    for n in (1, 6, -6, 12):
        assert abs(eval_eigenfunction(s, n, "primal", 1.0)) <= s.zero_tol
        assert abs(eval_eigenfunction(s, n, "adjoint", 0.0)) <= s.zero_tol
        assert eval_eigenfunction(s, n, "primal", 0.0) == 0
        x = np.array([0.1, 0.4, 0.8])
        assert np.allclose(eval_eigenfunction(s, n, "adjoint", x),
                           np.conj(eval_eigenfunction(s, n, "primal", 1 - x)), rtol=1e-13)
    with pytest.raises(ValueError):
        eval_eigenfunction(s, 1, "dual", 0.5)
    with pytest.raises(IndexError):
        s.pair(41)


@pytest.mark.parametrize("beta", [1.5])
def test_bi_orthogonality(systems, beta):
    s = systems(beta)
    idx = s.signed_indices(10)
    P = pairing_matrix(s, idx, idx)
    off = P - np.diag(np.diag(P))
    assert np.abs(off).max() < 1e-8
    cf = np.array([s.pair(n).pairing for n in idx])
    assert np.max(np.abs(np.diag(P) - cf) / np.abs(cf)) < 1e-6


def test_pairing_quadrature_route(systems):
    s = systems(1.5)
    q = mode_pairing(s, 1, "quadrature")
    assert q == pytest.approx(mode_pairing(s, 1), rel=1e-6)
    with pytest.raises(ValueError):
        mode_pairing(s, 1, "monte_carlo")


def test_pairing_equals_series_derivative(systems):
    # <X_n, Y_n> = E'_{b,b}(lam_n)
    from fracsource.mlf import MLParams, eval_ml_derivative

    s = systems(1.7)
    for n in (1, 14, 30):
        d = eval_ml_derivative(MLParams(1.7, 1.7), s.pair(n).lam, method="series")
        assert d == pytest.approx(mode_pairing(s, n), rel=1e-8)


def test_project_zero(systems):
    s = systems(1.5)
    assert np.all(project_source(s, lambda x: 0 * x, 10) == 0)


def test_project_modes_round_trip(systems):
    s = systems(1.5)
    # a real mode and a conjugate pair
    for k in (1, 6):
        f = lambda x, k=k: s.mode_weights()[k - 1] * np.real(eval_eigenfunction(s, k, "primal", x))  # noqa: E731
        c = project_source(s, f, 12)
        expect = np.zeros(12)
        expect[k - 1] = 1
        assert np.max(np.abs(c - expect)) < 1e-6


def test_project_classical_sine_series(systems):
    s = systems(2.0, 10)
    c = project_source(s, lambda x: x * (1 - x), 10)
    n = np.arange(1, 11)
    ref = n * np.pi * 4 * (1 - (-1.0) ** n) / (n * np.pi) ** 3
    assert np.allclose(c, ref, rtol=1e-8, atol=1e-12)


def test_project_nodal_samples_match_callable(systems):
    s = systems(1.5)
    x = np.linspace(0, 1, 1001)
    c_fun = project_source(s, lambda t: t**2 * (1 - t), 12)
    c_nod = project_source(s, (x, x**2 * (1 - x)), 12)
    # the interpolant is O(h**2) away from f
    assert np.max(np.abs(c_fun - c_nod) / np.abs(c_fun)) < 1e-4


def test_nodal_projection_exact_for_linear_pieces(systems):
    from scipy.integrate import quad

    s = systems(1.3)
    x = np.array([0.0, 0.2, 0.5, 0.9, 1.0])
    v = np.array([0.0, 0.4, -0.1, 0.3, 0.0])
    c_nod = project_source(s, (x, v), 4)
    for n in range(1, 5):
        def part(t, which):
            y = np.interp(t, x, v) * np.conj(eval_eigenfunction(s, n, "adjoint", t))
            return y.real if which == 0 else y.imag
        re = quad(part, 0, 1, args=(0,), points=x[1:-1], limit=200, epsabs=1e-13)[0]
        im = quad(part, 0, 1, args=(1,), points=x[1:-1], limit=200, epsabs=1e-13)[0]
        ref = complex(re, im) / mode_pairing(s, n)
        assert c_nod[n - 1] == pytest.approx(ref, rel=1e-7)


def test_partial_sums_converge_in_interior(systems):
    s = systems(1.5)
    c = project_source(s, lambda t: t**2 * (1 - t), 40)
    # convergence is slow toward x = 0, where every X_n behaves like x**(beta-1)
    xs = np.linspace(0.5, 0.95, 40)
    ref = xs**2 * (1 - xs)
    errs = [np.sqrt(np.mean((synthesize(s, c[:n], xs) - ref) ** 2)) for n in (10, 20, 40)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 3e-3


def test_json_round_trip(tmp_path, systems):
    s = systems(1.3, 40)
    path = tmp_path / "eig.json"
    s.to_json(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"beta", "zero_tol", "pairs"}
    assert set(doc["pairs"][0]) == {"n", "lambda_re", "lambda_im", "pairing_re", "pairing_im",
                                    "deriv_re", "deriv_im", "residual"}
    back = EigenSystem.from_json(path)
    assert back.beta == s.beta
    assert np.array_equal(back.lambdas, s.lambdas)
    assert np.array_equal(back.pairings, s.pairings)


def test_missing_zero_detected(monkeypatch):
    real = spectral._real_zeros

    def drop_first(*args, **kwargs):
        return real(*args, **kwargs)[1:]

    monkeypatch.setattr(spectral, "_real_zeros", drop_first)
    with pytest.raises(ZeroFindingFailed):
        find_eigenvalues(1.5, 8)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        find_eigenvalues(1.5, 0)
    with pytest.raises(ValueError):
        EigenSystem(2.5, ())
    with pytest.raises(ValueError):
        AdmissibleSourceConfig(M=0)
    with pytest.raises(ValueError):
        AdmissibleSourceConfig(decay_exponent=-1)


def test_admissible_set_membership():
    cfg = AdmissibleSourceConfig(M=1.0, decay_exponent=2.0)
    n = np.arange(1, 30)
    assert cfg.contains(0.5 / n**2)
    assert not cfg.contains(1.0 / n)


@settings(max_examples=8, deadline=None)
@given(beta=st.floats(1.05, 1.98))
def test_spectrum_invariants_any_order(beta):
    s = find_eigenvalues(beta, 8)
    lam = s.lambdas
    assert s.certificate.ok
    assert np.all(np.abs(np.angle(lam)) > beta * math.pi / 2)
    assert np.all(np.diff(np.abs(lam)) > 0)
    assert np.all(np.abs(s.pairings) > 0)
