import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltashell.coupling import (
    NonContractive,
    build_kv,
    closed_form_couplings,
    lambda_electrostatic,
    lambda_neumann,
    lambda_scalar,
    oddness_residual,
)
from deltashell.potential import (
    factorize,
    from_table,
    square_well,
    truncated_gaussian,
)


def kv_for_square(tau, eta, n=128):
    return build_kv(factorize(square_well(tau, eta)), n)


def test_zero_potential_gives_zero_matrix():
    p = from_table((-0.5, 0.5), (0.0, 0.0), eta=0.5)
    kv = build_kv(factorize(p), 64)
    assert np.all(kv.matrix == 0.0)
    assert kv.hs_norm == 0.0
    res = lambda_electrostatic(kv, factorize(p))
    assert res.lambda_e == 0.0 and res.lambda_s == 0.0


def test_node_count_guard():
    with pytest.raises(ValueError):
        build_kv(factorize(square_well(1.0, 0.1)), 7)


def test_hs_norm_square_well():
    # tau*eta = 0.2, so the kernel HS norm is half the L1 norm: 0.1
    kv = kv_for_square(2.0, 0.1)
    assert kv.hs_norm == pytest.approx(0.1, abs=1e-10)


def test_matrix_is_i_times_real():
    kv = kv_for_square(1.3, 0.7)
    assert np.all(kv.matrix.real == 0.0)


def test_weighted_frobenius_tracks_hs():
    kv = kv_for_square(1.0, 1.0)
    frob = np.sqrt(np.sum(kv.weights[:, None] * np.abs(kv.matrix) ** 2 / kv.weights[None, :]))
    assert frob == pytest.approx(kv.hs_norm, rel=0.1)


def test_apply_to_constant_matches_analytic():
    # K_V[1](t) = i (eta tau / 2) t for the square well
    tau, eta = 1.7, 0.9
    kv = kv_for_square(tau, eta)
    got = kv.apply(np.ones_like(kv.nodes))
    want = 1j * (eta * tau / 2.0) * kv.nodes
    assert np.max(np.abs(got - want)) < 1e-12


def test_first_order_oddness():
    kv = kv_for_square(1.1, 0.6)
    first = np.sum(kv.weights * kv.v_vals * kv.apply(kv.u_vals.astype(complex)))
    assert abs(first) < 1e-12


def test_lambda_electrostatic_closed_form():
    eta = np.pi / 2
    res = lambda_electrostatic(kv_for_square(1.0, eta), factorize(square_well(1.0, eta)))
    assert res.lambda_e == pytest.approx(2.0, abs=1e-9)
    assert res.method == "direct-solve"


def test_lambda_scalar_closed_form():
    res = lambda_scalar(kv_for_square(1.0, 1.0), factorize(square_well(1.0, 1.0)))
    assert res.lambda_s == pytest.approx(2.0 * np.tanh(0.5), abs=1e-9)
    assert res.lambda_s == pytest.approx(0.9242343145, abs=1e-9)


def test_weak_coupling_is_linear():
    theta = 1e-4
    res = lambda_electrostatic(kv_for_square(theta, 1.0), factorize(square_well(theta, 1.0)))
    assert abs(res.lambda_e - theta) <= 1e-11


def test_electro_scalar_agree_at_weak_coupling():
    theta = 1e-3
    res = lambda_electrostatic(kv_for_square(theta, 1.0), factorize(square_well(theta, 1.0)))
    assert abs(res.lambda_e - res.lambda_s) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0.05, 1.9))
def test_direct_matches_closed_form(theta):
    res = lambda_electrostatic(kv_for_square(theta, 1.0), factorize(square_well(theta, 1.0)))
    tan_val, tanh_val = closed_form_couplings(theta)
    assert res.lambda_e == pytest.approx(tan_val, abs=1e-9)
    assert res.lambda_s == pytest.approx(tanh_val, abs=1e-9)


def test_neumann_zeroth_term_is_integral():
    f = factorize(square_well(1.3, 0.4))
    kv = build_kv(f, 64)
    for sign in (+1, -1):
        res = lambda_neumann(kv, f, sign, 0)
        got = res.lambda_e if sign > 0 else res.lambda_s
        assert got == pytest.approx(1.3 * 0.4, abs=1e-13)


def test_neumann_agrees_with_direct():
    f = factorize(square_well(0.5, 1.0))
    kv = build_kv(f, 128)
    direct = lambda_electrostatic(kv, f)
    neu_e = lambda_neumann(kv, f, +1, 20)
    neu_s = lambda_neumann(kv, f, -1, 20)
    assert abs(neu_e.lambda_e - direct.lambda_e) < 1e-12
    assert abs(neu_s.lambda_s - direct.lambda_s) < 1e-12


def test_neumann_error_bound_holds_on_random_profiles():
    rng = np.random.default_rng(42)
    for _ in range(100):
        eta = rng.uniform(0.1, 1.5)
        m = rng.integers(3, 9)
        ts = np.sort(rng.uniform(-eta, eta, size=m))
        ts[0], ts[-1] = -eta, eta
        vs = rng.uniform(-1.0, 1.0, size=m)
        p = from_table(tuple(ts), tuple(vs), eta=eta)
        if p.l1_norm() < 1e-3:
            continue
        scale = rng.uniform(0.2, 1.5) / p.l1_norm()
        p = from_table(tuple(ts), tuple(scale * vs), eta=eta)
        f = factorize(p)
        kv = build_kv(f, 64)
        direct = lambda_electrostatic(kv, f)
        terms = int(rng.integers(1, 6))
        neu = lambda_neumann(kv, f, +1, terms)
        actual = abs(neu.lambda_e - direct.lambda_e)
        assert actual <= neu.residuals["error_bound"] + 1e-14


def test_neumann_rejects_noncontractive():
    f = factorize(square_well(2.5, 1.0))
    kv = build_kv(f, 64)
    assert kv.hs_norm == pytest.approx(1.25, abs=1e-10)
    with pytest.raises(NonContractive):
        lambda_neumann(kv, f, +1, 5)


def test_direct_survives_hs_above_one():
    # hs = 1.25 but the solve is still well conditioned; value matches tan
    theta = 2.5
    res = lambda_electrostatic(kv_for_square(theta, 1.0), factorize(square_well(theta, 1.0)))
    assert res.lambda_e == pytest.approx(2.0 * np.tan(theta / 2.0), abs=1e-8)


def test_direct_raises_at_near_singular_coupling():
    # place tau*eta a hair below the discrete pole of (1 - K^2)
    f1 = factorize(square_well(1.0, 1.0))
    kv1 = build_kv(f1, 128)
    rho = np.max(np.abs(np.linalg.eigvals(kv1.matrix))).real
    theta_star = 1.0 / rho
    f = factorize(square_well(theta_star * (1.0 - 1e-14), 1.0))
    kv = build_kv(f, 128)
    with pytest.raises(NonContractive):
        lambda_electrostatic(kv, f)


def test_oddness_identity_all_profiles():
    profiles = [
        square_well(1.0, 1.0),
        square_well(-1.7, 0.3),
        truncated_gaussian(2.0, 0.4, 0.9),
        # deliberately asymmetric sign-changing table
        from_table((-0.5, -0.2, 0.1, 0.35, 0.5), (0.8, -0.3, 1.1, 0.0, -0.6), eta=0.5),
    ]
    for p in profiles:
        kv = build_kv(factorize(p), 96)
        assert oddness_residual(kv) < 1e-10


def test_nonlinearity_witness():
    # the effective coupling visibly outruns the naive one at moderate strength
    for theta in np.arange(0.5, 1.4001, 0.1):
        res = lambda_electrostatic(kv_for_square(theta, 1.0), factorize(square_well(theta, 1.0)))
        assert abs(res.lambda_e - theta) >= theta**3 / 20.0


def test_grid_refinement_order():
    p = truncated_gaussian(1.5, 0.45, 0.8)
    f = factorize(p)
    lam = {n: lambda_electrostatic(build_kv(f, n), f).lambda_e for n in (16, 32, 64)}
    d1 = abs(lam[16] - lam[32])
    d2 = abs(lam[32] - lam[64])
    assert d1 / max(d2, 1e-16) >= 4.0


def test_table_sampled_square_well_near_closed_form():
    # dense linear-interpolation sampling of a square well: 1e-4 floor
    tau, eta = 1.0, 0.5
    ts = np.linspace(-eta, eta, 4001)
    vs = np.where(np.abs(ts) < eta, tau / 2.0, tau / 2.0)
    p = from_table(tuple(ts), tuple(vs), eta=eta)
    f = factorize(p)
    res = lambda_electrostatic(build_kv(f, 128), f)
    tan_val, _ = closed_form_couplings(tau * eta)
    assert res.lambda_e == pytest.approx(tan_val, abs=1e-4)


def test_closed_form_guard():
    with pytest.raises(ValueError):
        closed_form_couplings(np.pi)
