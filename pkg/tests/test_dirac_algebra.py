import numpy as np
import pytest

from deltashell.dirac_algebra import (
    ALPHA,
    BETA,
    I4,
    SpectralParameter,
    alpha_dot,
    kernel_split,
    phi_a,
    riesz_kernel,
)

RNG = np.random.default_rng(7)


def test_clifford_relations_exact():
    for i in range(3):
        for j in range(3):
            anti = ALPHA[i] @ ALPHA[j] + ALPHA[j] @ ALPHA[i]
            want = 2.0 * I4 if i == j else np.zeros((4, 4))
            assert np.array_equal(anti, want)
        assert np.array_equal(ALPHA[i] @ BETA + BETA @ ALPHA[i], np.zeros((4, 4)))
        assert np.array_equal(ALPHA[i], ALPHA[i].conj().T)
    assert np.array_equal(BETA @ BETA, I4)
    assert np.array_equal(BETA, BETA.conj().T)


def test_branch_selection_and_rejections():
    assert SpectralParameter(0.5, 1.0).branch == pytest.approx(np.sqrt(0.75))
    assert SpectralParameter(2.0 + 1.0j, 1.0).branch.real > 0
    assert SpectralParameter(-3.0j, 0.0).branch.real > 0
    # degenerate massless threshold is admitted with w = 0
    assert SpectralParameter(0.0, 0.0).branch == 0.0
    for bad_a, m in [(1.5, 1.0), (1.0, 1.0), (-1.0, 1.0), (0.3, 0.0)]:
        with pytest.raises(ValueError):
            SpectralParameter(bad_a, m)
    with pytest.raises(ValueError):
        SpectralParameter(0.5, -1.0)


def test_phi_known_entry():
    # at a=0, m=1, x=e1: diagonal carries e^{-1}/(4 pi)
    sp = SpectralParameter(0.0, 1.0)
    val = phi_a(sp, np.array([1.0, 0.0, 0.0]))
    assert val[0, 0] == pytest.approx(0.029274915762159584, abs=1e-15)
    assert val[3, 3] == pytest.approx(-0.029274915762159584, abs=1e-15)


def test_phi_solves_dirac_equation():
    sp = SpectralParameter(0.4 + 0.2j, 1.0)
    h = 1e-4
    for x in ([0.7, -0.3, 0.5], [1.2, 0.1, -0.4], [-0.2, 0.9, 0.33]):
        x = np.array(x)
        grad = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            grad.append((phi_a(sp, x + e) - phi_a(sp, x - e)) / (2 * h))
        residual = (
            -1j * sum(ALPHA[k] @ grad[k] for k in range(3))
            + sp.m * (BETA @ phi_a(sp, x))
            - sp.a * phi_a(sp, x)
        )
        assert np.max(np.abs(residual)) < 1e-6


def test_kernel_split_sums_to_phi():
    sp = SpectralParameter(0.3, 1.0)
    ks = kernel_split(sp)
    xs = RNG.normal(size=(20, 3))
    total = ks.omega1(xs) + ks.omega2(xs) + ks.omega3(xs)
    assert np.max(np.abs(total - phi_a(sp, xs))) < 1e-13


def test_conjugation_symmetry():
    sp = SpectralParameter(0.5 + 0.3j, 1.0)
    xs = RNG.normal(size=(10, 3))
    lhs = np.conj(np.swapaxes(phi_a(sp, xs), -1, -2))
    rhs = phi_a(sp.conjugate(), -xs)
    assert np.max(np.abs(lhs - rhs)) < 1e-14


def test_massless_threshold_kernel_is_odd():
    sp = SpectralParameter(0.0, 0.0)
    ks = kernel_split(sp)
    xs = RNG.normal(size=(10, 3))
    assert np.max(np.abs(phi_a(sp, xs) - ks.omega3(xs))) < 1e-15
    assert np.max(np.abs(phi_a(sp, xs) + phi_a(sp, -xs))) < 1e-15


def test_riesz_kernel_values_and_oddness():
    x = np.array([0.0, 2.0, 0.0])
    got = riesz_kernel(x)
    assert np.allclose(got, [0.0, 1.0 / (16.0 * np.pi), 0.0])
    xs = RNG.normal(size=(15, 3))
    assert np.max(np.abs(riesz_kernel(xs) + riesz_kernel(-xs))) < 1e-16
    r = np.linalg.norm(xs, axis=1)
    assert np.allclose(np.linalg.norm(riesz_kernel(xs), axis=1), 1.0 / (4 * np.pi * r**2))


def test_singularity_guard():
    sp = SpectralParameter(0.0, 1.0)
    for bad in (np.zeros(3), np.array([1e-13, 0, 0])):
        with pytest.raises(ValueError):
            phi_a(sp, bad)
        with pytest.raises(ValueError):
            riesz_kernel(bad)


def test_exponential_decay_rate():
    sp = SpectralParameter(0.6, 1.0)
    w = sp.branch.real
    e = np.array([1.0, 2.0, 2.0]) / 3.0
    ts = np.array([2.0, 4.0, 8.0, 16.0])
    norms = np.array([np.linalg.norm(phi_a(sp, t * e), 2) for t in ts])
    # r * e^{w r} * |phi| should stay bounded and roughly constant
    scaled = ts * np.exp(w * ts) * norms
    assert np.all(scaled < 1.0)
    assert scaled.max() / scaled.min() < 1.5


def test_odd_part_calderon_zygmund_bounds():
    # |omega3| <= C/|x|^2 and |grad omega3| <= C/|x|^3 with a lazy C = 10
    sp = SpectralParameter(0.2, 1.0)
    om3 = kernel_split(sp).omega3
    h = 1e-6
    for _ in range(25):
        x = RNG.normal(size=3)
        x *= RNG.uniform(0.1, 5.0) / np.linalg.norm(x)
        r = np.linalg.norm(x)
        assert np.linalg.norm(om3(x), 2) <= 10.0 / r**2
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            d = np.linalg.norm((om3(x + e) - om3(x - e)) / (2 * h), 2)
            assert d <= 10.0 / r**3


def test_omega2_is_only_mildly_singular():
    sp = SpectralParameter(0.5, 1.0)
    om2 = kernel_split(sp).omega2
    w = abs(sp.branch)
    for r in (1e-2, 1e-3, 1e-4):
        x = np.array([r, 0.0, 0.0])
        assert np.linalg.norm(om2(x), 2) <= 1.01 * w / (4 * np.pi * r)


def test_alpha_dot_square_is_norm():
    xs = RNG.normal(size=(8, 3))
    ad = alpha_dot(xs)
    sq = np.einsum("nij,njk->nik", ad, ad)
    r2 = np.sum(xs * xs, axis=1)
    assert np.max(np.abs(sq - r2[:, None, None] * I4)) < 1e-14
