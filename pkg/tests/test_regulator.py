import math

import numpy as np
import pytest

from brsflow import regulator as rg
from brsflow.regulator import TheoryParams

P = TheoryParams(m=1.0, bigM=1.7, alpha=0.6, lambda0=40.0)
UNIT = TheoryParams(m=1.0, bigM=1.0, alpha=1.0, lambda0=10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        TheoryParams(m=0.0)
    with pytest.raises(ValueError):
        TheoryParams(lambda0=0.5)
    assert P.mu == pytest.approx(1.7)


def test_sigma_reference_values():
    assert rg.sigma(P.lambda0, 0.0, P) == 1.0
    assert rg.sigma(0.0, 2.5, P) == 0.0
    assert rg.sigma(0.0, 0.0, P) == 0.0
    assert rg.sigma(1.0, 1.0, UNIT) == pytest.approx(math.exp(-8.0), rel=1e-15)


def test_sigma_window_reference_values():
    assert rg.sigma_window(P.lambda0, P.lambda0, 3.0, P) == 0.0
    assert rg.sigma_window(0.0, P.lambda0, 0.0, P) == 1.0
    ref = math.exp(-8e-10) - math.exp(-8.0)
    assert rg.sigma_window(1.0, 10.0, 1.0, UNIT) == pytest.approx(ref, rel=1e-14)
    with pytest.raises(ValueError):
        rg.sigma_window(2.0, 1.0, 1.0, P)


def test_sigma_rejects_negative_arguments():
    with pytest.raises(ValueError):
        rg.sigma(-1.0, 1.0, P)
    with pytest.raises(ValueError):
        rg.sigma(1.0, -1.0, P)


def test_sigma_underflow_flag():
    val, flag = rg.sigma_flagged(1.0, 100.0, P)
    assert val == 0.0 and flag


def test_sigma_range_and_monotone():
    ksq = np.geomspace(1e-6, 1e3, 100)
    lams = np.geomspace(0.05, 40.0, 100)
    grid = np.array([rg.sigma(l, ksq, P) for l in lams])
    live = grid > 0
    assert np.all(grid <= 1.0) and live.sum() > 5000
    # strictly increasing in lambda wherever both neighbours are representable
    d = np.diff(grid, axis=0)
    both = (grid[1:] > 0) & (grid[:-1] > 0) & (grid[1:] < 1 - 1e-12)
    assert np.all(d[both] > 0)


def test_sigma_flat_at_origin():
    h = 1e-4 * P.m ** 2
    for lam in np.geomspace(2.0, P.lambda0, 12):
        fd = (rg.sigma_analytic(lam, h, P) - rg.sigma_analytic(lam, -h, P)) / (2 * h)
        assert abs(fd) < 1e-8


def test_sigma_difference_at_origin_is_pure_truncation():
    # the exact slope is zero; the central difference only sees the cubic term of P,
    # giving -h^2 e2 / lam^10 with e2 the second elementary symmetric mass polynomial
    m2, M2, a = P.m ** 2, P.bigM ** 2, P.alpha
    e2 = m2 * a * m2 + m2 * M2 + a * m2 * M2
    h = 1e-4 * m2
    for lam in (0.6, 0.9, 1.2):
        fd = (rg.sigma_analytic(lam, h, P) - rg.sigma_analytic(lam, -h, P)) / (2 * h)
        assert fd == pytest.approx(-h * h * e2 / lam ** 10, rel=1e-3)


def test_propagator_reference_values(rng):
    assert np.allclose(rg.propagator("AA", np.zeros(4), P), np.eye(4) / P.m ** 2)
    unit_alpha = P.replace(alpha=1.0)
    for _ in range(5):
        k = rng.normal(size=4)
        ksq = k @ k
        assert np.allclose(rg.propagator("AA", k, unit_alpha), np.eye(4) / (ksq + 1.0))
        c = rg.propagator("AA", k, P)
        assert np.array_equal(c, c.T)
        assert np.array_equal(c, rg.propagator("AA", -k, P))
        # componentwise contraction against the longitudinal closed form
        contracted = np.einsum("i,ij->j", k, c)
        assert np.allclose(contracted, P.alpha * k / (ksq + P.alpha * P.m ** 2))


def _window_difference(species, lam, k, h_rel=1e-5):
    """Central difference in lam of C(k) (sigma_lam0 - sigma_lam).

    Two exact rewrites of the window keep full relative precision: expm1 when
    both cutoffs are close to one, and dropping the lam-independent sigma_lam0
    when sigma_lam is small.
    """
    ksq = k @ k
    c = rg.propagator(species, k, P)
    p = rg.p_poly(ksq, P)
    x0 = p / P.lambda0 ** 10
    if p / lam ** 10 < 0.5:
        f = lambda l: c * (np.expm1(-x0) - np.expm1(-p / l ** 10))
    else:
        f = lambda l: -c * np.exp(-p / l ** 10)
    h = lam * h_rel
    return (f(lam + h) - f(lam - h)) / (2 * h)


def _kernel_samples(rng, n, xmax):
    """Random (lam, k) with cutoff exponent P/lam^10 at most xmax."""
    out = []
    while len(out) < n:
        lam = float(np.exp(rng.uniform(np.log(0.2), np.log(30.0))))
        k = rng.normal(size=4)
        k *= rng.uniform(0.02, 1.6) * lam / np.linalg.norm(k)
        if rg.p_poly(k @ k, P) / lam ** 10 <= xmax:
            out.append((lam, k))
    return out


@pytest.mark.parametrize("species", rg.SPECIES)
def test_flow_kernel_matches_lambda_difference(species, rng):
    # step lam*1e-5: the truncation error grows like (1e-5 * 10 x)^2 / 6 in the
    # exponent x = P/lam^10, so samples stop well before that reaches the tolerance
    worst = 0.0
    for lam, k in _kernel_samples(rng, 250, 15.0):
        an = rg.flow_kernel(species, lam, P.lambda0, k, P)
        fd = _window_difference(species, lam, k)
        worst = max(worst, float(np.max(np.abs(fd - an) / np.max(np.abs(an)))))
    assert worst < 1e-6


@pytest.mark.parametrize("species", ["AA", "ghost"])
def test_flow_kernel_deep_tail(species, rng):
    # far into the Gaussian tail a smaller step restores the agreement
    for lam, k in _kernel_samples(rng, 40, 600.0):
        an = rg.flow_kernel(species, lam, P.lambda0, k, P)
        fd = _window_difference(species, lam, k, h_rel=3e-7)
        assert np.max(np.abs(fd - an)) < 1e-6 * np.max(np.abs(an))


def _stencil(f, k, e, order):
    # fourth-order central differences
    if order == 1:
        return (-f(k + 2 * e) + 8 * f(k + e) - 8 * f(k - e) + f(k - 2 * e)) / 12
    return (-f(k + 2 * e) + 16 * f(k + e) - 30 * f(k) + 16 * f(k - e) - f(k - 2 * e)) / 12


@pytest.mark.parametrize("species", ["AA", "hh", "ghost"])
def test_flow_kernel_momentum_derivatives(species, rng):
    for lam, k in _kernel_samples(rng, 20, 15.0):
        # the exponent varies on the momentum scale |k| / (10 x)
        x = rg.p_poly(k @ k, P) / lam ** 10
        h = 1e-3 * min(lam, np.linalg.norm(k) / (1 + 10 * x))
        f = lambda q: rg.flow_kernel(species, lam, P.lambda0, q, P)
        for i in range(4):
            e = np.eye(4)[i] * h
            for order, tol in ((1, 1e-6), (2, 1e-5)):
                w = [0, 0, 0, 0]
                w[i] = order
                an = rg.flow_kernel(species, lam, P.lambda0, k, P, w)
                fd = _stencil(f, k, e, order) / h ** order
                assert np.max(np.abs(an - fd)) < tol * np.max(np.abs(an))


def test_flow_kernel_mixed_derivative(rng):
    for lam, k in _kernel_samples(rng, 10, 5.0):
        h = 1e-4 * np.linalg.norm(k)
        e0, e2 = np.eye(4)[0] * h, np.eye(4)[2] * h
        f = lambda q: rg.flow_kernel("AA", lam, P.lambda0, q, P)
        fd = (f(k + e0 + e2) - f(k + e0 - e2) - f(k - e0 + e2) + f(k - e0 - e2)) / (4 * h * h)
        an = rg.flow_kernel("AA", lam, P.lambda0, k, P, (1, 0, 1, 0))
        assert np.max(np.abs(an - fd)) < 1e-5 * np.max(np.abs(an))


def test_flow_kernel_vanishes_at_zero_momentum():
    for sp in rg.SPECIES:
        assert np.all(rg.flow_kernel(sp, 2.0, P.lambda0, np.zeros(4), P) == 0)


def test_flow_kernel_independent_of_lambda0(rng):
    k = rng.normal(size=4)
    for sp in rg.SPECIES:
        a = rg.flow_kernel(sp, 1.3, 5.0, k, P)
        b = rg.flow_kernel(sp, 1.3, 500.0, k, P)
        assert np.array_equal(a, b)


def test_flow_kernel_errors():
    with pytest.raises(ValueError):
        rg.flow_kernel("hh", 0.0, 10.0, np.ones(4), P)
    with pytest.raises(ValueError):
        rg.flow_kernel("hh", 1.0, 10.0, np.ones(4), P, (3, 2, 0, 0))
    with pytest.raises(ValueError):
        rg.flow_kernel("xx", 1.0, 10.0, np.ones(4), P)


def test_radial_components_match_tensor(rng):
    k = rng.normal(size=4)
    ksq = k @ k
    khat = k / np.sqrt(ksq)
    kern = rg.flow_kernel("AA", 1.1, P.lambda0, k, P)
    assert khat @ kern @ khat == pytest.approx(float(rg.flow_kernel_radial("L", 1.1, ksq, P)))
    t = np.array([-khat[1], khat[0], 0, 0]) / np.hypot(khat[0], khat[1])
    assert t @ kern @ t == pytest.approx(float(rg.flow_kernel_radial("T", 1.1, ksq, P)))


@pytest.mark.parametrize("species", rg.SPECIES)
def test_telescoping(species, rng):
    for _ in range(20):
        k = rng.normal(size=4)
        k *= np.exp(rng.uniform(np.log(0.05), np.log(30.0))) / np.linalg.norm(k)
        got, want = rg.telescope(species, k, P)
        assert np.allclose(got, want, rtol=1e-8, atol=1e-8 * np.max(np.abs(want)))


def test_telescoping_excludes_origin():
    with pytest.raises(ValueError):
        rg.telescope("hh", np.zeros(4), P)


def test_kernel_bound_report():
    rep = rg.kernel_bound_report(P.replace(lambda0=20.0))
    assert rep.ok, rep.max_ratio
    assert set(rep.fits) == {f"{s}/w{n}" for s in rg.SPECIES for n in range(3)}
    header = rep.to_csv().splitlines()[0]
    assert header == "Lambda,k,species,w,value,bound,ratio"


def test_scalar_bound_degree_six():
    # zeroth derivative, scalar species: an envelope of degree at most six suffices
    lams = np.geomspace(1.0001, 40.0, 16)
    xs = np.linspace(0.0, 5.0, 60)
    ys = []
    for lam in lams:
        val = np.abs(rg.flow_kernel_radial("h", lam, (xs * lam) ** 2, P)) * lam ** 3
        val = val / np.maximum(rg.sigma(lam, (xs * lam) ** 2, P), 1e-300)
        ys.append(np.where(rg.sigma(lam, (xs * lam) ** 2, P) > 0, val, 0.0))
    ys = np.concatenate(ys)
    x = np.tile(xs, len(lams))
    coef = rg._fit_envelope(x / 5.0, ys, 6)
    assert np.all(np.polyval(coef[::-1], x / 5.0) >= ys * (1 - 1e-9))
