import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad
from scipy.special import betaln

from datamanifold.dataset import Dataset
from datamanifold.exceptions import NumericalError, PreconditionError
from datamanifold.id_estimation import (
    IdEstimate,
    IdScan,
    MuSample,
    _gride_fit,
    compute_mu,
    gride_log_likelihood,
    id_2nn_fit,
    id_2nn_mle,
    id_decimation,
    id_gride,
)
from datamanifold.neighbors import compute_neighbors
from datamanifold.synthetic import spiral

from conftest import uniform_graph


def pareto(d, n, rng):
    return rng.random(n) ** (-1.0 / d)


def gride_ratios(d, n1, n2, n, rng):
    """Ratios r_n2 / r_n1 of a homogeneous Poisson process in d dimensions.

    The ball volumes up to the k-th neighbor are partial sums of unit exponentials.
    """
    t1 = rng.gamma(n1, size=n)
    t2 = t1 + rng.gamma(n2 - n1, size=n)
    return (t2 / t1) ** (1.0 / d)


# --- compute_mu -----------------------------------------------------------------------


def test_mu_line(line_graph):
    s = compute_mu(line_graph)
    assert np.allclose(s.mu, [3, 2, 1.5])
    assert s.scale == pytest.approx(4 / 3)
    assert s.n == 3


def test_mu_equilateral_triangle_is_degenerate():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    g = compute_neighbors(Dataset(points=pts), maxk=2)
    # floating point may make the sides differ in the last bit; force exact ties
    g = type(g)(g.neighbor_idx, np.ones_like(g.neighbor_dist), g.metric, g.source)
    with pytest.raises(NumericalError, match="degenerate"):
        compute_mu(g)


def test_mu_pareto_distribution():
    _, g = uniform_graph(10_000, 2, 2, seed=11)
    mu = compute_mu(g).mu
    ks = stats.kstest(mu, lambda x: 1 - x**-2.0).statistic
    assert ks < 0.02


# --- 2NN ------------------------------------------------------------------------------


def test_mle_examples():
    assert id_2nn_mle(MuSample(np.full(4, math.e), 0)).id == pytest.approx(1.0)
    e = id_2nn_mle(MuSample(np.full(100, math.sqrt(math.e)), 0))
    assert e.id == pytest.approx(2.0) and e.id_err == pytest.approx(0.2)
    e = id_2nn_mle(MuSample(np.array([3, 2, 1.5]), 0))
    assert e.id == pytest.approx(3 / (math.log(3) + math.log(2) + math.log(1.5)), rel=1e-12)
    assert e.id == pytest.approx(1.3654, abs=1e-4)


def test_mle_errors():
    with pytest.raises(PreconditionError):
        id_2nn_mle(MuSample(np.array([2.0]), 0))
    with pytest.raises(NumericalError):
        id_2nn_mle(MuSample(np.ones(5), 0))


def test_fit_exact_pareto_quantiles():
    n = 100
    i = np.arange(1, n + 1)
    with np.errstate(divide="ignore"):
        mu = (1 - i / n) ** -0.5
    mu[-1] = 1e300  # the top quantile is infinite; it is discarded anyway
    assert id_2nn_fit(MuSample(mu, 0), 0.1).id == pytest.approx(2.0, abs=1e-6)


def test_fit_close_to_mle_on_common_sample():
    _, g = uniform_graph(1000, 2, 2, seed=12)
    s = compute_mu(g)
    mle, fit = id_2nn_mle(s).id, id_2nn_fit(s, 0.0).id
    assert abs(fit - mle) <= 0.25 * mle


def test_fit_needs_ten_ratios():
    with pytest.raises(PreconditionError):
        id_2nn_fit(MuSample(np.array([3, 2, 1.5]), 0), 0.0)


def test_fit_uniform_5d():
    # boundary effects pull single samples slightly low (mean about 4.72, sd 0.1)
    ids = [id_2nn_fit(compute_mu(uniform_graph(5000, 5, 2, seed=s)[1]), 0.1).id for s in range(20)]
    assert sum(4.5 <= v <= 5.5 for v in ids) >= 18


@pytest.mark.parametrize("d", [1, 2, 5, 10])
def test_mle_consistency_on_pareto(d):
    rng = np.random.default_rng(d)
    hits = 0
    for _ in range(1000):
        est = id_2nn_mle(MuSample(pareto(d, 10_000, rng), 0)).id
        hits += 0.97 * d <= est <= 1.03 * d
    assert hits >= 990


def test_mle_error_coverage():
    rng = np.random.default_rng(5)
    inside = 0
    for _ in range(400):
        e = id_2nn_mle(MuSample(pareto(3, 500, rng), 0))
        inside += abs(e.id - 3) <= e.id_err
    # one-sigma coverage of a normal is 68.3%
    assert 0.62 <= inside / 400 <= 0.75


def test_scale_equivariance():
    pts = np.random.default_rng(6).random((2000, 3))
    base = compute_mu(compute_neighbors(Dataset(points=pts), maxk=2))
    for c in (4.0, 0.125):  # powers of two scale every distance exactly
        s = compute_mu(compute_neighbors(Dataset(points=pts * c), maxk=2))
        assert id_2nn_mle(s).id == id_2nn_mle(base).id
        assert s.scale == pytest.approx(c * base.scale, rel=1e-14)
    s = compute_mu(compute_neighbors(Dataset(points=pts * 3.7), maxk=2))
    assert id_2nn_mle(s).id == pytest.approx(id_2nn_mle(base).id, rel=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(7)
    pts = rng.random((1500, 4))
    perm = rng.permutation(1500)
    a = id_2nn_mle(compute_mu(compute_neighbors(Dataset(points=pts), maxk=2)))
    b = id_2nn_mle(compute_mu(compute_neighbors(Dataset(points=pts[perm]), maxk=2)))
    assert a.id == pytest.approx(b.id, rel=1e-12)


# --- decimation -----------------------------------------------------------------------


def test_decimation_full_fraction_is_mle():
    pts, g = uniform_graph(500, 2, 2, seed=8)
    scan = id_decimation(Dataset(points=pts), fractions=[1.0], repeats=1)
    ref = id_2nn_mle(compute_mu(g))
    assert scan.estimates[0].id == ref.id and scan.estimates[0].id_err == 0.0
    assert scan.scales[0] == ref.scale


def test_decimation_uniform_square():
    pts = np.random.default_rng(9).random((10_000, 2))
    scan = id_decimation(Dataset(points=pts))
    assert np.all((scan.ids >= 1.85) & (scan.ids <= 2.15))
    assert np.all(np.diff(scan.scales) > 0)


def test_decimation_spiral_changes_dimension_with_scale():
    s = spiral(10_000, seed=0, turns=20, noise=0.0)
    scan = id_decimation(Dataset(points=s.points), fractions=[1.0, 0.01], repeats=10)
    small, large = scan.estimates
    assert 0.9 <= small.id <= 1.2
    assert 1.7 <= large.id <= 2.3


def test_decimation_reproducible_and_thread_independent():
    pts = np.random.default_rng(10).random((2000, 3))
    a = id_decimation(Dataset(points=pts), seed=3, workers=1)
    b = id_decimation(Dataset(points=pts), seed=3, workers=3)
    assert a.as_dict() == b.as_dict()


def test_decimation_preconditions():
    ds = Dataset(points=np.random.default_rng(0).random((100, 2)))
    with pytest.raises(PreconditionError):
        id_decimation(ds, fractions=[0.1])
    with pytest.raises(PreconditionError):
        id_decimation(ds, fractions=[1.5])
    with pytest.raises(PreconditionError):
        id_decimation(ds, repeats=0)


def test_scan_requires_increasing_scales():
    e = IdEstimate(2.0, 0.1, 1.0, "x", 10)
    with pytest.raises(NumericalError):
        IdScan([e, e])


# --- Gride ----------------------------------------------------------------------------


@pytest.mark.parametrize("n1,d", [(1, 2.0), (2, 3.0), (8, 5.5)])
def test_gride_density_normalised(n1, d):
    """The adopted likelihood, with its Beta constant, is a probability density."""
    n2 = 2 * n1

    def pdf(m):
        return math.exp(gride_log_likelihood(d, np.array([math.log(m)]), n1, n2) - betaln(n2 - n1, n1))

    total, _ = quad(pdf, 1, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("n1,d", [(1, 2.0), (4, 7.0), (16, 3.0)])
def test_gride_recovers_poisson_process_dimension(n1, d):
    rng = np.random.default_rng(n1)
    fits = [_gride_fit(np.log(gride_ratios(d, n1, 2 * n1, 5000, rng)), n1, 2 * n1) for _ in range(40)]
    ids = np.array([f[0] for f in fits])
    errs = np.array([f[1] for f in fits])
    assert abs(ids.mean() - d) < 3 * ids.std() / np.sqrt(len(ids)) + 1e-3 * d
    # observed-information error matches the spread across repeats
    assert errs.mean() == pytest.approx(ids.std(), rel=0.3)


def test_gride_n1_equals_mle():
    for seed in range(5):
        _, g = uniform_graph(2000, 3, 8, seed=seed)
        assert id_gride(g, [1]).ids[0] == pytest.approx(id_2nn_mle(compute_mu(g)).id, abs=1e-6)


def test_gride_default_orders_and_scales():
    _, g = uniform_graph(3000, 2, 64, seed=1)
    scan = id_gride(g)
    assert [e.n_used for e in scan.estimates] == [3000] * 6
    assert np.all(np.diff(scan.scales) > 0)
    assert scan.scales[3] == pytest.approx(g.neighbor_dist[:, 7].mean())
    assert np.all(np.abs(scan.ids - 2) < 0.25)


def test_gride_thread_independent():
    _, g = uniform_graph(2000, 4, 32, seed=2)
    assert id_gride(g, workers=1).as_dict() == id_gride(g, workers=4).as_dict()


def test_gride_preconditions():
    _, g = uniform_graph(200, 2, 8)
    with pytest.raises(PreconditionError):
        id_gride(g, [8])
    with pytest.raises(PreconditionError):
        id_gride(g, [0])


@pytest.mark.xfail(
    strict=True,
    reason="boundary effects of the unit 9-cube bias every ratio estimator low "
    "(about 7.4 to 7.9 at N=1e4); the Poisson-process check above passes at d=7",
)
def test_gride_uniform_9d_cube():
    _, g = uniform_graph(10_000, 9, 64, seed=0)
    scan = id_gride(g, [1, 2, 4, 8, 16, 32])
    assert np.all((scan.ids >= 8) & (scan.ids <= 10))
    assert np.all(np.diff(scan.errors) < 0)
