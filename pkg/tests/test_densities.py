import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ebreg.densities import (GroundTruthDensity, Proposal, branch_mass, gaussian_log_pdf,
                             ground_truth_conditional, laplace_log_pdf, lognormal_log_pdf,
                             make_rng, mixture_log_pdf, proposal_log_density, sample_proposal,
                             sample_proposal_batch)
from ebreg.errors import ConfigurationError, ContractError


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, "data").standard_normal(5)
    b = make_rng(7, "data").standard_normal(5)
    c = make_rng(7, "proposal").standard_normal(5)
    d = make_rng(8, "data").standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_scalar_families_match_scipy():
    y = np.linspace(-3, 4, 15)
    np.testing.assert_allclose(gaussian_log_pdf(y, 0.3, 2.0), stats.norm(0.3, math.sqrt(2)).logpdf(y), rtol=1e-12)
    np.testing.assert_allclose(laplace_log_pdf(y, -0.2, 0.7), stats.laplace(-0.2, 0.7).logpdf(y), rtol=1e-12)
    pos = y[y > 0]
    np.testing.assert_allclose(lognormal_log_pdf(pos, 0.1, 0.25),
                               stats.lognorm(0.25, scale=math.exp(0.1)).logpdf(pos), rtol=1e-12)
    assert np.all(lognormal_log_pdf(np.array([-1.0, 0.0]), 0.0, 0.25) == -np.inf)


def test_bad_scales_raise():
    with pytest.raises(ContractError):
        gaussian_log_pdf(0.0, 0.0, 0.0)
    with pytest.raises(ContractError):
        laplace_log_pdf(0.0, 0.0, -1.0)
    with pytest.raises(ConfigurationError):
        Proposal((0.1, 0.0))
    with pytest.raises(ConfigurationError):
        Proposal(())


def test_mixture_matches_direct_sum():
    y = np.linspace(-2, 2, 9)
    w, m, s = (0.3, 0.7), (-1.0, 0.5), (0.4, 0.9)
    ref = np.log(sum(wk * stats.norm(mk, sk).pdf(y) for wk, mk, sk in zip(w, m, s)))
    np.testing.assert_allclose(mixture_log_pdf(y, w, m, s), ref, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 3.0), min_size=1, max_size=4),
       st.floats(-5, 5), st.floats(-5, 5))
def test_proposal_density_matches_equal_mixture(sigmas, y, c):
    p = Proposal(tuple(sigmas))
    ref = math.log(sum(stats.norm(c, s).pdf(y) for s in sigmas) / len(sigmas)) \
        if min(stats.norm(c, s).pdf(y) for s in sigmas) > 1e-300 else None
    got = proposal_log_density(np.array([y]), np.array([c]), p)
    assert isinstance(got, float)
    if ref is not None:
        assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_proposal_density_integrates_to_one():
    p = Proposal((0.1, 0.8))
    f = lambda y: math.exp(proposal_log_density(np.array([y]), np.array([0.4]), p))
    mass = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in ((-np.inf, 0.4), (0.4, np.inf)))
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_proposal_density_2d_batch():
    p = Proposal((0.5, 1.0), dim=2)
    y = np.array([[0.0, 0.0], [1.0, -1.0]])
    out = proposal_log_density(y, np.zeros(2), p)
    narrow = stats.multivariate_normal(np.zeros(2), 0.25 * np.eye(2))
    wide = stats.multivariate_normal(np.zeros(2), np.eye(2))
    ref = np.log(0.5 * narrow.pdf(y) + 0.5 * wide.pdf(y))
    np.testing.assert_allclose(out, ref, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        proposal_log_density(np.zeros((2, 3)), np.zeros(3), p)


def test_proposal_samples_follow_the_mixture():
    p = Proposal((0.1, 0.8))
    s = sample_proposal(np.array([1.0]), p, 20000, make_rng(0, "t"))
    assert s.shape == (20000, 1)
    cdf = lambda v: 0.5 * (stats.norm(1, 0.1).cdf(v) + stats.norm(1, 0.8).cdf(v))
    assert stats.kstest(s[:, 0], cdf).pvalue > 1e-3


def test_batch_sampler_shapes_and_centres():
    p = Proposal((0.2,), dim=2)
    centers = np.array([[0.0, 0.0], [10.0, -10.0]])
    s = sample_proposal_batch(centers, p, 5000, make_rng(1))
    assert s.shape == (2, 5000, 2)
    np.testing.assert_allclose(s.mean(axis=1), centers, atol=0.02)
    with pytest.raises(ContractError):
        sample_proposal_batch(centers, p, 0, make_rng(1))


def test_ground_truth_branches_normalise():
    dens = GroundTruthDensity().validate()
    assert dens.validated
    for x in (-2.9, -0.01, 0.0, 2.9):
        assert branch_mass(dens, x) == pytest.approx(1.0, abs=1e-8)


def test_ground_truth_conditional_matches_log_pdf():
    dens = GroundTruthDensity()
    ys = np.linspace(-3, 3, 13)
    for x in (-1.0, 1.0):
        f = ground_truth_conditional(x, dens)
        np.testing.assert_allclose(f(ys), dens.log_pdf(np.full_like(ys, x), ys))


def test_ground_truth_weights_are_checked():
    with pytest.raises(ConfigurationError):
        GroundTruthDensity(mix_weights=(0.5, 0.6))
    d = GroundTruthDensity()
    assert GroundTruthDensity.from_dict(d.to_dict()) == d


def test_ground_truth_sampling_matches_branch_density():
    dens = GroundTruthDensity()
    rng = make_rng(3)
    n = 100_000
    for x0 in (-1.2, 1.7):
        x = np.full(n, x0)
        y = dens.sample(x, rng)
        f = ground_truth_conditional(x0, dens)
        cdf = np.vectorize(lambda v: integrate.quad(lambda t: math.exp(f(t)),
                                                    -np.inf if x0 < 0 else 0.0, v)[0] if (x0 < 0 or v > 0) else 0.0)
        q = np.quantile(y, np.linspace(0.01, 0.99, 25))
        np.testing.assert_allclose(cdf(q), np.linspace(0.01, 0.99, 25), atol=6e-3)
