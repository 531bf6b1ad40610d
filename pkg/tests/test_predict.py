import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebreg.densities import make_rng
from ebreg.ebm import AnalyticEnergy, EnergyModel, YGrid
from ebreg.errors import ConfigurationError
from ebreg.predict import (RefineConfig, refine, refine_multi, refine_multi_batch,
                           refine_s1, refine_s2, select_best, uniform_inits)


def quadratic(center=1.0, curv=1.0):
    return AnalyticEnergy(lambda X, Y: -0.5 * curv * (Y[..., 0] - center) ** 2,
                          lambda X, Y: -curv * (Y - center))


def two_bumps():
    # global max at y=2 (height 0), local max at y=-2 (height -1)
    def f(X, Y):
        y = Y[..., 0]
        return np.logaddexp(-2 * (y - 2) ** 2, -1 - 2 * (y + 2) ** 2)

    def g(X, Y):
        y = Y[..., 0]
        a, b = -2 * (y - 2) ** 2, -1 - 2 * (y + 2) ** 2
        wa = 1 / (1 + np.exp(b - a))
        return (wa * (-4 * (y - 2)) + (1 - wa) * (-4 * (y + 2)))[..., None]

    return AnalyticEnergy(f, g)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        RefineConfig(step=0.0)
    with pytest.raises(ConfigurationError):
        RefineConfig(decay=1.5)
    with pytest.raises(ConfigurationError):
        RefineConfig(variant="S3")
    with pytest.raises(ConfigurationError):
        RefineConfig(T=-1)
    d = RefineConfig.s2_defaults().to_dict()
    assert d == {"T": 5, "step": 0.1, "decay": 0.5, "stop_tol": 0.001, "degen_tol": -0.01, "variant": "S2"}


def test_s1_converges_on_quadratic():
    y, trace = refine_s1(quadratic(1.0), [0.0], [-1.0], RefineConfig(T=60, step=0.5))
    assert y[0] == pytest.approx(1.0, abs=1e-6)
    assert trace.records[0].iteration == 0 and trace.records[0].accepted


def test_s1_rejects_overshoot_and_shrinks_step():
    # curvature 50 with step 0.1 overshoots to the far side with lower f
    _, trace = refine_s1(quadratic(0.0, 50.0), [0.0], [1.0], RefineConfig(T=3, step=0.1, decay=0.5))
    first = trace.records[1]
    assert not first.accepted
    assert first.step[0] == pytest.approx(0.05)
    assert trace.records[2].y[0] == pytest.approx(1.0)  # rejected steps leave y in place


def test_s1_accepted_values_are_monotone_on_random_networks():
    for seed in range(30):
        m = EnergyModel.create(make_rng(seed), activation="tanh" if seed % 2 else "relu")
        y0 = make_rng(seed, "y").uniform(-3, 3, size=(1,))
        _, tr = refine_s1(m, [0.3], y0, RefineConfig(T=15, step=0.5))
        acc = tr.accepted_values()
        assert all(b > a for a, b in zip(acc, acc[1:]))


def test_s2_stops_early_when_flat():
    _, tr = refine_s2(quadratic(0.0), [0.0], [1e-4], RefineConfig.s2_defaults())
    assert tr.stopped_early
    assert len(tr.records) == 2


def test_s2_stops_when_energy_drops():
    # overshooting step lowers f by more than |degen_tol|: stop immediately
    _, tr = refine_s2(quadratic(0.0, 50.0), [0.0], [1.0], RefineConfig.s2_defaults())
    assert tr.stopped_early and len(tr.records) == 2
    assert tr.records[1].f < tr.records[0].f


def test_s2_never_exceeds_T():
    _, tr = refine_s2(quadratic(5.0, 1.0), [0.0], [0.0], RefineConfig(T=5, step=0.1, variant="S2"))
    assert len(tr.records) == 6 and not tr.stopped_early


def test_variant_mismatch_is_rejected():
    with pytest.raises(ConfigurationError):
        refine_s1(quadratic(), [0.0], [0.0], RefineConfig.s2_defaults())
    with pytest.raises(ConfigurationError):
        refine_s2(quadratic(), [0.0], [0.0], RefineConfig())


def test_refinement_is_gauge_invariant():
    m = EnergyModel.create(make_rng(3), activation="tanh")
    cfg = RefineConfig(T=10, step=0.3)
    a, _ = refine(m, [0.5], [0.2], cfg)
    b, _ = refine(m.shifted(1e6), [0.5], [0.2], cfg)
    np.testing.assert_array_equal(a, b)


def test_multi_start_finds_global_mode():
    y = refine_multi(two_bumps(), [0.0], uniform_inits(-4, 4, 8), RefineConfig(T=40, step=0.1))
    assert y[0] == pytest.approx(2.0, abs=1e-3)


def test_single_start_can_stick_in_local_mode():
    y, _ = refine(two_bumps(), [0.0], [-2.5], RefineConfig(T=40, step=0.1))
    assert y[0] == pytest.approx(-2.0, abs=1e-3)


def test_batched_multi_start_matches_per_row():
    m = EnergyModel.create(make_rng(5), activation="tanh")
    X = np.array([[-1.0], [0.0], [2.0]])
    inits = uniform_inits(-3, 3, 5)
    cfg = RefineConfig(T=6, step=0.2)
    batch = refine_multi_batch(m, X, inits, cfg)
    for i in range(3):
        np.testing.assert_allclose(batch[i], refine_multi(m, X[i], inits, cfg), atol=1e-12)


def test_select_best_breaks_ties_by_lowest_index():
    Y = np.arange(6.0).reshape(1, 3, 2)
    assert select_best(Y, np.array([[1.0, 3.0, 3.0]]))[0].tolist() == [2.0, 3.0]


def test_multi_start_lands_near_grid_argmax():
    rig = quadratic(0.734)
    g = YGrid(-5, 5, 2048)
    y = refine_multi(rig, [0.0], uniform_inits(-5, 5, 16), RefineConfig(T=10, step=0.5))
    assert abs(y[0] - 0.734) < 2 * g.spacing[0]


def test_nonfinite_candidates_stop_with_failure_note():
    bad = AnalyticEnergy(lambda X, Y: np.where(Y[..., 0] > 0.5, np.nan, -Y[..., 0] ** 2 + Y[..., 0] * 4),
                         lambda X, Y: -2 * Y + 4)
    y, tr = refine(bad, [0.0], [0.0], RefineConfig(T=5, step=1.0))
    assert tr.failure is not None
    assert y[0] == 0.0


def test_trace_csv_layout():
    _, tr = refine_s1(quadratic(), [0.0], [0.0], RefineConfig(T=2, step=0.5))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "iteration,y_0,f,accepted,step_0"
    assert len(lines) == 1 + len(tr.records)


def test_inits_must_be_nonempty():
    with pytest.raises(ConfigurationError):
        refine_multi(quadratic(), [0.0], np.zeros((0, 1)), RefineConfig())


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 20), st.floats(0.01, 2), st.floats(-4, 4))
def test_s1_never_decreases_f_on_quadratics(center, curv, step, y0):
    _, tr = refine_s1(quadratic(center, curv), [0.0], [y0], RefineConfig(T=12, step=step))
    acc = tr.accepted_values()
    assert all(b > a for a, b in zip(acc, acc[1:]))
