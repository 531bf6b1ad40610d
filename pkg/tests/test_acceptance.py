"""Acceptance suite. Each test carries a ``criterion`` marker; the conftest prints
one PASS/FAIL line per criterion after the run.

Criteria 4, 5 and 7 train the full 1D experiment (2000 points, 75 epochs) and
take most of the runtime; the trained models are shared through a session cache.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from ebreg import autodiff as ad
from ebreg import baselines as bl
from ebreg import harness, metrics
from ebreg.densities import (LOG_2PI, GroundTruthDensity, Proposal, make_rng, proposal_log_density,
                             sample_proposal, sample_proposal_batch)
from ebreg.ebm import (AnalyticEnergy, EnergyModel, YGrid, nll_term, nll_terms, partition_grid,
                       partition_importance)
from ebreg.predict import RefineConfig, refine_block

import oracles
from oracles import check_param_grads

SEEDS = (0, 1, 2, 3, 4)
SWEEP_SEEDS = (0, 1, 2)


# -- shared trained models -----------------------------------------------------

class Runs:
    """Lazily trained (model, report) pairs keyed by (kind, seed)."""

    def __init__(self):
        self.cache = {}

    def config(self, kind, seed):
        return harness.ExperimentConfig.preset(model__kind=kind, training__seed=seed)

    def get(self, kind, seed):
        key = (kind, seed)
        if key not in self.cache:
            cfg = self.config(kind, seed)
            t0 = time.time()
            res = harness.run_training(cfg)
            test = harness.make_data(cfg, "test")
            report = harness.evaluate(res.model, cfg, test)
            report["seconds"] = round(time.time() - t0, 1)
            self.cache[key] = (res.model, report, test)
        return self.cache[key]


@pytest.fixture(scope="session")
def runs():
    return Runs()


@pytest.fixture(scope="session")
def floors():
    dens = GroundTruthDensity()
    return {"all": metrics.nll_floor_piecewise(dens), "neg": metrics.nll_floor_piecewise(dens, -3.0, 0.0)}


# -- 1 ---------------------------------------------------------------------------

@pytest.mark.criterion(1, "autodiff gradients match central differences (200 random graphs and every loss)")
def test_gradient_correctness(detail):
    t0 = time.time()
    graph_err = max(oracles.random_graph_error(seed) for seed in range(200))

    loss_errs = {}
    rng = make_rng(11)
    m = EnergyModel.create(make_rng(12, "init"), branch_dims=(4, 3), head_dims=(5,), activation="softplus")
    X, Y = rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
    p = Proposal((0.1, 0.8))
    S = sample_proposal_batch(Y, p, 16, rng)
    Q = proposal_log_density(S, Y[:, None, :], p)
    loss_errs["ebm importance nll"] = check_param_grads(
        lambda g: ad.mean_all(nll_terms(m, g, X, Y, S, Q)), m.parameters())
    models = {
        "direct L2": bl.DirectModel.create(rng, loss="L2"),
        "direct huber": bl.DirectModel.create(rng, loss="huber", delta=0.3),
        "gaussian": bl.GaussianModel.create(rng, y_dim=2),
        "laplace": bl.LaplaceModel.create(rng),
        "laplace multivariate": bl.LaplaceModel.create(rng, y_dim=2, multivariate=True),
        "mdn": bl.MdnModel.create(rng, K=3),
        "softmax": bl.SoftmaxModel.create(rng, np.linspace(-2, 2, 9)),
    }
    for name, model in models.items():
        ydim = 2 if name in ("gaussian", "laplace multivariate") else 1
        Xb, Yb = rng.normal(size=(5, 1)), rng.normal(size=(5, ydim))
        for layer in model.backbone.layers:
            layer.bias += 0.05
        loss_errs[name] = check_param_grads(lambda g, model=model, Xb=Xb, Yb=Yb: model.loss(g, Xb, Yb),
                                            model.parameters())
    elapsed = time.time() - t0
    worst = max(graph_err, *loss_errs.values())
    detail(f"max rel err graphs {graph_err:.2e}, losses {max(loss_errs.values()):.2e}, {elapsed:.0f}s")
    assert worst < 1e-4, loss_errs
    assert elapsed < 60


# -- 2 ---------------------------------------------------------------------------

@pytest.mark.criterion(2, "importance NLL is gauge invariant and exact under a perfect proposal")
def test_exact_loss_identities(detail):
    p = Proposal((0.1, 0.8))
    m = EnergyModel.create(make_rng(0, "init"), activation="softplus")
    s = sample_proposal(np.array([0.4]), p, 512, make_rng(1))
    q = proposal_log_density(s, np.array([0.4]), p)
    base = float(nll_term(m, [0.2], [0.4], s, q).value)
    gauge = max(abs(float(nll_term(m.shifted(c), [0.2], [0.4], s, q).value) - base)
                for c in (-1e3, -7.0, 0.5, 42.0, 1e3))

    rig = AnalyticEnergy(lambda X, Y: proposal_log_density(Y, X[:, None, :], p))
    y_i = 0.7
    expected = -proposal_log_density(np.array([y_i]), np.array([y_i]), p)
    vals = []
    for seed in range(100):
        ss = sample_proposal(np.array([y_i]), p, 64, make_rng(seed))
        qq = proposal_log_density(ss, np.array([y_i]), p)
        vals.append(float(nll_term(rig, [y_i], [y_i], ss, qq).value))
    detail(f"gauge drift {gauge:.1e}; perfect-proposal spread {np.ptp(vals):.1e} over 100 seeds")
    assert gauge <= 1e-12
    assert np.ptp(vals) == 0.0
    assert abs(vals[0] - expected) <= 1e-12


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.criterion(3, "partition estimators: grid quadrature, importance agreement, M^-1/2 scaling")
def test_partition_estimators(detail):
    rig = AnalyticEnergy(lambda X, Y: -0.5 * Y[..., 0] ** 2)
    grid = YGrid(-10.0, 10.0, 2048)
    z_grid = partition_grid(rig, [0.0], grid).value
    grid_err = abs(z_grid - math.sqrt(2 * math.pi))

    p = Proposal((0.5, 2.0))
    center = np.array([0.5])
    est = partition_importance(rig, [0.0], center, p, 4096, make_rng(0, "z"))
    # the same draws, bootstrapped
    s = sample_proposal_batch(center[None, :], p, 4096, make_rng(0, "z"))
    w = np.exp(rig.energy_batch(np.zeros((1, 1)), s)[0] - proposal_log_density(s, center[None, None, :], p)[0])
    boot = make_rng(0, "bootstrap")
    means = np.array([w[boot.integers(0, w.size, w.size)].mean() for _ in range(1000)])
    boot_se = float(means.std(ddof=1))
    gap_in_se = abs(est.value - z_grid) / boot_se

    Ms = [64, 128, 256, 512, 1024, 2048, 4096]
    sds = []
    for M in Ms:
        reps = [partition_importance(rig, [0.0], center, p, M, make_rng(r, f"M{M}")).value for r in range(200)]
        sds.append(np.std(reps, ddof=1))
    slope = float(np.polyfit(np.log(Ms), np.log(sds), 1)[0])
    detail(f"grid |Z - sqrt(2pi)| {grid_err:.1e}; importance gap {gap_in_se:.2f} bootstrap SE; SD slope {slope:.3f}")
    assert grid_err < 1e-4
    assert gap_in_se < 3.0
    assert abs(slope + 0.5) <= 0.1


# -- 4 ---------------------------------------------------------------------------

@pytest.mark.criterion(4, "1D experiment: EBM density vs ground truth and the Gaussian head, 5 seeds")
def test_density_vs_truth_and_gaussian(runs, floors, detail):
    ebm = [runs.get("ebm", s)[1] for s in SEEDS]
    gau = [runs.get("gaussian", s)[1] for s in SEEDS]
    for s, e, g in zip(SEEDS, ebm, gau):
        print(f"seed {s}: ebm kl {e['grid_kl']:.4f} kl<0 {e['grid_kl_neg']:.4f} nll {e['test_nll']:.4f} "
              f"({e['seconds']}s) | gaussian kl<0 {g['grid_kl_neg']:.4f} nll<0 {g['test_nll_neg']:.4f}")
    mean_kl = float(np.mean([e["grid_kl"] for e in ebm]))
    ebm_nll = float(np.mean([e["test_nll"] for e in ebm]))
    gau_neg = float(np.mean([g["test_nll_neg"] for g in gau]))
    wins = sum(e["grid_kl_neg"] < g["grid_kl_neg"] for e, g in zip(ebm, gau))
    detail(f"(a) mean KL {mean_kl:.4f}")
    detail(f"(b) EBM beats Gaussian on x<0 in {wins}/5 seeds")
    detail(f"(c) EBM NLL - floor {ebm_nll - floors['all']:+.4f}, Gaussian x<0 NLL - floor {gau_neg - floors['neg']:+.4f}")
    assert mean_kl < 0.15
    assert wins == len(SEEDS)
    assert abs(ebm_nll - floors["all"]) < 0.1
    assert gau_neg - floors["neg"] > 0.2


# -- 5 ---------------------------------------------------------------------------

@pytest.mark.criterion(5, "refinement: S1 monotone, multi-start near grid argmax, S2 terminates")
def test_refinement(runs, detail):
    # S1 accepted values never decrease: 100 random networks x 100 (x, init) cases
    cases, violations = 0, 0
    cfg = RefineConfig(T=10, step=0.5)
    for seed in range(100):
        rng = make_rng(seed, "refine-case")
        act = ("relu", "tanh", "softplus")[seed % 3]
        m = EnergyModel.create(make_rng(seed, "init"), activation=act)
        X = rng.uniform(-3, 3, size=(100, 1))
        Y0 = rng.uniform(-4, 4, size=(100, 1, 1))
        _, _, traces = refine_block(m, X, Y0, cfg, traces=True)
        for i, tr in enumerate(traces):
            ys = np.array([r.y for r in tr.records if r.accepted])
            f = m.energy_batch(X[i:i + 1], ys[None, :, :])[0]
            violations += int(np.any(np.diff(f) <= 0))
            cases += 1

    model, _, test = runs.get("ebm", 0)
    cfg0 = runs.config("ebm", 0)
    grid = cfg0.grid()
    pts = grid.points()
    yhat, _ = harness.predict_points(model, cfg0, test.inputs)
    arg = np.empty(len(test))
    for start in range(0, len(test), 50):
        X = test.inputs[start:start + 50]
        f = model.energy_batch(X, np.broadcast_to(pts, (len(X), *pts.shape)))
        arg[start:start + 50] = grid.axis()[np.argmax(f, axis=1)]
    cells = np.abs(yhat[:, 0] - arg) / grid.spacing[0]
    within = float(np.mean(cells <= 2))

    s2 = RefineConfig.s2_defaults()
    X = test.inputs[:200]
    inits = np.broadcast_to(np.linspace(-5, 5, 16)[None, :, None], (200, 16, 1))
    _, _, traces = refine_block(model, X, inits, s2, traces=True)
    steps = [len(tr.records) - 1 for tr in traces]
    early = float(np.mean([tr.stopped_early for tr in traces]))
    detail(f"S1 violations {violations}/{cases}; within 2 cells {within:.3f}; "
           f"S2 max steps {max(steps)}, early stops {early:.2f}")
    assert cases >= 10_000 and violations == 0
    assert within >= 0.95
    assert max(steps) <= 5


# -- 6 ---------------------------------------------------------------------------

@pytest.mark.criterion(6, "baseline losses match independent formula scripts")
def test_baseline_losses(detail):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        mu, lv, y = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d)) * 2
        worst = max(worst,
                    abs(bl.gaussian_nll_loss(mu, lv, y) - oracles.gaussian_loss_ref(mu, lv, y)),
                    abs(bl.laplace_nll_loss(mu, lv, y) - oracles.laplace_loss_ref(mu, lv, y)),
                    abs(bl.laplace_nll_loss(mu, lv, y, multivariate=True) - oracles.laplace_mv_loss_ref(mu, lv, y)))
        K = int(rng.integers(1, 5))
        w = rng.dirichlet(np.ones(K), size=n)
        mk, lk, yk = rng.normal(size=(n, K)), rng.normal(size=(n, K)) * 0.5, rng.normal(size=n)
        worst = max(worst, abs(bl.mdn_nll_loss(w, mk, lk, yk) - oracles.mdn_loss_ref(w, mk, lk, yk)))
        C = int(rng.integers(2, 12))
        values = np.sort(rng.uniform(-3, 3, size=C))
        logits, ys = rng.normal(size=(n, C)) * 2, rng.uniform(-3, 3, size=n)
        ce, l2, var, _ = bl.softmax_losses(logits, ys, values)
        worst = max(worst, *np.abs(np.subtract((ce, l2, var), oracles.softmax_losses_ref(logits, ys, values))))

    _, _, var, _ = bl.softmax_losses(np.zeros((1, 101)), np.array([50.0]), np.arange(101.0))
    mdn_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 8))
        mu, lv, y = rng.normal(size=(n, 1)), rng.normal(size=(n, 1)), rng.normal(size=n)
        mdn = bl.mdn_nll_loss(np.ones((n, 1)), mu, lv, y)
        mdn_gap = max(mdn_gap, abs(mdn - (0.5 * bl.gaussian_nll_loss(mu, lv, y[:, None]) + 0.5 * LOG_2PI)))
    detail(f"max formula gap {worst:.1e}; uniform variance {var:.9f}; MDN K=1 gap {mdn_gap:.1e}")
    assert worst < 1e-10
    assert abs(var - 850.0) < 1e-9
    assert mdn_gap <= 1e-12


# -- 7 ---------------------------------------------------------------------------

@pytest.mark.criterion(7, "proposal sweep: best two-component proposal beats best single component")
def test_proposal_sweep(runs, detail):
    l2 = float(np.mean([runs.get("ebm", s)[1]["grid_kl"] for s in SWEEP_SEEDS]))
    rows = harness.run_sweep(runs.config("ebm", 0), [(0.1,), (0.8,)], list(SWEEP_SEEDS))
    summary = harness.summarize_sweep(rows)
    for r in summary:
        print(f"L=1 sigma {r['sigmas']}: kl {r['grid_kl']}, failed {r['failed']}")
    l1 = [r["grid_kl"] for r in summary if r["grid_kl"] is not None and r["failed"] == 0]
    best_l1 = min(l1) if l1 else float("inf")
    detail(f"best L=2 KL {l2:.4f} vs best L=1 KL {best_l1:.4f} (seed means over {len(SWEEP_SEEDS)} seeds)")
    assert l2 <= best_l1


# -- 8 ---------------------------------------------------------------------------

@pytest.mark.criterion(8, "CLI train twice gives byte-identical checkpoints and reports")
def test_cli_determinism(tmp_path, detail):
    cfg = harness.ExperimentConfig.preset(training__epochs=3)
    (tmp_path / "config.json").write_text(cfg.to_json())
    for run in ("a", "b"):
        for argv in (["train", "--config", str(tmp_path / "config.json"), "--out", str(tmp_path / run)],
                     ["eval", "--ckpt", str(tmp_path / run / "checkpoint.json")]):
            proc = subprocess.run([sys.executable, "-m", "ebreg", *argv], capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("checkpoint.json", "report.json", "loss.csv", "config.json")}
    detail("identical: " + ", ".join(k for k, v in same.items() if v))
    assert all(same.values())
    assert json.loads((tmp_path / "a" / "report.json").read_text())["config_hash"] == cfg.hash()
