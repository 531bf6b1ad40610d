"""Every model kind on a heteroscedastic sine task, y = sin(3x) + noise growing with |x|.

Each baseline is trained with its own loss and scored on the same held-out
split: NLL under the model's density, KL to the known conditional, and MAE of
its point prediction (refined energy maximum for the EBM).
"""
from ebreg import harness

cfg = harness.ExperimentConfig.preset("hetero-sine", training__epochs=20, task__n_train=1000, task__n_test=500)
test = harness.make_data(cfg, "test")
print(f"{'kind':<10}{'NLL':>9}{'KL':>9}{'MAE':>8}")
for kind in harness.MODEL_KINDS:
    c = cfg.with_updates(model={"kind": kind})
    res = harness.run_training(c)
    rep = harness.evaluate(res.model, c, test)
    print(f"{kind:<10}{rep['test_nll']:>9.3f}{rep['grid_kl']:>9.3f}{rep['mae']:>8.3f}")
