"""Which proposal works best for training? A small sweep over sigma sets.

One EBM is trained per (proposal, seed) cell and the seed-averaged grid KL is
tabulated. Short training keeps this to a few minutes; set EBREG_WORKERS to
run cells in parallel.
"""
from ebreg import harness

cfg = harness.ExperimentConfig.preset(training__epochs=10)
cells = harness.parse_grid_spec("0.1;0.8;0.1,0.8;0.05,0.3,1.0")
rows = harness.run_sweep(cfg, cells, seeds=[0, 1])
print(harness.table_csv(harness.summarize_sweep(rows),
                        ["L", "sigmas", "seeds", "failed", "grid_kl", "grid_kl_neg", "test_nll"]), end="")
