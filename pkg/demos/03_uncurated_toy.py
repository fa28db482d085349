"""PAWS against RoPAWS on a toy uncurated dataset.

Four Gaussian classes sit on a ring with four unlabeled distractor clusters
in between. Both methods train the same small encoder from the same seed;
the interesting numbers are the soft-NN confidence on distractors and how
well max-similarity separates them from in-class data.

Usage: python3 demos/03_uncurated_toy.py [epochs]
"""
import sys

from ropaws import experiment as ex

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
cfg = ex.RunConfig().with_overrides({"epochs": epochs, "warmup_epochs": max(1, epochs // 20)})
results = ex.compare(cfg, seeds=[0])
print(ex.compare_text(results), end="")

for method in ("paws", "ropaws"):
    rep, state = results[(method, 0)]
    print(f"{method}: final loss {state.history[-1].total:.4f}, "
          f"conf gap in-out {100 * (rep.conf_in - rep.conf_out):.1f} points")
