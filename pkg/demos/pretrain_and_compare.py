"""Pretrain a small transformer on synthetic dynamics, then compare it with
the windowed baselines on the zero-action cart-pole.

This is a shrunken version of the acceptance run (fewer trajectories, a
two-layer model, two repeats), so it finishes in a few minutes on one core
and its numbers are only indicative.

    python demos/pretrain_and_compare.py
"""
from dataclasses import replace

from dynfm import DESK, SamplerConfig, TrajGenConfig, TransformerModel, generate_dataset
from dynfm.config import config_from_dict
from dynfm.evaluation import horizon_errors, run_experiment
from dynfm.training import TrainConfig, pretrain

# 1. synthetic pretraining data (2-D states, padded to the 4-D cart-pole width)
data = generate_dataset(SamplerConfig(seed=11), TrajGenConfig(n_functions=1500, seed=11))
heldout = generate_dataset(SamplerConfig(seed=99), TrajGenConfig(n_functions=200, seed=99))
print(f"pretraining on {len(data)} trajectories, {len(heldout)} held out")

model = TransformerModel(replace(DESK, n_layers=2))
before = horizon_errors(model, heldout, 32, 32).mean()
pretrain(model, data, TrainConfig(lr=1e-3, epochs=10, batch_size=16, lr_schedule="cosine"))
after = horizon_errors(model, heldout, 32, 32).mean()
print(f"held-out horizon MSE: {before:.3f} at initialisation, {after:.3f} after pretraining")

# 2. cart-pole sweep: zero-shot, fine-tuned, LR, FNN and a small transformer from scratch
small = {"d_model": 32, "n_layers": 2, "n_heads": 2, "d_ff": 64}
system_training = {"lr": 1e-3, "epochs": 8, "min_steps": 200, "phase": "finetune",
                   "lr_schedule": "cosine"}
cfg = config_from_dict({
    "systems": {"kind": "cartpole-fixed", "n": 200},
    "train": {"pretrain": {"lr": 1e-3, "epochs": 10, "batch_size": 16}, "finetune": system_training,
              "scratch": system_training, "fnn": {"epochs": 50}},
    "eval": {"levels": [0.1, 1.0], "repeats": 2, "small_model": small},
})
report = run_experiment(cfg, pretrained=model)

print("\nmodel  level   median MSE    range")
for row in report.aggregates():
    print(f"{row['model']:5s}  {row['level']:>5s}  {row['median']:10.4g}  {row['range']:8.3g}")
