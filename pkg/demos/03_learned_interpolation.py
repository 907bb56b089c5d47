"""Training the two-stream interpolator for one downsampling factor.

One network is trained per K. It sees the two kept frames and their masks,
plus constant maps saying where in the cycle the gap starts and which of
the K missing frames is wanted. Its magnitude output is a residual on top of
the linear blend, so an untrained network already reproduces the linear
baseline; training has to learn what the blend gets wrong.

This is a short run on six small studies (a few minutes on one core). The
acceptance suite trains the full-size version.

    python demos/03_learned_interpolation.py
"""
import logging

import torch

from mvmtwin.nets import InterpNetConfig
from mvmtwin.phantom import PhantomParams, phantom_cohort
from mvmtwin.pipeline import evaluate_interpolation
from mvmtwin.temporal import TrainConfig, build_interp_dataset, train_interp

logging.basicConfig(level=logging.INFO, format="%(message)s")
torch.set_num_threads(1)

K = 3
base = PhantomParams(H=48, W=48, T=40, r_inner0=9.0, r_outer0=15.0, amp=2.5, seed=30)
studies = phantom_cohort(base, 6)
train, val, test = studies[:4], studies[4:5], studies[5:]

data = build_interp_dataset(train, K)
print(f"{len(data)} training samples at K={K}")
model = train_interp(data, InterpNetConfig(8, 3, 2),
                     TrainConfig(epochs=12, augment=True), build_interp_dataset(val, K))
print(f"kept epoch {model.best_epoch} (lowest validation loss)")

print(f"{'method':>8} {'DICE':>7} {'MSEW1':>9}")
for method, m in (("learned", model), ("linear", None), ("flow", None)):
    r = evaluate_interpolation(test, K, method, m)
    print(f"{method:>8} {r['dice']['mean']:7.4f} {r['msew1']['mean']:9.2e}")
