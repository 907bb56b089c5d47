"""Does an adversarial term help when the target changes shape?

Inputs are dark circles; targets are the same circles scaled up (the
"shape" task) or given a stripe texture (the "texture" task). The same
generator is trained with a plain pixel loss and with an added patch
discriminator. On the shape task the pixel loss alone should win on
per-image MSE; the adversarial model pays for sharper but misplaced edges.

    python demos/05_toy_adversarial.py [shape|texture]
"""
import sys

import torch

from mvmtwin.toy import ToyConfig, run_toy_comparison

torch.set_num_threads(1)
task = sys.argv[1] if len(sys.argv) > 1 else "shape"
cfg = ToyConfig()  # 600 training and 200 test images, 30 epochs: a few minutes
res = run_toy_comparison(task, cfg)
for name in ("plain", "adversarial"):
    s = res[name]
    print(f"{name:>12}: per-image MSE {s['mse_mean']:.5f} +- {s['mse_std']:.5f}, "
          f"mean-image distance {s['group_mean_distance']:.4f}")
