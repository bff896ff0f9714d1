#!/usr/bin/env python3
# Mixing a few fully labelled images into tag-only training.

import numpy as np

from ccnn.synthdata import generate, mean_iou
from ccnn.trainer import TrainConfig, predict, supervised_ids, train

train_set = generate(100, 16, 4, noise_std=0.5, seed=1)
val_set = generate(50, 16, 4, noise_std=0.5, seed=[1, 1], first_id=100)
gt = np.stack([e.mask for e in val_set])

# the supervised subset is a seeded choice, so runs are repeatable
print("25% supervised ids:", sorted(supervised_ids(train_set, 0.25, seed=0))[:10], "...")

for fraction in (0.0, 0.25, 0.5, 1.0):
    config = TrainConfig(supervised_fraction=fraction, max_steps=2000, lr_decay_every=800)
    state = train(train_set, config)
    _, miou = mean_iou(predict(state.scorer, val_set), gt, 4)
    print(f"supervised fraction {fraction:4.2f}: val mIoU {miou:.3f}")
