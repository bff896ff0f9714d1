#!/usr/bin/env python3
# Training a per-pixel classifier from tags alone, three ways.
# Shorter schedule than the acceptance run (about 30 s in total).

import numpy as np

from ccnn.scorer import linear_scorer
from ccnn.synthdata import generate, mean_iou
from ccnn.trainer import Mode, TrainConfig, predict, train

train_set = generate(100, 16, 4, noise_std=0.5, seed=0)
val_set = generate(50, 16, 4, noise_std=0.5, seed=[0, 1], first_id=100)
gt = np.stack([e.mask for e in val_set])

results = {}
for mode in (Mode.CCNN_FULL, Mode.EM_ADAPT_LIKE, Mode.TAGS_ONLY_MIL, Mode.FULLY_SUPERVISED):
    config = TrainConfig(mode=mode, max_steps=2000, lr_decay_every=800, seed=0)
    state = train(train_set, config, scorer=linear_scorer(4, 4, 0))
    per_class, miou = mean_iou(predict(state.scorer, val_set), gt, 4)
    results[mode.value] = miou
    print(f"{mode.value:17s} val mIoU {miou:.3f}  per class {np.round(per_class, 3)}")

# with only tags, the size and background rows are what keep the model
# from painting everything background; the supervised run is the ceiling
print("ccnn_full - tags_only_mil:", round(results["ccnn_full"] - results["tags_only_mil"], 3))

# %% the loss curve is noisy per image, so look at a moving average
state = train(train_set, TrainConfig(max_steps=2000, lr_decay_every=800))
loss = np.array([r["loss"] for r in state.metrics])
print("mean loss over steps 1-100:", loss[:100].mean().round(2), " last 100:", loss[-100:].mean().round(2))
