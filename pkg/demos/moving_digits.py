"""Moving digits: Gaussian versus binary visible units on thresholded sprite videos.

    python3 demos/moving_digits.py

Two 8x8 digits drift through a 32x32 frame and pass through each other.
Frames are thresholded at 0.1, so they are binary; the same trainer is run
with both visible models and scored on 5-step prediction. To use a real
moving-digit tensor instead, convert it first, e.g.

    rtgb import --input mnist_test_seq.npy --dims 20x10000x64x64 --out mm.rbmd
"""
import numpy as np

from rtgb import dynamics_data as dd
from rtgb import temporal as tp

T_IN, T_OUT = 10, 15
cfg = dd.SpriteWorldConfig(n_sprites=2, frame_px=32, steps=T_OUT, n_sequences=300, seed=4)
data = dd.simulate_sprites(cfg).data.astype(np.float64)
train, test = data[:250], data[250:]
print(f"{len(train)} training and {len(test)} test sequences; {train.mean():.1%} of pixels are on")

for mode, s in ((tp.VisibleMode.CONTINUOUS, 0.5), (tp.VisibleMode.BINARY, 1.0)):
    params = tp.RtgbParams.initial(32 * 32, 30, np.random.default_rng(0), s=s, mode=mode)
    tc = tp.TrainConfig(cd_steps=3, learning_rate=1e-3, epochs=2, seed=0, input_prefix_len=T_IN, total_len=T_OUT)
    params, curve = tp.train(params, train, tc)
    loss = tp.evaluate(params, test, T_IN, T_OUT, np.random.default_rng(0)).mean_loss
    print(f"{mode.name.lower():>10} visibles: train curve {', '.join(f'{x:.1f}' for x in curve)}; test loss {loss:.2f}")

persist = test.copy()
persist[:, T_IN:] = test[:, T_IN - 1:T_IN]
print(f"persist-last-frame baseline: {((test - persist)[:, T_IN:] ** 2).sum(axis=2).mean():.2f}")
