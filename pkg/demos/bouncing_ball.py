"""Bouncing ball: train a model, predict ahead, extract rules, predict with the rules.

    python3 demos/bouncing_ball.py [output_dir]

Takes a few minutes on a laptop. Everything lands in ``output_dir``
(default ``demo_out/ball``): PGM frame strips, feature maps, the rule file and
a learning curve CSV.
"""
import sys
import time
from pathlib import Path

import numpy as np

from rtgb import dynamics_data as dd
from rtgb import evaluation as ev
from rtgb import rules as rl
from rtgb import temporal as tp

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/ball")
out.mkdir(parents=True, exist_ok=True)
T_IN, T_OUT = 10, 15

# 1. Data. One ball in a unit box, rendered at 32x32 with soft edges.
train = dd.simulate_balls(dd.BallWorldConfig(steps=40, n_sequences=500, seed=1)).data.astype(np.float64)
test = dd.simulate_balls(dd.BallWorldConfig(steps=40, n_sequences=100, seed=2)).data.astype(np.float64)
print(f"train {train.shape}, test {test.shape}; mean pixel mass per frame {train.sum(axis=2).mean():.1f}")

# 2. Training. One CD-3 update per sequence; the curve is the 5-step loss after each epoch.
params = tp.RtgbParams.initial(32 * 32, 10, np.random.default_rng(0), s=0.5)
cfg = tp.TrainConfig(cd_steps=3, learning_rate=1e-3, epochs=3, seed=0, input_prefix_len=T_IN, total_len=T_OUT)
t0 = time.perf_counter()
params, curve = tp.train(params, train, cfg, progress=lambda e, loss: print(f"  epoch {e}: loss {loss:.3f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s")
tp.save_rtgb(params, out / "model.rtgb")
ev.write_curve_csv(out / "curve.csv", curve)

# 3. Model-based prediction against the persist-last-frame baseline.
model = tp.evaluate(params, test, T_IN, T_OUT, np.random.default_rng(0))
persist = test.copy()
persist[:, T_IN:T_OUT] = test[:, T_IN - 1:T_IN]
base = ev.prediction_loss(test, persist, T_IN, T_OUT)
wins = np.mean(np.array(model.per_sequence) < np.array(base.per_sequence))
print(f"model loss {model.mean_loss:.3f}, persistence {base.mean_loss:.3f}, model wins on {wins:.0%} of sequences")

# 4. What the hidden units look at.
for j in range(params.n_hidden):
    ev.write_pgm(out / f"feature_{j:02d}.pgm", ev.feature_map(params, j).pixels)

# 5. Rules. All 1024 bodies, one rule per (body, head).
t0 = time.perf_counter()
rs = rl.extract_rules(params, rl.enumerate_bodies(10), rl.GibbsConfig(k=100, chains=2000, seed=0), threads=4)
(out / "rules.txt").write_text(rl.serialize_rules(rs), encoding="utf-8")
print(f"{len(rs)} rules in {time.perf_counter() - t0:.0f}s; the most confident ones:")
for r in sorted(rs, key=lambda r: -r.prob)[:3]:
    print("  " + rl.format_rule(r))

# 6. Rule-based prediction decodes frames from hidden states alone.
pred = test.copy()
pred[:, T_IN:T_OUT] = rl.rule_predict(params, rs, test[:, :T_IN], T_OUT - T_IN, np.random.default_rng(0))
rule = ev.prediction_loss(test, pred, T_IN, T_OUT)
print(f"rule loss {rule.mean_loss:.3f} ({rule.mean_loss / model.mean_loss:.2f}x the model loss)")

ev.export_frames(test[0, T_IN:T_OUT], out / "truth")
ev.export_frames(tp.predict(params, test[0, :T_IN], 5, np.random.default_rng(0)), out / "model_pred")
ev.export_frames(pred[0, T_IN:T_OUT], out / "rule_pred")
best = max(rs, key=lambda r: (r.prob * sum(not lit.negated for lit in r.body), -r.body_pattern))
ev.rule_figure(params, best, out / "rule_figure")
print(f"frames, feature maps and a rule figure written under {out}")
