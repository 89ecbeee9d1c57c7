"""A three-unit machine whose dynamics are known exactly.

    python3 demos/cyclic_shift.py

Each hidden unit owns a block of eight pixels, and the transition weights
say "unit j turns on iff unit j-1 was on". Rule extraction should recover
that shift from the model alone, and rolling the rules forward should cycle
the lit block with period 3.
"""
import numpy as np

from rtgb import rules as rl
from rtgb import temporal as tp

m, block = 3, 8
w = np.kron(np.eye(m), np.full((block, 1), 0.5))
u = 20.0 * np.roll(np.eye(m), 1, axis=0)  # u[j, j-1] = 20
params = tp.RtgbParams(w=w, u=u, b=np.zeros(m * block), c=np.full(m, -11.0), s=np.ones(m * block))

rs = rl.extract_rules(params, rl.enumerate_bodies(m), rl.GibbsConfig(k=100, chains=20000, seed=0))
print(rl.serialize_rules(rs), end="")

frame = 6.25 * np.repeat([1.0, 0.0, 0.0], block)
frames = rl.rule_predict(params, rs.rounded(), frame[None], 6, np.random.default_rng(0))
print("lit block per predicted frame:", [int(np.argmax(f.reshape(m, block).sum(axis=1))) for f in frames])
exact = tp.exact_transition_distribution(params, np.array([1.0, 0.0, 0.0]))
print(f"exact P(next = [0,1,0] | [1,0,0]) = {exact[0b010]:.6f}")
