"""
How reputation reacts to a client that turns bad
================================================

A client behaves for twenty rounds, then starts getting caught every time
it is picked. Its overall record still looks fine, but its recent window
fills with malicious verdicts, and selection follows the worse of the two.
"""
import numpy as np

from fpd.defense import ClientRecord, select_clients

rec = ClientRecord()
rng = np.random.default_rng(0)
history = []
for t in range(11, 61):
    picked = 0 in select_clients({0: rec, **{k: ClientRecord(benign=50) for k in range(1, 8)}},
                                 t, seed=rng, min_selected=0)
    if picked:
        rec.push(benign=t <= 30)
    history.append((t, picked, rec.benign, rec.malicious, rec.beta_mean()))

print(" round  picked  B^O  M^O  Beta mean")
for t, picked, b, m, mean in history[::5]:
    print(f"{t:6d}  {str(picked):6s}  {b:3d}  {m:3d}  {mean:.3f}")

before = np.mean([p for t, p, *_ in history if t <= 30])
after = np.mean([p for t, p, *_ in history if t > 40])
print(f"selection rate while honest: {before:.2f}, after turning: {after:.2f}")
