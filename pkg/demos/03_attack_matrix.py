"""
A small attack-by-defense matrix
================================

Twelve clients, a quarter of them compromised, on the synthetic blob task.
Every defense faces every attack for 20 rounds and we print the final test
accuracy. Takes about a minute.
"""
import time

from fpd import ExperimentConfig, run_experiment

base = ExperimentConfig(K=12, f=3, T=20, n_train=3000, n_test=600, seed=1)
attacks = ["none", "lie", "ipm", "sf", "lf", "mixed"]
defenses = ["fedavg", "median", "krum", "faba", "fpd"]

t0 = time.time()
rows = {}
for defense in defenses:
    rows[defense] = [run_experiment(base.replace(defense=defense, attack=a))[-1].accuracy for a in attacks]

print("defense  " + "  ".join(f"{a:>6s}" for a in attacks))
for defense, accs in rows.items():
    print(f"{defense:7s}  " + "  ".join(f"{100 * x:6.1f}" for x in accs))
print(f"({time.time() - t0:.0f}s)")
