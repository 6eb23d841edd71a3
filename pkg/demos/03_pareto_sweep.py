"""Latency against left-out data: sweeping the trade-off weight.

Latency is measured in seconds and the learning penalty in samples, so
the interesting weights sit just below one. The default grid brackets
the exchange rates at which devices drop out of the schedule.
"""

from passfl import driver
from passfl.scenario import generate_scenario

sc = generate_scenario(seed=1, num_devices=12)
grid = driver.scenario_lambda_grid(sc)
points = driver.pareto_sweep(sc, grid)

print("  1 - lambda     tau_t [s]   left-out samples   on front")
for p in points:
    print(f"  {1 - p.lam:10.3e}  {p.tau_t:10.4f}   {p.f_learn:14.0f}   {'no' if p.dominated else 'yes'}")

front = driver.retained(points)
print(f"\n{len(front)} of {len(points)} points are non-dominated")

for power in (0.05, 0.5):
    front = driver.retained(driver.pareto_sweep(sc.with_devices(p_max_w=power), grid))
    print(f"P = {power} W: " + ", ".join(f"({p.tau_t:.3f} s, {p.f_learn:.0f})" for p in front))
