"""Channel gains along the waveguide and what antenna placement buys.

Draws the default 30 m x 20 m hall with twelve devices, compares the
gain each device sees from equally spaced antennas, from a fixed
half-wavelength array in the middle, and from antennas moved for that
device alone.
"""

import numpy as np

from passfl import channel
from passfl.placement import gauss_seidel, place_for_user, uniform_placement
from passfl.scenario import generate_scenario

sc = generate_scenario(seed=1, num_devices=12)
print(f"carrier wavelength {sc.radio.wavelength_m * 1e3:.3f} mm, "
      f"minimum antenna spacing {sc.min_spacing_m * 1e3:.3f} mm")

uniform = uniform_placement(sc)
fixed = channel.conventional_positions(sc)
g_uniform = channel.gains(sc, uniform)
g_fixed = channel.gains(sc, fixed, guided=False)
g_user = np.array([channel.gain(sc, k, place_for_user(sc, k).placement) for k in range(sc.num_devices)])

print("\ndevice   x [m]    y [m]   G fixed    G uniform  G per-user")
for k in range(sc.num_devices):
    x, y = sc.devices[k].position
    print(f"{k:>4} {x:8.2f} {y:8.2f}  {g_fixed[k]:.3e}  {g_uniform[k]:.3e}  {g_user[k]:.3e}")

# one shared placement for everybody, weighted equally
res = gauss_seidel(sc, uniform, np.ones(sc.num_devices))
print(f"\nshared placement after {res.sweeps} sweeps: "
      + ", ".join(f"{x:.3f}" for x in res.placement.positions_m) + " m")
print(f"sum of gains {res.trace[0]:.4e} -> {res.trace[-1]:.4e} (never decreases along the sweep)")

rates = channel.rate(sc, g_user, sc.p_max) / 1e6
print(f"per-user rates at full power: {rates.min():.1f} to {rates.max():.1f} Mbit/s")
