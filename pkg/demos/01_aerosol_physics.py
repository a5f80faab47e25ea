"""Sectional aerosol physics on its own: settling, evaporation, mist loading.

Releases a burst of respiratory droplets into the breathing box, then steps
the two-box column and prints how the size distribution migrates: water
evaporates droplets down-bin until they pin at their solute nuclei, large
bins settle into the ground box, and a mist plume scavenges ambient
particles by coalescence.
"""

import numpy as np

from smartmask import env as E


def show(label: str, state: E.EnvState) -> None:
    b, g = state.breathing, state.ground
    print(f"{label:>8s}  breathing {np.array2string(b.number, precision=1)}"
          f"  ground {np.array2string(g.number, precision=1)}"
          f"  mist {b.mist_number.sum():8.1f}  sub {b.sub_number:7.1f}")


def main() -> None:
    state = E.default_env(seed=0, rh=45.0)
    source = E.EmissionEvent.preset("humidifier", rate=1e9, duration=15.0)

    print("bins (um):", E.BinGrid().edges)
    show("t=0", state)
    for t in range(1, 61):
        plume = None
        if 20 <= t < 35:            # 15 s mist spray mid-run
            plume = E.MistPlume(droplet_rate_into_box=5e8,
                                droplet_diameter=2.0, push_away_rate=0.05)
        for _ in range(10):
            if t <= 15:             # water aerosol challenge for 15 s
                state = E.apply_emission(state, source, 0.1)
            state = E.step(state, plume, 0.1)
        if t % 10 == 0 or t in (15, 20, 35):
            show(f"t={t}s", state)

    d = E.coalesced_diameter(1.0, 2.0)
    print(f"\ncoalesced_diameter(1, 2) = {d:.6f} um "
          f"(volume check: {d**3:.6f} == {1**3 + 2**3})")
    v = E.stokes_settling_velocity(10.0, 1.0)
    print(f"stokes_settling_velocity(10 um, water) = {v * 100:.4f} cm/s")


if __name__ == "__main__":
    main()
