"""Closed-loop scenario: sensor -> risk -> spray -> resources.

Runs a 120 s scenario with a background aerosol level and a sneeze at
t=30 s.  The controller watches the compensated fine-bin count, classifies
risk, and fires the mist actuator; the printout shows the reaction and the
resource drain.
"""

from smartmask import env as E
from smartmask.runner import (ScenarioConfig, ScheduledEmission,
                              run_scenario)


def main() -> None:
    cfg = ScenarioConfig(
        duration=120.0,
        emissions=[
            ScheduledEmission(0.0, E.EmissionEvent.preset(
                "humidifier", rate=3e8, duration=60.0)),
            ScheduledEmission(30.0, E.EmissionEvent.preset("sneeze")),
        ],
        seed=7,
    )
    report = run_scenario(cfg)

    print(f"{'t':>5s} {'fine raw':>9s} {'risk':>4s} {'spray':>5s} "
          f"{'liquid mL':>9s} {'batt mAh':>8s}  alerts")
    for rec in report.records:
        if rec.time_s % 10 == 0 or rec.spraying or rec.alerts:
            print(f"{rec.time_s:5.0f} {rec.fine_raw:9.1f} "
                  f"{rec.risk:>4d} {str(rec.spraying):>5s} "
                  f"{rec.liquid:9.3f} {rec.battery:8.2f}  "
                  f"{rec.alerts}")

    last = report.records[-1]
    s = report.summary
    print(f"\navg fine count {s['avg_mask_N_0p3_1p0']:.1f} #/cm^3; final "
          f"liquid {last.liquid:.3f} mL, battery {last.battery:.2f} mAh")


if __name__ == "__main__":
    main()
