#!/usr/bin/env python3
"""Regenerate the bundled WHO-format fixture CSV.

Two synthetic country slices with realistic shapes:

* AU, 2020-01-25 .. 2020-08-19 (208 days): small first wave, larger second wave
* IR, 2020-01-03 .. 2020-10-06 (278 days): large first wave, sustained plateau

Counts are deterministic (fixed PRNG), non-negative, with cumulative columns
as exact running sums, so the file parses cleanly and the cumulative targets
are monotone.
"""

import math
import sys
from datetime import date, timedelta
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from horizonbench.data import SeriesRecord, write_who_csv
from horizonbench.nncore import Rng

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "who_sample.csv"


def bump(day: int, center: int, width: float, peak: float) -> float:
    return peak * math.exp(-((day - center) / width) ** 2)


def country_records(code, name, region, start, n_days, case_waves, death_waves, seed):
    rng = Rng(seed, f"fixture-{code}")
    records = []
    cum_cases = 0
    cum_deaths = 0
    for day in range(n_days):
        cases = sum(bump(day, *wave) for wave in case_waves)
        deaths = sum(bump(day, *wave) for wave in death_waves)
        cases = max(0, int(round(cases * (1.0 + 0.25 * (rng.next_float() - 0.5)))))
        deaths = max(0, int(round(deaths * (1.0 + 0.35 * (rng.next_float() - 0.5)))))
        cum_cases += cases
        cum_deaths += deaths
        records.append(SeriesRecord(
            date_reported=start + timedelta(days=day),
            country_code=code, country=name, who_region=region,
            new_cases=cases, cumulative_cases=cum_cases,
            new_deaths=deaths, cumulative_deaths=cum_deaths,
        ))
    return records


def main() -> None:
    au = country_records(
        "AU", "Australia", "WPRO", date(2020, 1, 25), 208,
        case_waves=[(60, 14.0, 420.0), (189, 22.0, 560.0)],
        death_waves=[(68, 16.0, 4.5), (196, 20.0, 14.0)],
        seed=20200125,
    )
    ir = country_records(
        "IR", "Iran", "EMRO", date(2020, 1, 3), 278,
        case_waves=[(88, 26.0, 2900.0), (160, 40.0, 2400.0), (255, 60.0, 2600.0)],
        death_waves=[(96, 28.0, 140.0), (170, 42.0, 115.0), (262, 62.0, 130.0)],
        seed=20200103,
    )
    OUT.parent.mkdir(parents=True, exist_ok=True)
    write_who_csv(au + ir, OUT)
    print(f"wrote {OUT} ({len(au)} AU rows, {len(ir)} IR rows)")


if __name__ == "__main__":
    main()
