"""Median errors of the MLE under the three additive noise families.

A small Monte Carlo (20 trials per object) at the default noise scales.
Run with ``python3 demos/noise_families.py``.
"""
from iodmle import bench

for family in ("gaussian", "laplace", "cauchy"):
    for per_site in (1, 3):
        config = bench.ScenarioConfig(
            noise_family=family, measurements_per_site=per_site, trials=20, estimators=("mle",)
        )
        stats = bench.summarize(bench.run_monte_carlo(config)).get("mle", config.radar_count, family)
        pos = stats["norm_error_position"]
        print(
            f"{family:>8}, {config.radar_count:2d} radars: median |dx| {pos['median']:.4f} m "
            f"(IQR {pos['q1']:.4f}..{pos['q3']:.4f}), failures {stats['failures']}"
        )
