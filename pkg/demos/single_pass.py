"""Estimate one satellite's state from three radars, with both estimators.

Run with ``python3 demos/single_pass.py``.
"""
import numpy as np

from iodmle import frames, measmodel, mle, scenario, trilat

rng = np.random.default_rng(7)
sites = scenario.make_sites()
truth = frames.kepler_to_cartesian(scenario.reference_objects()[0])
print(f"true position  {truth.position} m")
print(f"true velocity  {truth.velocity} m/s")

for k, site in enumerate(sites):
    elev = np.degrees(frames.elevation_angle(site.position, truth.position))
    print(f"site {k}: elevation {elev:5.1f} deg")

ideal = measmodel.ideal_measurements(truth, sites)
noisy = measmodel.apply_noise(ideal, "gaussian", sites, rng)
print("\nrange residuals (m):", noisy.ranges - ideal.ranges)

est, report = mle.solve(noisy, sites)
tri = trilat.trilaterate_measurements(noisy, sites)
print(f"\nMLE: {report.iterations} iterations, converged={report.converged}")
for name, s in (("MLE", est), ("trilateration", tri)):
    dx = np.linalg.norm(s.position - truth.position)
    dv = np.linalg.norm(s.velocity - truth.velocity)
    print(f"{name:>14}: position error {dx:.4f} m, velocity error {dv:.4f} m/s")

print()
# more looks per site shrink the typical MLE error; trilateration cannot use them
for per_site in (1, 5):
    ideal_n = measmodel.ideal_measurements(truth, sites, per_site=per_site)
    errs = []
    for _ in range(20):
        e, _ = mle.solve(measmodel.apply_noise(ideal_n, "gaussian", sites, rng), sites)
        errs.append(np.linalg.norm(e.position - truth.position))
    print(f"MLE with {3 * per_site:2d} triples: median position error over 20 draws {np.median(errs):.4f} m")
