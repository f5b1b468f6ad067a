"""Draw a panel with a known effect, fit every estimator, compare with the truth.

    python demos/simulated_recovery.py [seed]
"""

import sys

from synthcontrol.analysis import default_windows, span, summarize_effect
from synthcontrol.inference import run_placebo, test_sharp_null
from synthcontrol.pool import DonorPool
from synthcontrol.scm import Estimator, build_problem, fit
from synthcontrol.simgen import DgpSpec, generate

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
years = tuple(range(2004, 2020))
spec = DgpSpec(
    n_units=40, years=years, gap_years=(), treatment_year=2012, hull_size=6,
    noise_sd=4.0, effect={y: 30.0 for y in years if y >= 2015},
    outcome_keys=("numeracy_y3",), covariates=False, seed=seed,
)
panel, truth = generate(spec)
pool = DonorPool(truth.treated, panel.unit_ids[1:])
problem = build_problem(panel, pool, "numeracy_y3", spec.treatment_year)
window = span(default_windows(spec.treatment_year, problem.periods).strict)
true_att = truth.att("numeracy_y3", [y for y in problem.periods if window[0] <= y <= window[1]])

print(f"true ATT over {window[0]}-{window[1]}: {true_att:.2f}")
for est in (Estimator.ABADIE_NOCOV, Estimator.FERMAN, Estimator.HSIAO, Estimator.CHERN):
    f = fit(problem, est)
    s = summarize_effect(f, window)
    print(f"{est.value:16s} ATT {s.att_points:7.2f}   pre-MSPE {f.pre_mspe:8.3f}")

study = run_placebo(panel, pool, problem, Estimator.ABADIE_NOCOV)
d = test_sharp_null(study, 0.05)
print(f"placebo p = {d.p_value:.3f} over {study.n_entries} units "
      f"({len(study.excluded)} excluded); reject at 0.05: {d.reject}")
