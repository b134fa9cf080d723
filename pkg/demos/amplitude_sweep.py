"""How the input amplitude controls identification quality.

For each amplitude in {10, 50, 100} / sqrt(Ts) and both measured
quadratures, one record is identified with a one-mode model. At low
amplitude the quantum noise dominates: fits are near 50% and the classical
estimate sits farther from the realizable set (larger gamma). At high
amplitude the classical estimate is almost realizable and fits exceed 90%.

Run with ``python demos/amplitude_sweep.py [seed]``.
"""

import sys

import numpy as np

from qsysid import (bisection_identify, generate_prbs, n4sid_estimate, predict,
                    quadrature_select, simulate_homodyne, split_record, to_canonical)
from qsysid.pipeline import PipelineConfig
from qsysid.subspace import relative_energy
from qsysid.validation import fit_percent, fpe

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
cfg = PipelineConfig()
cavity = cfg.system()

print(f"{'quad':4s} {'Omega':>12s} {'energy':>7s} {'gamma':>10s} {'FPE/1e6':>8s}  fits (%)")
for quad in cfg.quadratures:
    D = quadrature_select(cavity, quad).D_meas
    for omega in cfg.omegas:
        inputs = generate_prbs(6, cfg.Ts, cfg.duration, cfg.amplitude(omega), seed)
        est, val = split_record(simulate_homodyne(cavity, quad, inputs, seed), 20.0, 30.0, 30.0)
        classical = n4sid_estimate(est, 1, D, strict=True)
        result = bisection_identify(classical, D, amplitude=inputs.amplitude)
        res = predict(to_canonical(result), val, x0="estimate")
        energy = relative_energy(classical.sing_values)[0]
        fits = np.round(fit_percent(res, val), 1)
        print(f"{quad:4s} {f'{omega:g}/sqrt(Ts)':>12s} {energy:7.2f} {result.gamma_final:10.3e} "
              f"{fpe(res) / 1e6:8.3f}  {fits}")
