"""Spread of post-cycle <Sx> over tau versus the number of doublets N_mc.

N = 1000 holds 500 degenerate doublets, so the grid up to N_mc = 512 needs
N = 2000.  One phase table deep enough for the largest state serves every
point.  Takes a few minutes on one core.

    python demos/scaling_n2000.py
"""

import numpy as np

from aqis.metrics import eigenbasis_observable, scaling_fit, scrambling_sigma, tau_sweep
from aqis.models import lmg, observable_matrix
from aqis.propagation import RampProtocol, phase_table
from aqis.spectrum import doublet_pairing, spectral_decomposition
from aqis.states import microcanonical_sb

N = 2000
n_values = (4, 8, 16, 32, 64, 128, 256, 512)

model = lmg(N)
dec = spectral_decomposition(model, 0.0)
sx = observable_matrix(model, "Sx")
doublets = doublet_pairing(dec, sx)
top = max(n_values)
table = phase_table(model, RampProtocol(0.0, 1.25, 1e3), levels=top, tau_max=1e4)
V = eigenbasis_observable(dec, sx, np.r_[np.arange(top), dec.sizes[0] + np.arange(top)])

points = []
for n in n_values:
    sigma = scrambling_sigma(tau_sweep(microcanonical_sb(dec, doublets, n), table, V))
    points.append((n, sigma))
    print(f"N_mc={n:4d}  sigma(Sx)={sigma:.4f}")
fit = scaling_fit(points)
print(f"fitted exponent {fit.exponent:.3f} (rms log residual {fit.residual:.3f})")
