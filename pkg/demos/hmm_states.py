"""Pick the number of hidden states for a Gaussian HMM by sample divergence.

Data come from a known four-state chain. One model per state count is fitted
with Baum-Welch, a synthetic series is drawn from each, and the count whose
sample histogram sits closest to the data wins.
"""

import numpy as np

from gazesynth import markov

A = np.full((4, 4), 0.1 / 3)
np.fill_diagonal(A, 0.9)
truth = markov.HmmModel(np.full(4, 0.25), A, np.array([0.0, 4.0, 8.0, 12.0]), np.ones(4))
obs = markov.hmm_sample(truth, 5000, seed=1000)

selection = markov.hmm_state_selection(obs, range(2, 6), seed=0)
for n, d in selection.rows():
    marker = "  <- selected" if n == selection.selected else ""
    print(f"{n} states: D_JS {d:.4f}{marker}")

# Five states can edge out four by splitting one regime in two; the fitted
# means below show whether that happened.
best = selection.fits[selection.selected].model
order = np.argsort(best.means)
print("fitted means   ", np.round(best.means[order], 2))
print("fitted std devs", np.round(np.sqrt(best.variances[order]), 2))
print("self-transitions", np.round(np.diag(best.A)[order], 3))
