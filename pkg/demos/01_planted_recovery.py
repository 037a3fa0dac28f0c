"""Recovering planted structure from a partially observed tensor.

A rank-3 non-negative tensor is observed on 30% of its (user, version)
slices. We fit CP models of increasing rank, score each on slices held out
from the fit, and keep the smallest rank whose score is within half a
percent of the best.
"""

import numpy as np

from nice import FitOptions, SparseMaskedTensor, factorize, holdout_slices, select_rank
from nice.factorization import heldout_fit_score, relative_error

rng = np.random.default_rng(0)
I, J, K, R = 50, 10, 20, 3
U, T, F = rng.random((I, R)), rng.random((J, R)), rng.random((K, R))
full = np.einsum("ir,jr,kr->ijk", U, T, F)
observed = rng.random((I, J)) < 0.3
tensor = SparseMaskedTensor.from_dense(full, observed)
print(f"{tensor.n_slices} of {I * J} slices observed, {tensor.nnz} stored entries")

# Held-out slices keep at least one fitted slice for their user and version,
# so their embeddings are still pinned down by the data.
fit_part, held = holdout_slices(tensor, 0.1, seed=0)

factors = factorize(fit_part, FitOptions(rank=3, max_iterations=2000, seed=1))
print(f"rank 3: fitted error {relative_error(factors, fit_part):.2e}, "
      f"held-out error {relative_error(factors, held):.2e}, {factors.fit.iterations} iterations")

sel = select_rank(fit_part, range(1, 7), heldout_fit_score(held), FitOptions(rank=1, max_iterations=1000, seed=1))
for rank, score in sorted(sel.scores.items()):
    print(f"  rank {rank}: held-out fit {score:.4f}{'  <- chosen' if rank == sel.rank else ''}")
