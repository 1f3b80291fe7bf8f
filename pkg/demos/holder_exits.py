"""Brownian paths are Hölder below one half and not above it.

At alpha = 0.25 the second moment of the Hölder seminorm barely moves when
the grid is refined, and the chance of leaving a Hölder ball of radius k
before the horizon falls off quickly along a doubling ladder of k. At
alpha = 0.75 the same moment keeps growing as the grid gets finer.
"""
import warnings

from pathhjb.verify import UnstableHolderWarning, brownian_sampler, kolmogorov_check

low = kolmogorov_check(brownian_sampler(), 0.25, n_paths=4000, seed=0)
print(f"alpha=0.25: moments {low['moments']}, ratio {low['ratio']:.3f}")
for k, p in low["exit_profile"].items():
    print(f"  P(exit before T | k={k}) = {p:.4f}")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", UnstableHolderWarning)
    high = kolmogorov_check(brownian_sampler(), 0.75, n_paths=4000, seed=0)
print(f"alpha=0.75: moments {high['moments']}, growth {high['ratio']:.2f}x")
