"""Growth of active vertices against edges for three state spreads.

Heavier-tailed vertex popularity (larger sigma) leaves more of the pool
untouched, so the edge count grows faster than the vertex count. Prints
the fitted log-log slope per sigma and a small table of checkpoints.

    python3 demos/sparsity_slopes.py
"""

import numpy as np

from dynex.generative import default_checkpoints, sparsity_experiment, sparsity_slope

checkpoints = default_checkpoints(10_000)

for sigma in (4.0, 5.0, 10.0):
    rows = sparsity_experiment(sigma, 1e5, checkpoints, seeds=[1, 2, 3])
    print(f"sigma={sigma:g}  slope log|E| / log|V| = {sparsity_slope(rows):.2f}")
    seed1 = [(e, v) for s, e, v in rows if s == 1]
    for e, v in seed1[::6]:
        print(f"    {e:>6d} edges  {v:>6d} vertices  ratio {np.log(e) / np.log(v):.2f}")
