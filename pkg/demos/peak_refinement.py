# Where does the estimator send the refinement?
#
# The "peak" preset uses a narrow Gaussian load centred at (0.3, 0.7).  There is
# no closed-form solution, so the loop is driven by the estimator alone.  After
# a few sweeps the finest cells should cluster around the peak; the character
# map at the end shows the finest level present in each 1/32 x 1/32 block.
import numpy as np

from thbafem import make_problem, run_afem

spec = make_problem("peak", degree=3, theta=0.4, max_iter=10, tol=0.0)
run = run_afem(spec)

for r in run:
    print(f"iter {r.iter:2d}: {r.ncells:5d} cells, dim {r.ndof:5d}, eta {np.sqrt(r.eta2):.3e}, "
          f"marked {r.marked}")

P = run.partitions[-1]
n = 32
finest = np.zeros((n, n), dtype=int)
for c in P.cells:
    x0, x1, y0, y1 = c.bounds(P.base_cells)
    i0, i1 = int(x0 * n), max(int(x0 * n) + 1, int(round(x1 * n)))
    j0, j1 = int(y0 * n), max(int(y0 * n) + 1, int(round(y1 * n)))
    finest[i0:i1, j0:j1] = np.maximum(finest[i0:i1, j0:j1], c.level)

print("\nfinest level per block (top row is y = 1):")
for j in reversed(range(n)):
    print("".join(str(finest[i, j]) for i in range(n)))

top = max(c.level for c in P.cells)
centres = np.array([[(b[0] + b[1]) / 2, (b[2] + b[3]) / 2]
                    for b in (c.bounds(P.base_cells) for c in P.cells if c.level == top)])
print(f"\nlevel-{top} cells centred at {centres.mean(axis=0).round(3)} (load peak at (0.3, 0.7))")
# once the peak is resolved the largest indicators move to coarse far-field cells
ind = run.indicators[-1]
tau = ind.cells[int(np.argmax(ind.eta2))]
print("largest indicator now on", tuple(tau))
