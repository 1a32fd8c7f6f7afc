# A short tour of the truncated hierarchical basis on a two-level mesh.
from thbafem import LevelCell, build_basis, initial_partition, is_admissible, mesh_refine
from thbafem.basis import SplineField, thb_eval
import numpy as np

P0 = initial_partition(base_cells=4, degree=2)
P = mesh_refine(P0, [LevelCell(0, 1, 1), LevelCell(0, 2, 1)])
print(f"{len(P)} cells on {P.nlevels} levels; admissible: {is_admissible(P)[0]}")

B = build_basis(P)
print("functions per level:", B.counts_per_level())

# Truncation removes the fine-level pieces that active fine functions already
# cover; the coarse function keeps only what lies outside that region.
F = next(F for F in B.functions if F.level == 0 and 1 in F.table)
print(f"\nlevel-0 function {F.index}: {len(F.table[1])} level-1 coefficients kept")
for p in [(0.3, 0.3), (0.45, 0.3), (0.7, 0.6)]:
    print(f"  T{F.index}{p} = {thb_eval(F, p):.4f}   (on a level-{P.locate(*p).level} cell)")

# The truncated functions sum to one everywhere.
ones = SplineField(B, np.ones(len(B)))
x, y = np.random.default_rng(0).random((2, 2000))
print("\nmax |sum - 1| at 2000 points:", float(np.abs(ones(x, y) - 1).max()))

# Each cell sees functions from at most two consecutive levels.
lo, hi = B.cell_level_range()
print("largest level span on a cell:", int((hi - lo).max()) + 1)
