"""The two test landscapes and what a brute-force grid says about them."""

import numpy as np

from epiga.benchmarks import bumpy, grid_oracle, make_bumpy, make_stalagmite, stalagmite

print("bumpy(1.393, 0.006) =", round(bumpy(1.393, 0.006), 4))
print("bumpy(0.031, 1.441) =", round(bumpy(0.031, 1.441), 4))
print("stalagmite(0.0667, 0.0667) =", round(stalagmite(0.0667, 0.0667), 4))

# Local maxima on a 0.001 grid. BUMPY's two best peaks hug the axes: the
# grid's best points are one step away from the edge.
for peak in grid_oracle(make_bumpy(), 0.001, box=((1e-6, 3.0), (1e-6, 3.0)))[:4]:
    print("bumpy peak", peak.position, round(peak.height, 4))

for peak in grid_oracle(make_stalagmite(), 0.001)[:3]:
    print("stalagmite peak", peak.position, round(peak.height, 4))

# Along the curve x*y = 0.75 the landscape tops out near 0.365 and 0.274,
# the values often quoted as the next BUMPY peaks.
xs = np.linspace(0.3, 2.5, 200001)
f = make_bumpy().evaluate(np.stack([xs, 0.75 / xs], axis=-1))
left, right = xs < 1.0, xs > 1.0
print("on x*y=0.75:", round(f[right].max(), 4), "at x =", round(xs[right][f[right].argmax()], 4))
print("on x*y=0.75:", round(f[left].max(), 4), "at x =", round(xs[left][f[left].argmax()], 4))
