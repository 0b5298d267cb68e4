"""Kernel and neighbor-search basics.

Evaluates the smoothing kernel along a ray, confirms the unit integral
by quadrature, and compares the uniform-grid neighbor search against a
brute-force pass on a small random cloud.
"""

import time

import numpy as np

from fluidprobe.kernels import kernel_gradient, kernel_value
from fluidprobe.neighbors import build_grid

h = 0.1

print("cubic spline kernel, h = 0.1")
print(f"{'r/h':>5} {'W':>12} {'|grad W|':>12}")
for q in (0.0, 0.25, 0.5, 0.75, 1.0):
    r = np.array([q * h, 0.0, 0.0])
    w = float(kernel_value(r, h))
    g = float(np.linalg.norm(kernel_gradient(r, h)))
    print(f"{q:5.2f} {w:12.2f} {g:12.2f}")

# midpoint quadrature over the support cube
n = 96
edges = np.linspace(-h, h, n + 1)
mids = 0.5 * (edges[:-1] + edges[1:])
x, y, z = np.meshgrid(mids, mids, mids, indexing="ij")
pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1)
integral = kernel_value(pts, h).sum() * (2 * h / n) ** 3
print(f"\nquadrature integral of W: {integral:.8f} (expected 1)")

rng = np.random.default_rng(0)
pos = rng.uniform(-1.0, 1.0, size=(3000, 3))
cutoff = 0.15
t0 = time.perf_counter()
grid = build_grid(pos, cutoff, (np.full(3, -1.0), np.full(3, 1.0)))
starts, idx = grid.query_csr()
t_grid = time.perf_counter() - t0

t0 = time.perf_counter()
d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
brute_counts = (d2 <= cutoff * cutoff).sum(1) - 1
t_brute = time.perf_counter() - t0

counts = np.diff(starts)
assert np.array_equal(counts, brute_counts)
print(f"\n3000 random particles, cutoff {cutoff}:")
print(f"  neighbor counts min/mean/max: {counts.min()}/{counts.mean():.1f}/{counts.max()}")
print(f"  grid {t_grid * 1e3:.1f} ms vs brute force {t_brute * 1e3:.1f} ms, identical counts")
