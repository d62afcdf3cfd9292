"""What sparse window attention buys, analytically and on the clock.

Run:  python demos/03_attention_costs.py [--out demo_out]
"""

import argparse
from pathlib import Path

import numpy as np

from gvrlab.attention import bench_attention, count_flops, full_attention, sparse_local_attention

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_out")
out = Path(parser.parse_args().out)
out.mkdir(exist_ok=True)

# at a 1080p-like token grid the quadratic term dominates everything
grid = (5, 68, 120)
for mode in ("full", "swin", "sparse"):
    r = count_flops(grid, 1536, 24, mode, window=(12, 9), top_k=1)
    print(f"{mode:6s} attention {r.total / 1e12:8.2f} TFLOPs  ratio to full {r.ratio:.4f}")

# when every window is selected, sparse attention is full attention
g = np.random.default_rng(0)
q, k, v = (g.standard_normal((2, 6, 6, 16)) for _ in range(3))
windows = 2 * 4  # 2 frames x (6/3)*(6/3)
diff = np.abs(sparse_local_attention(q, k, v, 4, (3, 3), windows - 1) - full_attention(q, k, v, 4)).max()
print(f"saturated sparse vs full: {diff:.1e}")

rows = bench_attention(["full", "swin", "sparse"], [(1, 8, 8), (2, 12, 12), (2, 16, 16)], repetitions=3,
                       dim=32, heads=4, path=out / "bench.csv")
for i, mode in enumerate(rows["mode"]):
    size = f"{rows['Tl'][i]}x{rows['Hg'][i]}x{rows['Wg'][i]}"
    print(f"{mode:6s} {size:8s} {rows['analytic_flops'][i]:>10d} FLOPs  {rows['wall_ms'][i]:7.2f} ms")
print("wrote", out / "bench.csv")
