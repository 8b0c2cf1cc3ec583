"""
Packing 64 frames into 16 grids
===============================

The persuasion expert sees a whole stretch of the ad in one request: 64
evenly spaced frames, four per 2x2 grid, read left to right and top to bottom.
This script plans the sampling for a 30 s ad and renders the grids.
"""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from adreason.ingest import VideoDatabase, VideoMeta
from adreason.tools import CELL_ORDER, compose_grid, plan_grid_projection, render_grids

root = Path(tempfile.mkdtemp(prefix="adreason-grid-"))
frames = {}
for t in range(30):
    rel = f"frames/{t}.png"
    (root / rel).parent.mkdir(parents=True, exist_ok=True)
    # a hue sweep so each second is visibly distinct
    Image.new("RGB", (64, 36), (8 * t, 255 - 8 * t, 128)).save(root / rel)
    frames[float(t)] = rel
db = VideoDatabase(VideoMeta("sweep", 30.0), [], frames=frames, root=root)

# Only 30 frames exist for 64 sample slots, so some frames fill two cells.
plan = plan_grid_projection(db, 0.0, 30.0)
print(f"{len(plan.batches)} grids of {plan.grid_width}x{plan.grid_height} px")
for b in (0, 1, 15):
    print(f"grid {b:2d}: " + "  ".join(f"{CELL_ORDER[c]}={t:g}s" for c, t in plan.cells(b).items()))
used = sorted(set(plan.timestamps))
print(f"{len(used)} distinct frames used, {64 - len(used)} repeats")

# Rendered grids are cached on disk under a digest of the plan.
paths = render_grids(db, plan)
print(f"first grid written to {paths[0].relative_to(root)}")

# Each quadrant of a composed grid is exactly its source frame.
grid = np.asarray(compose_grid([root / frames[float(t)] for t in plan.batches[0]]), dtype=float)
h, w = grid.shape[0] // 2, grid.shape[1] // 2
for name, quad in zip(CELL_ORDER, (grid[:h, :w], grid[:h, w:], grid[h:, :w], grid[h:, w:])):
    print(name, np.round(quad.reshape(-1, 3).mean(axis=0)).astype(int))
