# %% [markdown]
# # Geodesic distance to a point and to a region
#
# A navigation room is rasterized into a 5 cm occupancy grid (obstacles grown by
# the robot radius). The distance field to a single cell and to a whole region
# of start cells of a Pick differ most near the target: inside the region the
# region field is zero everywhere.

# %%
from __future__ import annotations

import numpy as np

from mobilemanip.episodes import generate_episodes, scene_context
from mobilemanip.sampler import site_candidates
from mobilemanip.skills import SkillSpec

ep = generate_episodes("navroom", None, "train", 1, seed=0)[0]
ctx = scene_context(ep.layout.resolve())
grid = ctx.grid
print(f"grid {grid.width} x {grid.height} cells, {grid.navigable.mean():.0%} navigable")

# %%
spec = SkillSpec("pick", ep.targets[0].start.position, object_index=0)
region = site_candidates(grid, spec.site(None), mobile=True, radius=2.0)
region_field = ctx.field("demo-region", region.cells.cells)
one_cell = int(region.cells.cells[0])
point_field = ctx.field("demo-point", [one_cell])
print(f"region has {len(region)} cells")

# %% [markdown]
# Coarse picture of both fields (one character per 0.5 m, '#' = blocked,
# digits = metres to the goal, '*' = inside the region).


# %%
def sketch(meters: np.ndarray, step: int = 10) -> str:
    rows = []
    for iy in range(meters.shape[0] - 1, -1, -step):
        row = ""
        for ix in range(0, meters.shape[1], step):
            d = meters[iy, ix]
            row += "#" if not np.isfinite(d) else ("*" if d == 0 else str(min(int(d), 9)))
        rows.append(row)
    return "\n".join(rows)


print("region goal\n" + sketch(region_field.meters))
print("\npoint goal\n" + sketch(point_field.meters))

# %%
starts = ctx.main_indices[:: max(1, len(ctx.main_indices) // 500)]
gap = point_field.meters.ravel()[starts] - region_field.meters.ravel()[starts]
print(f"point minus region distance over {len(starts)} starts: mean {gap.mean():.2f} m, max {gap.max():.2f} m")
