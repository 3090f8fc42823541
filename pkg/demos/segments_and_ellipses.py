"""Segment a small map and print each patch's enclosing ellipse.

    python demos/segments_and_ellipses.py

The half-scaled ellipse of every patch sits inside the patch's hull up to
the MVEE tolerance; the last column is how far (in cell widths) its boundary
pokes out of the hull, which is a few thousandths at the default tolerance.
"""

import math

import numpy as np
from scipy.spatial import ConvexHull

from driftplan.flowfield import make_patchwork
from driftplan.segmentation import HomogeneityParams, cell_xy, segment_field

field, _ = make_patchwork(24, 24, regions=5, seed=7)
segs = segment_field(field, HomogeneityParams(), seed=0)
th = np.linspace(0, 2 * math.pi, 100, endpoint=False)

print(" id  cells  reps  heading  speed   area   protrusion")
for s in sorted(segs, key=lambda s: -len(s.cells))[:12]:
    e = s.ellipsoid
    inside = "-"
    pts = cell_xy(s.cells)
    if len(s.cells) >= 3 and np.linalg.matrix_rank(pts - pts.mean(0)) == 2:
        w, V = np.linalg.eigh(e.shape)
        ring = e.center + 0.5 * (V @ (np.vstack([np.cos(th), np.sin(th)]) / np.sqrt(w)[:, None])).T
        hull = ConvexHull(pts)
        inside = f"{max(0.0, (hull.equations[:, :2] @ ring.T + hull.equations[:, 2:]).max()):.4f}"
    print(f"{s.id:3d} {len(s.cells):6d} {len(s.representatives):5d} "
          f"{math.degrees(s.mean_heading):8.1f} {s.mean_speed:6.3f} {e.volume:7.2f}   {inside}")
