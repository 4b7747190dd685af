"""Render a depth image and look at its Jacobian under the three gradient modes.

Writes ``depth.pgm`` (16-bit, millimeters) into the working directory.

    python3 demos/02_depth_camera.py
"""

import numpy as np

from fopgnav.dynamics import BodyState
from fopgnav.renderer import CameraModel, ObstacleField, pixel_jacobian, render_depth, write_pgm

cam = CameraModel()
field = ObstacleField.from_circles([((3.0, 0.6), 0.5), ((5.0, -1.2), 0.9), ((8.0, 2.0), 1.0)])
state = BodyState.make(0.0, 0.0, 0.05)

depth = render_depth(state, field, cam)[0].reshape(cam.height, cam.width)
# every row is the same: obstacles are vertical cylinders
print("depth along a row (m):")
print(np.array2string(depth[0], precision=2, max_line_width=120))
write_pgm("depth.pgm", depth, cam)

for mode in ("none", "full", "clipped"):
    jac = pixel_jacobian(state, field, cam, mode, clip_norm=1.0)[0]
    norms = np.linalg.norm(jac, axis=-1)
    print(f"{mode:>7}: largest per-pixel gradient norm {norms.max():8.3f}, "
          f"pixels with a gradient {int((norms > 0).sum())}")
