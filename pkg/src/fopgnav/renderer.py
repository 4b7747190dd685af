"""Depth camera over circular obstacles modeled as infinite vertical cylinders.

Every column of the image is a horizontal ray cast against the circles; a
pixel's depth is the column's horizontal hit distance divided by the cosine
of its elevation angle, clipped to ``max_range``.

Three gradient modes exist: ``"none"`` (depth is a constant for the tape),
``"full"`` (exact per-pixel Jacobian with respect to x, y and heading) and
``"clipped"`` (each pixel's Jacobian row norm-clipped).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .diffcore.tensor import Tape, Tensor, primitive

INSIDE_EPS = 1e-3
GRAD_MODES = ("none", "full", "clipped")


@dataclass
class ObstacleField:
    """Circles as ``centers (m, 2)`` and ``radii (m,)``."""

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    arena_half_extent: float = 20.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise ValueError("centers and radii differ in length")
        if (self.radii <= 0).any():
            raise ValueError("obstacle radii must be positive")

    @classmethod
    def from_circles(cls, circles, arena_half_extent: float = 20.0) -> ObstacleField:
        circles = list(circles)
        if not circles:
            return cls(arena_half_extent=arena_half_extent)
        c = np.array([[cx, cy] for (cx, cy), _ in circles], dtype=np.float64)
        r = np.array([rad for _, rad in circles], dtype=np.float64)
        return cls(c, r, arena_half_extent)

    def __len__(self) -> int:
        return len(self.radii)

    def transformed(self, angle: float = 0.0, shift=(0.0, 0.0)) -> ObstacleField:
        """Rotate about the origin by ``angle`` then translate by ``shift``."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return ObstacleField(self.centers @ rot.T + np.asarray(shift), self.radii.copy(),
                             self.arena_half_extent)

    # plain-text scene format: one "cx cy r" line per circle
    def to_text(self) -> str:
        return "".join(f"{float(cx)!r} {float(cy)!r} {float(r)!r}\n"
                       for (cx, cy), r in zip(self.centers, self.radii))

    @classmethod
    def from_text(cls, text: str) -> ObstacleField:
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"scene line {lineno}: expected 'cx cy r', got {line!r}")
            rows.append([float(p) for p in parts])
        if not rows:
            return cls()
        a = np.array(rows)
        return cls(a[:, :2], a[:, 2])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> ObstacleField:
        return cls.from_text(Path(path).read_text())


@dataclass
class FieldBatch:
    """Per-environment fields padded to a common obstacle count."""

    centers: np.ndarray  # (n, m, 2)
    radii: np.ndarray  # (n, m)
    mask: np.ndarray  # (n, m) bool

    @classmethod
    def stack(cls, fields_: list[ObstacleField]) -> FieldBatch:
        n = len(fields_)
        m = max([len(f) for f in fields_] + [1])
        centers = np.zeros((n, m, 2))
        radii = np.ones((n, m))
        mask = np.zeros((n, m), dtype=bool)
        for i, f in enumerate(fields_):
            k = len(f)
            centers[i, :k] = f.centers
            radii[i, :k] = f.radii
            mask[i, :k] = True
        return cls(centers, radii, mask)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def replace(self, i: int, f: ObstacleField) -> None:
        k = len(f)
        if k > self.centers.shape[1]:
            extra = k - self.centers.shape[1]
            n = len(self)
            self.centers = np.concatenate([self.centers, np.zeros((n, extra, 2))], axis=1)
            self.radii = np.concatenate([self.radii, np.ones((n, extra))], axis=1)
            self.mask = np.concatenate([self.mask, np.zeros((n, extra), dtype=bool)], axis=1)
        self.centers[i] = 0.0
        self.radii[i] = 1.0
        self.mask[i] = False
        self.centers[i, :k] = f.centers
        self.radii[i, :k] = f.radii
        self.mask[i, :k] = True

    def field(self, i: int) -> ObstacleField:
        m = self.mask[i]
        return ObstacleField(self.centers[i, m], self.radii[i, m])


@dataclass(frozen=True)
class CameraModel:
    width: int = 16
    height: int = 12
    horizontal_fov: float = np.pi / 2
    vertical_fov: float = np.pi / 3
    mount_height: float = 0.0
    max_range: float = 10.0

    @property
    def azimuths(self) -> np.ndarray:
        """Column angles relative to heading, left (positive) to right."""
        i = np.arange(self.width)
        return self.horizontal_fov * (0.5 - (i + 0.5) / self.width)

    @property
    def elevations(self) -> np.ndarray:
        """Row angles, top to bottom."""
        j = np.arange(self.height)
        return self.vertical_fov * (0.5 - (j + 0.5) / self.height)

    def ray_directions(self, heading: float = 0.0) -> np.ndarray:
        """Unit 3D ray directions, shape ``(height, width, 3)``."""
        az = heading + self.azimuths[None, :]
        el = self.elevations[:, None]
        return np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                            np.sin(el)), axis=-1)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


def ray_circle_depth(origin, direction, center, radius, max_range: float = 10.0) -> float:
    """Distance along ``direction`` to the first forward hit with a circle.

    Returns ``max_range`` on a miss or beyond range and ``INSIDE_EPS`` when the
    origin lies inside the circle.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    oc = o - np.asarray(center, dtype=np.float64)
    b = float(d @ oc)
    c = float(oc @ oc) - radius * radius
    if c < 0:
        return INSIDE_EPS
    disc = b * b - c
    if disc < 0:
        return max_range
    t = -b - np.sqrt(disc)
    if t < 0 or t >= max_range:
        return max_range
    return float(t)


def _cast(px, py, heading, fb: FieldBatch, cam: CameraModel, with_grad: bool):
    """Column hit distances ``(n, w)`` and optionally their state Jacobians ``(n, w, 3)``."""
    az = heading[:, None] + cam.azimuths[None, :]  # (n, w)
    dx, dy = np.cos(az), np.sin(az)
    ocx = px[:, None] - fb.centers[:, :, 0]  # (n, m)
    ocy = py[:, None] - fb.centers[:, :, 1]
    cc = ocx * ocx + ocy * ocy - fb.radii * fb.radii  # (n, m)
    b = dx[:, :, None] * ocx[:, None, :] + dy[:, :, None] * ocy[:, None, :]  # (n, w, m)
    disc = b * b - cc[:, None, :]
    valid = fb.mask[:, None, :] & (disc >= 0)
    s = np.sqrt(np.where(valid, disc, 0.0))
    t = -b - s
    hit = valid & (t >= 0)
    t_hit = np.where(hit, t, np.inf)
    idx = np.argmin(t_hit, axis=-1)  # (n, w)
    t_min = np.take_along_axis(t_hit, idx[..., None], axis=-1)[..., 0]
    inside = (fb.mask & (cc < 0)).any(axis=-1)  # (n,)
    col = np.where(np.isfinite(t_min), np.minimum(t_min, cam.max_range), cam.max_range)
    col = np.where(inside[:, None], INSIDE_EPS, col)
    if not with_grad:
        return col, None, 0

    # d t / d origin = -d - (b d - oc) / s ;  d t / d dir = -oc (1 + b / s)
    bsel = np.take_along_axis(b, idx[..., None], axis=-1)[..., 0]
    ssel = np.take_along_axis(s, idx[..., None], axis=-1)[..., 0]
    ocx_s = np.take_along_axis(ocx, idx, axis=-1)
    ocy_s = np.take_along_axis(ocy, idx, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gx = -dx - (bsel * dx - ocx_s) / ssel
        gy = -dy - (bsel * dy - ocy_s) / ssel
        k = 1.0 + bsel / ssel
        gtx, gty = -ocx_s * k, -ocy_s * k
        gth = gtx * (-dy) + gty * dx
    jac = np.stack([gx, gy, gth], axis=-1)
    live = np.isfinite(t_min) & (t_min < cam.max_range) & ~inside[:, None]
    bad = live[..., None] & ~np.isfinite(jac)
    n_bad = int(bad.any(axis=-1).sum())
    jac = np.where(live[..., None] & np.isfinite(jac), jac, 0.0)
    return col, jac, n_bad


def _to_image(col: np.ndarray, cam: CameraModel) -> np.ndarray:
    inv_cos = 1.0 / np.cos(cam.elevations)  # (h,)
    depth = col[:, None, :] * inv_cos[None, :, None]  # (n, h, w)
    return np.minimum(depth, cam.max_range).reshape(col.shape[0], -1)


def _state_arrays(state):
    return (np.asarray(state.x.data if isinstance(state.x, Tensor) else state.x, dtype=np.float64),
            np.asarray(state.y.data if isinstance(state.y, Tensor) else state.y, dtype=np.float64),
            np.asarray(state.heading.data if isinstance(state.heading, Tensor) else state.heading,
                       dtype=np.float64))


def _as_batch(field_, n: int) -> FieldBatch:
    if isinstance(field_, FieldBatch):
        return field_
    return FieldBatch.stack([field_] * n)


def render_depth(state, field_, cam: CameraModel = CameraModel()) -> np.ndarray:
    """Depth images ``(n, height*width)`` in meters, row-major per image."""
    px, py, th = _state_arrays(state)
    fb = _as_batch(field_, px.shape[0])
    col, _, _ = _cast(px, py, th, fb, cam, with_grad=False)
    return _to_image(col, cam)


@dataclass
class RenderDiagnostics:
    nonfinite_rays: int = 0
    clipped_rays: int = 0


def render_depth_diff(state, field_, cam: CameraModel = CameraModel(), mode: str = "full",
                      clip_norm: float = 1.0, tape: Tape | None = None,
                      diagnostics: RenderDiagnostics | None = None) -> Tensor:
    """Depth images as a Tensor that depends on ``state.x``, ``state.y``, ``state.heading``.

    Forward values are identical to :func:`render_depth`. ``mode="none"``
    returns a constant. Pixels at ``max_range`` (misses and clipped hits)
    and pixels whose Jacobian is non-finite near tangency contribute zero.
    """
    if mode not in GRAD_MODES:
        raise ValueError(f"unknown render gradient mode {mode!r}")
    px, py, th = _state_arrays(state)
    fb = _as_batch(field_, px.shape[0])
    if mode == "none":
        return Tensor(render_depth(state, fb, cam))

    col, jac, n_bad = _cast(px, py, th, fb, cam, with_grad=True)
    img = _to_image(col, cam)
    inv_cos = 1.0 / np.cos(cam.elevations)
    n = px.shape[0]
    # (n, h, w, 3) per-pixel Jacobian
    pj = jac[:, None, :, :] * inv_cos[None, :, None, None]
    unclipped = (col[:, None, :] * inv_cos[None, :, None]) < cam.max_range
    pj = np.where(unclipped[..., None], pj, 0.0)
    n_clipped = 0
    if mode == "clipped":
        norms = np.linalg.norm(pj, axis=-1, keepdims=True)
        over = norms > clip_norm
        n_clipped = int(over.sum())
        pj = np.where(over, pj * (clip_norm / np.where(over, norms, 1.0)), pj)
        # rounding can leave a clipped row one ulp above the bound
        for _ in range(4):
            high = np.linalg.norm(pj, axis=-1, keepdims=True) > clip_norm
            if not high.any():
                break
            pj = np.where(high, pj * (1.0 - 2.0 ** -52), pj)
    pj = pj.reshape(n, -1, 3)
    if diagnostics is not None:
        diagnostics.nonfinite_rays += n_bad
        diagnostics.clipped_rays += n_clipped

    def fwd(x, y, h):
        c, _, _ = _cast(x, y, h, fb, cam, with_grad=False)
        return _to_image(c, cam)

    def vjp_factory(o, x, y, h):
        return lambda g: (np.einsum("np,np->n", g, pj[..., 0]),
                          np.einsum("np,np->n", g, pj[..., 1]),
                          np.einsum("np,np->n", g, pj[..., 2]))

    xs = [state.x, state.y, state.heading]
    xs = [v if isinstance(v, Tensor) else Tensor(v) for v in xs]
    out = primitive("render", lambda *a: img, vjp_factory, *xs)
    if out.tape is not None:
        out.tape.nodes[-1].fwd = fwd
    return out


def pixel_jacobian(state, field_, cam: CameraModel = CameraModel(), mode: str = "full",
                   clip_norm: float = 1.0) -> np.ndarray:
    """Per-pixel gradient rows ``(n, pixels, 3)`` as used by the differentiable renderer."""
    tape = Tape()
    px, py, th = _state_arrays(state)
    st = SimpleNamespace(x=tape.watch(px, "x"), y=tape.watch(py, "y"),
                         heading=tape.watch(th, "heading"))
    out = render_depth_diff(st, field_, cam, mode, clip_norm)
    n, p = out.shape
    rows = np.zeros((n, p, 3))
    if out.tape is None:
        # "none": the image is a constant
        return rows
    node = tape.nodes[-1]
    for k in range(p):
        g = np.zeros((n, p))
        g[:, k] = 1.0
        rows[:, k, :] = np.stack(node.vjp(g), axis=-1)
    return rows


def normalize_depth(depth, max_range: float):
    """Inverse-depth features, zero at ``max_range``; accepts arrays or Tensors."""
    return max_range / depth - 1.0


def write_pgm(path, depth: np.ndarray, cam: CameraModel = CameraModel()) -> None:
    """16-bit binary PGM, values are millimeters."""
    img = np.asarray(depth, dtype=np.float64).reshape(cam.height, cam.width)
    mm = np.clip(np.rint(img * 1000.0), 0, 65535).astype(">u2")
    header = f"P5\n{cam.width} {cam.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + mm.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`; returns depth in meters."""
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)
    return data.astype(np.float64) / 1000.0
