"""Parametric instrument meshes, rigid transforms and voxelization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .volume import Volume

KINDS = ("screw", "drill", "robot")
DIAMETER_MM = 3.0
SCREW_DIAGONAL_MM = 6.5
ROBOT_FRONT_DIAGONAL_MM = 13.15
ROBOT_BEND_LIMIT = 30.0
MU_INSTRUMENT = 0.5
SEGMENTS = 32


class VoxelizationWarning(UserWarning):
    pass


@dataclass
class InstrumentMesh:
    """Closed triangle mesh in instrument coordinates (mm).

    ``components`` lists ``(first, stop)`` triangle ranges; each range is a
    watertight solid and the instrument is their union.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    origin: np.ndarray
    main_axis: np.ndarray
    kind: str
    robot_bend: float = 0.0
    components: tuple[tuple[int, int], ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.origin = np.asarray(self.origin, dtype=float)
        self.main_axis = np.asarray(self.main_axis, dtype=float)
        if not self.components:
            self.components = ((0, len(self.triangles)),)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def component_vertex_ids(self, c: int) -> np.ndarray:
        lo, hi = self.components[c]
        return np.unique(self.triangles[lo:hi])

    def signed_volume(self) -> float:
        t = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def _lathe(profile, segments=SEGMENTS, offset=0):
    """Solid of revolution about local +x from ``[(x, r), ...]``.

    Profile ends must have ``r == 0`` (poles) so the surface is closed.
    """
    ang = 2 * np.pi * np.arange(segments) / segments
    cos, sin = np.cos(ang), np.sin(ang)
    verts, rings = [], []
    for x, r in profile:
        if r == 0:
            rings.append([offset + len(verts)])
            verts.append((x, 0.0, 0.0))
        else:
            rings.append(list(range(offset + len(verts), offset + len(verts) + segments)))
            verts.extend((x, r * c, r * s) for c, s in zip(cos, sin))
    tris = []
    for a, b in zip(rings[:-1], rings[1:]):
        for k in range(segments):
            k1 = (k + 1) % segments
            if len(a) == 1:
                tris.append((a[0], b[k1], b[k]))
            elif len(b) == 1:
                tris.append((a[k], a[k1], b[0]))
            else:
                tris.append((a[k], a[k1], b[k1]))
                tris.append((a[k], b[k1], b[k]))
    return np.array(verts), np.array(tris)


def _uv_sphere(radius, center, segments=SEGMENTS, offset=0):
    n_lat = segments // 2
    lat = np.linspace(-np.pi / 2, np.pi / 2, n_lat + 1)
    profile = [(radius * np.sin(t), radius * np.cos(t)) for t in lat]
    profile[0] = (-radius, 0.0)
    profile[-1] = (radius, 0.0)
    v, t = _lathe(profile, segments, offset)
    return v + np.asarray(center), t


def _orient_outward(verts, tris):
    t = verts[tris]
    vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum()
    return tris if vol > 0 else tris[:, ::-1].copy()


def _assemble(parts):
    verts, tris, comps = [], [], []
    nv = nt = 0
    for v, t in parts:
        t = _orient_outward(v, t)
        verts.append(v)
        tris.append(t + nv)
        comps.append((nt, nt + len(t)))
        nv += len(v)
        nt += len(t)
    return np.vstack(verts), np.vstack(tris), tuple(comps)


def _rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def make_instrument(kind: str, diameter: float = DIAMETER_MM, bend: float = 0.0) -> InstrumentMesh:
    """Build the procedural stand-in for a screw, drill tip or drilling robot.

    All instruments have their main axis along local +x and their origin at
    the local coordinate origin.  The screw body lies in front of the origin
    (+x), drill and robot bodies behind it.
    """
    r = diameter / 2.0
    if kind == "screw":
        # length chosen so the bounding-box diagonal is exactly 6.5 mm
        length = float(np.sqrt(SCREW_DIAGONAL_MM**2 - 2 * diameter**2))
        head = 0.2 * length
        shaft_r = 0.66 * r
        profile = [(0.0, 0.0), (0.0, r), (head, r), (head, shaft_r), (length - shaft_r, shaft_r), (length, 0.0)]
        parts = [_lathe(profile)]
        params = {"diameter": diameter, "length": length}
    elif kind == "drill":
        length = 12.0
        cone = r / np.tan(np.deg2rad(59.0))
        profile = [(0.0, 0.0), (-cone, r), (-length, r), (-length, 0.0)]
        parts = [_lathe(profile)]
        params = {"diameter": diameter, "length": length}
    elif kind == "robot":
        if not -ROBOT_BEND_LIMIT <= bend <= ROBOT_BEND_LIMIT:
            raise ValueError(f"robot bend must lie in [-30, 30] degrees, got {bend}")
        front = float(np.sqrt(ROBOT_FRONT_DIAGONAL_MM**2 - 2 * diameter**2))
        cyl1 = front - r  # head sphere is centred on the front cap of cylinder 1
        cyl2 = 10.0
        head = _uv_sphere(r, (0.0, 0.0, 0.0))
        c1 = _lathe([(-cyl1, 0.0), (-cyl1, r), (0.0, r), (0.0, 0.0)])
        v2, t2 = _lathe([(-cyl2, 0.0), (-cyl2, r), (0.0, r), (0.0, 0.0)])
        joint = np.array([-cyl1, 0.0, 0.0])
        v2 = v2 @ _rot_z(bend).T + joint
        parts = [head, c1, (v2, t2)]
        params = {"diameter": diameter, "front_length": front, "rear_length": cyl2, "bend": bend}
    else:
        raise ValueError(f"unknown instrument kind {kind!r}")
    verts, tris, comps = _assemble(parts)
    return InstrumentMesh(verts, tris, np.zeros(3), np.array([1.0, 0.0, 0.0]), kind,
                          float(bend) if kind == "robot" else 0.0, comps, params)


def is_rotation(R, tol=1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1) < tol


def transform_mesh(mesh: InstrumentMesh, position, orientation) -> InstrumentMesh:
    """Rigid transform ``v -> R v + t`` applied to vertices, origin and axis."""
    R = np.asarray(orientation, dtype=float)
    if not is_rotation(R):
        raise ValueError("orientation must be a proper rotation matrix")
    t = np.asarray(position, dtype=float)
    return InstrumentMesh(mesh.vertices @ R.T + t, mesh.triangles.copy(), R @ mesh.origin + t,
                          R @ mesh.main_axis, mesh.kind, mesh.robot_bend, mesh.components, dict(mesh.params))


def place_instrument(mesh: InstrumentMesh, position, orientation) -> InstrumentMesh:
    """Rotate about the instrument origin and move the origin to ``position``."""
    R = np.asarray(orientation, dtype=float)
    return transform_mesh(mesh, np.asarray(position, dtype=float) - R @ mesh.origin, R)


def edge_counts(mesh: InstrumentMesh, component: int) -> np.ndarray:
    """How many triangles share each undirected edge of one component."""
    lo, hi = mesh.components[component]
    t = mesh.triangles[lo:hi]
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


# column rays are nudged off the grid so they never hit an edge or vertex exactly
_RAY_NUDGE = (3.1415926e-7, 2.7182818e-7)


@numba.njit(cache=True)
def _parity_fill(tri, x0, y0, sx, sy, nx, ny, z0, sz, nz, nudge_x, nudge_y, out):
    max_hits = 64
    hits = np.empty((nx, ny, max_hits))
    counts = np.zeros((nx, ny), dtype=np.int64)
    for t in range(tri.shape[0]):
        ax, ay, az = tri[t, 0, 0], tri[t, 0, 1], tri[t, 0, 2]
        bx, by, bz = tri[t, 1, 0], tri[t, 1, 1], tri[t, 1, 2]
        cx, cy, cz = tri[t, 2, 0], tri[t, 2, 1], tri[t, 2, 2]
        det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        if det == 0.0:
            continue
        i0 = max(int(np.ceil((min(ax, bx, cx) - nudge_x - x0) / sx)), 0)
        i1 = min(int(np.floor((max(ax, bx, cx) - nudge_x - x0) / sx)), nx - 1)
        j0 = max(int(np.ceil((min(ay, by, cy) - nudge_y - y0) / sy)), 0)
        j1 = min(int(np.floor((max(ay, by, cy) - nudge_y - y0) / sy)), ny - 1)
        for i in range(i0, i1 + 1):
            px = x0 + i * sx + nudge_x
            for j in range(j0, j1 + 1):
                py = y0 + j * sy + nudge_y
                l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
                l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
                l3 = 1.0 - l1 - l2
                if l1 < 0.0 or l2 < 0.0 or l3 < 0.0:
                    continue
                n = counts[i, j]
                if n < max_hits:
                    hits[i, j, n] = l1 * az + l2 * bz + l3 * cz
                    counts[i, j] = n + 1
    for i in range(nx):
        for j in range(ny):
            n = counts[i, j]
            if n < 2:
                continue
            zs = np.sort(hits[i, j, :n])
            for k in range(nz):
                z = z0 + k * sz
                below = 0
                for h in range(n):
                    if zs[h] < z:
                        below += 1
                if below % 2 == 1:
                    out[i, j, k] = True


def voxelize(mesh: InstrumentMesh, volume: Volume) -> np.ndarray:
    """Boolean mask of voxels whose centres lie inside the mesh (union of components)."""
    mask = np.zeros(volume.dims, dtype=np.bool_)
    o, s, n = volume.origin, volume.spacing, volume.dims
    for lo, hi in mesh.components:
        tri = np.ascontiguousarray(mesh.vertices[mesh.triangles[lo:hi]])
        _parity_fill(tri, o[0], o[1], s[0], s[1], n[0], n[1], o[2], s[2], n[2], *_RAY_NUDGE, mask)
    return mask


def voxelize_and_combine(volume: Volume, mesh: InstrumentMesh, mu_instrument: float = MU_INSTRUMENT) -> Volume:
    """Burn the instrument into a copy of ``volume``; metal replaces tissue."""
    lo, hi = volume.extent
    mlo, mhi = mesh.bounds
    out = volume.copy()
    if np.any(mhi < lo) or np.any(mlo > hi):
        msg = "instrument mesh lies entirely outside the volume"
        warnings.warn(msg, VoxelizationWarning, stacklevel=2)
        out.meta["warning"] = msg
        return out
    mask = voxelize(mesh, volume)
    out.data[mask] = mu_instrument
    out.meta["instrument_voxels"] = int(mask.sum())
    return out


def save_off(mesh: InstrumentMesh, path) -> None:
    lines = ["OFF", f"# kind={mesh.kind} bend={mesh.robot_bend!r}",
             f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_off(path) -> tuple[np.ndarray, np.ndarray]:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if tokens[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        if k != 3:
            raise ValueError("only triangular faces are supported")
        faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
        pos += 4
    return verts, np.array(faces, dtype=np.int64)
