"""Structured quadratic-tet meshes for layered half-space boxes.

The box spans x in [0,Lx], y in [0,Ly], z in [-Lz,0] with the free surface
at z=0. Every grid cell is split into six tetrahedra that share the cell's
main diagonal, so neighbouring cells match face-to-face, then promoted to
10-node quadratic tets. All quadratic nodes live on the half-spacing lattice
(2nx+1, 2ny+1, 2nz+1), which makes node numbering, serialization, and the
corner-node (linear) subediting fully deterministic.

Layer interfaces are analytic depth functions of (x,y); an element takes the
material of the layer containing its centroid.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import InputError, MeshError
from .materials import MaterialTable

# per-node boundary classification (single label, bottom > side > surface)
INTERIOR, SURFACE, BOTTOM, SIDE = 0, 1, 2, 3

# face plane codes for boundary-face enumeration
PLANE_BOTTOM, PLANE_TOP, PLANE_XLO, PLANE_XHI, PLANE_YLO, PLANE_YHI = range(6)
SIDE_PLANES = (PLANE_XLO, PLANE_XHI, PLANE_YLO, PLANE_YHI)

# quadratic tet local numbering: corners 0-3, midsides 4-9 on these edges
T10_EDGES = ((0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3))
# corner triple + midside triple per face (face i opposite corner i)
T10_FACE_NODES = (
    (1, 2, 3, 5, 9, 8),
    (0, 2, 3, 6, 9, 7),
    (0, 1, 3, 4, 8, 7),
    (0, 1, 2, 4, 5, 6),
)

# HRZ tributary split of a 6-node boundary triangle (sums to the face area)
FACE_AREA_CORNER = 1.0 / 19.0
FACE_AREA_MIDSIDE = 16.0 / 57.0


def interface_depth(spec, x, y):
    """Depth (positive down, metres) of an analytic layer interface."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kind = spec.get("kind")
    if kind == "flat":
        return np.broadcast_to(float(spec["depth"]), np.broadcast_shapes(x.shape, y.shape)).copy()
    if kind == "ramp":
        # depth_start for x <= x_start, linear to depth_end at x >= x_end
        x0, x1 = float(spec["x_start"]), float(spec["x_end"])
        if not x1 > x0:
            raise InputError("ramp interface needs x_end > x_start")
        t = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        d = float(spec["depth_start"]) + (float(spec["depth_end"]) - float(spec["depth_start"])) * t
        return np.broadcast_to(d, np.broadcast_shapes(x.shape, y.shape)).copy()
    if kind == "basin":
        # cosine bowl: depth_center at (cx,cy), depth_out beyond (rx,ry)
        r = np.sqrt(((x - spec["cx"]) / spec["rx"]) ** 2 + ((y - spec["cy"]) / spec["ry"]) ** 2)
        bump = 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0)))
        return float(spec["depth_out"]) + (float(spec["depth_center"]) - float(spec["depth_out"])) * bump
    raise InputError(f"unknown interface kind {kind!r}")


@dataclass
class MeshConfig:
    lx: float
    ly: float
    lz: float
    nx: int
    ny: int
    nz: int
    interfaces: list
    materials: MaterialTable
    side_bc: str = "absorbing"    # absorbing | periodic | free
    bottom_bc: str = "absorbing"  # absorbing | fixed

    def __post_init__(self):
        if min(self.lx, self.ly, self.lz) <= 0:
            raise InputError("box dimensions must be positive")
        if min(self.nx, self.ny, self.nz) < 1:
            raise InputError("cell counts must be >= 1")
        if len(self.materials) != len(self.interfaces) + 1:
            raise InputError(
                f"{len(self.interfaces)} interfaces need {len(self.interfaces) + 1} "
                f"materials, got {len(self.materials)}"
            )
        if self.side_bc not in ("absorbing", "periodic", "free"):
            raise InputError(f"unknown side_bc {self.side_bc!r}")
        if self.bottom_bc not in ("absorbing", "fixed"):
            raise InputError(f"unknown bottom_bc {self.bottom_bc!r}")

    def to_dict(self):
        return {
            "lx": self.lx, "ly": self.ly, "lz": self.lz,
            "nx": self.nx, "ny": self.ny, "nz": self.nz,
            "interfaces": self.interfaces,
            "materials": self.materials.to_dicts(),
            "side_bc": self.side_bc,
            "bottom_bc": self.bottom_bc,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["materials"] = MaterialTable.from_dicts(d["materials"])
        return cls(**d)


@dataclass
class Column1D:
    """Layer stack under one (x,y): [(thickness, material_index)], top first."""
    layers: list
    materials: MaterialTable
    x: float
    y: float


@dataclass
class Mesh:
    coords: np.ndarray          # (n_nodes, 3) float64
    conn: np.ndarray            # (n_elements, 10) int32
    mat_id: np.ndarray          # (n_elements,) int32
    boundary_kind: np.ndarray   # (n_nodes,) uint8
    fine_dims: tuple            # (2nx+1, 2ny+1, 2nz+1)
    config: MeshConfig
    _faces: dict = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_elements(self):
        return self.conn.shape[0]

    @property
    def materials(self):
        return self.config.materials

    def fine_index(self, node_ids):
        """Node id -> integer lattice coords (I, J, K)."""
        fx, fy, _ = self.fine_dims
        node_ids = np.asarray(node_ids)
        i = node_ids % fx
        j = (node_ids // fx) % fy
        k = node_ids // (fx * fy)
        return i, j, k

    def corner_node_mask(self):
        i, j, k = self.fine_index(np.arange(self.n_nodes))
        return (i % 2 == 0) & (j % 2 == 0) & (k % 2 == 0)

    def surface_node_ids(self):
        return np.nonzero(self.boundary_kind == SURFACE)[0]

    def boundary_faces(self):
        """dict plane_code -> (elem_ids, face_nodes (n,6), areas (n,))."""
        if self._faces is None:
            self._faces = _enumerate_boundary_faces(self)
        return self._faces

    def nearest_surface_node(self, x, y):
        ids = np.nonzero(self.fine_index(np.arange(self.n_nodes))[2] == self.fine_dims[2] - 1)[0]
        d2 = (self.coords[ids, 0] - x) ** 2 + (self.coords[ids, 1] - y) ** 2
        return int(ids[np.argmin(d2)])


def _kuhn_templates():
    """Six tet corner templates (offsets in {0,1}^3) sharing the main diagonal."""
    eye = np.eye(3, dtype=np.int64)
    tets = []
    for p in itertools.permutations(range(3)):
        c0 = np.zeros(3, dtype=np.int64)
        c1 = c0 + eye[p[0]]
        c2 = c1 + eye[p[1]]
        c3 = np.ones(3, dtype=np.int64)
        corners = np.stack([c0, c1, c2, c3])
        # orient positively (swap two corners if the signed volume is negative)
        v = np.linalg.det((corners[1:] - corners[0]).astype(float))
        if v < 0:
            corners = corners[[0, 2, 1, 3]]
        tets.append(corners)
    return tets


def generate_layered_box(config):
    """Build the quadratic-tet mesh of a layered box."""
    nx, ny, nz = config.nx, config.ny, config.nz
    fx, fy, fz = 2 * nx + 1, 2 * ny + 1, 2 * nz + 1
    hx, hy, hz = config.lx / nx, config.ly / ny, config.lz / nz

    _validate_interfaces(config)

    # node coordinates on the half-spacing lattice, id = (K*fy + J)*fx + I
    ii = np.arange(fx) * (hx / 2.0)
    jj = np.arange(fy) * (hy / 2.0)
    kk = -config.lz + np.arange(fz) * (hz / 2.0)
    gx, gy, gz = np.meshgrid(ii, jj, kk, indexing="ij")
    coords = np.empty((fx * fy * fz, 3), dtype=np.float64)
    flat_id = lambda i, j, k: (k * fy + j) * fx + i  # noqa: E731
    oi, oj, ok = np.meshgrid(np.arange(fx), np.arange(fy), np.arange(fz), indexing="ij")
    coords[flat_id(oi, oj, ok).ravel()] = np.stack(
        [gx.ravel(), gy.ravel(), gz.ravel()], axis=1
    )

    # cells in x-fastest order; element ids are cell-major, 6 tets per cell
    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    order = (ck * ny + cj) * nx + ci
    cell_origin = np.empty((nx * ny * nz, 3), dtype=np.int64)
    cell_origin[order.ravel()] = np.stack([2 * ci.ravel(), 2 * cj.ravel(), 2 * ck.ravel()], axis=1)

    n_cells = nx * ny * nz
    conn = np.empty((n_cells * 6, 10), dtype=np.int32)
    for t, corners in enumerate(_kuhn_templates()):
        fine_c = cell_origin[:, None, :] + 2 * corners[None, :, :]  # (cells, 4, 3)
        mids = np.empty((n_cells, 6, 3), dtype=np.int64)
        for e, (a, b) in enumerate(T10_EDGES):
            mids[:, e, :] = (fine_c[:, a, :] + fine_c[:, b, :]) // 2
        allf = np.concatenate([fine_c, mids], axis=1)  # (cells, 10, 3)
        ids = (allf[:, :, 2] * fy + allf[:, :, 1]) * fx + allf[:, :, 0]
        conn[t::6] = ids.astype(np.int32)

    # material by centroid layer
    cc = coords[conn[:, :4].astype(np.int64)].mean(axis=1)
    depth_c = -cc[:, 2]
    mat_id = np.zeros(conn.shape[0], dtype=np.int32)
    for spec in config.interfaces:
        d = interface_depth(spec, cc[:, 0], cc[:, 1])
        mat_id += (depth_c >= d).astype(np.int32)

    # per-node boundary labels, priority bottom > side > surface
    node_ids = np.arange(coords.shape[0])
    i = node_ids % fx
    j = (node_ids // fx) % fy
    k = node_ids // (fx * fy)
    kind = np.zeros(coords.shape[0], dtype=np.uint8)
    kind[k == fz - 1] = SURFACE
    kind[(i == 0) | (i == fx - 1) | (j == 0) | (j == fy - 1)] = SIDE
    kind[k == 0] = BOTTOM

    mesh = Mesh(coords, conn, mat_id, kind, (fx, fy, fz), config)
    _check_volumes(mesh)
    return mesh


def _validate_interfaces(config):
    """Interfaces must stay strictly ordered and strictly inside the box."""
    nx, ny = config.nx, config.ny
    xs = np.linspace(0.0, config.lx, 2 * nx + 1)
    ys = np.linspace(0.0, config.ly, 2 * ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    prev = np.zeros_like(gx)
    for n, spec in enumerate(config.interfaces):
        d = interface_depth(spec, gx, gy)
        if np.any(d <= prev):
            raise MeshError(f"interface {n} not strictly below the one above it everywhere")
        if np.any(d >= config.lz):
            raise MeshError(f"interface {n} reaches or passes the box bottom")
        prev = d


def _check_volumes(mesh):
    v = element_volumes(mesh)
    if np.any(v <= 0):
        raise MeshError("degenerate or inverted element produced")
    box = mesh.config.lx * mesh.config.ly * mesh.config.lz
    if abs(v.sum() - box) > 1e-10 * box:
        raise MeshError("element volumes do not sum to the box volume")


def element_volumes(mesh):
    c = mesh.coords[mesh.conn[:, :4].astype(np.int64)]
    e = c[:, 1:] - c[:, :1]
    return np.linalg.det(e) / 6.0


def _enumerate_boundary_faces(mesh):
    fx, fy, fz = mesh.fine_dims
    lim = {
        PLANE_BOTTOM: (2, 0), PLANE_TOP: (2, fz - 1),
        PLANE_XLO: (0, 0), PLANE_XHI: (0, fx - 1),
        PLANE_YLO: (1, 0), PLANE_YHI: (1, fy - 1),
    }
    conn64 = mesh.conn.astype(np.int64)
    ifc = np.stack(mesh.fine_index(conn64), axis=2)  # (E, 10, 3) lattice coords
    out = {}
    for plane, (axis, val) in lim.items():
        rows, faces, areas = [], [], []
        for f, nodes in enumerate(T10_FACE_NODES):
            on = np.all(ifc[:, nodes, axis] == val, axis=1)
            es = np.nonzero(on)[0]
            if es.size == 0:
                continue
            fn = conn64[es][:, nodes]
            a, b, c = (mesh.coords[fn[:, t]] for t in range(3))
            area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            rows.append(es)
            faces.append(fn)
            areas.append(area)
        if rows:
            es = np.concatenate(rows)
            srt = np.argsort(es, kind="stable")
            out[plane] = (es[srt], np.concatenate(faces)[srt], np.concatenate(areas)[srt])
        else:
            out[plane] = (np.empty(0, np.int64), np.empty((0, 6), np.int64), np.empty(0))
    return out


def face_node_areas(face_nodes, areas, n_nodes):
    """Tributary area per node from 6-node boundary faces (HRZ split)."""
    w = np.concatenate(
        [
            np.repeat(areas * FACE_AREA_CORNER, 3),
            np.repeat(areas * FACE_AREA_MIDSIDE, 3),
        ]
    )
    idx = np.concatenate([face_nodes[:, :3].ravel(), face_nodes[:, 3:].ravel()])
    return np.bincount(idx, weights=w, minlength=n_nodes)


def extract_column(config, x, y):
    """1D layer stack (top first) under a point, for the column solver."""
    if not (0.0 <= x <= config.lx and 0.0 <= y <= config.ly):
        raise InputError(f"column point ({x},{y}) outside the box footprint")
    depths = [float(interface_depth(spec, x, y)) for spec in config.interfaces]
    edges = [0.0] + depths + [config.lz]
    layers = []
    for m, (top, bot) in enumerate(zip(edges[:-1], edges[1:])):
        if bot - top <= 0:
            raise MeshError(f"non-positive layer thickness at ({x},{y})")
        layers.append((bot - top, m))
    return Column1D(layers, config.materials, x, y)


@dataclass
class DofMap:
    dof_of: np.ndarray        # (n_nodes, 3) int64
    n_dofs: int
    constrained: np.ndarray   # int64 dof indices held at zero
    bottom_nodes: np.ndarray
    side_nodes: np.ndarray
    surface_nodes: np.ndarray
    periodic: bool


def build_dof_map(mesh, side_bc=None, bottom_bc=None):
    """Number DOFs (3 per node) and classify boundary sets.

    side_bc periodic ties each node on the x=Lx / y=Ly planes to its image
    on x=0 / y=0, so tied nodes share DOF numbers and the count shrinks.
    bottom_bc fixed marks the bottom nodes' DOFs as constrained.
    """
    side_bc = side_bc or mesh.config.side_bc
    bottom_bc = bottom_bc or mesh.config.bottom_bc
    n = mesh.n_nodes
    fx, fy, fz = mesh.fine_dims
    node_ids = np.arange(n)
    i, j, k = mesh.fine_index(node_ids)

    if side_bc == "periodic":
        mi = np.where(i == fx - 1, 0, i)
        mj = np.where(j == fy - 1, 0, j)
        master = (k * fy + mj) * fx + mi
        uniq = np.nonzero(master == node_ids)[0]
        renum = np.full(n, -1, dtype=np.int64)
        renum[uniq] = np.arange(uniq.size)
        base = renum[master]
        n_dofs = 3 * uniq.size
    else:
        base = node_ids.astype(np.int64)
        n_dofs = 3 * n
    dof_of = 3 * base[:, None] + np.arange(3)[None, :]

    bottom = np.nonzero(mesh.boundary_kind == BOTTOM)[0]
    side = np.nonzero(mesh.boundary_kind == SIDE)[0]
    surface = np.nonzero(mesh.boundary_kind == SURFACE)[0]

    constrained = np.empty(0, dtype=np.int64)
    if bottom_bc == "fixed":
        constrained = np.unique(dof_of[bottom].ravel())

    return DofMap(
        dof_of=dof_of.astype(np.int64),
        n_dofs=int(n_dofs),
        constrained=constrained,
        bottom_nodes=bottom,
        side_nodes=side,
        surface_nodes=surface,
        periodic=(side_bc == "periodic"),
    )


def elements_per_wavelength(mesh, fmax):
    """Resolution report: elements per minimum wavelength, per material."""
    cfg = mesh.config
    h = max(cfg.lx / cfg.nx, cfg.ly / cfg.ny, cfg.lz / cfg.nz)
    present = np.unique(mesh.mat_id)
    rep = {}
    for m in present:
        mat = mesh.materials[int(m)]
        rep[mat.name] = mat.vs / (fmax * h)
    rep["min"] = min(rep.values())
    return rep


MESH_MAGIC = "TFM1"


def save_mesh(mesh, path):
    binio.write_container(
        path,
        MESH_MAGIC,
        {"config": mesh.config.to_dict(), "fine_dims": list(mesh.fine_dims)},
        {
            "coords": mesh.coords,
            "conn": mesh.conn,
            "mat_id": mesh.mat_id,
            "boundary_kind": mesh.boundary_kind,
        },
    )


def load_mesh(path):
    meta, arrays = binio.read_container(path, MESH_MAGIC)
    return Mesh(
        coords=arrays["coords"],
        conn=arrays["conn"],
        mat_id=arrays["mat_id"],
        boundary_kind=arrays["boundary_kind"],
        fine_dims=tuple(meta["fine_dims"]),
        config=MeshConfig.from_dict(meta["config"]),
    )
