"""Quadratic tetrahedral element kernels.

Straight-sided 10-node tets: the barycentric map is affine, so corner
gradients are constant per element and shape gradients (hence B matrices)
are affine in the barycentric point. Strain/stress use the engineering
Voigt order (xx, yy, zz, xy, yz, zx) shared with the spring model.

Integration uses the 5-point degree-3 rule: four symmetric points (the
spring evaluation points, in order) plus the negatively weighted center.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, MeshError
from .mesh import PLANE_BOTTOM, PLANE_TOP, SIDE_PLANES, T10_EDGES, face_node_areas

# barycentric quadrature points; rows 0..3 are the element evaluation points
QUAD_BARY = np.array(
    [
        [0.5, 1 / 6, 1 / 6, 1 / 6],
        [1 / 6, 0.5, 1 / 6, 1 / 6],
        [1 / 6, 1 / 6, 0.5, 1 / 6],
        [1 / 6, 1 / 6, 1 / 6, 0.5],
        [0.25, 0.25, 0.25, 0.25],
    ]
)
QUAD_VOL_FRACTION = np.array([9 / 20, 9 / 20, 9 / 20, 9 / 20, -4 / 5])

# diagonally scaled consistent-mass fractions of rho*V per node
NODE_MASS_CORNER = 1.0 / 36.0
NODE_MASS_MIDSIDE = 4.0 / 27.0

# per-plane (normal axis, tangential axes) for the axis-aligned boundaries
PLANE_AXES = {0: (2, (0, 1)), 1: (2, (0, 1)), 2: (0, (1, 2)),
              3: (0, (1, 2)), 4: (1, (0, 2)), 5: (1, (0, 2))}


def corner_gradients(xyz):
    """Barycentric gradients (4, 3) and volume of one straight tet."""
    j = xyz[1:] - xyz[0]
    det = np.linalg.det(j)
    vol = det / 6.0
    if vol <= 0.0:
        raise MeshError(f"inverted or degenerate element (volume {vol:.3e})")
    jinv = np.linalg.inv(j)
    g = np.empty((4, 3))
    g[1:] = jinv.T
    g[0] = -g[1:].sum(axis=0)
    return g, vol


def shape_values(bary):
    """T10 shape function values at one barycentric point."""
    lam = np.asarray(bary, dtype=float)
    n = np.empty(10)
    n[:4] = lam * (2.0 * lam - 1.0)
    for m, (a, b) in enumerate(T10_EDGES):
        n[4 + m] = 4.0 * lam[a] * lam[b]
    return n


def shape_gradients(grad_lambda, bary):
    """T10 shape gradients (10, 3) at one barycentric point."""
    lam = np.asarray(bary, dtype=float)
    g = np.empty((10, 3))
    g[:4] = (4.0 * lam[:, None] - 1.0) * grad_lambda
    for m, (a, b) in enumerate(T10_EDGES):
        g[4 + m] = 4.0 * (lam[b] * grad_lambda[a] + lam[a] * grad_lambda[b])
    return g


def b_matrix(grads):
    """Strain-displacement matrix (6, 30) from shape gradients (10, 3)."""
    b = np.zeros((6, 30))
    gx, gy, gz = grads[:, 0], grads[:, 1], grads[:, 2]
    c = 3 * np.arange(10)
    b[0, c], b[1, c + 1], b[2, c + 2] = gx, gy, gz
    b[3, c], b[3, c + 1] = gy, gx
    b[4, c + 1], b[4, c + 2] = gz, gy
    b[5, c], b[5, c + 2] = gz, gx
    return b


@dataclass
class ElementKernelData:
    """Precomputed per-element integration data, immutable after build.

    weights: (E, 5) quadrature weights summing to element volume.
    b: (E, 5, 6, 30) strain-displacement matrices per quadrature point.
    conn: (E, 10) node ids. node_mass: (E, 10) lumped masses (kg).
    """

    weights: np.ndarray
    b: np.ndarray
    conn: np.ndarray
    node_mass: np.ndarray
    volume: np.ndarray

    @property
    def n_elements(self):
        return self.conn.shape[0]


def lumped_mass_vector(volume, rho):
    """Per-node lumped masses (10,) for one element; sums to rho*volume."""
    m = np.empty(10)
    m[:4] = NODE_MASS_CORNER
    m[4:] = NODE_MASS_MIDSIDE
    return m * (rho * volume)


def build_kernel_data(mesh):
    """Kernel data for every element; raises on inverted elements."""
    coords = mesh.coords
    conn = mesh.conn
    e = conn.shape[0]
    x0 = coords[conn[:, 0]]
    j = np.stack([coords[conn[:, k]] - x0 for k in (1, 2, 3)], axis=1)
    det = np.linalg.det(j)
    if np.any(det <= 0.0):
        bad = int(np.argmin(det))
        raise MeshError(f"inverted or degenerate element {bad} (det {det[bad]:.3e})")
    vol = det / 6.0
    jinv = np.linalg.inv(j)
    grad_lam = np.empty((e, 4, 3))
    grad_lam[:, 1:] = np.transpose(jinv, (0, 2, 1))
    grad_lam[:, 0] = -grad_lam[:, 1:].sum(axis=1)

    b = np.zeros((e, 5, 6, 30))
    cols = 3 * np.arange(10)
    for q in range(5):
        lam = QUAD_BARY[q]
        g = np.empty((e, 10, 3))
        g[:, :4] = (4.0 * lam[:, None] - 1.0) * grad_lam
        for m, (p0, p1) in enumerate(T10_EDGES):
            g[:, 4 + m] = 4.0 * (lam[p1] * grad_lam[:, p0] + lam[p0] * grad_lam[:, p1])
        gx, gy, gz = g[:, :, 0], g[:, :, 1], g[:, :, 2]
        b[:, q, 0, cols], b[:, q, 1, cols + 1], b[:, q, 2, cols + 2] = gx, gy, gz
        b[:, q, 3, cols], b[:, q, 3, cols + 1] = gy, gx
        b[:, q, 4, cols + 1], b[:, q, 4, cols + 2] = gz, gy
        b[:, q, 5, cols], b[:, q, 5, cols + 2] = gz, gx

    weights = vol[:, None] * QUAD_VOL_FRACTION[None, :]
    rho = np.array([m.rho for m in mesh.materials])[mesh.mat_id]
    frac = np.concatenate([np.full(4, NODE_MASS_CORNER), np.full(6, NODE_MASS_MIDSIDE)])
    node_mass = (rho * vol)[:, None] * frac[None, :]
    return ElementKernelData(weights, b, conn.copy(), node_mass, vol)


def element_stiffness(kd, e, d5):
    """K_e = sum_j w_j B_j^T D_j B_j for one element; d5 is (5, 6, 6)."""
    k = np.zeros((30, 30))
    for q in range(5):
        bq = kd.b[e, q]
        k += kd.weights[e, q] * (bq.T @ d5[q] @ bq)
    return k


def element_product(kd, e, d5, u_local):
    """K_e @ u without forming K_e: f = sum_j w_j B_j^T (D_j (B_j u))."""
    f = np.zeros(30)
    for q in range(5):
        bq = kd.b[e, q]
        f += kd.weights[e, q] * (bq.T @ (d5[q] @ (bq @ u_local)))
    return f


# ---------------------------------------------------------------------------
# boundary dashpots and input drive


def dashpot_coefficients(material, area):
    """Viscous boundary coefficients (normal, tangential) for one tributary
    area: rho*Vp*A and rho*Vs*A."""
    if area <= 0.0:
        raise InputError(f"degenerate boundary face (area {area:.3e})")
    return material.rho * material.vp * area, material.rho * material.vs * area


def absorbing_planes(side_bc, bottom_bc):
    planes = []
    if bottom_bc == "absorbing":
        planes.append(PLANE_BOTTOM)
    if side_bc == "absorbing":
        planes.extend(SIDE_PLANES)
    return tuple(planes)


def absorbing_dashpots(mesh):
    """Per-node per-axis dashpot coefficients (N, 3) from the viscous
    boundaries selected by the mesh config (N s/m)."""
    cfg = mesh.config
    out = np.zeros((mesh.n_nodes, 3))
    faces = mesh.boundary_faces()
    for plane in absorbing_planes(cfg.side_bc, cfg.bottom_bc):
        if plane == PLANE_TOP:
            raise InputError("free surface cannot carry dashpots")
        elems, fnodes, areas = faces[plane]
        if elems.size == 0:
            continue
        if np.any(areas <= 0.0):
            raise InputError("degenerate boundary face in mesh")
        naxis, taxes = PLANE_AXES[plane]
        rho = np.array([m.rho for m in mesh.materials])[mesh.mat_id[elems]]
        vp = np.array([m.vp for m in mesh.materials])[mesh.mat_id[elems]]
        vs = np.array([m.vs for m in mesh.materials])[mesh.mat_id[elems]]
        for coef, axes in (((rho * vp), (naxis,)), ((rho * vs), taxes)):
            trib = face_node_areas(fnodes, areas * coef, mesh.n_nodes)
            for ax in axes:
                out[:, ax] += trib
    return out


def bottom_drive_coefficients(mesh):
    """Per-node incident-wave force factors 2*rho*Vs*A on the bottom plane;
    multiplied by the incident particle velocity to get the drive force."""
    elems, fnodes, areas = mesh.boundary_faces()[PLANE_BOTTOM]
    rho = np.array([m.rho for m in mesh.materials])[mesh.mat_id[elems]]
    vs = np.array([m.vs for m in mesh.materials])[mesh.mat_id[elems]]
    return face_node_areas(fnodes, 2.0 * rho * vs * areas, mesh.n_nodes)


def bottom_drive_axes(mesh):
    """Per-node per-axis drive factors (N, 3): tangential axes carry
    2*rho*Vs*A, the vertical carries 2*rho*Vp*A (three-component input)."""
    elems, fnodes, areas = mesh.boundary_faces()[PLANE_BOTTOM]
    rho = np.array([m.rho for m in mesh.materials])[mesh.mat_id[elems]]
    vs = np.array([m.vs for m in mesh.materials])[mesh.mat_id[elems]]
    vp = np.array([m.vp for m in mesh.materials])[mesh.mat_id[elems]]
    out = np.empty((mesh.n_nodes, 3))
    tang = face_node_areas(fnodes, 2.0 * rho * vs * areas, mesh.n_nodes)
    out[:, 0] = tang
    out[:, 1] = tang
    out[:, 2] = face_node_areas(fnodes, 2.0 * rho * vp * areas, mesh.n_nodes)
    return out
