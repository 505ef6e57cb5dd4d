"""Multi-spring hysteretic shear model at element evaluation points.

Each evaluation point carries ns one-dimensional springs. Spring k projects
the Voigt strain increment (engineering shears, order xx,yy,zz,xy,yz,zx)
through a 6-vector P_k built from a normal/tangent direction pair:
P_k = voigt(sym(n_k (x) t_k)). Spring stresses push back through the same
vectors, and the deviatoric tangent is sum_k w_k Gt_k P_k P_k^T. Weights are
calibrated once so the virgin assembly reproduces isotropic elasticity
exactly; the volumetric response stays linear-elastic (bulk modulus Kb).

Each spring follows the saturated backbone with Masing-rule hysteresis and
a single reversal-point memory: state = (gamma, tau, gammaRev, tauRev,
dirFlag, skelFlag), exactly the serialized 40-byte record.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import InputError

VOIGT_TRACE = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# unit-shear deviatoric isotropic operator (engineering Voigt); the elastic
# deviatoric stiffness is G0 times this
DEV_ISO_UNIT = np.array(
    [
        [4 / 3, -2 / 3, -2 / 3, 0, 0, 0],
        [-2 / 3, 4 / 3, -2 / 3, 0, 0, 0],
        [-2 / 3, -2 / 3, 4 / 3, 0, 0, 0],
        [0, 0, 0, 1, 0, 0],
        [0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1],
    ],
    dtype=np.float64,
)

SPRING_RECORD_DTYPE = np.dtype(
    [
        ("gamma", "<f8"),
        ("tau", "<f8"),
        ("gamma_rev", "<f8"),
        ("tau_rev", "<f8"),
        ("dir_flag", "<i4"),
        ("skel_flag", "<i4"),
    ]
)
assert SPRING_RECORD_DTYPE.itemsize == 40

EVAL_POINTS_PER_ELEMENT = 4
DEFAULT_SPRING_COUNT = 150


# ---------------------------------------------------------------------------
# direction table


def fibonacci_directions(n):
    """n normal/tangent pairs: Fibonacci-lattice normals, tangents rotated
    in the tangent plane by a second irrational angle so the pair set spans
    all deviatoric directions."""
    k = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(1.0 - z * z)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    theta = golden * k
    normals = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    # in-plane frame: e1 azimuthal, e2 meridional
    e1 = np.stack([-np.sin(theta), np.cos(theta), np.zeros(n)], axis=1)
    e2 = np.cross(normals, e1)
    psi = math.pi * (math.sqrt(2.0) - 1.0) * k
    tangents = np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2
    return normals, tangents


def projection_vectors(normals, tangents):
    s = 0.5 * (normals[:, :, None] * tangents[:, None, :] + tangents[:, :, None] * normals[:, None, :])
    return np.stack([s[:, 0, 0], s[:, 1, 1], s[:, 2, 2], s[:, 0, 1], s[:, 1, 2], s[:, 2, 0]], axis=1)


@dataclass
class SpringDirectionTable:
    normals: np.ndarray   # (ns, 3)
    tangents: np.ndarray  # (ns, 3)
    p: np.ndarray         # (ns, 6) projection vectors
    w: np.ndarray         # (ns,) positive weights
    residual: float       # Frobenius-relative calibration residual


def build_direction_table(n=DEFAULT_SPRING_COUNT):
    """Deterministic direction table with calibrated positive weights."""
    if n < 15:
        raise InputError("need at least 15 spring directions")
    normals, tangents = fibonacci_directions(n)
    p = projection_vectors(normals, tangents)

    # equality system A w = t over the 21 unique entries of the target
    iu = np.triu_indices(6)
    outer = p[:, :, None] * p[:, None, :]          # (ns, 6, 6)
    a = outer[:, iu[0], iu[1]].T                   # (21, ns)
    t = DEV_ISO_UNIT[iu]

    rank = np.linalg.matrix_rank(a, tol=1e-10)
    if rank < 15:
        raise InputError(f"direction set spans rank {rank} < 15; add directions")

    # minimum deviation from the best uniform weight, then exact correction
    au = a.sum(axis=1)
    w0 = float(au @ t / (au @ au))
    w = np.full(n, w0)
    corr, *_ = np.linalg.lstsq(a, t - a @ w, rcond=None)
    w = w + corr

    if np.any(w <= 0):
        raise InputError("weight calibration produced non-positive weights")
    got = (outer * w[:, None, None]).sum(axis=0)
    residual = np.linalg.norm(got - DEV_ISO_UNIT) / np.linalg.norm(DEV_ISO_UNIT)
    if residual > 1e-8:
        raise InputError(f"weight calibration residual {residual:.2e} > 1e-8")
    return SpringDirectionTable(normals, tangents, p, w, float(residual))


# ---------------------------------------------------------------------------
# backbone + Masing step (scalar, shared by the vector kernels)


@njit(cache=True, inline="always")
def _skeleton(g, g0, gr, a, b, tf):
    if g == 0.0:
        return 0.0
    s = a * (abs(g) / gr) ** b
    t = g0 * g / (1.0 + s)
    if t > tf:
        return tf
    if t < -tf:
        return -tf
    return t


@njit(cache=True, inline="always")
def _skeleton_gt(g, g0, gr, a, b, tf):
    if g == 0.0:
        return g0
    s = a * (abs(g) / gr) ** b
    t = g0 * g / (1.0 + s)
    if t > tf or t < -tf:
        return 0.0
    return g0 * (1.0 + (1.0 - b) * s) / (1.0 + s) ** 2


@njit(cache=True, inline="always")
def _spring_step(g, t, gr_, tr_, dirf, skelf, dg, g0, gr, a, b, tf, linear):
    """Advance one spring by strain increment dg.

    Returns (gamma, tau, gammaRev, tauRev, dirFlag, skelFlag, dTau, Gt).
    """
    if linear:
        gn = g + dg
        return gn, t + g0 * dg, gr_, tr_, dirf, skelf, g0 * dg, g0

    if dg == 0.0:
        if skelf == 1:
            gt = _skeleton_gt(g, g0, gr, a, b, tf)
        else:
            gt = _skeleton_gt(0.5 * (g - gr_), g0, gr, a, b, tf)
            if t >= tf or t <= -tf:
                gt = 0.0
        return g, t, gr_, tr_, dirf, skelf, 0.0, gt

    d = 1 if dg > 0.0 else -1
    gn = g + dg

    if skelf == 1:
        if (g > 0.0 and dg < 0.0) or (g < 0.0 and dg > 0.0):
            gr_, tr_ = g, t
            skelf = 0
    else:
        if d != dirf:
            gr_, tr_ = g, t

    if skelf == 0:
        # rejoin the skeleton past the mirrored reversal extreme
        if (d > 0 and gn >= abs(gr_)) or (d < 0 and gn <= -abs(gr_)):
            skelf = 1

    if skelf == 1:
        tn = _skeleton(gn, g0, gr, a, b, tf)
        gt = _skeleton_gt(gn, g0, gr, a, b, tf)
    else:
        half = 0.5 * (gn - gr_)
        tn = tr_ + 2.0 * _skeleton(half, g0, gr, a, b, tf)
        gt = _skeleton_gt(half, g0, gr, a, b, tf)
        if tn > tf:
            tn, gt = tf, 0.0
        elif tn < -tf:
            tn, gt = -tf, 0.0

    return gn, tn, gr_, tr_, d, skelf, tn - t, gt


@njit(cache=True, parallel=True)
def _update_points_kernel(de, p, w, gamma, tau, grev, trev, dirf, skelf,
                          mat, g0s, kbs, grs, als, bes, tfs, lin,
                          dsig, dtan):
    npts, ns = gamma.shape
    for q in prange(npts):
        m = mat[q]
        g0, kb = g0s[m], kbs[m]
        gr, a, b, tf = grs[m], als[m], bes[m], tfs[m]
        linear = lin[m] != 0

        ev = de[q, 0] + de[q, 1] + de[q, 2]
        for c in range(6):
            dsig[q, c] = kb * ev * VOIGT_TRACE[c]
        for i in range(6):
            for j in range(6):
                dtan[q, i, j] = kb * VOIGT_TRACE[i] * VOIGT_TRACE[j]

        # springs see only the deviatoric part; this mean formulation keeps a
        # pure volumetric increment (equal diagonals) at exactly zero
        em = de[q, 0] + ((de[q, 1] - de[q, 0]) + (de[q, 2] - de[q, 0])) / 3.0
        d0 = de[q, 0] - em
        d1 = de[q, 1] - em
        d2 = de[q, 2] - em

        for k in range(ns):
            dg = (p[k, 0] * d0 + p[k, 1] * d1 + p[k, 2] * d2
                  + p[k, 3] * de[q, 3] + p[k, 4] * de[q, 4] + p[k, 5] * de[q, 5])
            g, t, gr_, tr_, df, sf, dtau, gt = _spring_step(
                gamma[q, k], tau[q, k], grev[q, k], trev[q, k],
                dirf[q, k], skelf[q, k], dg, g0, gr, a, b, tf, linear,
            )
            gamma[q, k] = g
            tau[q, k] = t
            grev[q, k] = gr_
            trev[q, k] = tr_
            dirf[q, k] = df
            skelf[q, k] = sf
            wk = w[k]
            wgt = wk * gt
            for i in range(6):
                dsig[q, i] += wk * dtau * p[k, i]
                pi = wgt * p[k, i]
                for j in range(i, 6):
                    dtan[q, i, j] += pi * p[k, j]
        for i in range(6):
            for j in range(i):
                dtan[q, i, j] = dtan[q, j, i]


@njit(cache=True, parallel=True)
def _damping_kernel(gamma, grev, mat, g0s, grs, als, bes, tfs, hms, lin, w, out):
    npts, ns = gamma.shape
    wsum = 0.0
    for k in range(ns):
        wsum += w[k]
    for q in prange(npts):
        m = mat[q]
        if lin[m] != 0 or hms[m] == 0.0:
            out[q] = 0.0
            continue
        g0, gr, a, b, tf, hm = g0s[m], grs[m], als[m], bes[m], tfs[m], hms[m]
        acc = 0.0
        for k in range(ns):
            ext = abs(gamma[q, k])
            if abs(grev[q, k]) > ext:
                ext = abs(grev[q, k])
            if ext > 0.0:
                gsec = _skeleton(ext, g0, gr, a, b, tf) / ext
            else:
                gsec = g0
            acc += w[k] * hm * (1.0 - gsec / g0)
        out[q] = acc / wsum


@njit(cache=True, parallel=True)
def _deviatoric_stress_kernel(tau, p, w, out):
    npts, ns = tau.shape
    for q in prange(npts):
        for c in range(6):
            out[q, c] = 0.0
        for k in range(ns):
            wt = w[k] * tau[q, k]
            for c in range(6):
                out[q, c] += wt * p[k, c]


# ---------------------------------------------------------------------------
# parameter packing and state containers


def material_param_arrays(table):
    """Per-material parameter vectors consumed by the kernels."""
    g0 = np.array([m.g0 for m in table])
    kb = np.array([m.kb for m in table])
    gr = np.array([m.gamma_r for m in table])
    al = np.array([m.alpha_ro for m in table])
    be = np.array([m.beta_ro for m in table])
    tf = np.array([m.tau_f for m in table])
    hm = np.array([m.hmax for m in table])
    lin = np.array([1 if m.linear else 0 for m in table], dtype=np.int8)
    return g0, kb, gr, al, be, tf, hm, lin


class SpringField:
    """SoA spring state for all evaluation points of an element range.

    Rows are evaluation points in (element, point) order, 4 points per
    element; columns are springs. Serialization interleaves to the 40-byte
    record layout (4 f64 + 2 i32, little-endian), points 0..3 per element.
    """

    def __init__(self, n_elements, n_springs=DEFAULT_SPRING_COUNT):
        npts = EVAL_POINTS_PER_ELEMENT * n_elements
        self.n_elements = n_elements
        self.n_springs = n_springs
        self.gamma = np.zeros((npts, n_springs))
        self.tau = np.zeros((npts, n_springs))
        self.gamma_rev = np.zeros((npts, n_springs))
        self.tau_rev = np.zeros((npts, n_springs))
        self.dir_flag = np.ones((npts, n_springs), dtype=np.int32)
        self.skel_flag = np.ones((npts, n_springs), dtype=np.int32)

    @property
    def n_points(self):
        return self.gamma.shape[0]

    @property
    def arrays(self):
        return (self.gamma, self.tau, self.gamma_rev, self.tau_rev,
                self.dir_flag, self.skel_flag)

    def bytes_per_element(self):
        return EVAL_POINTS_PER_ELEMENT * self.n_springs * SPRING_RECORD_DTYPE.itemsize

    def point_slice(self, e0, e1):
        return slice(EVAL_POINTS_PER_ELEMENT * e0, EVAL_POINTS_PER_ELEMENT * e1)

    def pack(self, e0=0, e1=None):
        """Serialize elements [e0, e1) to interleaved 40-byte records."""
        e1 = self.n_elements if e1 is None else e1
        s = self.point_slice(e0, e1)
        rec = np.empty((e1 - e0) * EVAL_POINTS_PER_ELEMENT * self.n_springs,
                       dtype=SPRING_RECORD_DTYPE)
        rec["gamma"] = self.gamma[s].ravel()
        rec["tau"] = self.tau[s].ravel()
        rec["gamma_rev"] = self.gamma_rev[s].ravel()
        rec["tau_rev"] = self.tau_rev[s].ravel()
        rec["dir_flag"] = self.dir_flag[s].ravel()
        rec["skel_flag"] = self.skel_flag[s].ravel()
        return rec.tobytes()

    def unpack(self, buf, e0=0, e1=None):
        e1 = self.n_elements if e1 is None else e1
        s = self.point_slice(e0, e1)
        n = (e1 - e0) * EVAL_POINTS_PER_ELEMENT
        rec = np.frombuffer(buf, dtype=SPRING_RECORD_DTYPE).reshape(n, self.n_springs)
        self.gamma[s] = rec["gamma"]
        self.tau[s] = rec["tau"]
        self.gamma_rev[s] = rec["gamma_rev"]
        self.tau_rev[s] = rec["tau_rev"]
        self.dir_flag[s] = rec["dir_flag"]
        self.skel_flag[s] = rec["skel_flag"]


# ---------------------------------------------------------------------------
# public update entry points


def skeleton_stress(material, gamma):
    """Backbone stress (saturated at tau_f) for one material."""
    return float(_skeleton(gamma, material.g0, material.gamma_r,
                           material.alpha_ro, material.beta_ro, material.tau_f))


def skeleton_tangent(material, gamma):
    return float(_skeleton_gt(gamma, material.g0, material.gamma_r,
                              material.alpha_ro, material.beta_ro, material.tau_f))


def update_spring(state, dgamma, material):
    """Single-spring step. state/new state: (gamma, tau, gammaRev, tauRev,
    dirFlag, skelFlag); also returns (dTau, Gt)."""
    out = _spring_step(state[0], state[1], state[2], state[3],
                       int(state[4]), int(state[5]), dgamma,
                       material.g0, material.gamma_r, material.alpha_ro,
                       material.beta_ro, material.tau_f, material.linear)
    return out[:6], out[6], out[7]


def update_eval_points(field, de, mat_of_points, table, params, point_slice=None):
    """Advance springs of the selected points by the strain increments de.

    de: (npts, 6) engineering-Voigt strain increments.
    Returns (dsig (npts, 6), dtan (npts, 6, 6)).
    """
    g0, kb, gr, al, be, tf, _hm, lin = params
    sl = point_slice if point_slice is not None else slice(0, field.n_points)
    de = np.ascontiguousarray(de)
    npts = de.shape[0]
    dsig = np.empty((npts, 6))
    dtan = np.empty((npts, 6, 6))
    _update_points_kernel(
        de, table.p, table.w,
        field.gamma[sl], field.tau[sl], field.gamma_rev[sl], field.tau_rev[sl],
        field.dir_flag[sl], field.skel_flag[sl],
        mat_of_points[sl], g0, kb, gr, al, be, tf, lin,
        dsig, dtan,
    )
    return dsig, dtan


def elastic_tangents(mat_of_points, table, params):
    """Virgin-state tangent matrices (exactly what a zero increment yields)."""
    g0, kb, _gr, _al, _be, _tf, _hm, _lin = params
    dev = (table.p[:, :, None] * table.p[:, None, :] * table.w[:, None, None]).sum(axis=0)
    vol = VOIGT_TRACE[:, None] * VOIGT_TRACE[None, :]
    per_mat = kb[:, None, None] * vol[None] + g0[:, None, None] * dev[None]
    return per_mat[mat_of_points]


def point_damping(field, mat_of_points, table, params, point_slice=None):
    """Equivalent damping ratio per evaluation point: weighted spring mean of
    hmax*(1 - Gsec/G0), Gsec taken at each spring's strain extreme."""
    g0, _kb, gr, al, be, tf, hm, lin = params
    sl = point_slice if point_slice is not None else slice(0, field.n_points)
    gamma = field.gamma[sl]
    out = np.empty(gamma.shape[0])
    _damping_kernel(gamma, field.gamma_rev[sl], mat_of_points[sl],
                    g0, gr, al, be, tf, hm, lin, table.w, out)
    return out


def deviatoric_stress(field, table, point_slice=None):
    """Current deviatoric stress per point, re-derived from spring stresses."""
    sl = point_slice if point_slice is not None else slice(0, field.n_points)
    tau = field.tau[sl]
    out = np.empty((tau.shape[0], 6))
    _deviatoric_stress_kernel(tau, table.p, table.w, out)
    return out
