"""Linear solver stage: 3x3 block-CRS assembly, preconditioned CG, and
matrix-free element-by-element operators.

The system each step is A = (4/dt^2) M + (2/dt) C + K with diagonal lumped
mass, C = alpha M + beta K plus boundary dashpots, so

    A = scale_k * K + diag(dvec),
    scale_k = 1 + 2 beta / dt,
    dvec = (4/dt^2 + 2 alpha/dt) m + (2/dt) dash.

Constrained DOFs become unit diagonal rows (element rows/columns masked to
zero, dvec forced to one), which keeps A symmetric positive definite.

Determinism: all reductions and scatters run in a fixed sequential order
(bincount over precomputed slots, scalar dot kernels), so identical inputs
give bitwise-identical assemblies, products, and iteration counts.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit, prange

from .errors import IndefiniteOperatorError, InputError, MaxIterationsError
from .mesh import T10_EDGES

BLOCK_BYTES = 72  # 3x3 float64


def _corner_interpolation():
    p = np.zeros((30, 12))
    for n in range(4):
        for ax in range(3):
            p[3 * n + ax, 3 * n + ax] = 1.0
    for m, (a, b) in enumerate(T10_EDGES):
        for ax in range(3):
            p[3 * (4 + m) + ax, 3 * a + ax] = 0.5
            p[3 * (4 + m) + ax, 3 * b + ax] = 0.5
    return p


# linear corner field evaluated at the quadratic nodes of one element
CORNER_INTERP = _corner_interpolation()


# ---------------------------------------------------------------------------
# deterministic scalar kernels


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True, parallel=True)
def _batch_stiffness(b, w, d, mask, out):
    """Per-element K_e = sum_j w_j B_j^T D_j B_j, (E, 30, 30), with
    constrained local rows/columns zeroed."""
    ne = b.shape[0]
    for e in prange(ne):
        tmp = np.empty((6, 30))
        ke = out[e]
        for i in range(30):
            for j in range(30):
                ke[i, j] = 0.0
        for q in range(5):
            wq = w[e, q]
            for c in range(6):
                for j in range(30):
                    acc = 0.0
                    for r in range(6):
                        acc += d[e, q, c, r] * b[e, q, r, j]
                    tmp[c, j] = acc
            for i in range(30):
                for j in range(i, 30):
                    acc = 0.0
                    for c in range(6):
                        acc += b[e, q, c, i] * tmp[c, j]
                    ke[i, j] += wq * acc
        for i in range(30):
            for j in range(i + 1, 30):
                ke[j, i] = ke[i, j]
        for i in range(30):
            if mask[e, i]:
                for j in range(30):
                    ke[i, j] = 0.0
                    ke[j, i] = 0.0


@njit(cache=True, parallel=True)
def _ebe_local(b, w, d, edof, mask, x, scale_k, out):
    """Local products f_e = scale_k * K_e x_e without forming K_e."""
    ne = b.shape[0]
    for e in prange(ne):
        xl = np.empty(30)
        for i in range(30):
            xl[i] = 0.0 if mask[e, i] else x[edof[e, i]]
        fl = np.zeros(30)
        for q in range(5):
            s = np.zeros(6)
            for c in range(6):
                acc = 0.0
                for j in range(30):
                    acc += b[e, q, c, j] * xl[j]
                s[c] = acc
            t = np.zeros(6)
            for c in range(6):
                acc = 0.0
                for r in range(6):
                    acc += d[e, q, c, r] * s[r]
                t[c] = acc
            wq = w[e, q]
            for i in range(30):
                acc = 0.0
                for c in range(6):
                    acc += b[e, q, c, i] * t[c]
                fl[i] += wq * acc
        for i in range(30):
            out[e, i] = 0.0 if mask[e, i] else scale_k * fl[i]


@njit(cache=True, parallel=True)
def _ebe_local_pair(b, w, d1, d2, edof, mask, x1, x2, s1, s2, out1, out2):
    """One element sweep serving two independent problem sets. Arithmetic per
    set is identical to _ebe_local, so results match it bitwise."""
    ne = b.shape[0]
    for e in prange(ne):
        for src in range(2):
            if src == 0:
                d, x, sk, out = d1, x1, s1, out1
            else:
                d, x, sk, out = d2, x2, s2, out2
            xl = np.empty(30)
            for i in range(30):
                xl[i] = 0.0 if mask[e, i] else x[edof[e, i]]
            fl = np.zeros(30)
            for q in range(5):
                s = np.zeros(6)
                for c in range(6):
                    acc = 0.0
                    for j in range(30):
                        acc += b[e, q, c, j] * xl[j]
                    s[c] = acc
                t = np.zeros(6)
                for c in range(6):
                    acc = 0.0
                    for r in range(6):
                        acc += d[e, q, c, r] * s[r]
                    t[c] = acc
                wq = w[e, q]
                for i in range(30):
                    acc = 0.0
                    for c in range(6):
                        acc += b[e, q, c, i] * t[c]
                    fl[i] += wq * acc
            for i in range(30):
                out[e, i] = 0.0 if mask[e, i] else sk * fl[i]


# ---------------------------------------------------------------------------
# DOF gather arrays


def element_dof_arrays(kd, dof_map):
    """(edof (E, 30) int64, mask (E, 30) bool) for gather/scatter; mask marks
    constrained DOFs."""
    edof = dof_map.dof_of[kd.conn].reshape(kd.n_elements, 30).astype(np.int64)
    mask = np.zeros(edof.shape, dtype=np.bool_)
    if dof_map.constrained.size:
        mask = np.isin(edof, dof_map.constrained)
    return np.ascontiguousarray(edof), mask


def assemble_mass_dofs(kd, dof_map):
    """Lumped nodal masses accumulated onto DOFs (periodic ties merge)."""
    node_mass = np.bincount(
        kd.conn.ravel(), weights=kd.node_mass.ravel(),
        minlength=dof_map.dof_of.shape[0],
    )
    out = np.zeros(dof_map.n_dofs)
    for ax in range(3):
        np.add.at(out, dof_map.dof_of[:, ax], node_mass)
    return out


def assemble_dash_dofs(dash_node, dof_map):
    """Per-node per-axis dashpots accumulated onto DOFs."""
    out = np.zeros(dof_map.n_dofs)
    for ax in range(3):
        np.add.at(out, dof_map.dof_of[:, ax], dash_node[:, ax])
    return out


# ---------------------------------------------------------------------------
# block-CRS matrix


@dataclass
class SolveStats:
    iterations: int
    relative_residual: float
    elapsed_s: float
    matvecs: int

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "relative_residual": self.relative_residual,
            "elapsed_s": self.elapsed_s,
            "matvecs": self.matvecs,
        }


class BlockCrsMatrix:
    """3x3 block-CRS over master-node blocks with a frozen sparsity pattern.

    The pattern comes from element connectivity once; value updates scatter
    into the fixed slot layout, so repeated assembly from identical tangents
    is bitwise reproducible and never touches the index arrays.
    """

    def __init__(self, kd, dof_map):
        if dof_map.n_dofs % 3:
            raise InputError("DOF count is not a whole number of 3-blocks")
        self.n_dofs = dof_map.n_dofs
        self.n_blocks = dof_map.n_dofs // 3
        self.edof, self.mask = element_dof_arrays(kd, dof_map)
        self.constrained = dof_map.constrained

        e = kd.n_elements
        base = (self.edof.reshape(e, 10, 3)[:, :, 0] // 3).astype(np.int64)
        brow = np.repeat(base, 10, axis=1).ravel()
        bcol = np.tile(base, (1, 10)).ravel()
        pattern = sp.coo_matrix(
            (np.ones(brow.size, dtype=np.float64), (brow, bcol)),
            shape=(self.n_blocks, self.n_blocks),
        ).tocsr()
        pattern.sort_indices()
        self.indptr = pattern.indptr.astype(np.int32)
        self.indices = pattern.indices.astype(np.int32)
        self.nnzb = int(self.indices.size)

        # slot of each element-local scalar entry in the flat data array
        row_of_block = np.repeat(np.arange(self.n_blocks, dtype=np.int64),
                                 np.diff(self.indptr))
        key = row_of_block * self.n_blocks + self.indices.astype(np.int64)
        block_slot = np.searchsorted(key, brow * self.n_blocks + bcol)
        block_slot = block_slot.reshape(e, 10, 10)
        i3 = np.arange(3, dtype=np.int64)
        scal = (block_slot[:, :, None, :, None] * 9
                + 3 * i3[None, None, :, None, None] + i3[None, None, None, None, :])
        self.slot_flat = np.ascontiguousarray(scal.reshape(-1))

        # diagonal scalar slots per DOF, for mass/damping/constraint entries
        diag_block = np.searchsorted(
            key, np.arange(self.n_blocks, dtype=np.int64) * (self.n_blocks + 1))
        self.diag_block_idx = diag_block
        self.diag_slot = (np.repeat(diag_block * 9, 3)
                          + np.tile(np.array([0, 4, 8]), self.n_blocks))

        self.data = np.zeros((self.nnzb, 3, 3))
        self._bsr = sp.bsr_matrix(
            (self.data, self.indices, self.indptr),
            shape=(self.n_dofs, self.n_dofs), blocksize=(3, 3), copy=False,
        )

    def set_values(self, kvals, scale_k, dvec):
        """A = scale_k * scatter(kvals) + diag(dvec); constrained DOFs get
        unit diagonal. kvals must already be constraint-masked."""
        flat = np.bincount(self.slot_flat, weights=kvals.ravel(),
                           minlength=self.nnzb * 9)
        flat *= scale_k
        dv = dvec
        if self.constrained.size:
            dv = dvec.copy()
            dv[self.constrained] = 1.0
        flat[self.diag_slot] += dv
        self.data.ravel()[:] = flat

    def matvec(self, x):
        return self._bsr @ x

    def _diag_blocks(self):
        return self.data[self.diag_block_idx]

    def storage_bytes(self):
        return (self.nnzb * BLOCK_BYTES
                + self.indptr.size * self.indptr.itemsize
                + self.indices.size * self.indices.itemsize)

    def pattern_checksums(self):
        return (int(self.indptr.sum()), int(self.indices.sum()))


def batch_element_stiffness(kd, tangents, mask):
    """(E, 30, 30) masked element stiffness batch from (E, 5, 6, 6) tangents."""
    out = np.empty((kd.n_elements, 30, 30))
    _batch_stiffness(kd.b, kd.weights, tangents, mask, out)
    return out


def nodal_diag_blocks(kvals, edof, n_dofs, scale_k, dvec, constrained):
    """Assembled 3x3 diagonal blocks without forming the matrix; matches
    BlockCrsMatrix._diag_blocks for identical kvals/scale/diagonal terms."""
    e = kvals.shape[0]
    k5 = kvals.reshape(e, 10, 3, 10, 3)
    node = np.arange(10)
    dblk = np.transpose(k5[:, node, :, node, :], (1, 0, 2, 3))  # (E, 10, 3, 3)
    blocks = np.zeros((n_dofs // 3, 3, 3))
    bid = (edof.reshape(e, 10, 3)[:, :, 0] // 3).ravel()
    np.add.at(blocks, bid, dblk.reshape(-1, 3, 3))
    blocks *= scale_k
    dv = dvec
    if constrained.size:
        dv = dvec.copy()
        dv[constrained] = 1.0
    for ax in range(3):
        blocks[:, ax, ax] += dv[ax::3]
    return blocks


# ---------------------------------------------------------------------------
# preconditioners


class BlockJacobiPrecond:
    """Inverted 3x3 diagonal blocks; application runs in single precision
    unless dtype overrides it."""

    def __init__(self, blocks, dtype=np.float32):
        inv = np.linalg.inv(blocks)
        self.blocks = inv.astype(dtype)
        self.dtype = dtype

    @classmethod
    def from_matrix(cls, a, dtype=np.float32):
        return cls(a._diag_blocks(), dtype)

    def apply(self, r):
        rb = r.reshape(-1, 3).astype(self.dtype)
        z = np.einsum("nij,nj->ni", self.blocks, rb)
        return z.astype(np.float64).ravel()


class IdentityPrecond:
    def apply(self, r):
        return r


@dataclass
class TwoLevelSettings:
    inner_tol: float = 0.1
    inner_cap: int = 30
    pre_smooth: int = 1
    post_smooth: int = 1
    # smoothing damping factor; None estimates 1/lambda_max(D^-1 A) with a
    # power iteration at build time (plain sweeps amplify the top modes)
    omega: float = None
    power_iters: int = 15
    # shorter, warm-started re-estimate when the preconditioner is refit
    # to updated element matrices mid-run
    refresh_power_iters: int = 4


@dataclass
class _CoarseAssembly:
    """Index structure for reassembling the corner-level matrix: COO
    scatter targets, the constrained-entry mask, and the identity filler
    for constrained corner rows."""
    crows: np.ndarray
    ccols: np.ndarray
    cmask: np.ndarray
    dcc: np.ndarray


class TwoLevelPrecond:
    """One V-cycle: block-Jacobi smoothing on the quadratic level plus a
    single-precision CG correction on the corner-node level.

    The defect reaches the corner level through the transpose of the
    interpolation, and the coarse matrix is the fine operator projected onto
    the interpolation space, so the correction is an energy-orthogonal
    projection. `restrict` is plain nodal injection for moving corner values
    between levels and satisfies restrict(prolong(x)) == x exactly.
    Corrections vanish at constrained corners.
    """

    def __init__(self, fine_op, bj, coarse, corner_dofs, prolong, settings,
                 defect_transfer=None, omega=1.0, assembly=None,
                 power_x=None):
        self.fine_op = fine_op
        self.bj = bj
        self.coarse = coarse
        self.corner_dofs = corner_dofs
        self.prolong = prolong
        self.settings = settings
        self.omega = omega
        if defect_transfer is None:
            defect_transfer = prolong.T.tocsr()
        self._transfer = defect_transfer
        self._asm = assembly
        self._power_x = power_x
        self.coarse_stats = []

    def refresh(self, bj, kvals, scale_k, dvec):
        """Refit the smoother, the corner-level matrix, and the smoothing
        factor to updated element matrices and diagonal terms; the
        interpolation structure is geometric and does not change."""
        if self._asm is None:
            raise ValueError("preconditioner built without refresh structure")
        asm = self._asm
        self.bj = bj
        kc = (CORNER_INTERP.T @ kvals @ CORNER_INTERP) * scale_k
        if asm.cmask is not None:
            kc[np.broadcast_to(asm.cmask[:, :, None], kc.shape)] = 0.0
            kc[np.broadcast_to(asm.cmask[:, None, :], kc.shape)] = 0.0
        nc = asm.dcc.size
        a_c = sp.coo_matrix((kc.ravel(), (asm.crows, asm.ccols)),
                            shape=(nc, nc)).tocsr()
        a_c = a_c + self._transfer @ sp.diags(dvec) @ self._transfer.T
        a_c = (a_c + sp.diags(asm.dcc)).tocsr()
        self.coarse = (sp.bsr_matrix(a_c, blocksize=(3, 3)).astype(np.float32),
                       (1.0 / a_c.diagonal()).astype(np.float32))
        if self.settings.omega is None:
            lam, self._power_x = _power_lambda_max(
                self.fine_op, bj, self.settings.refresh_power_iters,
                x0=self._power_x)
            self.omega = 1.0 / lam

    def restrict(self, r):
        return r[self.corner_dofs]

    def _smooth(self, r):
        return self.omega * self.bj.apply(r)

    def apply(self, r):
        st = self.settings
        z = self._smooth(r)
        for _ in range(st.pre_smooth - 1):
            z = z + self._smooth(r - self.fine_op.matvec(z))
        rf = r - self.fine_op.matvec(z)
        rc = (self._transfer @ rf).astype(np.float32)
        ec, stats = _coarse_cg(self.coarse, rc, st.inner_tol, st.inner_cap)
        self.coarse_stats.append(stats)
        z = z + self.prolong @ ec.astype(np.float64)
        for _ in range(st.post_smooth):
            z = z + self._smooth(r - self.fine_op.matvec(z))
        return z


def _coarse_cg(coarse, b, tol, cap):
    """Plain single-precision CG on the corner-level matrix."""
    a, dinv = coarse
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(cap):
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if float(np.linalg.norm(r)) <= tol * bnorm:
            return x, it + 1
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, cap


def build_two_level(mesh, dof_map, fine_op, bj, kvals, scale_k, dvec,
                    settings=None):
    """Corner-level correction problem projected from the fine operator.

    `kvals` are the masked element matrices (E, 30, 30) already used for the
    fine assembly or element products; the coarse matrix is their
    interpolation-space projection plus the projected diagonal terms,
    assembled element by element.
    """
    settings = settings or TwoLevelSettings()
    fx, fy, _ = mesh.fine_dims
    i, j, k = mesh.fine_index(np.arange(mesh.n_nodes))
    corner = (i % 2 == 0) & (j % 2 == 0) & (k % 2 == 0)

    # master blocks that are corner nodes -> coarse block numbering
    base = dof_map.dof_of[:, 0] // 3
    nb = dof_map.n_dofs // 3
    corner_of_block = np.zeros(nb, dtype=bool)
    corner_of_block[base[corner]] = True
    coarse_of_block = np.full(nb, -1, dtype=np.int64)
    coarse_of_block[corner_of_block] = np.arange(int(corner_of_block.sum()))
    ncb = int(corner_of_block.sum())

    corner_dofs = (3 * np.nonzero(corner_of_block)[0][:, None]
                   + np.arange(3)[None, :]).ravel()
    coarse_constrained = np.array([], dtype=np.int64)
    if dof_map.constrained.size:
        coarse_constrained = np.nonzero(
            np.isin(corner_dofs, dof_map.constrained))[0]

    # prolongation: corners copy, midsides average their edge endpoints.
    # Rows come from DOF-owning nodes only, so periodic ties emit no
    # duplicate entries.
    _, owner_nodes = np.unique(base, return_index=True)
    owner = np.zeros(mesh.n_nodes, dtype=bool)
    owner[owner_nodes] = True
    off = np.stack([i % 2, j % 2, k % 2], axis=1)
    rows, cols, vals = [], [], []
    cid = coarse_of_block[base]
    oc = corner & owner
    for ax in range(3):
        rows.append(dof_map.dof_of[oc, ax])
        cols.append(3 * cid[oc] + ax)
        vals.append(np.ones(int(oc.sum())))
    mids = np.nonzero(~corner & owner)[0]
    for sgn in (-1, 1):
        ii = i[mids] + sgn * off[mids, 0]
        jj = j[mids] + sgn * off[mids, 1]
        kk = k[mids] + sgn * off[mids, 2]
        ends = (kk * fy + jj) * fx + ii
        for ax in range(3):
            rows.append(dof_map.dof_of[mids, ax])
            cols.append(3 * coarse_of_block[base[ends]] + ax)
            vals.append(np.full(mids.size, 0.5))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    shape = (dof_map.n_dofs, 3 * ncb)
    prolong = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()

    # the defect transfer drops constrained coarse columns, so corrections
    # taper to zero at the bottom plane; the coarse right-hand side is then
    # exactly zero there and the full prolongation stays valid
    masked_vals = vals.copy()
    if coarse_constrained.size:
        masked_vals[np.isin(cols, coarse_constrained)] = 0.0
    p_masked = sp.coo_matrix((masked_vals, (rows, cols)), shape=shape).tocsr()
    p_masked.eliminate_zeros()

    # element-level projection of the masked fine matrices
    e = mesh.conn.shape[0]
    blk = coarse_of_block[base[mesh.conn[:, :4].astype(np.int64)]]
    cdof = (3 * blk[:, :, None] + np.arange(3)[None, None, :]).reshape(e, 12)
    kc = (CORNER_INTERP.T @ kvals @ CORNER_INTERP) * scale_k
    cmask = None
    if coarse_constrained.size:
        cmask = np.isin(cdof, coarse_constrained)
        kc[np.broadcast_to(cmask[:, :, None], kc.shape)] = 0.0
        kc[np.broadcast_to(cmask[:, None, :], kc.shape)] = 0.0
    crows = np.repeat(cdof, 12, axis=1).ravel()
    ccols = np.tile(cdof, (1, 12)).ravel()
    a_c = sp.coo_matrix((kc.ravel(), (crows, ccols)),
                        shape=(3 * ncb, 3 * ncb)).tocsr()
    a_c = a_c + p_masked.T @ sp.diags(dvec) @ p_masked
    dcc = np.zeros(3 * ncb)
    dcc[coarse_constrained] = 1.0
    a_c = (a_c + sp.diags(dcc)).tocsr()
    a32 = sp.bsr_matrix(a_c, blocksize=(3, 3)).astype(np.float32)
    dinv = (1.0 / a_c.diagonal()).astype(np.float32)

    omega = settings.omega
    power_x = None
    if omega is None:
        lam, power_x = _power_lambda_max(fine_op, bj, settings.power_iters)
        omega = 1.0 / lam
    return TwoLevelPrecond(fine_op, bj, (a32, dinv), corner_dofs, prolong,
                           settings, defect_transfer=p_masked.T.tocsr(),
                           omega=omega,
                           assembly=_CoarseAssembly(crows, ccols, cmask, dcc),
                           power_x=power_x)


def _power_lambda_max(fine_op, bj, iters, x0=None):
    """Deterministic power-iteration estimate of lambda_max(D^-1 A);
    returns the estimate and the final direction for warm restarts."""
    if x0 is None:
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(fine_op.n_dofs)
    x = x0 / math.sqrt(_dot(x0, x0))
    lam = 1.0
    for _ in range(iters):
        y = bj.apply(fine_op.matvec(x))
        lam = math.sqrt(_dot(y, y))
        x = y / lam
    return max(lam, 1.0), x


# ---------------------------------------------------------------------------
# EBE operators


class EbeOperator:
    """Matrix-free A x via element products plus the diagonal terms."""

    def __init__(self, kd, dof_map, tangents, scale_k, dvec):
        self.kd = kd
        self.edof, self.mask = element_dof_arrays(kd, dof_map)
        self.edof_flat = self.edof.ravel()
        self.constrained = dof_map.constrained
        self.n_dofs = dof_map.n_dofs
        self.tangents = tangents
        self.scale_k = scale_k
        self.dvec = dvec.copy()
        if self.constrained.size:
            self.dvec[self.constrained] = 1.0
        self._local = np.empty((kd.n_elements, 30))

    def matvec(self, x):
        _ebe_local(self.kd.b, self.kd.weights, self.tangents, self.edof,
                   self.mask, x, self.scale_k, self._local)
        y = np.bincount(self.edof_flat, weights=self._local.ravel(),
                        minlength=self.n_dofs)
        y += self.dvec * x
        return y


def batched_ebe_matvec(op1, op2, x1, x2):
    """Both products in one element sweep; bitwise equal to separate calls."""
    if op1.kd is not op2.kd:
        raise InputError("batched operands must share element kernel data")
    o1 = np.empty((op1.kd.n_elements, 30))
    o2 = np.empty((op2.kd.n_elements, 30))
    _ebe_local_pair(op1.kd.b, op1.kd.weights, op1.tangents, op2.tangents,
                    op1.edof, op1.mask, x1, x2, op1.scale_k, op2.scale_k,
                    o1, o2)
    y1 = np.bincount(op1.edof_flat, weights=o1.ravel(), minlength=op1.n_dofs)
    y1 += op1.dvec * x1
    y2 = np.bincount(op2.edof_flat, weights=o2.ravel(), minlength=op2.n_dofs)
    y2 += op2.dvec * x2
    return y1, y2


# ---------------------------------------------------------------------------
# conjugate gradient drivers


def default_max_iter(n_dofs):
    return max(100, int(10.0 * math.sqrt(n_dofs)))


def _pcg(matvec, b, precond, tol, x0, max_iter, flexible):
    t0 = time.perf_counter()
    n = b.shape[0]
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, time.perf_counter() - t0, 0)
    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
        mv = 0
    else:
        x = x0.copy()
        r = b - matvec(x)
        mv = 1
    rnorm = math.sqrt(_dot(r, r))
    if rnorm <= tol * bnorm:
        return x, SolveStats(0, rnorm / bnorm, time.perf_counter() - t0, mv)

    z = precond.apply(r)
    p = z.copy()
    rz = _dot(r, z)
    r_prev = r.copy() if flexible else None
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        mv += 1
        pap = _dot(p, ap)
        if pap <= 0.0:
            raise IndefiniteOperatorError(
                f"operator not positive definite (p'Ap = {pap:.3e})")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = math.sqrt(_dot(r, r))
        if rnorm <= tol * bnorm:
            return x, SolveStats(it, rnorm / bnorm, time.perf_counter() - t0, mv)
        z = precond.apply(r)
        if flexible:
            beta = _dot(z, r - r_prev) / rz
            r_prev = r.copy()
            rz = _dot(r, z)
        else:
            rz_new = _dot(r, z)
            beta = rz_new / rz
            rz = rz_new
        p = z + beta * p
    raise MaxIterationsError(
        f"no convergence in {max_iter} iterations "
        f"(relative residual {rnorm / bnorm:.3e})")


def crs_pcg(a, b, tol=1e-8, x0=None, precond=None, max_iter=None):
    """Block-Jacobi preconditioned CG on an assembled BlockCrsMatrix."""
    precond = precond or BlockJacobiPrecond.from_matrix(a)
    max_iter = max_iter or default_max_iter(a.n_dofs)
    return _pcg(a.matvec, b, precond, tol, x0, max_iter, flexible=False)


def ebe_ipcg(op, b, precond, tol=1e-8, x0=None, max_iter=None):
    """Flexible (Polak-Ribiere) PCG for matrix-free operators with inner
    iterative preconditioners."""
    max_iter = max_iter or default_max_iter(op.n_dofs)
    return _pcg(op.matvec, b, precond, tol, x0, max_iter, flexible=True)
