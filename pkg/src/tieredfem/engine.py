"""Nonlinear time-history driver over the two-tier execution strategies.

One step, regardless of placement:

    rhs   from the previous state (matrix-free C v recovery),
    du    from the strategy's solver (assembled CRS or element-by-element),
    springs advance partition by partition (in place or streamed through
          fast slots), yielding new tangents, the internal-force increment
          dq = sum_e sum_q w_q B_q^T dsig_q, and per-point damping,
    operator refresh: Rayleigh factors from the volume-weighted damping of
          nonlinear elements, then reassembly (skipped by the EBE strategy,
          whose operator reads the tangents directly),
    state update u, v, a, q and observation recording.

The fifth (center, negatively weighted) quadrature point carries the mean
of the four evaluation-point stress increments and tangents; for straight
tets the center B matrix is exactly the mean of the four, so the elastic
limit reproduces K du bitwise-consistently with the assembled operator.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import binio
from .element import bottom_drive_axes, build_kernel_data
from .element import absorbing_dashpots
from .errors import CapacityError, InputError, NonFiniteError, SolverError
from .integrator import (NewmarkCoeffs, RayleighCoeffs, TimeState,
                         apply_updates, build_rhs, operator_terms,
                         update_rayleigh)
from .memtier import (CostModel, FastArena, PartitionStore, StrategyKind,
                      TierRuntime, TransferChannel, run_step_pipelined,
                      run_step_pipelined_batch2, run_step_slow_only,
                      run_step_solver_fast)
from .mesh import build_dof_map
from .solvers import (BlockCrsMatrix, BlockJacobiPrecond, EbeOperator,
                      assemble_dash_dofs, assemble_mass_dofs,
                      batch_element_stiffness, crs_pcg, ebe_ipcg,
                      element_dof_arrays, nodal_diag_blocks,
                      build_two_level)
from .springs import (EVAL_POINTS_PER_ELEMENT, SpringField,
                      build_direction_table, deviatoric_stress,
                      elastic_tangents, material_param_arrays,
                      point_damping, update_eval_points)

DEFAULT_RAYLEIGH_BAND = (0.2, 2.5)
CHECKPOINT_MAGIC = "TFCK1"


@dataclass
class RunConfig:
    """Per-run knobs; everything else comes from the mesh."""

    nt: int
    dt: float = 0.005
    tolerance: float = 1e-8
    strategy: str = StrategyKind.SLOW_ONLY.value
    partition_elems: int = None       # default: ceil(n_elements / 8)
    fast_capacity_bytes: int = 1 << 34
    bandwidth: float = 64.0e9         # bytes/s
    latency: float = 1.0e-6           # s per message
    deterministic: bool = True
    wave_kind: str = "velocity"       # velocity | acceleration
    wave_scale: float = 1.0
    rayleigh_band: tuple = DEFAULT_RAYLEIGH_BAND
    observation_points: list = field(default_factory=list)  # [(x, y), ...]
    simulate_costs: dict = None       # overrides for the virtual clock

    def __post_init__(self):
        if self.nt < 1:
            raise InputError(f"need at least one step, got nt={self.nt}")
        if not self.dt > 0.0:
            raise InputError(f"time step must be positive, got {self.dt}")
        if not self.tolerance > 0.0:
            raise InputError(f"solver tolerance must be positive")
        self.kind = StrategyKind.parse(self.strategy)
        self.strategy = self.kind.value
        if self.wave_kind not in ("velocity", "acceleration"):
            raise InputError(f"unknown wave kind {self.wave_kind!r}")
        fmin, fmax = self.rayleigh_band
        if not (0.0 < fmin < fmax):
            raise InputError(f"bad damping band {self.rayleigh_band}")
        if self.partition_elems is not None and self.partition_elems < 1:
            raise InputError("partition size must be >= 1")

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "kind"}
        d["rayleigh_band"] = list(self.rayleigh_band)
        d["observation_points"] = [list(p) for p in self.observation_points]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rayleigh_band"] = tuple(d.get("rayleigh_band",
                                         DEFAULT_RAYLEIGH_BAND))
        d["observation_points"] = [tuple(p)
                                   for p in d.get("observation_points", [])]
        return cls(**d)


class Model:
    """Mesh-derived immutable run inputs shared by every case."""

    def __init__(self, mesh, dof_map=None):
        self.mesh = mesh
        self.dof_map = dof_map or build_dof_map(mesh)
        self.kd = build_kernel_data(mesh)
        self.edof, self.mask = element_dof_arrays(self.kd, self.dof_map)
        self.mass_dofs = assemble_mass_dofs(self.kd, self.dof_map)
        self.dash_dofs = assemble_dash_dofs(absorbing_dashpots(mesh),
                                            self.dof_map)
        drive = bottom_drive_axes(mesh)
        self.drive = np.zeros((self.dof_map.n_dofs, 3))
        for ax in range(3):
            np.add.at(self.drive[:, ax], self.dof_map.dof_of[:, ax],
                      drive[:, ax])
        self.table = build_direction_table()
        self.params = material_param_arrays(mesh.materials)
        self.mat_pts = np.repeat(mesh.mat_id.astype(np.int64),
                                 EVAL_POINTS_PER_ELEMENT)
        lin = self.params[-1]
        nonlinear = lin[mesh.mat_id] == 0
        self.hbar_weights = np.where(nonlinear, self.kd.volume, 0.0)
        self.hbar_weights_sum = float(self.hbar_weights.sum())
        self.surface_dofs = self.dof_map.dof_of[self.dof_map.surface_nodes]

    @property
    def n_dofs(self):
        return self.dof_map.n_dofs

    @property
    def n_elements(self):
        return self.mesh.n_elements

    def elastic_tangent5(self):
        """(E, 5, 6, 6) virgin tangents; slot 4 is the eval-point mean."""
        t4 = elastic_tangents(self.mat_pts, self.table, self.params)
        t4 = t4.reshape(self.n_elements, EVAL_POINTS_PER_ELEMENT, 6, 6)
        out = np.empty((self.n_elements, 5, 6, 6))
        out[:, :4] = t4
        out[:, 4] = t4.mean(axis=1)
        return out

    def observation_nodes(self, points):
        return [self.mesh.nearest_surface_node(x, y) for x, y in points]


@dataclass
class CaseSnapshot:
    """Everything needed to continue a run bitwise from step `state.step`."""

    state: TimeState
    field: SpringField
    tangents: np.ndarray
    warm: np.ndarray
    damp: RayleighCoeffs


@dataclass
class RunResult:
    strategy: str
    dt: float
    times: np.ndarray            # (nt,) time at each recorded step
    obs_points: list
    obs_nodes: list
    obs_u: np.ndarray            # (n_obs, 3, nt)
    obs_v: np.ndarray
    stats: list                  # SolveStats per step
    telemetry: list              # StepTelemetry per step
    vmax_norm: np.ndarray        # (n_surface_nodes,)
    vmax_comp: np.ndarray        # (n_surface_nodes, 3)
    hbar: np.ndarray             # (nt,)
    snapshot: CaseSnapshot
    peak_fast_bytes: int


def prepare_wave(wave, cfg):
    """(nt, 3) incident velocity samples from the configured input."""
    w = np.asarray(wave, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 3:
        raise InputError(f"input wave must be (nt, 3), got {w.shape}")
    if w.shape[0] < cfg.nt:
        raise InputError(
            f"input wave has {w.shape[0]} samples, run needs {cfg.nt}")
    if not np.isfinite(w).all():
        raise InputError("input wave contains non-finite samples")
    w = w[:cfg.nt] * cfg.wave_scale
    if cfg.wave_kind == "acceleration":
        w = cumulative_trapezoid(w, dx=cfg.dt, axis=0, initial=0.0)
    return w


class _Case:
    """Mutable per-case run state plus the stage callbacks the two-tier
    step drivers expect."""

    def __init__(self, model, cfg, snapshot=None):
        self.model = model
        self.cfg = cfg
        n = model.n_dofs
        if snapshot is None:
            self.state = TimeState.zeros(n)
            self.field = SpringField(model.n_elements)
            self.tangents = model.elastic_tangent5()
            self.warm = None
            self.damp = RayleighCoeffs(0.0, 0.0)
        else:
            self.state = snapshot.state
            self.field = snapshot.field
            self.tangents = snapshot.tangents
            self.warm = snapshot.warm
            self.damp = snapshot.damp
        self.newmark = NewmarkCoeffs.from_dt(cfg.dt)
        self.scale_k, self.dvec = operator_terms(
            self.newmark, self.damp, model.mass_dofs, model.dash_dofs)
        part = cfg.partition_elems or -(-model.n_elements // 8)
        self.store = PartitionStore(self.field, part)
        self.h_pts = np.zeros(self.field.n_points)
        self.hbar = 0.0
        self.du = np.zeros(n)
        self.dq = np.zeros(n)
        self.rhs = np.zeros(n)
        self.stats = []
        self.a_op = None     # assembled matrix or EBE operator
        self.precond = None

    # ----- per-step stages ------------------------------------------------

    def prepare_step(self, wave_row):
        f_ext = self.model.drive @ wave_row
        self.rhs = build_rhs(self.state, f_ext, self.newmark, self.damp,
                             self.model.mass_dofs, self.model.dash_dofs,
                             self.a_op, self.model.dof_map.constrained)
        if not np.isfinite(self.rhs).all():
            raise NonFiniteError(
                f"non-finite right-hand side entering step "
                f"{self.state.step + 1}", step=self.state.step + 1)
        self.dq[:] = 0.0

    def solve_crs(self):
        self.du, st = crs_pcg(self.a_op, self.rhs, tol=self.cfg.tolerance,
                              x0=self.warm, precond=self.precond)
        self.stats.append(st)
        return st.iterations

    def solve_ebe(self):
        self.du, st = ebe_ipcg(self.a_op, self.rhs, self.precond,
                               tol=self.cfg.tolerance, x0=self.warm)
        self.stats.append(st)
        return st.iterations

    def compute_partition(self, p, slot):
        """Multispring stage for one partition, in place (slot None) or in
        a fast-tier slot buffer."""
        model = self.model
        e0, e1 = self.store.ranges[p]
        rows = self.field.point_slice(e0, e1)
        if slot is None:
            fld, sl, mat = self.field, rows, model.mat_pts
        else:
            fld = slot.field
            sl = slice(0, (e1 - e0) * EVAL_POINTS_PER_ELEMENT)
            mat = model.mat_pts[rows]

        dul = self.du[model.edof[e0:e1]]
        de = np.einsum("eqcj,ej->eqc", model.kd.b[e0:e1, :4], dul)
        dsig, dtan = update_eval_points(fld, de.reshape(-1, 6), mat,
                                        model.table, model.params, sl)
        n_el = e1 - e0
        self.tangents[e0:e1, :4] = dtan.reshape(n_el, 4, 6, 6)
        self.tangents[e0:e1, 4] = self.tangents[e0:e1, :4].mean(axis=1)
        s = dsig.reshape(n_el, 4, 6)
        s5 = np.concatenate([s, s.mean(axis=1, keepdims=True)], axis=1)
        dq_e = np.einsum("eq,eqcj,eqc->ej", model.kd.weights[e0:e1],
                         model.kd.b[e0:e1], s5)
        self.dq += np.bincount(model.edof[e0:e1].ravel(),
                               weights=dq_e.ravel(),
                               minlength=model.n_dofs)
        self.h_pts[rows] = point_damping(fld, mat, model.table,
                                         model.params, sl)

    def refresh_damping(self):
        model = self.model
        if model.hbar_weights_sum > 0.0:
            h_el = self.h_pts.reshape(model.n_elements,
                                      EVAL_POINTS_PER_ELEMENT).mean(axis=1)
            self.hbar = float(model.hbar_weights @ h_el
                              / model.hbar_weights_sum)
        self.damp = update_rayleigh(self.hbar, self.cfg.rayleigh_band)
        self.scale_k, self.dvec = operator_terms(
            self.newmark, self.damp, model.mass_dofs, model.dash_dofs)

    def crs_update(self):
        self.refresh_damping()
        kvals = batch_element_stiffness(self.model.kd, self.tangents,
                                        self.model.mask)
        self.a_op.set_values(kvals, self.scale_k, self.dvec)
        self.precond = BlockJacobiPrecond.from_matrix(self.a_op)

    def ebe_update(self):
        """Matrix-free counterpart of crs_update: refit the operator terms
        and the corner-level preconditioner to the tangents left by the
        multispring sweep."""
        self.refresh_damping()
        model = self.model
        self.a_op.scale_k = self.scale_k
        dv = self.dvec
        constrained = model.dof_map.constrained
        if constrained.size:
            dv = dv.copy()
            dv[constrained] = 1.0
        self.a_op.dvec = dv
        kvals = batch_element_stiffness(model.kd, self.tangents, model.mask)
        blocks = nodal_diag_blocks(kvals, model.edof, model.n_dofs,
                                   self.scale_k, self.dvec, constrained)
        self.precond.refresh(BlockJacobiPrecond(blocks), kvals,
                             self.scale_k, self.dvec)

    def finish_step(self):
        self.state = apply_updates(self.state, self.du, self.newmark,
                                   dq=self.dq)
        self.warm = self.du.copy()
        if not (np.isfinite(self.du).all()
                and np.isfinite(self.state.u).all()):
            raise NonFiniteError(
                f"non-finite state after step {self.state.step}",
                step=self.state.step)


def _setup_assembled(case, rt):
    """CRS matrix, its preconditioner, and the fast-arena ledger entries
    for the strategies that keep the solver in the fast tier."""
    model, cfg = case.model, case.cfg
    case.a_op = BlockCrsMatrix(model.kd, model.dof_map)
    kvals = batch_element_stiffness(model.kd, case.tangents, model.mask)
    case.a_op.set_values(kvals, case.scale_k, case.dvec)
    case.precond = BlockJacobiPrecond.from_matrix(case.a_op)
    if cfg.kind is not StrategyKind.SLOW_ONLY:
        rt.arena.alloc("crs_matrix", case.a_op.storage_bytes())
        rt.arena.alloc("solver_vectors", 48 * model.n_dofs)
        rt.arena.alloc("block_jacobi", 12 * model.n_dofs)
        rt.arena.alloc("element_tangents", case.tangents.nbytes)


def _setup_ebe(case, rt, tag):
    """Matrix-free operator plus its corner-level preconditioner for the
    strategies that never assemble the matrix; ebe_update refits both
    after every multispring sweep."""
    model, cfg = case.model, case.cfg
    case.a_op = EbeOperator(model.kd, model.dof_map, case.tangents,
                            case.scale_k, case.dvec)
    kvals = batch_element_stiffness(model.kd, case.tangents, model.mask)
    blocks = nodal_diag_blocks(kvals, model.edof, model.n_dofs,
                               case.scale_k, case.dvec,
                               model.dof_map.constrained)
    bj = BlockJacobiPrecond(blocks)
    case.precond = build_two_level(model.mesh, model.dof_map, case.a_op,
                                   bj, kvals, case.scale_k, case.dvec)
    coarse_bytes = case.precond.coarse[0].data.nbytes
    rt.arena.alloc(f"solver_vectors_{tag}", 48 * model.n_dofs)
    rt.arena.alloc(f"element_tangents_{tag}", case.tangents.nbytes)
    rt.arena.alloc(f"coarse_level_{tag}", coarse_bytes + 12 * model.n_dofs)


def _make_runtime(cfg):
    costs = cfg.simulate_costs or {}
    return TierRuntime(FastArena(cfg.fast_capacity_bytes),
                       TransferChannel(cfg.bandwidth, cfg.latency),
                       CostModel(**costs))


class _Recorder:
    def __init__(self, model, cfg, nt):
        self.obs_points = list(cfg.observation_points)
        self.obs_nodes = model.observation_nodes(self.obs_points)
        self.obs_dofs = (model.dof_map.dof_of[self.obs_nodes]
                         if self.obs_nodes else
                         np.zeros((0, 3), dtype=np.int64))
        self.obs_u = np.zeros((len(self.obs_nodes), 3, nt))
        self.obs_v = np.zeros((len(self.obs_nodes), 3, nt))
        ns = model.surface_dofs.shape[0]
        self.vmax_norm = np.zeros(ns)
        self.vmax_comp = np.zeros((ns, 3))
        self.hbar = np.zeros(nt)
        self.surface_dofs = model.surface_dofs

    def record(self, i, case):
        st = case.state
        if self.obs_dofs.size:
            self.obs_u[:, :, i] = st.u[self.obs_dofs]
            self.obs_v[:, :, i] = st.v[self.obs_dofs]
        vs = st.v[self.surface_dofs]
        np.maximum(self.vmax_norm, np.sqrt((vs * vs).sum(axis=1)),
                   out=self.vmax_norm)
        np.maximum(self.vmax_comp, np.abs(vs), out=self.vmax_comp)
        self.hbar[i] = case.hbar


def _result(case, rec, telemetry, rt, nt):
    return RunResult(
        strategy=case.cfg.strategy,
        dt=case.cfg.dt,
        times=case.cfg.dt * np.arange(1, nt + 1),
        obs_points=rec.obs_points,
        obs_nodes=rec.obs_nodes,
        obs_u=rec.obs_u,
        obs_v=rec.obs_v,
        stats=case.stats,
        telemetry=telemetry,
        vmax_norm=rec.vmax_norm,
        vmax_comp=rec.vmax_comp,
        hbar=rec.hbar,
        snapshot=CaseSnapshot(case.state, case.field, case.tangents,
                              case.warm, case.damp),
        peak_fast_bytes=rt.arena.peak_bytes,
    )


def _step_error(exc, step):
    if isinstance(exc, (NonFiniteError, CapacityError)):
        return exc
    return type(exc)(f"step {step}: {exc}")


def run_time_history(model, wave, cfg, snapshot=None):
    """Execute the configured run for one input wave; the strategy decides
    placement, not numerics."""
    if cfg.kind is StrategyKind.PIPELINED_BATCH2_EBE:
        return run_time_history_batch2(model, [wave], cfg,
                                       snapshots=[snapshot])[0]
    w = prepare_wave(wave, cfg)
    case = _Case(model, cfg, snapshot)
    rt = _make_runtime(cfg)
    _setup_assembled(case, rt)
    rec = _Recorder(model, cfg, cfg.nt)
    telemetry = []

    kind = cfg.kind
    down_bytes = 8 * model.n_dofs
    for i in range(cfg.nt):
        step = case.state.step + 1
        try:
            case.prepare_step(w[i])
            if kind is StrategyKind.SLOW_ONLY:
                tel = run_step_slow_only(rt, case.store, step,
                                         case.solve_crs,
                                         case.compute_partition,
                                         case.crs_update)
            elif kind is StrategyKind.SOLVER_FAST:
                tel = run_step_solver_fast(rt, case.store, step,
                                           case.solve_crs,
                                           case.compute_partition,
                                           case.crs_update,
                                           down_bytes=down_bytes,
                                           up_bytes=case.tangents.nbytes)
            else:
                tel = run_step_pipelined(rt, case.store, step,
                                         case.solve_crs,
                                         case.compute_partition,
                                         case.crs_update)
            case.finish_step()
        except SolverError as exc:
            raise _step_error(exc, step) from exc
        telemetry.append(tel)
        rec.record(i, case)
    return _result(case, rec, telemetry, rt, cfg.nt)


def run_time_history_batch2(model, waves, cfg, snapshots=None):
    """One or two cases advancing in lockstep under the matrix-free
    strategy: both solves, then both pipelined multispring sweeps."""
    if cfg.kind is not StrategyKind.PIPELINED_BATCH2_EBE:
        raise InputError(f"batched runs require the "
                         f"{StrategyKind.PIPELINED_BATCH2_EBE.value} "
                         f"strategy, got {cfg.strategy}")
    if not 1 <= len(waves) <= 2:
        raise InputError(f"batched runs take 1 or 2 waves, got {len(waves)}")
    snapshots = snapshots or [None] * len(waves)
    ws = [prepare_wave(w, cfg) for w in waves]
    rt = _make_runtime(cfg)
    cases = []
    for ci, snap in enumerate(snapshots):
        case = _Case(model, cfg, snap)
        _setup_ebe(case, rt, tag=ci)
        cases.append(case)
    recs = [_Recorder(model, cfg, cfg.nt) for _ in cases]
    telemetry = []

    def solve_all():
        return sum(case.solve_ebe() for case in cases)

    for i in range(cfg.nt):
        step = cases[0].state.step + 1
        try:
            for case, w in zip(cases, ws):
                case.prepare_step(w[i])
            tel = run_step_pipelined_batch2(
                rt, [c.store for c in cases], step, solve_all,
                [c.compute_partition for c in cases])
            for case in cases:
                case.ebe_update()
                case.finish_step()
        except SolverError as exc:
            raise _step_error(exc, step) from exc
        telemetry.append(tel)
        for rec, case in zip(recs, cases):
            rec.record(i, case)
    return [_result(case, rec, telemetry, rt, cfg.nt)
            for case, rec in zip(cases, recs)]


# ---------------------------------------------------------------------------
# consistency check and persistence


def derive_internal_force(model, u, spring_field):
    """q rebuilt from constitutive stresses; matches the recurrence-updated
    q within accumulation roundoff."""
    e = model.n_elements
    eps = np.einsum("eqcj,ej->eqc", model.kd.b[:, :4], u[model.edof])
    dev = deviatoric_stress(spring_field, model.table).reshape(e, 4, 6)
    kb = model.params[1][model.mesh.mat_id]
    ev = eps[:, :, :3].sum(axis=2)
    sig = dev.copy()
    sig[:, :, :3] += (kb[:, None] * ev)[:, :, None]
    s5 = np.concatenate([sig, sig.mean(axis=1, keepdims=True)], axis=1)
    q_e = np.einsum("eq,eqcj,eqc->ej", model.kd.weights, model.kd.b, s5)
    return np.bincount(model.edof.ravel(), weights=q_e.ravel(),
                       minlength=model.n_dofs)


def save_checkpoint(path, snapshot, cfg):
    s = snapshot
    binio.write_container(
        path, CHECKPOINT_MAGIC,
        {
            "step": s.state.step,
            "alpha": s.damp.alpha,
            "beta": s.damp.beta,
            "n_springs": s.field.n_springs,
            "config": cfg.to_dict(),
        },
        {
            "u": s.state.u, "v": s.state.v, "a": s.state.a, "q": s.state.q,
            "gamma": s.field.gamma, "tau": s.field.tau,
            "gamma_rev": s.field.gamma_rev, "tau_rev": s.field.tau_rev,
            "dir_flag": s.field.dir_flag, "skel_flag": s.field.skel_flag,
            "tangents": s.tangents,
            "warm": s.warm if s.warm is not None else np.zeros(0),
        },
    )


def load_checkpoint(path):
    meta, arrays = binio.read_container(path, CHECKPOINT_MAGIC)
    state = TimeState(arrays["u"], arrays["v"], arrays["a"], arrays["q"],
                      step=int(meta["step"]))
    n_elements = arrays["gamma"].shape[0] // EVAL_POINTS_PER_ELEMENT
    fld = SpringField(n_elements, int(meta["n_springs"]))
    fld.gamma[:] = arrays["gamma"]
    fld.tau[:] = arrays["tau"]
    fld.gamma_rev[:] = arrays["gamma_rev"]
    fld.tau_rev[:] = arrays["tau_rev"]
    fld.dir_flag[:] = arrays["dir_flag"]
    fld.skel_flag[:] = arrays["skel_flag"]
    warm = arrays["warm"] if arrays["warm"].size else None
    snap = CaseSnapshot(state, fld, arrays["tangents"], warm,
                        RayleighCoeffs(float(meta["alpha"]),
                                       float(meta["beta"])))
    return snap, meta["config"]


def write_waveforms_csv(result, directory):
    """One CSV per observation point: t, ux, uy, uz, vx, vy, vz."""
    paths = []
    os.makedirs(directory, exist_ok=True)
    for k, (x, y) in enumerate(result.obs_points):
        path = os.path.join(directory, f"waveform_p{k:02d}.csv")
        cols = np.column_stack([result.times, result.obs_u[k].T,
                                result.obs_v[k].T])
        header = (f"# observation point ({x}, {y}), node "
                  f"{result.obs_nodes[k]}\n"
                  "t,ux,uy,uz,vx,vy,vz")
        np.savetxt(path, cols, delimiter=",", header=header, comments="")
        paths.append(path)
    return paths
