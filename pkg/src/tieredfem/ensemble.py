"""Ensemble dataset generation and the companion 1D column solver.

Random bounded band-limited input waves drive independent engine runs whose
results are persisted one file per case, so an interrupted ensemble resumes
exactly where it stopped and regenerating it from the same seed produces a
byte-identical dataset. The 1D column shares the 3D multispring material
model under reduced kinematics and serves as the classical per-site
reference solution.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .binio import read_container, write_container
from .engine import (DEFAULT_RAYLEIGH_BAND, RunConfig, prepare_wave,
                     run_time_history, run_time_history_batch2)
from .errors import CapacityError, InputError, SolverError, TransferError
from .integrator import (NewmarkCoeffs, RayleighCoeffs, TimeState,
                         apply_updates, build_rhs, operator_terms,
                         update_rayleigh)
from .memtier import StrategyKind
from .springs import (DEFAULT_SPRING_COUNT, SpringField,
                      build_direction_table, elastic_tangents,
                      material_param_arrays, point_damping,
                      update_eval_points)

CASE_MAGIC = "TFCR1"
DATASET_MAGIC = "TFDS1"
DEFAULT_BOUNDS = (0.6, 0.6, 0.3)
DEFAULT_CUTOFF_HZ = 2.5
MIN_RECORD_SECONDS = 0.8


# ---------------------------------------------------------------------------
# input waves


@dataclass
class InputWave:
    """Base input motion: velocity samples (nt, 3) on a fixed time step."""

    dt: float
    samples: np.ndarray
    bounds: tuple


def _check_bounds(bounds):
    bounds = tuple(float(b) for b in bounds)
    if len(bounds) != 3 or min(bounds) <= 0.0:
        raise InputError(f"need 3 positive component bounds, got {bounds}")
    return bounds


def generate_random_wave(seed, nt, dt, bounds=DEFAULT_BOUNDS,
                         cutoff_hz=DEFAULT_CUTOFF_HZ):
    """Random low-passed wave whose components peak exactly at their bounds.

    Uniform white noise is cut off sharply above `cutoff_hz` and each
    component is rescaled so its largest sample equals the bound exactly.
    `seed` may be an int or a sequence such as (ensemble seed, case id),
    which makes every case reproducible in isolation.
    """
    if nt < 1 or not dt > 0.0:
        raise InputError(f"bad sampling nt={nt}, dt={dt}")
    if nt * dt < MIN_RECORD_SECONDS:
        raise InputError(
            f"record must cover at least {MIN_RECORD_SECONDS} s, "
            f"got {nt * dt:.3f} s")
    bounds = _check_bounds(bounds)
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(nt, 3))
    spec = np.fft.rfft(w, axis=0)
    spec[np.fft.rfftfreq(nt, dt) > cutoff_hz] = 0.0
    w = np.fft.irfft(spec, n=nt, axis=0)
    peaks = np.abs(w).max(axis=0)
    if not (peaks > 0.0).all():
        raise InputError("filtered wave is identically zero")
    # x/x == 1 exactly, so each peak lands on its bound bitwise
    w = np.asarray(bounds) * (w / peaks)
    return InputWave(float(dt), w, bounds)


def bandpass(x, dt, corners):
    """Zero-phase band-pass with raised-cosine tapers.

    corners = (f1, f2, f3, f4): gain 0 below f1, cosine ramp up to 1 at f2,
    flat through f3, cosine ramp down to 0 at f4. Applied along axis 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] < 2:
        raise InputError(f"expected samples along axis 0, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("input contains non-finite samples")
    if not dt > 0.0:
        raise InputError(f"time step must be positive, got {dt}")
    f1, f2, f3, f4 = (float(c) for c in corners)
    if not 0.0 <= f1 < f2 < f3 < f4:
        raise InputError(f"corners must increase, got {corners}")
    nyquist = 0.5 / dt
    if f4 > nyquist:
        raise InputError(
            f"top corner {f4} Hz exceeds the Nyquist frequency {nyquist} Hz")
    f = np.fft.rfftfreq(x.shape[0], dt)
    gain = np.zeros_like(f)
    up = (f >= f1) & (f < f2)
    gain[up] = 0.5 * (1.0 - np.cos(np.pi * (f[up] - f1) / (f2 - f1)))
    gain[(f >= f2) & (f <= f3)] = 1.0
    down = (f > f3) & (f <= f4)
    gain[down] = 0.5 * (1.0 + np.cos(np.pi * (f[down] - f3) / (f4 - f3)))
    if x.ndim == 2:
        gain = gain[:, None]
    return np.fft.irfft(np.fft.rfft(x, axis=0) * gain, n=x.shape[0], axis=0)


# ---------------------------------------------------------------------------
# ensemble bookkeeping


@dataclass
class EnsembleSpec:
    """Dataset recipe; every case is fully determined by (seed, case id)."""

    n_cases: int
    seed: int
    nt: int
    dt: float
    out_dir: str
    observation_points: list
    bounds: tuple = DEFAULT_BOUNDS
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    wave_scale: float = 1.0

    def __post_init__(self):
        if self.n_cases < 1:
            raise InputError(f"need at least one case, got {self.n_cases}")
        if self.nt < 1 or not self.dt > 0.0:
            raise InputError(f"bad sampling nt={self.nt}, dt={self.dt}")
        self.bounds = _check_bounds(self.bounds)
        self.observation_points = [tuple(p) for p in self.observation_points]
        if not self.observation_points:
            raise InputError("need at least one observation point")

    def case_wave(self, case_id):
        return generate_random_wave((self.seed, case_id), self.nt, self.dt,
                                    self.bounds, self.cutoff_hz)


@dataclass
class CaseRecord:
    """One completed run of an ensemble, as persisted on disk."""

    case_id: int
    dt: float
    strategy: str
    observation_points: list
    wave: np.ndarray          # (3, nt) input velocity
    response_u: np.ndarray    # (n_obs, 3, nt) displacement
    response_v: np.ndarray    # (n_obs, 3, nt) velocity
    iterations: np.ndarray    # (nt,) solver iterations per step
    hbar: np.ndarray          # (nt,) mean damping level per step


def case_path(out_dir, case_id):
    return os.path.join(out_dir, f"case_{case_id:04d}.tfcr")


def save_case(path, record):
    meta = {
        "case_id": int(record.case_id),
        "dt": float(record.dt),
        "strategy": record.strategy,
        "observation_points": [list(p) for p in record.observation_points],
    }
    arrays = {
        "wave": record.wave,
        "response_u": record.response_u,
        "response_v": record.response_v,
        "iterations": record.iterations.astype(np.int64),
        "hbar": record.hbar,
    }
    write_container(path, CASE_MAGIC, meta, arrays)


def load_case(path):
    meta, arrays = read_container(path, CASE_MAGIC)
    return CaseRecord(
        case_id=int(meta["case_id"]),
        dt=float(meta["dt"]),
        strategy=meta["strategy"],
        observation_points=[tuple(p) for p in meta["observation_points"]],
        wave=arrays["wave"],
        response_u=arrays["response_u"],
        response_v=arrays["response_v"],
        iterations=arrays["iterations"],
        hbar=arrays["hbar"],
    )


def _record_from_result(case_id, wave, res):
    # solver wall time is deliberately not persisted: archives must be
    # byte-reproducible
    iters = np.array([s.iterations for s in res.stats], dtype=np.int64)
    return CaseRecord(case_id, res.dt, res.strategy,
                      [tuple(p) for p in res.obs_points],
                      np.ascontiguousarray(wave.T), res.obs_u, res.obs_v,
                      iters, res.hbar)


def _write_manifest(spec, strategy, done, failed):
    m = {
        "n_cases": spec.n_cases,
        "seed": spec.seed,
        "nt": spec.nt,
        "dt": spec.dt,
        "bounds": list(spec.bounds),
        "cutoff_hz": spec.cutoff_hz,
        "wave_scale": spec.wave_scale,
        "strategy": strategy,
        "observation_points": [list(p) for p in spec.observation_points],
        "done": sorted(done),
        "failed": failed,
    }
    path = os.path.join(spec.out_dir, "manifest.json")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        json.dump(m, f, sort_keys=True, indent=2)
    os.replace(tmp, path)


def run_ensemble(model, spec, strategy="slow-only", resume=True, pair=True,
                 **config_kwargs):
    """Run (or finish) every case of an ensemble; returns records in id order.

    Each completed case lands in its own file and the manifest is rewritten
    atomically after every case, so a crashed or interrupted ensemble picks
    up with the pending cases only. A solver failure marks just its case as
    failed and the ensemble continues; failed cases are retried on the next
    call. Under the two-case strategy pending cases are paired per solve
    (pair=False forces solo runs); pairing does not change the numbers.
    Records are always read back from the case files, so fresh and resumed
    ensembles return byte-identical data.
    """
    kind = StrategyKind.parse(strategy)
    os.makedirs(spec.out_dir, exist_ok=True)
    cfg = RunConfig(nt=spec.nt, dt=spec.dt, strategy=kind.value,
                    observation_points=spec.observation_points,
                    wave_scale=spec.wave_scale, **config_kwargs)
    done = [cid for cid in range(spec.n_cases)
            if resume and os.path.exists(case_path(spec.out_dir, cid))]
    pending = sorted(set(range(spec.n_cases)) - set(done))
    failed = {}
    batch = kind is StrategyKind.PIPELINED_BATCH2_EBE and pair
    step = 2 if batch else 1
    chunks = [pending[i:i + step] for i in range(0, len(pending), step)]
    for chunk in chunks:
        waves = [spec.case_wave(cid).samples for cid in chunk]
        try:
            if kind is StrategyKind.PIPELINED_BATCH2_EBE:
                results = run_time_history_batch2(model, waves, cfg)
            else:
                results = [run_time_history(model, waves[0], cfg)]
        except (SolverError, CapacityError, TransferError) as exc:
            for cid in chunk:
                failed[str(cid)] = str(exc)
            _write_manifest(spec, kind.value, done, failed)
            continue
        for cid, wave, res in zip(chunk, waves, results):
            save_case(case_path(spec.out_dir, cid),
                      _record_from_result(cid, wave, res))
            done.append(cid)
            _write_manifest(spec, kind.value, done, failed)
    _write_manifest(spec, kind.value, done, failed)
    return [load_case(case_path(spec.out_dir, cid)) for cid in sorted(done)]


# ---------------------------------------------------------------------------
# dataset export


def export_dataset(records, path):
    """Pack records into one container: inputs (n, 3, nt) and velocity
    targets (n, n_obs, 3, nt), plus the metadata a reader needs."""
    if not records:
        raise InputError("no case records to export")
    recs = sorted(records, key=lambda r: r.case_id)
    first = recs[0]
    nt = first.wave.shape[1]
    for r in recs:
        if (r.wave.shape != first.wave.shape
                or r.response_v.shape != first.response_v.shape):
            raise InputError(f"case {r.case_id}: inconsistent record shapes")
        if r.dt != first.dt:
            raise InputError(f"case {r.case_id}: inconsistent time step")
    meta = {
        "dt": first.dt,
        "nt": nt,
        "n_cases": len(recs),
        "n_points": first.response_v.shape[0],
        "case_ids": [int(r.case_id) for r in recs],
        "strategy": first.strategy,
        "observation_points": [list(p) for p in first.observation_points],
    }
    arrays = {
        "inputs": np.stack([r.wave for r in recs]),
        "targets": np.stack([r.response_v for r in recs]),
    }
    write_container(path, DATASET_MAGIC, meta, arrays)


def load_dataset(path):
    """(meta, inputs (n, 3, nt), targets (n, n_obs, 3, nt))."""
    meta, arrays = read_container(path, DATASET_MAGIC)
    return meta, arrays["inputs"], arrays["targets"]


# ---------------------------------------------------------------------------
# 1D column


_GAUSS_XI = (-1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0))
COLUMN_POINTS_PER_ELEMENT = 2


class _DenseOperator:
    def __init__(self, a):
        self.a = a

    def matvec(self, v):
        return self.a @ v


class ColumnModel:
    """Quadratic line elements down a layer stack, 3 dofs per node.

    Kinematics keep only the strains a vertically propagating wave excites
    (axial zz and the two shears), but every integration point carries the
    full multispring table of the 3D elements, so the constitutive response
    matches the 3D model exactly. The base rests on matched dashpots fed
    with the outcrop motion of the deepest material: a uniform column then
    returns the input at the surface unchanged.
    """

    def __init__(self, column, dz=2.5, n_springs=DEFAULT_SPRING_COUNT):
        if not dz > 0.0:
            raise InputError(f"target element size must be positive: {dz}")
        lengths, mats = [], []
        for thickness, mat in column.layers:
            ne = max(1, int(round(thickness / dz)))
            lengths.extend([thickness / ne] * ne)
            mats.extend([mat] * ne)
        self.lengths = np.array(lengths)
        self.mat_el = np.array(mats, dtype=np.int64)
        self.materials = column.materials
        ne = self.n_elements = len(lengths)
        self.n_nodes = 2 * ne + 1
        self.n_dofs = 3 * self.n_nodes
        nodes = 2 * np.arange(ne)[:, None] + np.arange(3)
        self.edof = (3 * nodes[:, :, None] + np.arange(3)).reshape(ne, 9)

        # strain rows (zz, yz, zx) of the two-point Gauss rule; node index
        # runs downward so d/dz carries a sign flip
        self.b = np.zeros((ne, 2, 6, 9))
        self.jw = np.empty((ne, 2))
        for g, xi in enumerate(_GAUSS_XI):
            dn = np.array([xi - 0.5, -2.0 * xi, xi + 0.5])
            dndz = dn[None, :] * (-2.0 / self.lengths[:, None])
            for a in range(3):
                self.b[:, g, 2, 3 * a + 2] = dndz[:, a]
                self.b[:, g, 4, 3 * a + 1] = dndz[:, a]
                self.b[:, g, 5, 3 * a + 0] = dndz[:, a]
            self.jw[:, g] = 0.5 * self.lengths

        rho = np.array([m.rho for m in column.materials])[self.mat_el]
        mass = np.zeros(self.n_nodes)
        np.add.at(mass, nodes, (rho * self.lengths)[:, None]
                  * np.array([1.0, 4.0, 1.0]) / 6.0)
        self.mass_dofs = np.repeat(mass, 3)
        base = column.materials[int(self.mat_el[-1])]
        self.base_dash = np.array([base.rho * base.vs, base.rho * base.vs,
                                   base.rho * base.vp])
        self.dash_dofs = np.zeros(self.n_dofs)
        self.dash_dofs[-3:] = self.base_dash

        self.n_points = COLUMN_POINTS_PER_ELEMENT * ne
        self.table = build_direction_table(n_springs)
        self.params = material_param_arrays(column.materials)
        self.point_slice = slice(0, self.n_points)
        self.mat_pts = np.zeros(4 * self._field_elements(), dtype=np.int64)
        self.mat_pts[:self.n_points] = np.repeat(
            self.mat_el, COLUMN_POINTS_PER_ELEMENT)
        lin = self.params[-1]
        nonlinear = lin[self.mat_pts[:self.n_points]] == 0
        self.hbar_weights = np.where(nonlinear, self.jw.reshape(-1), 0.0)
        self.hbar_weights_sum = float(self.hbar_weights.sum())

    def _field_elements(self):
        return -(-self.n_points // 4)

    def new_field(self, n_springs=None):
        if n_springs is None:
            n_springs = self.table.w.size
        return SpringField(self._field_elements(), n_springs)

    def elastic_tangents2(self):
        t = elastic_tangents(self.mat_pts[:self.n_points], self.table,
                             self.params)
        return t.reshape(self.n_elements, COLUMN_POINTS_PER_ELEMENT, 6, 6)

    def assemble(self, tangents):
        ke = np.einsum("eg,egci,egcd,egdj->eij", self.jw, self.b, tangents,
                       self.b)
        k = np.zeros((self.n_dofs, self.n_dofs))
        np.add.at(k, (self.edof[:, :, None], self.edof[:, None, :]), ke)
        return k


@dataclass
class ColumnResult:
    dt: float
    times: np.ndarray
    surface_u: np.ndarray    # (3, nt)
    surface_v: np.ndarray    # (3, nt)
    hbar: np.ndarray         # (nt,)


def run_column(column, wave, nt, dt, dz=2.5, wave_kind="velocity",
               wave_scale=1.0, rayleigh_band=DEFAULT_RAYLEIGH_BAND,
               n_springs=DEFAULT_SPRING_COUNT):
    """Nonlinear time history of a layered column driven at its base.

    The wave is the outcrop velocity of the base material (twice the
    incident amplitude); the dashpot drive turns it into the base traction,
    so a rigid column reproduces the input at the surface with unit
    amplification. Same implicit scheme and lagged damping update as the
    3D engine.
    """
    cfg = RunConfig(nt=nt, dt=dt, wave_kind=wave_kind, wave_scale=wave_scale,
                    rayleigh_band=rayleigh_band)
    w = prepare_wave(wave, cfg)
    col = ColumnModel(column, dz, n_springs)
    newmark = NewmarkCoeffs.from_dt(dt)
    damp = RayleighCoeffs(0.0, 0.0)
    state = TimeState.zeros(col.n_dofs)
    field = col.new_field()
    stiffness = col.assemble(col.elastic_tangents2())
    constrained = np.empty(0, dtype=np.int64)
    surface_u = np.empty((3, nt))
    surface_v = np.empty((3, nt))
    hbar_hist = np.empty(nt)
    hbar = 0.0
    for n in range(nt):
        scale_k, dvec = operator_terms(newmark, damp, col.mass_dofs,
                                       col.dash_dofs)
        a = scale_k * stiffness
        a[np.diag_indices_from(a)] += dvec
        f_ext = np.zeros(col.n_dofs)
        f_ext[-3:] = col.base_dash * w[n]
        rhs = build_rhs(state, f_ext, newmark, damp, col.mass_dofs,
                        col.dash_dofs, _DenseOperator(a), constrained)
        du = np.linalg.solve(a, rhs)
        if not np.isfinite(du).all():
            raise SolverError(f"step {state.step + 1}: non-finite solution")

        de = np.einsum("egcj,ej->egc", col.b, du[col.edof]).reshape(-1, 6)
        dsig, dtan = update_eval_points(field, de, col.mat_pts, col.table,
                                        col.params, col.point_slice)
        dq_e = np.einsum("eg,egcj,egc->ej", col.jw, col.b,
                         dsig.reshape(col.n_elements, -1, 6))
        dq = np.bincount(col.edof.ravel(), dq_e.ravel(), col.n_dofs)
        h_pts = point_damping(field, col.mat_pts, col.table, col.params,
                              col.point_slice)
        if col.hbar_weights_sum > 0.0:
            hbar = float(h_pts @ col.hbar_weights / col.hbar_weights_sum)
        damp = update_rayleigh(hbar, rayleigh_band)
        stiffness = col.assemble(
            dtan.reshape(col.n_elements, COLUMN_POINTS_PER_ELEMENT, 6, 6))

        state = apply_updates(state, du, newmark, dq)
        surface_u[:, n] = state.u[:3]
        surface_v[:, n] = state.v[:3]
        hbar_hist[n] = hbar
    times = dt * np.arange(1, nt + 1)
    return ColumnResult(dt, times, surface_u, surface_v, hbar_hist)
