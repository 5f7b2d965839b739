"""Virtual indentation test and reopening-mode classification.

An indentation scene pins the hinge, prescribes the axial coordinate of a
small vertex patch around the indentation point and advances it in stroke
increments. The reaction force is read from the energy gradient at the
prescribed vertices.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoTransition, RangeError
from .geometry import TriMesh, triangle_areas
from .shell import ShellModel, energy_gradient
from .solver import (
    GRAD_TOL,
    ActuationPath,
    Constraints,
    EquilibriumState,
    continuation_actuation,
    find_equilibrium,
    hinge_frame,
    holder_constraints,
    opening_angle,
)

log = logging.getLogger(__name__)

LOADING = "Loading"
SNAPPING = "Snapping"
DIRECTIONS = (LOADING, SNAPPING)

INDENTER_RADIUS_MM = 2.5
F_THRESH_N = 0.01
DROP_FRACTION = 0.2
SNAP_JUMP_FACTOR = 5.0
MACHINE_SPEED_MM_S = 40.0
SLENDERNESS_THRESHOLD = 30.0

SMOOTH = "Smooth"
TWO_PHASE = "TwoPhaseSnap"


# ---------------------------------------------------------------------------
# scenes and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IndentationScene:
    shell: ShellModel
    start: np.ndarray
    fixed: np.ndarray
    point: np.ndarray
    axis: np.ndarray
    direction: str = LOADING
    radius: float = INDENTER_RADIUS_MM

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.radius <= 0:
            raise ValueError("indenter radius must be positive")
        start = np.asarray(self.start, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "fixed", np.unique(np.asarray(self.fixed, dtype=int)))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,) or not np.linalg.norm(a) > 0:
            raise ValueError("indentation axis must be a nonzero 3-vector")
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        if self.prescribed.size == 0:
            raise ValueError("no free vertex lies within the indenter radius of the indentation point")
        angle = opening_angle(self.shell.mesh, start)
        if self.direction == SNAPPING and angle >= 0:
            raise ValueError("a Snapping scene must start from the loaded (negative opening angle) state")
        if self.direction == LOADING and angle < 0:
            raise ValueError("a Loading scene must start from the open state")

    @property
    def prescribed(self) -> np.ndarray:
        d = np.linalg.norm(self.start - self.point, axis=1)
        idx = np.flatnonzero(d <= self.radius)
        return np.setdiff1d(idx, self.fixed)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "indentation_point_mm": [float(v) for v in self.point],
            "axis": [float(v) for v in self.axis],
            "indenter_radius_mm": float(self.radius),
            "fixed_vertices": int(self.fixed.size),
            "prescribed_vertices": int(self.prescribed.size),
            "n_vertices": int(self.start.shape[0]),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def indentation_point(mesh: TriMesh, x: np.ndarray, offset: float = 0.0) -> np.ndarray:
    """Apex position, optionally moved ``offset`` mm towards the hinge midpoint (snapped to a vertex)."""
    p = x[mesh.apex]
    if offset == 0:
        return p.copy()
    m = x[mesh.tagged("hinge")].mean(axis=0)
    u = m - p
    u /= np.linalg.norm(u)
    target = p + offset * u
    return x[int(np.argmin(np.linalg.norm(x - target, axis=1)))].copy()


def default_axis(mesh: TriMesh, x: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Unit vector from the indentation point straight towards the hinge plane."""
    m, n, _ = hinge_frame(mesh, x)
    side = (point - m) @ n
    scale = float(np.ptp(x, axis=0).max())
    if abs(side) <= 1e-9 * scale:
        return -n
    return -np.sign(side) * n


def make_scene(
    shell: ShellModel,
    direction: str = LOADING,
    start=None,
    holder_width: float | None = None,
    offset: float = 0.0,
    radius: float = INDENTER_RADIUS_MM,
    axis=None,
) -> IndentationScene:
    """Scene with the default holder and an apex indenter.

    ``start`` defaults to the as-built shape; a Snapping scene needs the
    loaded state (for example ``check_bistability(...).state_b.positions``).
    """
    mesh = shell.mesh
    x = shell.rest_positions if start is None else np.asarray(start, dtype=float).reshape(-1, 3)
    c = holder_constraints(mesh) if holder_width is None else holder_constraints(mesh, holder_width)
    p = indentation_point(mesh, x, offset)
    a = default_axis(mesh, x, p) if axis is None else axis
    return IndentationScene(shell, x, c.fixed, p, a, direction, radius)


@dataclass(frozen=True, eq=False)
class IndentationTrace:
    stroke: np.ndarray
    force: np.ndarray
    direction: str
    snap_index: int | None = None
    complete: bool = True
    positions: np.ndarray | None = field(default=None, repr=False)
    f_thresh: float = F_THRESH_N
    drop_fraction: float = DROP_FRACTION

    def __post_init__(self):
        s = np.asarray(self.stroke, dtype=float)
        f = np.asarray(self.force, dtype=float)
        if s.shape != f.shape or s.ndim != 1:
            raise ValueError("stroke and force must be 1-D arrays of equal length")
        if s.size > 1 and np.any(np.diff(s) <= 0):
            raise ValueError("strokes must be strictly increasing")
        object.__setattr__(self, "stroke", s)
        object.__setattr__(self, "force", f)

    @property
    def snap_detected(self) -> bool:
        return self.snap_index is not None

    @property
    def peak_force(self) -> float:
        return float(self.force.max()) if self.force.size else 0.0

    def transition_points(self) -> tuple[float, float]:
        return detect_transition_points(self)

    @property
    def work(self) -> float:
        x1, x2 = self.transition_points()
        return compute_work(self, x1, x2)

    def summary(self) -> dict:
        x1, x2 = self.transition_points()
        return {
            "direction": self.direction,
            "X1_mm": x1,
            "X2_mm": x2,
            "work_mj": compute_work(self, x1, x2),
            "max_force_n": self.peak_force,
            "snap_detected": self.snap_detected,
            "complete": self.complete,
            "f_thresh_n": self.f_thresh,
            "drop_fraction": self.drop_fraction,
        }

    def to_csv(self, path) -> None:
        write_trace_csv(path, self.stroke, self.force)


def write_trace_csv(path, stroke, force, speed: float = MACHINE_SPEED_MM_S) -> None:
    """Machine-style export; time is synthesized from the constant crosshead speed."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "stroke_mm", "force_n"])
        for s, f in zip(stroke, force):
            w.writerow([f"{s / speed:.10g}", f"{s:.10g}", f"{f:.10g}"])


# ---------------------------------------------------------------------------
# indentation
# ---------------------------------------------------------------------------

def _reaction(shell, x, idx, axis) -> float:
    g = energy_gradient(shell, x)
    return float(np.sum(g[idx] @ axis))


def run_indentation(
    scene: IndentationScene,
    stroke_max: float,
    step: float,
    tol: float = GRAD_TOL,
    jump_factor: float = SNAP_JUMP_FACTOR,
    f_thresh: float = F_THRESH_N,
    drop_fraction: float = DROP_FRACTION,
) -> IndentationTrace:
    """Displacement-controlled indentation sweep.

    A snap is flagged when the indenter loses contact (the reaction falls to
    zero or below after exceeding ``f_thresh``) or when the largest vertex
    displacement of an increment exceeds ``jump_factor`` times both the
    imposed step and the previous increment's displacement.
    """
    if step <= 0:
        raise ValueError("stroke step must be positive")
    if stroke_max < step:
        raise ValueError("stroke_max must be at least one step")
    shell, x = scene.shell, scene.start.copy()
    idx, axis = scene.prescribed, scene.axis
    base = scene.start[idx] @ axis
    n_steps = int(np.floor(stroke_max / step + 1e-9))
    strokes, forces = [0.0], [_reaction(shell, x, idx, axis)]
    snap, complete, prev_jump, loaded = None, True, None, False
    for k in range(1, n_steps + 1):
        s = k * step
        c = Constraints(scene.fixed, idx, axis, base + s)
        st = find_equilibrium(shell, x, c, tol=tol, reference=scene.start, compute_lambda=False, ensure_minimum=False)
        if not st.converged:
            complete = False
            log.warning("indentation stopped at stroke %.3f mm (no equilibrium)", s)
            break
        jump = float(np.max(np.linalg.norm(st.positions - x, axis=1)))
        x = st.positions
        f = _reaction(shell, x, idx, axis)
        strokes.append(s)
        forces.append(f)
        loaded = loaded or f > f_thresh
        surge = prev_jump is not None and jump > jump_factor * max(step, prev_jump)
        if (loaded and f <= 0.0) or surge:
            snap = len(strokes) - 1
            break
        prev_jump = jump
    return IndentationTrace(
        np.array(strokes), np.array(forces), scene.direction, snap, complete, x, f_thresh, drop_fraction
    )


def release(scene: IndentationScene, trace: IndentationTrace, tol: float = GRAD_TOL) -> EquilibriumState:
    """Remove the indenter and relax; shows which stable state the sweep ended in."""
    c = Constraints(scene.fixed)
    return find_equilibrium(scene.shell, trace.positions, c, tol=tol, reference=scene.start)


def _samples(trace):
    if isinstance(trace, IndentationTrace):
        return trace.stroke, trace.force, trace.snap_index, trace.f_thresh, trace.drop_fraction
    arr = np.asarray(trace, dtype=float)
    return arr[:, 0], arr[:, 1], None, F_THRESH_N, DROP_FRACTION


def detect_transition_points(trace, f_thresh: float | None = None, drop_fraction: float | None = None):
    """(X1, X2): start of deformation and buckling point.

    X1 is the first stroke whose force exceeds ``f_thresh``. X2 is the
    stroke of the running force maximum at the first sample that falls
    ``drop_fraction`` below it, or the snap stroke if that comes first; a
    trace with neither ends at its last stroke. ``trace`` is an
    ``IndentationTrace`` or an (n, 2) array of (stroke, force) samples.
    """
    s, f, snap, ft, dr = _samples(trace)
    ft = ft if f_thresh is None else f_thresh
    dr = dr if drop_fraction is None else drop_fraction
    if len(s) < 3:
        raise ValueError("need at least 3 samples")
    above = np.flatnonzero(f > ft)
    if above.size == 0:
        raise NoTransition(f"force never exceeds {ft} N")
    i1 = int(above[0])
    i2 = len(s) - 1
    peak_i = i1
    for k in range(i1, len(s)):
        if f[k] > f[peak_i]:
            peak_i = k
        elif f[k] <= (1.0 - dr) * f[peak_i]:
            i2 = peak_i
            break
    if snap is not None and snap < i2:
        i2 = max(int(snap), i1)
    return float(s[i1]), float(s[i2])


def compute_work(trace, x1: float, x2: float) -> float:
    """Trapezoidal force-stroke integral on [x1, x2] in mJ (N*mm).

    Limits between samples are handled by linear interpolation, which keeps
    the integral additive over any split point.
    """
    s, f, *_ = _samples(trace)
    if x1 > x2:
        raise RangeError("X1 must not exceed X2")
    lo, hi = float(s[0]), float(s[-1])
    span = max(hi - lo, 1.0)
    if x1 < lo - 1e-12 * span or x2 > hi + 1e-12 * span:
        raise RangeError(f"[{x1}, {x2}] lies outside the sampled stroke range [{lo}, {hi}]")
    x1, x2 = max(x1, lo), min(x2, hi)
    inner = (s > x1) & (s < x2)
    xs = np.concatenate([[x1], s[inner], [x2]])
    fs = np.interp(xs, s, f)
    return float(np.sum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs)))


# ---------------------------------------------------------------------------
# reopening and slenderness
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReopeningResult:
    mode: str
    path: ActuationPath


def run_reopening(
    shell: ShellModel,
    loaded_state,
    schedule,
    constraints: Constraints | None = None,
    r_in: float = 0.2,
    tol: float = GRAD_TOL,
) -> ReopeningResult:
    """Reverse layer actuation from the loaded state; a snap marker means two-phase reopening."""
    x = loaded_state.positions if isinstance(loaded_state, EquilibriumState) else np.asarray(loaded_state, float)
    path = continuation_actuation(
        shell, schedule, constraints=constraints, r_in=r_in, sign=-1.0, start=x, tol=tol
    )
    mode = TWO_PHASE if path.snaps else SMOOTH
    return ReopeningResult(mode, path)


@dataclass(frozen=True)
class SlendernessReport:
    length: float
    thickness: float
    threshold: float = SLENDERNESS_THRESHOLD

    def __post_init__(self):
        if self.length <= 0 or self.thickness <= 0:
            raise ValueError("length and thickness must be positive")

    @property
    def slenderness(self) -> float:
        return self.length / self.thickness

    @property
    def predicted_mode(self) -> str:
        return TWO_PHASE if self.slenderness > self.threshold else SMOOTH


def midspan_length(mesh: TriMesh) -> float:
    """Length of the surface section through the hinge midpoint, normal to the hinge chord."""
    x = mesh.vertices
    h = x[mesh.tagged("hinge")]
    _, _, vt = np.linalg.svd(h - h.mean(axis=0))
    d = vt[0]
    m = 0.5 * (h @ d).min() + 0.5 * (h @ d).max()
    sd = x @ d - m
    total = 0.0
    for tri in mesh.triangles:
        v = sd[tri]
        pts = []
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            da, db = sd[a], sd[b]
            if (da < 0) != (db < 0):
                t = da / (da - db)
                pts.append(x[a] + t * (x[b] - x[a]))
        if len(pts) == 2 and not np.all(v == 0):
            total += float(np.linalg.norm(pts[1] - pts[0]))
    return total


def mean_thickness(mesh: TriMesh) -> float:
    """Area-weighted mean thickness."""
    a = triangle_areas(mesh.vertices, mesh.triangles)
    t = np.asarray(mesh.thickness, dtype=float)[mesh.triangles].mean(axis=1)
    return float(np.sum(t * a) / np.sum(a))


def slenderness(mesh: TriMesh, threshold: float = SLENDERNESS_THRESHOLD) -> SlendernessReport:
    if mesh.thickness is None:
        raise ValueError("mesh has no thickness field")
    return SlendernessReport(midspan_length(mesh), mean_thickness(mesh), threshold)


# ---------------------------------------------------------------------------
# batch manifest
# ---------------------------------------------------------------------------

# sample sizes per actuator and direction in the reference test series
REFERENCE_SAMPLE_SIZES = {
    ("SG", "const"): {LOADING: 16, SNAPPING: 15},
    ("SG", "taper"): {LOADING: 15, SNAPPING: 15},
    ("ATL", "const"): {LOADING: 16, SNAPPING: 15},
    ("ATL", "taper"): {LOADING: 15, SNAPPING: 16},
}


def batch_manifest(counts) -> list[dict]:
    """Rows of (model, thickness, direction, sample size) from ``{(model, kind): {direction: n}}``."""
    rows = []
    for (model, kind), per_dir in counts.items():
        for direction in DIRECTIONS:
            if direction in per_dir:
                rows.append({"model": model, "thickness": kind, "direction": direction,
                             "sample_size": int(per_dir[direction])})
    return rows


def write_batch_manifest(path, counts) -> None:
    with open(path, "w") as fh:
        json.dump({"runs": batch_manifest(counts)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
