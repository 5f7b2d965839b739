"""Quasi-static equilibrium, stability and actuation continuation.

Constraints are handled in reduced coordinates: each vertex contributes
three free directions, two (orthogonal to the indentation axis) when its
axial coordinate is prescribed, or none when fixed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import DegenerateHinge, EigenIterationFailure, InvalidConstraints, NonConvergence
from .geometry import TriMesh, graph_distance
from .shell import (
    ActuationState,
    ShellModel,
    apply_layer_actuation,
    energy_gradient,
    energy_hessian,
    max_abs_strain,
    total_energy,
)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-6
SNAP_ANGLE_DEG = 5.0
DISTINCT_MM = 0.5
HOLDER_WIDTH_MM = 0.0
HINGE_COLLINEAR_TOL = 1e-6


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Constraints:
    """Fixed vertices plus vertices whose coordinate along ``axis`` is prescribed."""

    fixed: np.ndarray
    prescribed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    axis: np.ndarray | None = None
    targets: np.ndarray | None = None
    allow_rigid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fixed", np.unique(np.asarray(self.fixed, dtype=int)))
        object.__setattr__(self, "prescribed", np.unique(np.asarray(self.prescribed, dtype=int)))
        if np.intersect1d(self.fixed, self.prescribed).size:
            raise InvalidConstraints("fixed and prescribed vertex sets overlap")
        if self.prescribed.size:
            if self.axis is None or self.targets is None:
                raise InvalidConstraints("prescribed vertices need an axis and targets")
            a = np.asarray(self.axis, dtype=float)
            object.__setattr__(self, "axis", a / np.linalg.norm(a))
            t = np.broadcast_to(np.asarray(self.targets, dtype=float), self.prescribed.shape)
            object.__setattr__(self, "targets", t.copy())

    def check(self, x: np.ndarray) -> None:
        if self.allow_rigid:
            return
        pts = x[np.concatenate([self.fixed, self.prescribed])]
        if len(pts) < 3:
            raise InvalidConstraints("fewer than 3 constrained vertices and no rigid-mode handling")
        s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if s[1] <= 1e-9 * max(s[0], 1e-300):
            raise InvalidConstraints("constrained vertices are collinear")

    def with_targets(self, targets) -> "Constraints":
        return replace(self, targets=np.broadcast_to(np.asarray(targets, float), self.prescribed.shape).copy())

    def enforce(self, x: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Copy of ``x`` with fixed vertices at ``reference`` and axial targets met."""
        y = np.array(x, dtype=float, copy=True)
        y[self.fixed] = reference[self.fixed]
        if self.prescribed.size:
            a = self.axis
            cur = y[self.prescribed] @ a
            y[self.prescribed] += (self.targets - cur)[:, None] * a
        return y

    def basis(self, n: int) -> sparse.csr_matrix:
        """Orthonormal map from reduced coordinates to full displacements."""
        status = np.zeros(n, dtype=int)
        status[self.fixed] = 2
        status[self.prescribed] = 1
        rows, cols, vals = [], [], []
        col = 0
        if self.prescribed.size:
            a = self.axis
            helper = np.eye(3)[np.argmin(np.abs(a))]
            b1 = np.cross(a, helper)
            b1 /= np.linalg.norm(b1)
            b2 = np.cross(a, b1)
        for i in range(n):
            if status[i] == 0:
                rows += [3 * i, 3 * i + 1, 3 * i + 2]
                cols += [col, col + 1, col + 2]
                vals += [1.0, 1.0, 1.0]
                col += 3
            elif status[i] == 1:
                for b in (b1, b2):
                    rows += [3 * i, 3 * i + 1, 3 * i + 2]
                    cols += [col, col, col]
                    vals += list(b)
                    col += 1
        return sparse.csr_matrix((vals, (rows, cols)), shape=(3 * n, col))


def holder_constraints(mesh: TriMesh, width: float = HOLDER_WIDTH_MM, reference=None) -> Constraints:
    """Fix every vertex within ``width`` (edge-path distance) of the hinge.

    The default width 0 pins the hinge vertices only; a positive width
    clamps a hinge-side strip.
    """
    x = mesh.vertices if reference is None else reference
    hinge = mesh.tagged("hinge")
    if hinge.size == 0:
        raise DegenerateHinge("mesh has no hinge tag")
    d = graph_distance(x, mesh.triangles, hinge)
    return Constraints(np.flatnonzero(d <= width + 1e-9))


# ---------------------------------------------------------------------------
# equilibrium
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EquilibriumState:
    positions: np.ndarray
    energy: float
    grad_norm: float
    lambda_min: float | None
    converged: bool
    iterations: int = 0

    @property
    def configuration(self) -> np.ndarray:
        return self.positions


def factorize(A: sparse.spmatrix):
    """LU in symmetric mode; returns (lu, negative-pivot count or None if pivoting broke symmetry)."""
    lu = splu(
        sparse.csc_matrix(A),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return lu, None
    return lu, int(np.count_nonzero(lu.U.diagonal() <= 0.0))


def _reduced_hessian(shell, x, T):
    H = energy_hessian(shell, x)
    return (T.T @ H @ T).tocsc()


def _newton_direction(Hq: sparse.csc_matrix, gq: np.ndarray) -> np.ndarray:
    """Descent direction from (H + mu I) p = -g with mu raised until H + mu I is SPD."""
    n = Hq.shape[0]
    diag = np.abs(Hq.diagonal())
    scale = float(diag.max()) if n else 1.0
    mu = 0.0
    eye = sparse.identity(n, format="csc")
    while mu <= 1e6 * scale:
        try:
            lu, neg = factorize(Hq + mu * eye if mu else Hq)
        except RuntimeError:
            neg = None
            lu = None
        if lu is not None and neg == 0:
            p = -lu.solve(gq)
            if np.all(np.isfinite(p)) and p @ gq < 0:
                return p
        mu = max(10.0 * mu, 1e-8 * scale)
    return -gq / scale


def _line_search(shell, x, T, p, gq, e0):
    """Backtracking Armijo search; falls back to gradient decrease near round-off."""
    slope = float(p @ gq)
    dx = (T @ p).reshape(-1, 3)
    alpha = 1.0
    g0 = np.max(np.abs(gq))
    while alpha > 1e-10:
        xn = x + alpha * dx
        en = total_energy(shell, xn)
        if en <= e0 + 1e-4 * alpha * slope:
            return xn, en
        alpha *= 0.5
    # energy differences lost in round-off: accept a full step if it reduces the gradient
    xn = x + dx
    en = total_energy(shell, xn)
    if en <= e0 + 1e-10 * max(abs(e0), 1e-12):
        gn = np.max(np.abs(T.T @ energy_gradient(shell, xn).ravel()))
        if gn < g0:
            return xn, en
    return None, e0


def find_equilibrium(
    shell: ShellModel,
    init,
    constraints: Constraints,
    tol: float = GRAD_TOL,
    max_iter: int = 300,
    reference=None,
    ensure_minimum: bool = True,
    compute_lambda: bool = True,
) -> EquilibriumState:
    """Constrained local minimizer of the shell energy from ``init``.

    Fixed vertices are pinned to their position in ``reference`` (default:
    ``init``). Never raises on non-convergence; inspect ``converged``.
    """
    x0 = np.asarray(init, dtype=float).reshape(-1, 3)
    ref = x0 if reference is None else np.asarray(reference, dtype=float).reshape(-1, 3)
    constraints.check(ref)
    T = constraints.basis(shell.n_vertices)
    x = constraints.enforce(x0, ref)
    e = total_energy(shell, x)
    escapes = 0
    converged = False
    it = 0
    gq = T.T @ energy_gradient(shell, x).ravel()
    while it < max_iter:
        it += 1
        gnorm = float(np.max(np.abs(gq))) if gq.size else 0.0
        if gnorm <= tol:
            if not ensure_minimum or escapes >= 8:
                converged = True
                break
            Hq = _reduced_hessian(shell, x, T)
            _, neg = factorize(Hq)
            if neg == 0:
                converged = True
                break
            x_new = _escape_saddle(shell, x, T, Hq)
            escapes += 1
            if x_new is None:
                converged = True
                break
            x = x_new
            e = total_energy(shell, x)
            gq = T.T @ energy_gradient(shell, x).ravel()
            continue
        Hq = _reduced_hessian(shell, x, T)
        p = _newton_direction(Hq, gq)
        x_new, e_new = _line_search(shell, x, T, p, gq, e)
        if x_new is None:
            # stagnated: try a plain gradient step before giving up
            p = -gq / max(float(np.abs(Hq.diagonal()).max()), 1e-300)
            x_new, e_new = _line_search(shell, x, T, p, gq, e)
            if x_new is None:
                break
        x, e = x_new, e_new
        gq = T.T @ energy_gradient(shell, x).ravel()
    gnorm = float(np.max(np.abs(gq))) if gq.size else 0.0
    converged = converged or gnorm <= tol
    lam = None
    if compute_lambda and converged:
        lam = _lambda_min_reduced(_reduced_hessian(shell, x, T))
    if not converged:
        log.warning("equilibrium not converged after %d iterations (|g|=%.3e)", it, gnorm)
    return EquilibriumState(x, e, gnorm, lam, converged, it)


def _escape_saddle(shell, x, T, Hq):
    lam, vec = _lowest_eigpair(Hq)
    if lam >= 0:
        return None
    dx = (T @ vec).reshape(-1, 3)
    dx /= np.max(np.abs(dx))
    e0 = total_energy(shell, x)
    step = 1e-3
    for _ in range(30):
        for sgn in (1.0, -1.0):
            xn = x + sgn * step * dx
            if total_energy(shell, xn) < e0:
                return xn
        step *= 2.0
        if step > 5.0:
            break
    return None


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

def _lowest_eigpair(Hq: sparse.csc_matrix):
    """Smallest eigenpair by shift-invert Lanczos with an inertia-certified shift."""
    n = Hq.shape[0]
    if n == 0:
        return np.inf, np.zeros(0)
    if n <= 3:
        w, v = np.linalg.eigh(Hq.toarray())
        return float(w[0]), v[:, 0]
    scale = float(np.abs(Hq.diagonal()).max()) or 1.0
    eye = sparse.identity(n, format="csc")
    sigma = -1e-9 * scale
    for _ in range(80):
        lu, neg = factorize(Hq - sigma * eye)
        if neg is None:
            break
        if neg == 0:
            op = LinearOperator((n, n), matvec=lu.solve, dtype=float)
            v0 = np.ones(n) / np.sqrt(n)
            try:
                w, v = eigsh(Hq, k=1, sigma=sigma, which="LM", OPinv=op, v0=v0, tol=1e-12, maxiter=5000)
            except ArpackNoConvergence as exc:
                raise EigenIterationFailure(str(exc)) from exc
            return float(w[0]), v[:, 0]
        sigma *= 4.0
    # symmetric-mode pivoting failed: fall back to plain Lanczos on the algebraic end
    try:
        w, v = eigsh(Hq, k=1, which="SA", v0=np.ones(n), tol=1e-10, maxiter=20000)
    except ArpackNoConvergence as exc:
        raise EigenIterationFailure(str(exc)) from exc
    return float(w[0]), v[:, 0]


def _lambda_min_reduced(Hq) -> float:
    return _lowest_eigpair(Hq)[0]


def constrained_hessian(shell: ShellModel, positions, constraints: Constraints) -> sparse.csc_matrix:
    T = constraints.basis(shell.n_vertices)
    return _reduced_hessian(shell, np.asarray(positions, float).reshape(-1, 3), T)


def min_stiffness_eigenvalue(shell: ShellModel, state, constraints: Constraints) -> float:
    """Smallest eigenvalue (N/mm) of the Hessian restricted to the free directions."""
    x = state.positions if isinstance(state, EquilibriumState) else state
    return _lambda_min_reduced(constrained_hessian(shell, x, constraints))


# ---------------------------------------------------------------------------
# hinge frame and opening angle
# ---------------------------------------------------------------------------

def _raw_frame(mesh: TriMesh, x: np.ndarray):
    hinge = mesh.tagged("hinge")
    if hinge.size < 2:
        raise DegenerateHinge("need at least two hinge vertices")
    hp = x[hinge]
    m = hp.mean(axis=0)
    _, s, vt = np.linalg.svd(hp - m)
    if s[0] <= 0:
        raise DegenerateHinge("hinge vertices coincide")
    d = vt[0]
    if len(s) > 1 and s[1] > HINGE_COLLINEAR_TOL * s[0]:
        return m, vt[2], d
    # straight hinge: plane through the hinge line and the lateral-edge midpoint
    lat = mesh.tagged("lateral")
    if lat.size == 0:
        raise DegenerateHinge("straight hinge and no lateral vertices")
    w = x[lat].mean(axis=0) - m
    n = np.cross(d, w)
    if np.linalg.norm(n) <= 1e-12 * max(np.linalg.norm(w), 1e-300):
        raise DegenerateHinge("lateral midpoint lies on the hinge line")
    return m, n / np.linalg.norm(n), d


def _rest_orientation(mesh: TriMesh) -> np.ndarray:
    """Hinge-plane normal of the as-built lobe, pointing to the apex side."""
    x0 = mesh.vertices
    m, n, _ = _raw_frame(mesh, x0)
    h = (x0[mesh.apex] - m) @ n
    scale = float(np.ptp(x0, axis=0).max())
    if abs(h) > 1e-9 * scale:
        return n if h > 0 else -n
    p = x0[mesh.triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]).sum(axis=0)
    return -n if fn @ n < 0 else n


def hinge_frame(mesh: TriMesh, x: np.ndarray):
    """(origin, unit normal, hinge direction) of the hinge best-fit plane.

    A curved hinge is fitted by its own plane. A straight hinge falls back to
    the plane through the hinge line and the lateral-edge midpoint. The
    normal is oriented consistently with the as-built lobe, whose apex side
    counts as positive (for a flat lobe, the side its faces point to).
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    m, n, d = _raw_frame(mesh, x)
    if n @ _rest_orientation(mesh) < 0:
        n = -n
    return m, n, d


def opening_angle(mesh: TriMesh, positions) -> float:
    """Signed angle (degrees) between the hinge plane and the hinge-midpoint-to-apex chord."""
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    m, n, _ = hinge_frame(mesh, x)
    chord = x[mesh.apex] - m
    h = chord @ n
    d = np.linalg.norm(chord - h * n)
    return float(np.degrees(np.arctan2(h, d)))


def mirrored_guess(mesh: TriMesh, positions, fixed=()) -> np.ndarray:
    """Reflect the out-of-plane displacement about the hinge plane; fixed vertices stay.

    For a planar curved hinge the reflection maps the hinge onto itself, so
    the guess folds the lobe over the hinge with its curvature inverted.
    """
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    m, n, _ = hinge_frame(mesh, x)
    y = x - 2.0 * ((x - m) @ n)[:, None] * n
    fixed = np.asarray(fixed, dtype=int)
    y[fixed] = x[fixed]
    return y


# ---------------------------------------------------------------------------
# bistability
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BistabilityReport:
    state_a: EquilibriumState
    state_b: EquilibriumState
    distance: float
    distinct: bool
    both_stable: bool

    @property
    def bistable(self) -> bool:
        return self.distinct and self.both_stable


def check_bistability(shell: ShellModel, constraints: Constraints, tol: float = GRAD_TOL) -> BistabilityReport:
    """Relax from the as-built shape and from its mirror image, then compare."""
    x0 = shell.rest_positions
    a = find_equilibrium(shell, x0, constraints, tol=tol)
    guess = mirrored_guess(shell.mesh, x0, constraints.fixed)
    b = find_equilibrium(shell, guess, constraints, tol=tol, reference=x0)
    for st in (a, b):
        if not st.converged:
            raise NonConvergence("bistability relaxation did not converge", st)
    dist = float(np.max(np.linalg.norm(a.positions - b.positions, axis=1)))
    distinct = dist > DISTINCT_MM
    both = bool(a.lambda_min is not None and b.lambda_min is not None and a.lambda_min > 0 and b.lambda_min > 0)
    return BistabilityReport(a, b, dist, distinct, both)


# ---------------------------------------------------------------------------
# actuation continuation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ActuationPath:
    alpha: np.ndarray
    opening_angle: np.ndarray
    max_abs_strain: np.ndarray
    energy: np.ndarray
    lambda_min: np.ndarray
    snaps: tuple[int, ...]
    positions: tuple[np.ndarray, ...] = ()
    complete: bool = True

    def __len__(self):
        return len(self.alpha)

    def to_csv(self, path) -> None:
        flags = np.zeros(len(self.alpha), dtype=int)
        flags[list(self.snaps)] = 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "opening_angle_deg", "max_abs_strain", "energy_mj", "snap_flag"])
            for row in zip(self.alpha, self.opening_angle, self.max_abs_strain, self.energy, flags):
                w.writerow([f"{row[0]:.10g}", f"{row[1]:.10g}", f"{row[2]:.10g}", f"{row[3]:.10g}", int(row[4])])


def prestressed(shell: ShellModel, curvature_boost: float) -> ShellModel:
    """Rest bend angles of a more strongly curved variant of the same lobe.

    The rest metric is unchanged, so the as-built shape can no longer reach
    its rest state and carries stored energy once relaxed.
    """
    return replace(shell, rest_phi=shell.rest_phi * (1.0 + curvature_boost))


def continuation_actuation(
    shell: ShellModel,
    schedule,
    prestress_geometry: bool = False,
    constraints: Constraints | None = None,
    r_in: float = 0.2,
    t_lev: float | None = None,
    curvature_boost: float = 1.0,
    sign: float = 1.0,
    start=None,
    snap_deg: float = SNAP_ANGLE_DEG,
    tol: float = GRAD_TOL,
) -> ActuationPath:
    """Warm-started equilibrium path over an increasing actuation schedule."""
    alphas = np.asarray(schedule, dtype=float)
    if alphas.size == 0:
        raise ValueError("empty actuation schedule")
    if alphas.size > 1 and not (np.all(np.diff(alphas) > 0) or np.all(np.diff(alphas) < 0)):
        raise ValueError("actuation schedule must be strictly monotone")
    if constraints is None:
        constraints = holder_constraints(shell.mesh)
    base = prestressed(shell, curvature_boost) if prestress_geometry else shell
    ref = shell.rest_positions
    x = ref if start is None else np.asarray(start, dtype=float)
    angles, strain, energy, lams, pos = [], [], [], [], []
    snaps = []
    complete = True
    for k, a in enumerate(alphas):
        act_shell = apply_layer_actuation(base, ActuationState(float(a), r_in, t_lev), sign=sign)
        st = find_equilibrium(act_shell, x, constraints, tol=tol, reference=ref)
        if not st.converged:
            complete = False
            log.warning("continuation stopped at alpha=%g", a)
            break
        x = st.positions
        angles.append(opening_angle(shell.mesh, x))
        strain.append(max_abs_strain(shell, x))
        energy.append(st.energy)
        lams.append(st.lambda_min if st.lambda_min is not None else np.nan)
        pos.append(x)
        if k > 0 and abs(angles[-1] - angles[-2]) > snap_deg:
            snaps.append(k)
    n = len(angles)
    return ActuationPath(
        alphas[:n], np.array(angles), np.array(strain), np.array(energy), np.array(lams),
        tuple(snaps), tuple(pos), complete,
    )
