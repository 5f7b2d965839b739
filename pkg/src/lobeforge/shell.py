"""Discrete thin-shell energy: CST membrane plus hinge bending.

Membrane: St. Venant-Kirchhoff constant-strain triangles, with the rest
frame rebuilt from rest edge lengths, so the rest metric is just an
edge-length triple per triangle.

Bending: per interior edge ``k_b * (theta - theta_rest)^2``, where theta
is the dihedral angle (pi when flat). Internally the signed bend angle
``phi = pi - theta`` is used; phi > 0 where the surface curves away from
its normal (a cap bulging towards the normal side).

Element Hessians are obtained by complex-step differentiation of the
analytic element gradients, which only use complex-analytic operations,
so they are exact to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import DegenerateElement
from .geometry import TriMesh
from .material import Material

_CSTEP = 1e-30
# rotates (phi - phi_rest) into its principal branch
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class ActuationState:
    """Three-layer actuation: outer expansion, inner contraction ratio, lever."""

    alpha_out: float
    r_in: float = 0.2
    t_lev: float | None = None

    def __post_init__(self):
        if self.alpha_out < 0:
            raise ValueError("alpha_out must be non-negative")
        if not 0.0 <= self.r_in <= 1.0:
            raise ValueError("r_in must lie in [0, 1]")
        if self.t_lev is not None and self.t_lev <= 0:
            raise ValueError("lever thickness must be positive")

    @property
    def metric_scale(self) -> float:
        return 1.0 + (self.alpha_out - self.r_in * self.alpha_out) / 2.0

    def curvature(self, t_lev):
        return (self.alpha_out + self.r_in * self.alpha_out) / t_lev


@dataclass(frozen=True, eq=False)
class ShellModel:
    mesh: TriMesh
    material: Material
    triangles: np.ndarray  # (m, 3)
    rest_lengths: np.ndarray  # (m, 3): |x1-x0|, |x2-x1|, |x0-x2|
    rest_area: np.ndarray  # (m,)
    dm_inv: np.ndarray  # (m, 2, 2)
    tri_thickness: np.ndarray  # (m,)
    hinges: np.ndarray  # (h, 4): edge x0->x1, x2 opposite in A, x3 opposite in B
    hinge_tris: np.ndarray  # (h, 2)
    rest_phi: np.ndarray  # (h,)
    k_b: np.ndarray  # (h,)
    edge_thickness: np.ndarray  # (h,)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def rest_dihedral(self) -> np.ndarray:
        return np.pi - self.rest_phi

    @property
    def k_m(self) -> np.ndarray:
        """Membrane stiffness E t / (1 - nu^2) per triangle (N/mm)."""
        return self.material.membrane_stiffness(self.tri_thickness)

    @property
    def rest_positions(self) -> np.ndarray:
        return self.mesh.vertices

    def dual_lengths(self) -> np.ndarray:
        """Circumcentric dual length of each hinge edge in the rest metric."""
        cot = _rest_cotangents(self.rest_lengths)
        out = np.zeros(len(self.hinges))
        for side in range(2):
            tri = self.triangles[self.hinge_tris[:, side]]
            opp = self.hinges[:, 2 + side]
            corner = np.argmax(tri == opp[:, None], axis=1)
            out += cot[self.hinge_tris[:, side], corner]
        return 0.5 * self.rest_edge_lengths() * out

    def rest_edge_lengths(self) -> np.ndarray:
        tri = self.triangles[self.hinge_tris[:, 0]]
        i0 = self.hinges[:, 0]
        corner = np.argmax(tri == i0[:, None], axis=1)
        return self.rest_lengths[self.hinge_tris[:, 0], corner]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _hinge_topology(triangles: np.ndarray):
    m = len(triangles)
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    opposite = np.concatenate([triangles[:, 2], triangles[:, 0], triangles[:, 1]])
    owner = np.tile(np.arange(m), 3)
    lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(directed)}
    hinges, tris = [], []
    for k, (a, b) in enumerate(directed):
        twin = lookup.get((int(b), int(a)))
        if twin is not None and a < b:
            hinges.append((a, b, opposite[k], opposite[twin]))
            tris.append((owner[k], owner[twin]))
    return np.array(hinges, dtype=int).reshape(-1, 4), np.array(tris, dtype=int).reshape(-1, 2)


def _rest_frame(lengths: np.ndarray):
    """2D rest shape matrices from edge lengths (l01, l12, l20)."""
    l01, l12, l20 = lengths.T
    x2 = (l01**2 + l20**2 - l12**2) / (2.0 * l01)
    y2sq = l20**2 - x2**2
    if np.any(y2sq <= 0):
        raise DegenerateElement("rest edge lengths violate the triangle inequality")
    y2 = np.sqrt(y2sq)
    dm = np.zeros((len(lengths), 2, 2))
    dm[:, 0, 0] = l01
    dm[:, 0, 1] = x2
    dm[:, 1, 1] = y2
    area = 0.5 * l01 * y2
    return np.linalg.inv(dm), area


def _rest_cotangents(lengths: np.ndarray) -> np.ndarray:
    """Cotangent of the angle at each corner (corner k opposite edge (k+1, k+2))."""
    l01, l12, l20 = lengths.T
    a2 = np.stack([l12**2, l20**2, l01**2], axis=1)  # squared edge opposite each corner
    s = 0.5 * (l01 + l12 + l20)
    area = np.sqrt(np.maximum(s * (s - l01) * (s - l12) * (s - l20), 0.0))
    return (a2.sum(axis=1, keepdims=True) - 2.0 * a2) / (4.0 * area[:, None])


def build_shell(mesh: TriMesh, material: Material) -> ShellModel:
    """Shell whose rest state is the as-built mesh geometry."""
    if mesh.thickness is None:
        raise ValueError("mesh has no thickness assigned")
    x = np.asarray(mesh.vertices, dtype=float)
    tri = np.asarray(mesh.triangles, dtype=int)
    p = x[tri]
    lengths = np.stack(
        [_norm(p[:, 1] - p[:, 0]), _norm(p[:, 2] - p[:, 1]), _norm(p[:, 0] - p[:, 2])], axis=1
    )
    if np.any(lengths <= 0):
        raise DegenerateElement("zero-length edge")
    dm_inv, area = _rest_frame(lengths)
    if np.any(area <= 1e-12 * lengths.max() ** 2):
        raise DegenerateElement("zero-area triangle")
    t_tri = np.asarray(mesh.thickness, dtype=float)[tri].mean(axis=1)
    hinges, hinge_tris = _hinge_topology(tri)
    phi = bend_angles(x, hinges)
    t_edge = t_tri[hinge_tris].mean(axis=1)
    e = _norm(x[hinges[:, 1]] - x[hinges[:, 0]])
    geo = e**2 / (2.0 * area[hinge_tris].sum(axis=1))
    k_b = material.bending_stiffness(t_edge) * geo
    return ShellModel(mesh, material, tri, lengths, area, dm_inv, t_tri, hinges, hinge_tris, phi, k_b, t_edge)


def with_thickness_scaled(shell: ShellModel, factor: float) -> ShellModel:
    mesh = replace(shell.mesh, thickness=shell.mesh.thickness * factor)
    return build_shell(mesh, shell.material)


# ---------------------------------------------------------------------------
# element kernels (complex-analytic where marked)
# ---------------------------------------------------------------------------

def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def bend_angles(x: np.ndarray, hinges: np.ndarray) -> np.ndarray:
    """Signed bend angle per hinge; 0 when flat."""
    x0, x1, x2, x3 = (x[hinges[:, k]] for k in range(4))
    e = x1 - x0
    na = _cross(e, x2 - x0)
    nb = _cross(x0 - x1, x3 - x1)
    s = _dot(_cross(na, nb), e) / _norm(e)
    c = _dot(na, nb)
    return np.arctan2(s, c)


def dihedral_angles(x: np.ndarray, hinges: np.ndarray) -> np.ndarray:
    return np.pi - bend_angles(x, hinges)


def _bend_angle_grad(x0, x1, x2, x3):
    """Gradient of the bend angle w.r.t. the four hinge vertices (complex-analytic)."""
    e = x1 - x0
    le = np.sqrt(_dot(e, e))
    na = _cross(e, x2 - x0)
    nb = _cross(x0 - x1, x3 - x1)
    qa = na / _dot(na, na)[..., None]
    qb = nb / _dot(nb, nb)[..., None]
    g2 = -le[..., None] * qa
    g3 = -le[..., None] * qb
    g0 = -(_dot(x2 - x1, e) / le)[..., None] * qa - (_dot(x3 - x1, e) / le)[..., None] * qb
    g1 = (_dot(x2 - x0, e) / le)[..., None] * qa + (_dot(x3 - x0, e) / le)[..., None] * qb
    return np.stack([g0, g1, g2, g3], axis=-2)


def _membrane_grad(p, dm_inv, area, thick, lam, mu):
    """Membrane energy gradient per triangle, shape (m, 3, 3) (complex-analytic)."""
    ds = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (m, 3, 2)
    f = np.einsum("mij,mjk->mik", ds, dm_inv)
    c = np.einsum("mji,mjk->mik", f, f)
    strain = 0.5 * (c - np.eye(2))
    tr = strain[:, 0, 0] + strain[:, 1, 1]
    s = 2.0 * mu * strain
    s[:, 0, 0] += lam * tr
    s[:, 1, 1] += lam * tr
    pk1 = np.einsum("mij,mjk->mik", f, s)
    g = (area * thick)[:, None, None] * np.einsum("mij,mkj->mik", pk1, dm_inv)
    g1, g2 = g[..., 0], g[..., 1]
    return np.stack([-(g1 + g2), g1, g2], axis=1)


def _membrane_energy(p, dm_inv, area, thick, lam, mu):
    ds = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    f = np.einsum("mij,mjk->mik", ds, dm_inv)
    c = np.einsum("mji,mjk->mik", f, f)
    strain = 0.5 * (c - np.eye(2))
    tr = strain[:, 0, 0] + strain[:, 1, 1]
    w = mu * np.sum(strain * strain, axis=(1, 2)) + 0.5 * lam * tr * tr
    return area * thick * w


def _wrap(d):
    return (d + np.pi) % _TWO_PI - np.pi


# ---------------------------------------------------------------------------
# energy, gradient, Hessian
# ---------------------------------------------------------------------------

def _as_positions(shell: ShellModel, cfg) -> np.ndarray:
    x = np.asarray(cfg, dtype=float).reshape(-1, 3)
    if x.shape[0] != shell.n_vertices:
        raise ValueError("configuration vertex count does not match the mesh")
    return x


def energy_terms(shell: ShellModel, cfg) -> tuple[float, float]:
    """(membrane, bending) energy in mJ."""
    x = _as_positions(shell, cfg)
    lam, mu = shell.material.lame()
    em = _membrane_energy(x[shell.triangles], shell.dm_inv, shell.rest_area, shell.tri_thickness, lam, mu)
    dphi = _wrap(bend_angles(x, shell.hinges) - shell.rest_phi)
    eb = shell.k_b * dphi * dphi
    return float(np.sum(em)), float(np.sum(eb))


def total_energy(shell: ShellModel, cfg) -> float:
    em, eb = energy_terms(shell, cfg)
    return em + eb


def _scatter(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Sum per-element vertex contributions, shape (k, c, 3) -> (n, 3)."""
    flat_idx = idx.ravel()
    out = np.empty((n, 3))
    for d in range(3):
        out[:, d] = np.bincount(flat_idx, weights=vals[..., d].ravel(), minlength=n)
    return out


def energy_gradient(shell: ShellModel, cfg) -> np.ndarray:
    """dE/dx per vertex (N); the internal force is its negative."""
    x = _as_positions(shell, cfg)
    lam, mu = shell.material.lame()
    gm = _membrane_grad(x[shell.triangles], shell.dm_inv, shell.rest_area, shell.tri_thickness, lam, mu)
    h = shell.hinges
    dphi = _wrap(bend_angles(x, h) - shell.rest_phi)
    gphi = _bend_angle_grad(x[h[:, 0]], x[h[:, 1]], x[h[:, 2]], x[h[:, 3]])
    gb = (2.0 * shell.k_b * dphi)[:, None, None] * gphi
    n = shell.n_vertices
    return _scatter(n, shell.triangles, gm) + _scatter(n, h, gb)


def _complex_step_jacobian(fn, pts: np.ndarray) -> np.ndarray:
    """Jacobian of a per-element vector function by complex steps.

    ``pts`` has shape (k, c, 3); ``fn`` maps it to (k, c, 3). Returns (k, 3c, 3c).
    """
    k, c, _ = pts.shape
    jac = np.empty((k, 3 * c, 3 * c))
    base = pts.astype(complex)
    for a in range(c):
        for d in range(3):
            z = base.copy()
            z[:, a, d] += 1j * _CSTEP
            jac[:, :, 3 * a + d] = fn(z).imag.reshape(k, 3 * c) / _CSTEP
    return jac


def element_hessians(shell: ShellModel, cfg):
    """Per-element Hessian blocks: (membrane (m,9,9), bending (h,12,12))."""
    x = _as_positions(shell, cfg)
    lam, mu = shell.material.lame()
    hm = _complex_step_jacobian(
        lambda z: _membrane_grad(z, shell.dm_inv, shell.rest_area, shell.tri_thickness, lam, mu),
        x[shell.triangles],
    )
    h = shell.hinges
    quad = x[h]
    dphi = _wrap(bend_angles(x, h) - shell.rest_phi)
    gphi = _bend_angle_grad(quad[:, 0], quad[:, 1], quad[:, 2], quad[:, 3]).reshape(-1, 12)
    hphi = _complex_step_jacobian(
        lambda z: _bend_angle_grad(z[:, 0], z[:, 1], z[:, 2], z[:, 3]), quad
    )
    kb = shell.k_b[:, None, None]
    hb = 2.0 * kb * (gphi[:, :, None] * gphi[:, None, :]) + 2.0 * kb * dphi[:, None, None] * hphi
    return hm, hb


def _block_indices(elems: np.ndarray):
    dofs = (3 * elems[:, :, None] + np.arange(3)).reshape(len(elems), 3 * elems.shape[1])
    rows = np.repeat(dofs, dofs.shape[1], axis=1)
    cols = np.tile(dofs, (1, dofs.shape[1]))
    return rows.ravel(), cols.ravel()


def energy_hessian(shell: ShellModel, cfg) -> sparse.csr_matrix:
    """Sparse (3n, 3n) Hessian of the total energy (N/mm)."""
    hm, hb = element_hessians(shell, cfg)
    rm, cm = _block_indices(shell.triangles)
    rb, cb = _block_indices(shell.hinges)
    n3 = 3 * shell.n_vertices
    vals = np.concatenate([hm.ravel(), hb.ravel()])
    rows = np.concatenate([rm, rb])
    cols = np.concatenate([cm, cb])
    H = sparse.coo_matrix((vals, (rows, cols)), shape=(n3, n3)).tocsr()
    H.sum_duplicates()
    # symmetrize away round-off
    return ((H + H.T) * 0.5).tocsr()


def hessian_vector_product(shell: ShellModel, cfg, v: np.ndarray) -> np.ndarray:
    return energy_hessian(shell, cfg) @ np.asarray(v, dtype=float).ravel()


# ---------------------------------------------------------------------------
# actuation
# ---------------------------------------------------------------------------

def apply_layer_actuation(shell: ShellModel, act: ActuationState, sign: float = 1.0) -> ShellModel:
    """Offset rest quantities for the three-layer strain actuation.

    The rest metric is scaled by the mean layer strain and each rest bend
    angle is reduced by ``kappa * dual_length`` (``sign=-1`` reverses the
    layers, i.e. bends towards the cap side). Returns a new model.
    """
    s = act.metric_scale
    t_lev = shell.edge_thickness if act.t_lev is None else act.t_lev
    kappa = act.curvature(t_lev)
    lengths = shell.rest_lengths * s
    area = shell.rest_area * (s * s)
    dm_inv = shell.dm_inv / s
    lever = shell.dual_lengths() * s
    phi = shell.rest_phi - sign * kappa * lever
    return replace(shell, rest_lengths=lengths, rest_area=area, dm_inv=dm_inv, rest_phi=phi)


def strains(shell: ShellModel, cfg) -> np.ndarray:
    """Principal Green-Lagrange membrane strains per triangle, shape (m, 2)."""
    x = _as_positions(shell, cfg)
    p = x[shell.triangles]
    ds = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    f = np.einsum("mij,mjk->mik", ds, shell.dm_inv)
    c = np.einsum("mji,mjk->mik", f, f)
    return np.linalg.eigvalsh(0.5 * (c - np.eye(2)))


def max_abs_strain(shell: ShellModel, cfg) -> float:
    return float(np.max(np.abs(strains(shell, cfg))))
