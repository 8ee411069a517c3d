"""Singular boundary operators for delta-shell interactions.

Discretizes the layer potential, the boundary trace operator, and the
squeezed operator family on a tubular collar around a closed surface.
Everything is built on top of the fundamental solution in
:mod:`deltashell.dirac_algebra` and the surface quadrature in
:mod:`deltashell.geometry`.

Grid functions live on the tensor grid (surface node) x (transverse
Gauss node) x (spinor component) and are stored as complex arrays of
shape ``(N, M, 4)``.  All operator norms are taken in the weighted L2
sense induced by the quadrature weights.

The singular diagonal is handled by an analytically integrated
flat-disk cell model: each surface node owns a disk of equal area, and
the kernel integral over that disk against a constant density has a
closed form.  The odd (Riesz) part of the kernel integrates to zero
over the disk at zero offset, which is the principal-value convention.
The patch can be disabled (``patch=False``) to fall back to a plain
punctured rule, which is useful for sensitivity studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.sparse.linalg import svds
from scipy.spatial import cKDTree

from .dirac_algebra import ALPHA, BETA, I4, SpectralParameter, alpha_dot, phi_a
from .geometry import SurfaceMesh
from .potential import UVFactorization

CRITICAL_WINDOW = 0.05
BOUNDARY_COND_LIMIT = 1e10
DENSE_DOF_CAP = 16384
COINCIDENCE_TOL = 1e-10
MIN_TRACE_NODES = 128


class PointTooCloseToSurface(ValueError):
    """Evaluation point is inside the quadrature resolution of the mesh."""


class DegenerateQuadrature(ValueError):
    """Two shifted quadrature points (nearly) coincide."""


class NearCriticalCoupling(ValueError):
    """Electrostatic coupling too close to the critical values +2 or -2."""


class SingularBoundaryInverse(ValueError):
    """Boundary system is numerically singular."""


# ---------------------------------------------------------------------------
# volume quadrature


@dataclass(frozen=True)
class VolumeGrid:
    """Quadrature rule for a compactly supported ambient density."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or wts.shape != (pts.shape[0],):
            raise ValueError("points must be (Q, 3) with matching weights")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    def __len__(self) -> int:
        return self.points.shape[0]


def ball_grid(radius: float, nr: int = 8, ntheta: int = 8, nphi: int = 16,
              center: Sequence[float] = (0.0, 0.0, 0.0)) -> VolumeGrid:
    """Gauss quadrature on a solid ball in spherical coordinates.

    Radial and polar directions use Gauss-Legendre nodes, the azimuth a
    uniform (trapezoidal) rule, which is exact for trigonometric
    polynomials.  Smooth integrands converge spectrally.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    xr, wr = leggauss(nr)
    r = 0.5 * radius * (xr + 1.0)
    wr = 0.5 * radius * wr
    xc, wc = leggauss(ntheta)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    wphi = 2.0 * np.pi / nphi
    sin_t = np.sqrt(1.0 - xc ** 2)
    x = r[:, None, None] * sin_t[None, :, None] * np.cos(phi)[None, None, :]
    y = r[:, None, None] * sin_t[None, :, None] * np.sin(phi)[None, None, :]
    z = r[:, None, None] * xc[None, :, None] * np.ones_like(phi)[None, None, :]
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1) + np.asarray(center, dtype=float)
    wts = (r[:, None, None] ** 2 * wr[:, None, None]
           * wc[None, :, None] * wphi * np.ones_like(phi)[None, None, :]).ravel()
    return VolumeGrid(pts, wts)


# ---------------------------------------------------------------------------
# kernel block evaluation


def _phi_blocks(sp: SpectralParameter, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kernel blocks phi_a(x_i - y_j) as an array of shape (nx, ny, 4, 4)."""
    diff = x[:, None, :] - y[None, :, :]
    flat = diff.reshape(-1, 3)
    return phi_a(sp, flat).reshape(x.shape[0], y.shape[0], 4, 4)


def _phi_apply(sp: SpectralParameter, x: np.ndarray, y: np.ndarray,
               coeff: np.ndarray, chunk: int = 0) -> np.ndarray:
    """Evaluate sum_j phi_a(x_i - y_j) coeff_j without storing all blocks.

    ``coeff`` has shape (ny, 4) and already contains quadrature weights.
    """
    nx, ny = x.shape[0], y.shape[0]
    if chunk <= 0:
        chunk = max(1, int(1.5e8 // (max(ny, 1) * 256)))
    out = np.zeros((nx, 4), dtype=complex)
    for lo in range(0, nx, chunk):
        hi = min(lo + chunk, nx)
        blocks = _phi_blocks(sp, x[lo:hi], y)
        out[lo:hi] = np.einsum("ijab,jb->ia", blocks, coeff)
    return out


def _disk_patch(sp: SpectralParameter, nu: np.ndarray, rho: float,
                delta: np.ndarray) -> np.ndarray:
    """Integral of phi_a over a flat disk against a constant density.

    The disk has radius ``rho``, unit normal ``nu``, and the evaluation
    point sits on the disk axis at signed height ``delta``.  Closed
    form; the odd part vanishes at ``delta = 0``, which realizes the
    principal value.  Shape of the result: ``delta.shape + (4, 4)``.
    """
    d = np.asarray(delta, dtype=float)
    ad = np.abs(d)
    s = np.sqrt(rho * rho + d * d)
    w = sp.branch
    even_coeff = sp.a * I4 + sp.m * BETA
    if abs(w) < 1e-14:
        radial = 0.5 * (s - ad)
    else:
        radial = (np.exp(-w * ad) - np.exp(-w * s)) / (2.0 * w)
    axial = np.sign(d) * np.exp(-w * ad) - d * np.exp(-w * s) / s
    an = alpha_dot(nu)
    return (radial[..., None, None] * even_coeff
            + (0.5j * axial)[..., None, None] * an)


def _node_disk_radii(mesh: SurfaceMesh) -> np.ndarray:
    return np.sqrt(mesh.weights / np.pi)


def _odd_far_sums(sp: SpectralParameter, nodes: np.ndarray,
                  normals: np.ndarray, wts: np.ndarray, curv: np.ndarray,
                  rows: np.ndarray, pts: np.ndarray) -> tuple:
    """Punctured sums of the regularized odd-kernel integrands.

    The source quadrature is given explicitly (nodes, outward normals,
    weights, and the divergence of the normal field), so the same sums
    work on the base surface and on its parallel sheets inside the
    collar.  For each evaluation point pts[t] paired with source node
    rows[t] (that node is excluded from the sum), accumulates

      s_far   single layer of the Yukawa kernel,
      v_far   curvature-trace layer plus the normal-projection parts
              with the flat solid-angle content removed,
      d_far   plain vector moment of the odd kernel.

    The solid-angle content itself is exact (Gauss identity) and is
    added by the caller together with the self-cell closed forms.
    """
    w = sp.branch
    m = rows.size
    ar = np.arange(m)
    diff = pts[:, None, :] - nodes[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    r[ar, rows] = 1.0
    decay = np.exp(-w * r)
    gw = decay / (4.0 * np.pi * r)
    base = 1.0 / (4.0 * np.pi * r**3)
    fac = (1.0 + w * r) * decay * base
    ndot = np.einsum("ijc,jc->ij", diff, normals)
    gw[ar, rows] = 0.0
    base[ar, rows] = 0.0
    fac[ar, rows] = 0.0
    s_far = np.einsum("ij,j->i", gw, wts).astype(complex)
    # curvature layer and the (f - 1) correction carry nu(y)
    reg = curv[None, :] * gw + ndot * (fac - base)
    v_far = np.einsum("ij,jc,j->ic", reg, normals, wts).astype(complex)
    # (nu(y) - nu(x)) against the flat kernel
    q = ndot * base * wts[None, :]
    v_far += np.einsum("ij,jc->ic", q, normals)
    v_far -= np.sum(q, axis=1)[:, None] * normals[rows]
    d_far = np.einsum("ij,ijc,j->ic", fac, diff, wts)
    return s_far, v_far, d_far


def _odd_diag_blocks(sp: SpectralParameter, mesh: SurfaceMesh) -> np.ndarray:
    """Diagonal correction blocks for the odd kernel part of the trace.

    The punctured sum of the 1/r^2 odd kernel alone stalls on a mesh
    without local symmetry: its spurious tangential component does not
    vanish under refinement.  Subtracting the density value at the
    target node and adding back the principal-value moment of the
    kernel restores convergence.  In matrix terms that is a diagonal
    update by ``i alpha . (E_pv - E_punctured)``.

    The moment splits into exactly integrable structure plus mild
    remainders: the odd kernel is the y-gradient of the Yukawa kernel,
    so the tangential divergence theorem trades its 1/r^2 singularity
    for a curvature-weighted single layer, and the Gauss solid-angle
    identity fixes the flat double-layer content at -1/2 on the
    surface.  Self cells get closed-form disk and osculating-
    paraboloid integrals.  Returns an (N, 4, 4) array.
    """
    n = len(mesh)
    normals = mesh.normals
    curv = -(mesh.lam1 + mesh.lam2)
    gap = np.zeros((n, 3), dtype=complex)
    chunk = max(1, int(1.5e8 // (max(n, 1) * 160)))
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(lo + chunk, n))
        _, v_far, d_far = _odd_far_sums(
            sp, mesh.nodes, normals, mesh.weights, curv, rows,
            mesh.nodes[rows])
        gap[rows] = v_far - d_far
    rho = _node_disk_radii(mesh)
    layer, _, _ = _self_cell_moments(sp, rho, 0.0)
    gap += (curv * layer - 0.5)[:, None] * normals
    return 1j * alpha_dot(gap)


def _mesh_resolution(mesh: SurfaceMesh) -> float:
    """Mean cell diameter, the reliability scale for near-surface points."""
    return float(np.sqrt(np.sum(mesh.weights) / len(mesh)))


# ---------------------------------------------------------------------------
# layer potential and boundary trace


def layer_potential(sp: SpectralParameter, mesh: SurfaceMesh,
                    x: np.ndarray, g: np.ndarray | None = None,
                    volume: VolumeGrid | None = None,
                    volume_values: np.ndarray | None = None) -> np.ndarray:
    """Evaluate Phi^a(G, g) at points away from the surface.

    ``g`` is a surface density of shape (N, 4); ``volume_values`` an
    ambient density sampled on ``volume``.  Either part may be omitted.
    Raises :class:`PointTooCloseToSurface` if an evaluation point is
    closer to a surface node than half the mesh resolution.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    guard = _mesh_resolution(mesh)
    dist, _ = cKDTree(mesh.nodes).query(pts)
    if np.any(dist < guard):
        worst = float(np.min(dist))
        raise PointTooCloseToSurface(
            f"evaluation point at distance {worst:.3e} from the mesh, "
            f"guard is {guard:.3e}")
    out = np.zeros((pts.shape[0], 4), dtype=complex)
    if g is not None:
        gv = np.asarray(g, dtype=complex).reshape(len(mesh), 4)
        out += _phi_apply(sp, pts, mesh.nodes, gv * mesh.weights[:, None])
    if volume is not None and volume_values is not None:
        fv = np.asarray(volume_values, dtype=complex).reshape(len(volume), 4)
        out += _phi_apply(sp, pts, volume.points, fv * volume.weights[:, None])
    return out[0] if single else out


def _trace_apply(sp: SpectralParameter, mesh: SurfaceMesh, g: np.ndarray,
                 patch: bool) -> np.ndarray:
    """Matrix-free action of the boundary trace operator C_sigma."""
    n = len(mesh)
    gv = np.asarray(g, dtype=complex).reshape(n, 4)
    coeff = gv * mesh.weights[:, None]
    out = np.zeros((n, 4), dtype=complex)
    nodes = mesh.nodes
    node_chunk = max(1, int(1.5e8 // (n * 256)))
    for lo in range(0, n, node_chunk):
        hi = min(lo + node_chunk, n)
        diff = nodes[lo:hi, None, :] - nodes[None, :, :]
        rows = np.arange(lo, hi)
        keep = np.ones((hi - lo, n), dtype=bool)
        keep[rows - lo, rows] = False
        vals = np.zeros((hi - lo, n, 4, 4), dtype=complex)
        vals[keep] = phi_a(sp, diff.reshape(-1, 3)[keep.ravel()])
        out[lo:hi] = np.einsum("ijab,jb->ia", vals, coeff)
    if patch:
        rho = _node_disk_radii(mesh)
        w = sp.branch
        if abs(w) < 1e-14:
            radial = 0.5 * rho
        else:
            radial = (1.0 - np.exp(-w * rho)) / (2.0 * w)
        even = sp.a * I4 + sp.m * BETA
        out += np.einsum("k,ab,kb->ka", radial, even, gv)
        out += np.einsum("kab,kb->ka", _odd_diag_blocks(sp, mesh), gv)
    return out


def cauchy_sigma_apply(sp: SpectralParameter, mesh: SurfaceMesh,
                       g: np.ndarray, patch: bool = True) -> np.ndarray:
    """Apply the boundary trace operator to a surface density (N, 4)."""
    if len(mesh) < MIN_TRACE_NODES:
        raise ValueError(f"mesh must have at least {MIN_TRACE_NODES} nodes")
    return _trace_apply(sp, mesh, g, patch)


@dataclass(frozen=True)
class ShellOperator:
    """Dense operator between weighted quadrature spaces.

    ``row_weights`` and ``col_weights`` are the scalar quadrature
    weights per 4-spinor block; norms and singular values are computed
    after the corresponding diagonal similarity.
    """

    label: str
    matrix: np.ndarray
    sp: SpectralParameter
    row_weights: np.ndarray
    col_weights: np.ndarray

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(g, dtype=complex).ravel()

    def norm(self) -> float:
        return _weighted_opnorm(self.matrix, self.row_weights, self.col_weights)


def _expand_weights(w: np.ndarray, dofs: int) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    rep = dofs // w.size
    if w.size * rep != dofs:
        raise ValueError("weight vector does not tile the dof count")
    return np.repeat(w, rep)


def _weighted_opnorm(matrix: np.ndarray, row_w: np.ndarray,
                     col_w: np.ndarray) -> float:
    rw = np.sqrt(_expand_weights(row_w, matrix.shape[0]))
    cw = np.sqrt(_expand_weights(col_w, matrix.shape[1]))
    scaled = matrix * (rw[:, None] / cw[None, :])
    k = min(scaled.shape) - 1
    if min(scaled.shape) <= 2 or scaled.shape[0] * scaled.shape[1] <= 16384:
        return float(np.linalg.norm(scaled, 2))
    val = svds(scaled, k=1, return_singular_vectors=False, tol=1e-9)
    return float(val[0])


def _trace_matrix(sp: SpectralParameter, mesh: SurfaceMesh,
                  patch: bool) -> np.ndarray:
    n = len(mesh)
    if 4 * n > DENSE_DOF_CAP:
        raise ValueError(
            f"dense trace operator needs {4 * n} dofs, cap is {DENSE_DOF_CAP}; "
            "use cauchy_sigma_apply for large meshes")
    nodes = mesh.nodes
    mat = np.zeros((4 * n, 4 * n), dtype=complex)
    rho = _node_disk_radii(mesh)
    odd_diag = _odd_diag_blocks(sp, mesh) if patch else None
    for i in range(n):
        diff = nodes[i, None, :] - nodes
        keep = np.ones(n, dtype=bool)
        keep[i] = False
        blocks = np.zeros((n, 4, 4), dtype=complex)
        blocks[keep] = phi_a(sp, diff[keep])
        blocks *= mesh.weights[:, None, None]
        if patch:
            blocks[i] = _disk_patch(sp, mesh.normals[i], rho[i], 0.0) + odd_diag[i]
        mat[4 * i:4 * i + 4] = blocks.transpose(1, 0, 2).reshape(4, 4 * n)
    return mat


def cauchy_sigma(sp: SpectralParameter, mesh: SurfaceMesh,
                 patch: bool = True) -> ShellOperator:
    """Dense boundary trace operator on the mesh nodes.

    Off-diagonal blocks are kernel evaluations times node weights; the
    diagonal block is the flat-disk cell integral (or zero when
    ``patch`` is off, the plain punctured rule).
    """
    if len(mesh) < MIN_TRACE_NODES:
        raise ValueError(f"mesh must have at least {MIN_TRACE_NODES} nodes")
    if 4 * len(mesh) > DENSE_DOF_CAP:
        raise ValueError(
            f"dense trace needs {4 * len(mesh)} dofs, cap is "
            f"{DENSE_DOF_CAP}; use cauchy_sigma_apply")
    mat = _trace_matrix(sp, mesh, patch)
    return ShellOperator("C_sigma^a", mat, sp, mesh.weights, mesh.weights)


# ---------------------------------------------------------------------------
# Plemelj jump relations


@dataclass(frozen=True)
class PlemeljReport:
    """Extrapolated one-sided traces versus the jump formulas."""

    offsets: tuple
    node_indices: np.ndarray
    max_rel_plus: float
    max_rel_minus: float
    l2_rel_plus: float
    l2_rel_minus: float
    jump_identity_rel: float
    average_identity_rel: float

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_plus, self.max_rel_minus)

    @property
    def l2_rel_error(self) -> float:
        return max(self.l2_rel_plus, self.l2_rel_minus)


def _self_cell_moments(sp: SpectralParameter, rho: np.ndarray,
                       delta: float) -> tuple:
    """Closed-form flat-disk self-cell integrals at signed height delta.

    Returns the Yukawa layer, the axial factor of the odd kernel, and
    the same axial factor for the massless kernel, per disk radius.
    """
    w = sp.branch
    d = float(delta)
    ad = abs(d)
    s = np.sqrt(rho * rho + d * d)
    axial_flat = np.sign(d) * np.ones_like(s) - d / s
    if abs(w) < 1e-14:
        layer = 0.5 * (s - ad)
        return layer, axial_flat, axial_flat
    ewa = np.exp(-w * ad)
    ews = np.exp(-w * s)
    layer = (ewa - ews) / (2.0 * w)
    axial = np.sign(d) * ewa - d * ews / s
    return layer, axial, axial_flat


def _one_sided_values(sp: SpectralParameter, mesh: SurfaceMesh,
                      gv: np.ndarray, idx: np.ndarray,
                      offs: np.ndarray) -> tuple:
    """One-sided layer potential values at x +- h nu, subtracted form.

    The density value at the target node is split off: the kernel acts
    on g(y) - g(x) by punctured quadrature, while the split-off value
    multiplies the one-sided moment of the kernel.  The moment reuses
    the regularized far sums of the trace discretization; the jump
    carrier is the Gauss solid-angle identity (0 outside, -1 inside,
    exact for a closed surface), so at h -> 0 the construction
    reproduces the discrete trace plus or minus half the jump.
    """
    n = len(mesh)
    nodes, normals, wts = mesh.nodes, mesh.normals, mesh.weights
    curv = -(mesh.lam1 + mesh.lam2)
    rho = _node_disk_radii(mesh)
    even = sp.a * I4 + sp.m * BETA
    plus_vals = np.zeros((offs.size, idx.size, 4), dtype=complex)
    minus_vals = np.zeros_like(plus_vals)
    chunk = max(1, int(1.5e8 // (n * 256)))
    for lo in range(0, idx.size, chunk):
        rows = idx[lo:lo + chunk]
        m = rows.size
        keep = np.ones((m, n), dtype=bool)
        keep[np.arange(m), rows] = False
        flat_keep = keep.ravel()
        coeff = (gv[None, :, :] - gv[rows, None, :]) * wts[None, :, None]
        for q, h in enumerate(offs):
            for side, store in ((1.0, plus_vals), (-1.0, minus_vals)):
                delta = side * h
                pts = nodes[rows] + delta * normals[rows]
                diff = pts[:, None, :] - nodes[None, :, :]
                vals = np.zeros((m, n, 4, 4), dtype=complex)
                vals.reshape(-1, 4, 4)[flat_keep] = phi_a(
                    sp, diff.reshape(-1, 3)[flat_keep])
                out = np.einsum("ijab,ijb->ia", vals, coeff)
                s_far, v_far, _ = _odd_far_sums(
                    sp, nodes, normals, wts, curv, rows, pts)
                layer, axial, axial_flat = _self_cell_moments(
                    sp, rho[rows], delta)
                chi = 0.0 if delta > 0 else -1.0
                s_mom = s_far + layer
                v_mom = v_far + (curv[rows] * layer
                                 + 0.5 * (axial - axial_flat)
                                 + chi)[:, None] * normals[rows]
                mom = s_mom[:, None, None] * even + 1j * alpha_dot(v_mom)
                out += np.einsum("iab,ib->ia", mom, gv[rows])
                store[q, lo:lo + m] = out
    return plus_vals, minus_vals


def plemelj_check(sp: SpectralParameter, mesh: SurfaceMesh, g: np.ndarray,
                  offsets: Sequence[float] | None = None,
                  eta: float = 0.3, max_eval_nodes: int = 1024,
                  patch: bool = True) -> PlemeljReport:
    """Verify the one-sided trace formulas C_pm = -/+ (i/2) alpha.nu + C_sigma.

    The layer potential of ``g`` is evaluated at ``x +- h nu`` for each
    offset ``h`` with the same cell quadrature that defines the trace
    operator, then extrapolated to ``h -> 0`` by a least-squares
    quadratic fit in ``h``.  Offsets must stay inside the collar and
    above the mesh resolution; the default set hugs the resolution
    floor, where the extrapolation is most accurate.
    """
    n = len(mesh)
    res = _mesh_resolution(mesh)
    if offsets is None:
        upper = min(2.0 * res, eta)
        if upper <= 1.05 * res:
            raise ValueError(
                f"collar eta = {eta:.3e} leaves no offset window above "
                f"the mesh resolution {res:.3e}")
        offsets = np.linspace(1.05 * res, upper, 5)
    offs = np.asarray(sorted(offsets, reverse=True), dtype=float)
    if np.any(offs <= res) or np.any(offs > eta):
        raise ValueError(
            f"offsets must lie in (resolution, eta] = "
            f"({res:.3e}, {eta:.3e}]")
    gv = np.asarray(g, dtype=complex).reshape(n, 4)
    if n > max_eval_nodes:
        idx = np.linspace(0, n - 1, max_eval_nodes).astype(int)
    else:
        idx = np.arange(n)

    plus_vals, minus_vals = _one_sided_values(sp, mesh, gv, idx, offs)

    deg = min(3, offs.size - 1)
    vand = np.vander(offs, deg + 1)
    plus0 = np.linalg.lstsq(vand, plus_vals.reshape(offs.size, -1), rcond=None)[0][-1]
    minus0 = np.linalg.lstsq(vand, minus_vals.reshape(offs.size, -1), rcond=None)[0][-1]
    plus0 = plus0.reshape(idx.size, 4)
    minus0 = minus0.reshape(idx.size, 4)

    nus = mesh.normals[idx]
    csg = _trace_apply(sp, mesh, gv, patch)[idx]
    jump = np.einsum("kab,kb->ka", alpha_dot(nus), gv[idx])
    # outward limit (x + h nu) carries + (i/2) alpha.nu, inward the opposite
    ref_outside = 0.5j * jump + csg
    ref_inside = -0.5j * jump + csg

    scale = max(float(np.max(np.linalg.norm(ref_outside, axis=1))),
                float(np.max(np.linalg.norm(ref_inside, axis=1))), 1e-30)
    wts = mesh.weights[idx]

    def wnorm(arr: np.ndarray) -> float:
        return float(np.sqrt(np.sum(wts * np.sum(np.abs(arr) ** 2, axis=1))))

    scale_l2 = max(wnorm(ref_outside), wnorm(ref_inside), 1e-30)

    def sup_rel(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.linalg.norm(a - b, axis=1)) / scale)

    def l2_rel(a: np.ndarray, b: np.ndarray) -> float:
        return wnorm(a - b) / scale_l2

    return PlemeljReport(
        tuple(offs), idx,
        sup_rel(plus0, ref_outside), sup_rel(minus0, ref_inside),
        l2_rel(plus0, ref_outside), l2_rel(minus0, ref_inside),
        sup_rel(plus0 - minus0, 1.0j * jump),
        sup_rel(0.5 * (plus0 + minus0), csg))


# ---------------------------------------------------------------------------
# operator grid over the collar


@dataclass(frozen=True)
class OperatorGrid:
    """Tensor quadrature grid (surface mesh) x (transverse Gauss rule)."""

    mesh: SurfaceMesh
    uv: UVFactorization
    t_nodes: np.ndarray
    t_weights: np.ndarray
    u_vals: np.ndarray
    v_vals: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.mesh)

    @property
    def n_transverse(self) -> int:
        return self.t_nodes.size

    @property
    def dofs(self) -> int:
        return 4 * self.n_nodes * self.n_transverse

    def total_weight(self) -> float:
        return float(np.sum(self.mesh.weights) * np.sum(self.t_weights))

    def scalar_weights(self) -> np.ndarray:
        """Quadrature weights per (node, t) pair, flattened."""
        return np.outer(self.mesh.weights, self.t_weights).ravel()


def make_operator_grid(mesh: SurfaceMesh, uv: UVFactorization,
                       m_nodes: int = 8) -> OperatorGrid:
    if m_nodes < 2:
        raise ValueError("need at least 2 transverse nodes")
    t, w = leggauss(m_nodes)
    return OperatorGrid(mesh, uv, t, w, np.asarray(uv.u(t), dtype=float),
                        np.asarray(uv.v(t), dtype=float))


def grid_norm(grid: OperatorGrid, g: np.ndarray) -> float:
    gv = np.asarray(g, dtype=complex).reshape(grid.n_nodes, grid.n_transverse, 4)
    w = np.outer(grid.mesh.weights, grid.t_weights)
    return float(np.sqrt(np.sum(w * np.sum(np.abs(gv) ** 2, axis=2))))


def default_separable_density(grid: OperatorGrid) -> np.ndarray:
    """Smooth separable grid density used by experiments and tests."""
    spinor = np.array([1.0, 0.5, 0.25j, -0.3], dtype=complex)
    spatial = np.exp(-np.sum((grid.mesh.nodes - np.array([0.2, 0.1, 0.4])) ** 2, axis=1))
    transverse = 1.0 + 0.5 * grid.t_nodes ** 2
    return (spatial[:, None, None] * transverse[None, :, None]
            * spinor[None, None, :])


def default_volume_density(volume: VolumeGrid) -> np.ndarray:
    spinor = np.array([0.8, -0.2, 0.1j, 0.5], dtype=complex)
    r2 = np.sum(volume.points ** 2, axis=1)
    return np.exp(-r2 / 0.08)[:, None] * spinor[None, :]


# ---------------------------------------------------------------------------
# squeezed operator family


def _shifted_points(grid: OperatorGrid, eps: float) -> np.ndarray:
    """Collar quadrature points x_k + eps t_q nu_k, shape (N, M, 3)."""
    return (grid.mesh.nodes[:, None, :]
            + eps * grid.t_nodes[None, :, None] * grid.mesh.normals[:, None, :])


def _coarea_det(grid: OperatorGrid, eps: float) -> np.ndarray:
    """det(1 - eps t W) per (node, t), the coarea weight on the collar."""
    t = eps * grid.t_nodes[None, :]
    return (1.0 - t * grid.mesh.lam1[:, None]) * (1.0 - t * grid.mesh.lam2[:, None])


def _check_shift_separation(pts: np.ndarray) -> None:
    flat = pts.reshape(-1, 3)
    dist, _ = cKDTree(flat).query(flat, k=2)
    closest = float(np.min(dist[:, 1]))
    if closest <= COINCIDENCE_TOL:
        raise DegenerateQuadrature(
            f"shifted quadrature points separated by {closest:.3e}")


def _source_coeff(grid: OperatorGrid, eps: float, g: np.ndarray) -> np.ndarray:
    """v(s) weights times coarea det times quadrature weights times g."""
    det = _coarea_det(grid, eps)
    fac = (grid.v_vals[None, :] * grid.t_weights[None, :] * det
           * grid.mesh.weights[:, None])
    return np.asarray(g, dtype=complex).reshape(
        grid.n_nodes, grid.n_transverse, 4) * fac[..., None]


def _same_node_block(grid: OperatorGrid, sp: SpectralParameter, eps: float,
                     k: int, patch: bool) -> np.ndarray:
    """Self-interaction block of B_eps at node k, shape (M, M, 4, 4).

    The surface cell is modeled as a flat disk; the block entry (q, q')
    is the disk integral of the kernel at axial offset eps (t_q - t_q'),
    times the source-side quadrature factors.  The u(t) row factor is
    applied by the caller.  At eps = 0 this reproduces
    the trace diagonal plus the sharp sign-kernel jump term entry by
    entry, so the squeezed family has no discretization floor here.
    """
    m = grid.n_transverse
    if not patch:
        return np.zeros((m, m, 4, 4), dtype=complex)
    rho = float(np.sqrt(grid.mesh.weights[k] / np.pi))
    delta = eps * (grid.t_nodes[:, None] - grid.t_nodes[None, :])
    blocks = _disk_patch(sp, grid.mesh.normals[k], rho, delta)
    det = _coarea_det(grid, eps)[k]
    fac = grid.v_vals[None, :] * grid.t_weights[None, :] * det[None, :]
    return blocks * fac[..., None, None]


def _squeeze_gap_blocks(grid: OperatorGrid, sp: SpectralParameter,
                        eps: float, patch: bool) -> np.ndarray:
    """Odd-moment corrections for the same-node blocks of B_eps.

    The punctured bulk rule of the squeezed family carries the same
    odd-kernel quadrature defect as the boundary trace; left alone, its
    eps -> 0 limit is the uncorrected trace and the distance to
    B_0 + B' develops a mesh-level floor.  For the transverse pair
    (p, q) the evaluation point sits at the exact signed height
    eps (t_p - t_q) over the parallel sheet swept by t_q, which is a
    closed surface with the same normal field, coarea-scaled weights,
    and shifted principal curvatures.  The divergence-theorem far sums
    and the Gauss solid-angle anchor therefore apply verbatim on the
    sheet.  The even kernel parts cancel against the flat-disk block
    exactly, so the correction is purely odd, and as eps -> 0 every
    (p, q) entry tends to the diagonal gap used by the trace operator.
    Returns (N, M, M, 4, 4); the u(t) row factor is applied by the
    caller.
    """
    n, m = grid.n_nodes, grid.n_transverse
    out = np.zeros((n, m, m, 4, 4), dtype=complex)
    if not patch:
        return out
    mesh = grid.mesh
    nodes, normals = mesh.nodes, mesh.normals
    rho = _node_disk_radii(mesh)
    det = _coarea_det(grid, eps)
    chunk = max(1, int(1.5e8 // (max(n, 1) * 160)))
    for q in range(m):
        shift = eps * grid.t_nodes[q]
        src = nodes + shift * normals
        swts = mesh.weights * det[:, q]
        curv = (-mesh.lam1 / (1.0 - shift * mesh.lam1)
                - mesh.lam2 / (1.0 - shift * mesh.lam2))
        for p in range(m):
            delta = eps * (grid.t_nodes[p] - grid.t_nodes[q])
            pts = nodes + (eps * grid.t_nodes[p]) * normals
            vgap = np.zeros((n, 3), dtype=complex)
            for lo in range(0, n, chunk):
                rows = np.arange(lo, min(lo + chunk, n))
                _, v_far, d_far = _odd_far_sums(
                    sp, src, normals, swts, curv, rows, pts[rows])
                vgap[rows] = v_far - d_far
            layer, _, axial_flat = _self_cell_moments(sp, rho, delta)
            chi = -0.5 if p == q else (0.0 if delta > 0.0 else -1.0)
            vgap += (det[:, q] * (curv * layer - 0.5 * axial_flat)
                     + chi)[:, None] * normals
            out[:, p, q] = (grid.v_vals[q] * grid.t_weights[q]
                            * 1j) * alpha_dot(vgap)
    return out


def b_eps_apply(grid: OperatorGrid, sp: SpectralParameter, eps: float,
                g: np.ndarray, patch: bool = True) -> np.ndarray:
    """Matrix-free action of the squeezed boundary operator B_eps."""
    if not 0.0 < eps:
        raise ValueError("eps must be positive")
    n, m = grid.n_nodes, grid.n_transverse
    pts = _shifted_points(grid, eps)
    _check_shift_separation(pts)
    coeff = _source_coeff(grid, eps, g)
    flat_src = pts.reshape(-1, 3)
    flat_coeff = coeff.reshape(-1, 4)
    gv = np.asarray(g, dtype=complex).reshape(n, m, 4)
    out = np.zeros((n, m, 4), dtype=complex)
    chunk = max(1, int(1.5e8 // (n * m * m * 256)))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        x = pts[lo:hi].reshape(-1, 3)
        diff = x[:, None, :] - flat_src[None, :, :]
        keep = np.ones((hi - lo, m, n, m), dtype=bool)
        for k in range(lo, hi):
            keep[k - lo, :, k, :] = False
        keep = keep.reshape(x.shape[0], n * m)
        vals = np.zeros((x.shape[0], n * m, 4, 4), dtype=complex)
        flat_keep = keep.ravel()
        vals.reshape(-1, 4, 4)[flat_keep] = phi_a(
            sp, diff.reshape(-1, 3)[flat_keep])
        out[lo:hi] = np.einsum(
            "ijab,jb->ia", vals, flat_coeff).reshape(hi - lo, m, 4)
    gap = _squeeze_gap_blocks(grid, sp, eps, patch)
    for k in range(n):
        block = _same_node_block(grid, sp, eps, k, patch) + gap[k]
        out[k] += np.einsum("pqab,qb->pa", block, gv[k])
    out *= grid.u_vals[None, :, None]
    return out


def b_limit_apply(grid: OperatorGrid, sp: SpectralParameter, g: np.ndarray,
                  patch: bool = True) -> np.ndarray:
    """Action of B_0 + B' (the eps -> 0 limit of B_eps)."""
    n, m = grid.n_nodes, grid.n_transverse
    gv = np.asarray(g, dtype=complex).reshape(n, m, 4)
    vhat = np.einsum("q,kqa->ka", grid.v_vals * grid.t_weights, gv)
    traced = _trace_apply(sp, grid.mesh, vhat, patch)
    out = grid.u_vals[None, :, None] * traced[:, None, :]
    out += bprime_apply(grid, gv)
    return out


def bprime_apply(grid: OperatorGrid, g: np.ndarray) -> np.ndarray:
    n, m = grid.n_nodes, grid.n_transverse
    gv = np.asarray(g, dtype=complex).reshape(n, m, 4)
    sign = np.sign(grid.t_nodes[:, None] - grid.t_nodes[None, :])
    kmat = 0.5j * (grid.u_vals[:, None] * sign
                   * grid.v_vals[None, :] * grid.t_weights[None, :])
    an = alpha_dot(grid.mesh.normals)
    return np.einsum("pq,kab,kqb->kpa", kmat, an, gv)


def bprime_tensor(grid: OperatorGrid) -> np.ndarray:
    """Dense B' via the tensor-product route: blockdiag of kron(K, alpha.nu)."""
    n, m = grid.n_nodes, grid.n_transverse
    sign = np.sign(grid.t_nodes[:, None] - grid.t_nodes[None, :])
    kmat = 0.5j * (grid.u_vals[:, None] * sign
                   * grid.v_vals[None, :] * grid.t_weights[None, :])
    out = np.zeros((grid.dofs, grid.dofs), dtype=complex)
    for k in range(n):
        an = alpha_dot(grid.mesh.normals[k])
        blk = np.kron(kmat, an)
        out[k * 4 * m:(k + 1) * 4 * m, k * 4 * m:(k + 1) * 4 * m] = blk
    return out


def bprime_direct(grid: OperatorGrid) -> np.ndarray:
    """Dense B' assembled entry by entry from the sign kernel."""
    n, m = grid.n_nodes, grid.n_transverse
    out = np.zeros((grid.dofs, grid.dofs), dtype=complex)
    for k in range(n):
        an = alpha_dot(grid.mesh.normals[k])
        for p in range(m):
            for q in range(m):
                val = (0.5j * grid.u_vals[p]
                       * np.sign(grid.t_nodes[p] - grid.t_nodes[q])
                       * grid.v_vals[q] * grid.t_weights[q])
                r0 = (k * m + p) * 4
                c0 = (k * m + q) * 4
                out[r0:r0 + 4, c0:c0 + 4] = val * an
    return out


def a_eps_apply(grid: OperatorGrid, sp: SpectralParameter, eps: float,
                g: np.ndarray, test_points: np.ndarray) -> np.ndarray:
    """Layer potential of the squeezed density at ambient test points."""
    pts = _shifted_points(grid, eps) if eps > 0.0 else np.broadcast_to(
        grid.mesh.nodes[:, None, :], (grid.n_nodes, grid.n_transverse, 3))
    coeff = _source_coeff(grid, eps, g)
    return _phi_apply(sp, np.atleast_2d(test_points),
                      pts.reshape(-1, 3), coeff.reshape(-1, 4))


def c_eps_apply(grid: OperatorGrid, sp: SpectralParameter, eps: float,
                volume: VolumeGrid, f_vals: np.ndarray) -> np.ndarray:
    """Evaluate u(t) Phi^a(F, 0) on the (shifted) collar grid."""
    pts = _shifted_points(grid, eps) if eps > 0.0 else np.broadcast_to(
        grid.mesh.nodes[:, None, :], (grid.n_nodes, grid.n_transverse, 3))
    coeff = np.asarray(f_vals, dtype=complex).reshape(-1, 4) * volume.weights[:, None]
    vals = _phi_apply(sp, pts.reshape(-1, 3), volume.points, coeff)
    vals = vals.reshape(grid.n_nodes, grid.n_transverse, 4)
    return grid.u_vals[None, :, None] * vals


def assemble_family(grid: OperatorGrid, sp: SpectralParameter, eps: float,
                    test_points: np.ndarray | None = None,
                    volume: VolumeGrid | None = None,
                    patch: bool = True) -> dict:
    """Dense squeezed operators at collar width eps.

    Returns a dict with key ``"B"`` always present and ``"A"`` / ``"C"``
    when ambient test points or a volume rule are supplied.  The dense
    path is capped at {DENSE_DOF_CAP} dofs; use the ``*_apply`` routines
    beyond that.
    """
    if not 0.0 < eps:
        raise ValueError("eps must be positive")
    if grid.dofs > DENSE_DOF_CAP:
        raise ValueError(
            f"grid has {grid.dofs} dofs, dense cap is {DENSE_DOF_CAP}")
    n, m = grid.n_nodes, grid.n_transverse
    pts = _shifted_points(grid, eps)
    _check_shift_separation(pts)
    det = _coarea_det(grid, eps)
    src_fac = (grid.v_vals[None, :] * grid.t_weights[None, :] * det
               * grid.mesh.weights[:, None]).ravel()
    flat = pts.reshape(-1, 3)
    nm = n * m
    bmat = np.zeros((4 * nm, 4 * nm), dtype=complex)
    gap = _squeeze_gap_blocks(grid, sp, eps, patch)
    for k in range(n):
        rows = slice(k * m, (k + 1) * m)
        diff = pts[k][:, None, :] - flat[None, :, :]
        keep = np.ones((m, nm), dtype=bool)
        keep[:, k * m:(k + 1) * m] = False
        blocks = np.zeros((m, nm, 4, 4), dtype=complex)
        blocks[keep] = phi_a(sp, diff[keep])
        blocks *= src_fac[None, :, None, None]
        blocks[:, k * m:(k + 1) * m] = (
            _same_node_block(grid, sp, eps, k, patch) + gap[k])
        blocks *= grid.u_vals[:, None, None, None]
        bmat[4 * k * m:4 * (k + 1) * m] = blocks.transpose(0, 2, 1, 3).reshape(
            4 * m, 4 * nm)
    gw = grid.scalar_weights()
    out = {"B": ShellOperator(f"B_eps[eps={eps:g}]", bmat, sp, gw, gw)}
    if test_points is not None:
        tp = np.atleast_2d(np.asarray(test_points, dtype=float))
        blocks = _phi_blocks(sp, tp, flat) * src_fac[None, :, None, None]
        amat = blocks.transpose(0, 2, 1, 3).reshape(4 * tp.shape[0], 4 * nm)
        out["A"] = ShellOperator(
            f"A_eps[eps={eps:g}]", amat, sp,
            np.full(tp.shape[0], 1.0 / tp.shape[0]), gw)
    if volume is not None:
        blocks = _phi_blocks(sp, flat, volume.points)
        blocks *= volume.weights[None, :, None, None]
        blocks *= np.repeat(grid.u_vals[None, :], n, axis=0).ravel()[
            :, None, None, None]
        cmat = blocks.transpose(0, 2, 1, 3).reshape(4 * nm, 4 * len(volume))
        out["C"] = ShellOperator(f"C_eps[eps={eps:g}]", cmat, sp, gw,
                                 volume.weights)
    return out


def assemble_limits(grid: OperatorGrid, sp: SpectralParameter,
                    test_points: np.ndarray | None = None,
                    volume: VolumeGrid | None = None,
                    patch: bool = True) -> dict:
    """Dense eps -> 0 limits: B0, B', their sum, and optionally A0, C0."""
    if grid.dofs > DENSE_DOF_CAP:
        raise ValueError(
            f"grid has {grid.dofs} dofs, dense cap is {DENSE_DOF_CAP}")
    n, m = grid.n_nodes, grid.n_transverse
    trace = _trace_matrix(sp, grid.mesh, patch)
    uw = grid.u_vals
    vw = grid.v_vals * grid.t_weights
    uv_outer = np.outer(uw, vw)
    trace_blocks = trace.reshape(n, 4, n, 4)
    b0 = np.einsum("kalb,pq->kpalqb", trace_blocks, uv_outer)
    b0 = b0.reshape(grid.dofs, grid.dofs)
    bp = bprime_tensor(grid)
    gw = grid.scalar_weights()
    out = {
        "B0": ShellOperator("B_0", b0, sp, gw, gw),
        "Bprime": ShellOperator("B'", bp, sp, gw, gw),
        "Blimit": ShellOperator("B_0 + B'", b0 + bp, sp, gw, gw),
    }
    if test_points is not None:
        tp = np.atleast_2d(np.asarray(test_points, dtype=float))
        blocks = _phi_blocks(sp, tp, grid.mesh.nodes)
        blocks *= grid.mesh.weights[None, :, None, None]
        a0_nodes = blocks.transpose(0, 2, 1, 3).reshape(4 * tp.shape[0], 4 * n)
        expand = np.kron(np.eye(n), np.kron(vw[None, :], np.eye(4)))
        amat = a0_nodes @ expand
        out["A0"] = ShellOperator(
            "A_0", amat, sp, np.full(tp.shape[0], 1.0 / tp.shape[0]), gw)
    if volume is not None:
        blocks = _phi_blocks(sp, grid.mesh.nodes, volume.points)
        blocks *= volume.weights[None, :, None, None]
        c_nodes = blocks.transpose(0, 2, 1, 3).reshape(4 * n, 4 * len(volume))
        lift = np.kron(np.eye(n), np.kron(uw[:, None], np.eye(4)))
        cmat = lift @ c_nodes
        out["C0"] = ShellOperator("C_0", cmat, sp, gw, volume.weights)
    return out


# ---------------------------------------------------------------------------
# strong convergence experiment


@dataclass(frozen=True)
class ConvergenceRow:
    epsilon: float
    norm_b: float
    norm_a: float
    norm_c: float
    floor_flag: bool


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple

    def csv(self) -> str:
        lines = ["epsilon,norm_B,norm_A,norm_C,floor_flag"]
        for r in self.rows:
            lines.append(f"{r.epsilon:.10g},{r.norm_b:.10g},{r.norm_a:.10g},"
                         f"{r.norm_c:.10g},{int(r.floor_flag)}")
        return "\n".join(lines) + "\n"


def strong_convergence_experiment(grid: OperatorGrid, sp: SpectralParameter,
                                  eps_list: Sequence[float],
                                  g: np.ndarray | None = None,
                                  test_points: np.ndarray | None = None,
                                  volume: VolumeGrid | None = None,
                                  f_vals: np.ndarray | None = None,
                                  patch: bool = True) -> ConvergenceTable:
    """Decay of (B_eps - B_0 - B')g, (A_eps - A_0)g and (C_eps - C_0)F.

    All three families act on fixed smooth densities; the table reports
    weighted norms of the differences per eps.  Norms must decrease
    monotonically until they hit the discretization floor (flagged);
    an increase before the floor raises ``AssertionError``.
    """
    eps = sorted(float(e) for e in eps_list)[::-1]
    if any(e <= 0.0 for e in eps):
        raise ValueError("eps values must be positive")
    if g is None:
        g = default_separable_density(grid)
    if test_points is None:
        ring = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0],
                         [-2.0, 0.0, 0.0], [1.2, 1.2, 1.2],
                         [0.3, 0.0, 0.0], [0.0, -0.3, 0.1]])
        test_points = ring
    if volume is None:
        volume = ball_grid(0.5, nr=6, ntheta=6, nphi=10)
    if f_vals is None:
        f_vals = default_volume_density(volume)

    b_lim = b_limit_apply(grid, sp, g, patch)
    a_lim = a_eps_apply(grid, sp, 0.0, g, test_points)
    c_lim = c_eps_apply(grid, sp, 0.0, volume, f_vals)

    rows = []
    for e in eps:
        db = grid_norm(grid, b_eps_apply(grid, sp, e, g, patch) - b_lim)
        da = float(np.sqrt(np.mean(
            np.abs(a_eps_apply(grid, sp, e, g, test_points) - a_lim) ** 2)))
        dc = grid_norm(grid, c_eps_apply(grid, sp, e, volume, f_vals) - c_lim)
        rows.append([e, db, da, dc])

    norms = np.array([[r[1], r[2], r[3]] for r in rows])
    floors = np.zeros(len(rows), dtype=bool)
    for j in range(3):
        col = norms[:, j]
        floor_level = max(1e-13 * np.max(col), 1e-15)
        hit = col < floor_level
        floors |= hit
        prev = None
        for i, val in enumerate(col):
            if hit[i] or (prev is not None and prev < floor_level):
                prev = val
                continue
            if prev is not None:
                assert val < prev, (
                    f"norm column {j} increased before the floor: "
                    f"{prev:.3e} -> {val:.3e} at eps={rows[i][0]:g}")
            prev = val
    table = tuple(ConvergenceRow(r[0], r[1], r[2], r[3], bool(f))
                  for r, f in zip(rows, floors))
    return ConvergenceTable(table)


# ---------------------------------------------------------------------------
# resolvent of the delta-shell Hamiltonian


def shell_resolvent_apply(sp: SpectralParameter, mesh: SurfaceMesh,
                          lam: float, kind: str, volume: VolumeGrid,
                          f_vals: np.ndarray, eval_points: np.ndarray,
                          patch: bool = True) -> np.ndarray:
    """Apply (H + lam * delta_shell - a)^{-1} to an ambient density.

    ``kind`` selects the electrostatic or the scalar (beta) shell.  The
    free part is the convolution with phi_a; the correction solves a
    dense boundary system on the mesh nodes.  Raises
    :class:`NearCriticalCoupling` for electrostatic couplings within
    {CRITICAL_WINDOW} of +-2 and :class:`SingularBoundaryInverse` when
    the boundary system condition number exceeds {BOUNDARY_COND_LIMIT:g}.
    """
    if kind not in ("electrostatic", "scalar"):
        raise ValueError("kind must be 'electrostatic' or 'scalar'")
    lam = float(lam)
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    fv = np.asarray(f_vals, dtype=complex).reshape(len(volume), 4)
    free = _phi_apply(sp, pts, volume.points, fv * volume.weights[:, None])
    if lam == 0.0:
        return free
    if kind == "electrostatic" and abs(abs(lam) - 2.0) <= CRITICAL_WINDOW:
        raise NearCriticalCoupling(
            f"electrostatic coupling {lam:g} within {CRITICAL_WINDOW} of +-2")
    n = len(mesh)
    trace_vals = _phi_apply(sp, mesh.nodes, volume.points,
                            fv * volume.weights[:, None])
    cmat = cauchy_sigma(sp, mesh, patch=patch).matrix
    if kind == "electrostatic":
        system = np.eye(4 * n) + lam * cmat
    else:
        system = np.kron(np.eye(n), BETA) + lam * cmat
    cond = np.linalg.cond(system)
    if cond > BOUNDARY_COND_LIMIT:
        raise SingularBoundaryInverse(
            f"boundary system condition number {cond:.3e}")
    density = np.linalg.solve(system, trace_vals.ravel()).reshape(n, 4)
    correction = _phi_apply(sp, pts, mesh.nodes,
                            density * mesh.weights[:, None])
    return free - lam * correction
