"""Quasi-static corotational tetrahedral elasticity with follower pressure.

Units: mm, kPa, mN (kPa * mm^2). Each tet uses the corotated linear energy

    W = mu |F - R|^2 + lam/2 (tr(R^T F) - 3)^2

with R the rotation of the polar decomposition of F. At small strain this
is linear elasticity; rigid rotations cost nothing. Cavity faces carry a
pressure that follows the deformed surface.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .errors import AssemblyError, SolverError, ValidationError
from .mesh import LATTICE, MEMBRANE

log = logging.getLogger(__name__)

# homogenized lattice moduli (kPa) measured per scale
LATTICE_MODULUS = {0.75: 21.70, 1.0: 18.34, 1.5: 16.38}


def lattice_modulus(scale):
    """Homogenized lattice modulus for a scale; linear between measured scales."""
    scales = sorted(LATTICE_MODULUS)
    return float(np.interp(scale, scales, [LATTICE_MODULUS[s] for s in scales]))


@dataclass(frozen=True)
class MaterialConfig:
    E_lat: float = 18.34
    E_mem: float = 1000.0
    E_sens: float = 3000.0
    nu: float = 0.45

    def __post_init__(self):
        for name in ("E_lat", "E_mem", "E_sens"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, f"must be positive, got {getattr(self, name)!r}", module="fem")
        if not 0 <= self.nu < 0.5:
            raise ValidationError("nu", f"must lie in [0, 0.5), got {self.nu!r}", module="fem")
        if self.E_sens < self.E_lat:
            raise ValidationError("E_sens", f"must not be below E_lat ({self.E_sens} < {self.E_lat})",
                                  module="fem")


@dataclass(frozen=True, eq=False)
class MaterialField:
    E_per_tet: np.ndarray
    nu: float
    E_lat: float
    E_mem: float
    E_sens: float


def assemble_material(mesh, roi=None, config=MaterialConfig()):
    """Per-tet modulus: label default, then E_sens over the ROI (Model alpha)."""
    E = np.where(mesh.region == MEMBRANE, config.E_mem, config.E_lat).astype(float)
    if roi is not None and len(roi.element_ids):
        ids = np.asarray(roi.element_ids)
        if ids.min() < 0 or ids.max() >= mesh.n_tets:
            raise ValidationError("roi", "element ids out of range for this mesh", module="fem")
        E[ids] = config.E_sens
    E.setflags(write=False)
    return MaterialField(E, config.nu, config.E_lat, config.E_mem, config.E_sens)


@dataclass(frozen=True, eq=False)
class PressureProgram:
    times: np.ndarray
    pressures: np.ndarray
    bounds: tuple = (-50.0, 60.0)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.pressures, dtype=float)
        if t.ndim != 1 or t.shape != p.shape or len(t) < 2:
            raise ValidationError("pressure_program", "needs at least two (time, pressure) samples",
                                  module="fem")
        if t[0] != 0.0 or p[0] != 0.0:
            raise ValidationError("pressure_program", "must start at time 0 with pressure 0", module="fem")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("pressure_program", "times must be strictly increasing", module="fem")
        lo, hi = self.bounds
        if p.min() < lo or p.max() > hi:
            raise ValidationError("pressure_program", f"pressures must stay within [{lo}, {hi}] kPa",
                                  module="fem")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "pressures", p)

    @property
    def duration(self):
        return float(self.times[-1])

    def at(self, t_norm):
        return np.interp(np.asarray(t_norm) * self.duration, self.times, self.pressures)

    @classmethod
    def from_csv(cls, path, bounds=(-50.0, 60.0)):
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["time", "pressure"]:
                raise ValidationError("pressure_csv", f"{path}: header must be 'time,pressure'", module="fem")
            rows = [(float(r["time"]), float(r["pressure"])) for r in reader]
        t, p = zip(*rows) if rows else ((), ())
        return cls(np.array(t), np.array(p), bounds)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write("time,pressure\n")
            for t, p in zip(self.times, self.pressures):
                f.write(f"{t:g},{p:g}\n")


def default_program():
    """Atmospheric start, extension down to -20 kPa, then flexion up to +40 kPa."""
    return PressureProgram(np.array([0.0, 2.0, 8.0]), np.array([0.0, -20.0, 40.0]))


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    times: np.ndarray
    positions: np.ndarray
    pressures: np.ndarray = None

    @property
    def k(self):
        return len(self.times)

    @property
    def n(self):
        return self.positions.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write("step,t_norm,node_index,x,y,z\n")
            for m, (t, pts) in enumerate(zip(np.asarray(self.times).tolist(), self.positions.tolist())):
                for i, (x, y, z) in enumerate(pts):
                    f.write(f"{m},{t!r},{i},{x!r},{y!r},{z!r}\n")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        k = int(data[:, 0].max()) + 1
        n = int(data[:, 2].max()) + 1
        times = data[::n, 1][:k]
        return cls(times, data[:, 3:6].reshape(k, n, 3))


def _skew(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


class _Pattern:
    """Fixed sparsity pattern restricted to free dofs, assembled in CSC order."""

    def __init__(self, rows, cols, free_index, n_free):
        r = free_index[rows]
        c = free_index[cols]
        self.mask = (r >= 0) & (c >= 0)
        key = c[self.mask].astype(np.int64) * n_free + r[self.mask]
        uniq, self.pos = np.unique(key, return_inverse=True)
        self.indices = (uniq % n_free).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n_free, np.arange(n_free + 1)).astype(np.int32)
        self.n = n_free

    def matrix(self, values):
        data = np.bincount(self.pos, weights=values[self.mask], minlength=len(self.indices))
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def _dissection_order(X, idx=None, leaf=48):
    """Vertex order by recursive coordinate bisection, separators last.

    On a structured grid each plane of vertices is an exact separator, so
    this is a geometric nested dissection and keeps the LU fill low.
    """
    if idx is None:
        idx = np.arange(len(X))
    stack, out = [(idx, False)], []
    while stack:
        ids, done = stack.pop()
        if done or len(ids) <= leaf:
            out.append(ids)
            continue
        P = X[ids]
        ax = int(np.argmax(np.ptp(P, axis=0)))
        vals = np.unique(P[:, ax])
        if len(vals) < 3:
            out.append(ids)
            continue
        v = vals[len(vals) // 2]
        c = P[:, ax]
        tol = 1e-9 * max(1.0, abs(v))
        # popped in reverse: left, right, then the separator
        stack.append((ids[np.abs(c - v) <= tol], True))
        stack.append((ids[c > v + tol], False))
        stack.append((ids[c < v - tol], False))
    return np.concatenate(out)


def _polar_rotation(F, tol=1e-13, max_iter=30):
    """Rotation factor of a batch of 3x3 matrices by scaled Newton iteration.

    Returns (R, ok); ``ok`` is False where det(F) <= 0 or the iteration
    did not settle, and those entries should be recomputed by SVD.
    """
    # component-major copy (3, 3, n) keeps every update contiguous
    X = np.ascontiguousarray(F.transpose(1, 2, 0))
    cof = np.empty_like(X)
    ok = None
    for _ in range(max_iter):
        # columns of the cofactor matrix are cross products of column pairs
        for col, (u, v) in enumerate(((1, 2), (2, 0), (0, 1))):
            cof[0, col] = X[1, u] * X[2, v] - X[2, u] * X[1, v]
            cof[1, col] = X[2, u] * X[0, v] - X[0, u] * X[2, v]
            cof[2, col] = X[0, u] * X[1, v] - X[1, u] * X[0, v]
        det = X[0, 0] * cof[0, 0] + X[1, 0] * cof[1, 0] + X[2, 0] * cof[2, 0]
        if ok is None:
            ok = det > 0
            if not ok.all():
                X[:, :, ~ok] = np.eye(3)[:, :, None]
                det[~ok] = 1.0
                cof[:, :, ~ok] = np.eye(3)[:, :, None]
        # inverse transpose of X is its cofactor matrix over det
        g = np.abs(det) ** (-1.0 / 3.0)
        cof *= 1.0 / (g * det)
        X *= g
        X += cof
        X *= 0.5
        delta = np.abs(X - cof).max()
        if delta < tol:
            break
    else:
        XtX = np.einsum("kie,kje->eij", X, X)
        ok = ok & (np.abs(XtX - np.eye(3)).max(axis=(1, 2)) < 1e-10)
    return X.transpose(2, 0, 1), ok


class CorotationalSolver:
    """Static equilibrium of one mesh/material pair under a cavity pressure.

    ``fixed_dofs`` (flat dof indices, 3 * vertex + component) replaces the
    default clamp of ``mesh.fixed_vertices``. With ``project`` the
    rotation part of the tangent is clamped to stay positive semi-definite.
    ``contraction`` is the residual ratio below which a factorized tangent
    keeps being reused. ``dead_load`` is an optional (n_vertices, 3) array
    of fixed nodal forces added to every solve. ``anderson`` is the history
    depth for accelerating iterations with a reused tangent.
    """

    def __init__(self, mesh, material, fixed_dofs=None, tol=1e-8, max_iter=50, max_bisections=4,
                 project=False, contraction=0.8, dead_load=None, anderson=5):
        self.mesh = mesh
        self.contraction = contraction
        self.anderson = max(1, int(anderson))
        self._lu = None
        self.project = project
        self.tol = tol
        self.max_iter = max_iter
        self.max_bisections = max_bisections
        X = mesh.vertices
        nv = len(X)
        tets = mesh.tets
        Dm = (X[tets[:, 1:]] - X[tets[:, [0]]]).transpose(0, 2, 1)
        self.volume = np.linalg.det(Dm) / 6.0
        if np.any(self.volume <= 0):
            raise AssemblyError(f"{np.count_nonzero(self.volume <= 0)} tets have non-positive volume")
        Dinv = np.linalg.inv(Dm)
        g = np.empty((len(tets), 4, 3))
        g[:, 1:] = Dinv
        g[:, 0] = -Dinv.sum(axis=1)
        self.grad = g
        E = np.asarray(material.E_per_tet, dtype=float)
        nu = material.nu
        self.mu = E / (2 * (1 + nu))
        self.lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        # B maps the 12 nodal dofs to the 9 entries of F: F_ij = sum_a x_ai g_aj
        B = np.zeros((len(tets), 9, 12))
        for i in range(3):
            for a in range(4):
                B[:, 3 * i:3 * i + 3, 3 * a + i] = g[:, a, :]
        self.B = B

        if fixed_dofs is None:
            fixed_dofs = (3 * np.asarray(mesh.fixed_vertices)[:, None] + np.arange(3)).ravel()
        fixed_dofs = np.unique(np.asarray(fixed_dofs, dtype=np.int64))
        if len(fixed_dofs) == 0:
            raise AssemblyError("no constrained dofs; the stiffness matrix would be singular")
        free = np.ones(3 * nv, dtype=bool)
        free[fixed_dofs] = False
        self.free = np.flatnonzero(free)
        free_index = np.full(3 * nv, -1, dtype=np.int64)
        free_index[self.free] = np.arange(len(self.free))

        edofs = (3 * tets[:, :, None] + np.arange(3)).reshape(-1, 12)
        self.edofs = edofs
        tris = mesh.cavity_tris
        self.tris = tris
        fdofs = (3 * tris[:, :, None] + np.arange(3)).reshape(-1, 9)
        self.fdofs = fdofs
        rows = np.concatenate([np.repeat(edofs, 12, axis=1).ravel(), np.repeat(fdofs, 9, axis=1).ravel()])
        cols = np.concatenate([np.tile(edofs, (1, 12)).ravel(), np.tile(fdofs, (1, 9)).ravel()])
        self.pattern = _Pattern(rows, cols, free_index, len(self.free))
        self.nv = nv
        self.dead_load = None if dead_load is None else np.asarray(dead_load, dtype=float).reshape(-1)
        order = _dissection_order(X)
        perm = free_index[(3 * order[:, None] + np.arange(3)).ravel()]
        self.perm = perm[perm >= 0]

    # -- element kernels -------------------------------------------------
    def _kinematics(self, x):
        tets = self.mesh.tets
        Ds = (x[tets[:, 1:]] - x[tets[:, [0]]]).transpose(0, 2, 1)
        F = Ds @ self.grad[:, 1:]
        U, S, Vt = np.linalg.svd(F)
        refl = np.linalg.det(U) * np.linalg.det(Vt) < 0
        U[refl, :, 2] *= -1
        S[refl, 2] *= -1
        R = U @ Vt
        return F, U, S, Vt, R

    def _rotation(self, x):
        """Deformation gradient and its rotation factor, without the full SVD."""
        tets = self.mesh.tets
        Ds = (x[tets[:, 1:]] - x[tets[:, [0]]]).transpose(0, 2, 1)
        F = Ds @ self.grad[:, 1:]
        R, ok = _polar_rotation(F)
        if not ok.all():
            U, S, Vt = np.linalg.svd(F[~ok])
            refl = np.linalg.det(U) * np.linalg.det(Vt) < 0
            U[refl, :, 2] *= -1
            R[~ok] = U @ Vt
        return F, R

    def _stress(self, F, R):
        tr = np.einsum("eij,eij->e", R, F) - 3.0
        return 2 * self.mu[:, None, None] * (F - R) + (self.lam * tr)[:, None, None] * R

    def _internal(self, x, with_tangent):
        if not with_tangent:
            F, R = self._rotation(x)
            P = self._stress(F, R)
            return self.volume[:, None, None] * (self.grad @ P.transpose(0, 2, 1)), None
        F, U, S, Vt, R = self._kinematics(x)
        P = self._stress(F, R)
        # gradient on node a: V * P g_a
        fe = self.volume[:, None, None] * (self.grad @ P.transpose(0, 2, 1))
        mu, lam = self.mu, self.lam
        tr = S.sum(axis=1) - 3.0
        C = 2 * mu[:, None, None] * np.eye(9)[None]
        Rf = R.reshape(-1, 9)
        C += lam[:, None, None] * Rf[:, :, None] * Rf[:, None, :]
        V = Vt.transpose(0, 2, 1)
        for a, b in ((0, 1), (0, 2), (1, 2)):
            Q = (U[:, :, a, None] * V[:, None, :, b] - U[:, :, b, None] * V[:, None, :, a]).reshape(-1, 9)
            denom = S[:, a] + S[:, b]
            denom = np.where(np.abs(denom) < 1e-8, np.copysign(1e-8, denom), denom)
            coef = (lam * tr - 2 * mu) / denom
            if self.project:
                # eigenvalue along Q is 2 mu + 2 coef; clamp keeps the element tangent PSD
                coef = np.maximum(coef, -mu)
            C += coef[:, None, None] * Q[:, :, None] * Q[:, None, :]
        # dof order inside B is (node, component); F flattened row-major (i, j)
        Ke = self.volume[:, None, None] * (self.B.transpose(0, 2, 1) @ C @ self.B)
        return fe, Ke

    def _pressure(self, x, p, with_tangent):
        if len(self.tris) == 0:
            return np.zeros((0, 3, 3)), None
        t = x[self.tris]
        area = 0.5 * np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        fp = np.repeat((-p / 3.0) * area[:, None, :], 3, axis=1)
        if not with_tangent:
            return fp, None
        # d(area)/d(x_b) = 1/2 [x_{b+2} - x_{b+1}]_x ; residual tangent is -d(fp)/dx
        Kf = np.zeros((len(t), 3, 3, 3, 3))
        for b in range(3):
            blk = (p / 6.0) * _skew(t[:, (b + 2) % 3] - t[:, (b + 1) % 3])
            for a in range(3):
                Kf[:, a, :, b, :] = blk
        return fp, Kf.reshape(-1, 9, 9)

    def residual(self, x, p, with_tangent=False):
        fe, Ke = self._internal(x, with_tangent)
        fp, Kf = self._pressure(x, p, with_tangent)
        r = np.bincount(self.edofs.ravel(), weights=fe.reshape(-1), minlength=3 * self.nv)
        if len(fp):
            r -= np.bincount(self.fdofs.ravel(), weights=fp.reshape(-1), minlength=3 * self.nv)
        if self.dead_load is not None:
            r -= self.dead_load
        if not with_tangent:
            return r[self.free], None
        vals = np.concatenate([Ke.reshape(-1), Kf.reshape(-1)]) if Kf is not None else Ke.reshape(-1)
        if Kf is None:
            vals = np.concatenate([vals, np.zeros(len(self.fdofs) * 81)])
        return r[self.free], self.pattern.matrix(vals)

    def load_norm(self, p):
        fp, _ = self._pressure(self.mesh.vertices, p, False)
        f = np.zeros(3 * self.nv)
        if len(fp):
            f = np.bincount(self.fdofs.ravel(), weights=fp.reshape(-1), minlength=3 * self.nv)
        if self.dead_load is not None:
            f = f + self.dead_load
        return float(np.linalg.norm(f[self.free]))

    # -- Newton ----------------------------------------------------------
    def newton(self, x, p, tol_abs):
        """Newton iterations from ``x`` at pressure ``p``; returns (x, converged, residual).

        The factorized tangent is reused while the residual contracts fast
        enough and refreshed otherwise. Steps with a stale tangent are
        Anderson-accelerated over the last few iterates. A full Newton step
        with backtracking is the fallback.
        """
        x = x.copy()
        r, _ = self.residual(x, p)
        rn = float(np.linalg.norm(r))
        fresh = False
        dxs, dfs, prev = [], [], None
        for _ in range(self.max_iter):
            if rn <= tol_abs:
                return x, True, rn
            if self._lu is None:
                if not self._refactor(x, p):
                    return x, False, rn
                fresh = True
                dxs, dfs, prev = [], [], None
            du = np.empty_like(r)
            du[self.perm] = self._lu.solve(-r[self.perm])
            if not np.all(np.isfinite(du)):
                if fresh:
                    return x, False, rn
                self._lu = None
                continue
            xf = x.reshape(-1)[self.free].copy()
            step = du
            if prev is not None:
                dxs.append(xf - prev[0])
                dfs.append(du - prev[1])
                del dxs[:-self.anderson], dfs[:-self.anderson]
                DF = np.column_stack(dfs)
                gamma = np.linalg.lstsq(DF, du, rcond=None)[0]
                step = du - (np.column_stack(dxs) + DF) @ gamma
            prev = (xf, du)
            trial = x.copy()
            trial.reshape(-1)[self.free] += step
            r_t, _ = self.residual(trial, p)
            rn_t = float(np.linalg.norm(r_t))
            if np.isfinite(rn_t) and rn_t < self.contraction * rn:
                x, r, rn = trial, r_t, rn_t
                fresh = False
                continue
            if not fresh:
                # stale tangent: refresh at the current state and retry
                self._lu = None
                continue
            step = 0.5
            while np.isfinite(rn_t) and rn_t >= rn or not np.isfinite(rn_t):
                if step < 1.0 / 64:
                    return x, False, rn
                trial = x.copy()
                trial.reshape(-1)[self.free] += step * du
                r_t, _ = self.residual(trial, p)
                rn_t = float(np.linalg.norm(r_t))
                step *= 0.5
            x, r, rn = trial, r_t, rn_t
            self._lu = None
        return x, rn <= tol_abs, rn

    def _refactor(self, x, p):
        _, K = self.residual(x, p, with_tangent=True)
        try:
            K = K[self.perm][:, self.perm].tocsc()
            self._lu = splu(K, permc_spec="NATURAL")
        except RuntimeError:
            self._lu = None
            return False
        return True

    def solve_path(self, pressures, x0=None, ref_pressure=None):
        """Equilibria along a sequence of pressures, continuing from the previous one.

        Each increment starts from a secant prediction and is bisected up to
        ``max_bisections`` levels if it fails. Returns an array of deformed
        vertex positions, one per pressure.
        """
        pressures = np.asarray(pressures, dtype=float)
        if ref_pressure is None:
            ref_pressure = np.max(np.abs(pressures)) if len(pressures) else 0.0
        ref = self.load_norm(ref_pressure)
        x = self.mesh.vertices.copy() if x0 is None else x0.copy()
        out = np.empty((len(pressures), self.nv, 3))
        if ref == 0.0:
            out[:] = x
            return out
        tol_abs = self.tol * ref
        self._lu = None
        p_prev, x_prev, dp_prev = 0.0, None, 0.0
        for m, p in enumerate(pressures):
            guess = x
            if x_prev is not None and dp_prev != 0.0:
                guess = x + (x - x_prev) * ((p - p_prev) / dp_prev)
            x_new, _ = self._advance(x, guess, p_prev, p, tol_abs, m)
            x_prev, dp_prev = x, p - p_prev
            x, p_prev = x_new, p
            out[m] = x
        return out

    def _advance(self, x, guess, p0, p1, tol_abs, step, level=0):
        x_new, ok, rn = self.newton(guess, p1, tol_abs)
        if not ok and guess is not x:
            self._lu = None
            x_new, ok, rn = self.newton(x, p1, tol_abs)
        if ok:
            return x_new, rn
        if level >= self.max_bisections:
            raise SolverError(
                f"no convergence at load step {step} (p = {p1:g} kPa) after {self.max_bisections} bisections; "
                f"residual {rn:.3e} > {tol_abs:.3e}", step=step, residual=rn)
        mid = 0.5 * (p0 + p1)
        log.debug("step %d: bisecting %g -> %g kPa (level %d)", step, p0, p1, level + 1)
        self._lu = None
        x_mid, _ = self._advance(x, x, p0, mid, tol_abs, step, level + 1)
        return self._advance(x_mid, x_mid, mid, p1, tol_abs, step, level + 1)


def solve_quasistatic(mesh, material, program, k, fixed_dofs=None, **solver_options):
    """Monitored-node trajectories at ``k`` uniformly spaced normalized times."""
    if k < 2:
        raise ValidationError("k", f"needs at least 2 steps, got {k}", module="fem")
    if fixed_dofs is None and len(mesh.fixed_vertices) == 0:
        raise AssemblyError("mesh has no fixed vertices")
    times = np.linspace(0.0, 1.0, k)
    pressures = program.at(times)
    solver = CorotationalSolver(mesh, material, fixed_dofs=fixed_dofs, **solver_options)
    states = solver.solve_path(pressures, ref_pressure=np.max(np.abs(program.pressures)))
    positions = states[:, mesh.monitored_vertices, :]
    return TrajectorySet(times, positions, pressures)


def bending_angle(traj, step):
    """Tip bending angle in degrees, relative to the first trajectory step.

    The tip direction is the end tangent of a cubic spline through the
    monitored nodes, projected on the sagittal (x-y) plane. Positive values
    mean flexion toward -y.
    """
    if traj.n < 2:
        raise ValidationError("traj", "bending angle needs at least 2 monitored nodes", module="fem")

    def tip_direction(pts):
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 1e-12):
            raise ValidationError("traj", "coincident monitored nodes", module="fem")
        s = np.concatenate([[0.0], np.cumsum(seg)])
        if len(pts) == 2:
            d = pts[1] - pts[0]
        else:
            d = CubicSpline(s, pts, axis=0)(s[-1], 1)
        return np.arctan2(d[1], d[0])

    ref = tip_direction(traj.positions[0])
    cur = tip_direction(traj.positions[step])
    delta = np.angle(np.exp(1j * (cur - ref)))
    return float(-np.degrees(delta))
