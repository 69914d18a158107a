"""Flat Ehresmann connections as tangent-algebroid comorphisms, and the
twisted-cylinder example: X = R^2 x C x R minus the slab
J = {x = y = 0, -1 <= h <= 1}, fibered over Y = R^2 by forgetting (z, h),
with connection form i nu(h) dtheta.

The horizontal lift of a base motion rotates z at rate nu(h) times the
angular speed of (x, y) about the origin:

    z' = i nu(h) theta' z,    theta = atan2(y, x)

so transporting once around a loop encircling the origin multiplies z by
e^{2 pi i nu(h)}. nu is a bump supported in [-1/2, 1/2]; all coefficient
expressions are gate-wrapped so that they evaluate to exactly 0 (without
touching 1/r^2) wherever nu vanishes, which is what lets the connection
extend over r = 0 for |h| > 1.

The complex fiber is stored as (z1, z2) = (Re z, Im z); phases are atan2
angles unwrapped by continuity along trajectories.
"""

import math

import numpy as np

from . import expr as ex
from .algebroid import LieAlgebroid, AlgebroidError
from .apath import APath
from .comorph import Comorphism, lift_path


class FlatConnection:
    """A submersion phi: X -> Y with an expression-valued horizontal lift.

    H is a (dim X) x (dim Y) matrix of Exprs over the X coordinates with
    Dphi(x) H(x) = I; neither the section property nor flatness is
    assumed — both are measured on samples.
    """

    def __init__(self, x_coords, phi, H, domain=(), y_coords=None):
        self.x_coords = list(x_coords)
        self.nx = len(self.x_coords)
        self.phi = [_as_expr(e) for e in phi]
        self.ny = len(self.phi)
        self.y_coords = (list(y_coords) if y_coords is not None
                         else [f"x{j+1}" for j in range(self.ny)])
        if len(H) != self.nx or any(len(row) != self.ny for row in H):
            raise AlgebroidError(f"H must be {self.nx} x {self.ny}")
        self.H = [[_as_expr(e) for e in row] for row in H]
        self.domain = [_as_expr(e) for e in domain]
        self._H_fn = ex.compile_exprs(
            [e for row in self.H for e in row], self.x_coords)
        flat_dphi = [p.d(v) for p in self.phi for v in self.x_coords]
        self._dphi_fn = ex.compile_exprs(flat_dphi, self.x_coords)
        self._phi_fn = ex.compile_exprs(self.phi, self.x_coords)
        self._domain_fn = (ex.compile_exprs(self.domain, self.x_coords)
                           if self.domain else None)
        self._comorphism = None
        self._vert_fn = None

    def in_domain(self, x):
        if self._domain_fn is None:
            return True
        try:
            vals = self._domain_fn(*x)
        except (ArithmeticError, ValueError):
            return False
        return all(v > 0.0 for v in vals)

    def H_at(self, x):
        return np.asarray(self._H_fn(*x), dtype=float).reshape(self.nx,
                                                               self.ny)

    def dphi_at(self, x):
        return np.asarray(self._dphi_fn(*x), dtype=float).reshape(self.ny,
                                                                  self.nx)

    def phi_at(self, x):
        return self._phi_fn(*x)

    def section_residual(self, samples):
        """max over samples of |Dphi(x) H(x) - I|."""
        eye = np.eye(self.ny)
        res = 0.0
        for x in samples:
            res = max(res, float(np.max(np.abs(
                self.dphi_at(x) @ self.H_at(x) - eye))))
        return res

    def as_comorphism(self):
        """The tangent-algebroid comorphism (phi, H): TX -> TY.

        Cached so that paths built against the target algebroid keep
        referring to the same object.
        """
        if self._comorphism is None:
            src = LieAlgebroid(
                self.nx, self.nx,
                [[ex.Const(1.0 if i == a else 0.0) for a in range(self.nx)]
                 for i in range(self.nx)],
                {}, domain=self.domain, coords=self.x_coords)
            tgt = LieAlgebroid(
                self.ny, self.ny,
                [[ex.Const(1.0 if i == a else 0.0) for a in range(self.ny)]
                 for i in range(self.ny)],
                {}, coords=self.y_coords)
            self._comorphism = Comorphism(src, tgt, list(self.phi),
                                          [list(row) for row in self.H])
        return self._comorphism

    def _vertical_commutators(self, x):
        """All commutators [H e_i, H e_j] (i < j) at x, with their
        horizontal parts projected out."""
        if self._vert_fn is None:
            flat = []
            for i in range(self.ny):
                for j in range(i + 1, self.ny):
                    for k in range(self.nx):
                        acc = ex.Const(0.0)
                        for l, v in enumerate(self.x_coords):
                            acc = ex.add(acc, ex.sub(
                                ex.mul(self.H[l][i], self.H[k][j].d(v)),
                                ex.mul(self.H[l][j], self.H[k][i].d(v))))
                        flat.append(acc)
            self._vert_fn = ex.compile_exprs(flat, self.x_coords)
        vals = np.asarray(self._vert_fn(*x), dtype=float)
        npairs = self.ny * (self.ny - 1) // 2
        comms = vals.reshape(npairs, self.nx)
        H = self.H_at(x)
        dphi = self.dphi_at(x)
        return [c - H @ (dphi @ c) for c in comms]


def _as_expr(e):
    if isinstance(e, ex.Expr):
        return e
    if isinstance(e, (int, float)):
        return ex.Const(e)
    raise AlgebroidError(f"expected Expr or number, got {type(e).__name__}")


def as_comorphism(fc, samples=None, tol=1e-10):
    """Comorphism view of a flat connection; with samples, the section
    property |Dphi H - I| <= tol is verified first."""
    if samples is not None:
        res = fc.section_residual(samples)
        if res > tol:
            raise AlgebroidError(
                f"H is not a section of Dphi (residual {res:.3e})")
    return fc.as_comorphism()


def flatness_residual(fc, samples):
    """max over samples and base pairs (i, j) of the vertical part of
    [H e_i, H e_j], all derivatives symbolic."""
    res = 0.0
    for x in samples:
        if not fc.in_domain(x):
            raise ex.DomainError(f"sample {tuple(float(v) for v in x)} outside the domain")
        for c in fc._vertical_commutators(x):
            res = max(res, float(np.max(np.abs(c))))
    return res


# ------------------------------------------------------- the 3.x example --

_XC = ["x", "y", "z1", "z2", "h"]


class ExampleConnection(FlatConnection):
    """The twisted-cylinder connection on X = R^2 x C x R minus the slab.

    nu(h) = nu0 * bump(support_lo, support_hi, h): exactly nu0 at the
    midpoint of the support and identically zero outside it. The domain
    predicate x^2 + y^2 + estep(h - h_hi) + estep(h_lo - h) > 0 excludes
    exactly the slab {r = 0, h_lo <= h <= h_hi} (slab [-1, 1] by default).
    """

    def __init__(self, nu0, support=(-0.5, 0.5), slab=(-1.0, 1.0)):
        self.nu0 = float(nu0)
        self.support = tuple(support)
        self.slab = tuple(slab)
        h = ex.Var("h")
        if nu0 == 0.0:
            self.nu_expr = ex.Const(0.0)
        else:
            self.nu_expr = ex.mul(
                ex.Const(nu0),
                ex.fun("bump", ex.Const(support[0]), ex.Const(support[1]), h))
        self._nu_fn = ex.compile_expr(self.nu_expr, ["h"])
        x, y, z1, z2 = (ex.Var(v) for v in ("x", "y", "z1", "z2"))
        r2 = ex.add(ex.pow_(x, 2), ex.pow_(y, 2))
        nu = self.nu_expr

        def gate(e):
            return ex.fun("gate", nu, e)

        zero, one = ex.Const(0.0), ex.Const(1.0)
        H = [
            [one, zero],
            [zero, one],
            # z' = i nu theta' z with theta' = (-y/r^2, x/r^2) per base axis
            [gate(ex.div(ex.mul(y, z2), r2)),
             gate(ex.neg(ex.div(ex.mul(x, z2), r2)))],
            [gate(ex.neg(ex.div(ex.mul(y, z1), r2))),
             gate(ex.div(ex.mul(x, z1), r2))],
            [zero, zero],
        ]
        domain = [ex.add(ex.add(r2, ex.fun("estep", ex.sub(h, ex.Const(slab[1])))),
                         ex.fun("estep", ex.sub(ex.Const(slab[0]), h)))]
        super().__init__(_XC, [x, y], H, domain, y_coords=["x", "y"])
        self.z_indices = (2, 3)

    def nu(self, h):
        return self._nu_fn(float(h))


def circle_loop(fc, radius=1.0, center=(0.0, 0.0), turns=1, grid=1000):
    """Closed circle in the base of fc's comorphism target, with exact
    fiber data eta = dy/dt."""
    tgt = fc.as_comorphism().target
    times = np.linspace(0.0, 1.0, grid + 1)
    w = 2.0 * math.pi * turns
    base = np.stack([center[0] + radius * np.cos(w * times),
                     center[1] + radius * np.sin(w * times)], axis=1)
    eta = np.stack([-radius * w * np.sin(w * times),
                    radius * w * np.cos(w * times)], axis=1)
    # exact closure: first and last samples coincide bitwise
    base[-1] = base[0]
    eta[-1] = eta[0]
    return APath(tgt, times, base, eta)


class HolonomyReport:
    """Fiber transport along a lifted loop. phase is the continuity-
    unwrapped angle swept by (z1, z2) (None when the connection does not
    mark complex-fiber indices or the lift failed)."""

    def __init__(self, start, end, phase, status, t_event,
                 phi_projection_error):
        self.start = start
        self.end = end
        self.phase = phase
        self.status = status
        self.t_event = t_event
        self.phi_projection_error = phi_projection_error

    @property
    def completed(self):
        return self.status == "completed"

    def __repr__(self):
        ph = "None" if self.phase is None else f"{self.phase:.9f}"
        return (f"HolonomyReport(phase={ph}, status={self.status}, "
                f"proj_err={self.phi_projection_error:.3e})")


def holonomy(fc, loop, x0):
    """Lift the closed base loop through x0 and report the fiber
    transport; for connections with a marked complex fiber, also the
    unwrapped phase of z."""
    if float(np.max(np.abs(loop.base[0] - loop.base[-1]))) > 1e-9:
        raise AlgebroidError("holonomy needs a closed loop")
    lifted = lift_path(fc.as_comorphism(), loop, x0)
    phase = None
    zi = getattr(fc, "z_indices", None)
    if zi is not None and len(lifted.base) >= 2:
        angles = np.unwrap(np.arctan2(lifted.base[:, zi[1]],
                                      lifted.base[:, zi[0]]))
        phase = float(angles[-1] - angles[0])
    return HolonomyReport(np.array(lifted.base[0]), np.array(lifted.base[-1]),
                          phase, lifted.status, lifted.t_event,
                          lifted.phi_projection_error)


def sheet_count(nu_value, k_max=10**6, tol=1e-9):
    """Order of nu in R/Z: smallest k <= k_max with k*nu within tol of an
    integer, else math.inf (reported honestly as 'order > k_max')."""
    nu_value = float(nu_value)
    k = np.arange(1, k_max + 1, dtype=float)
    d = np.abs(k * nu_value - np.round(k * nu_value))
    hits = np.nonzero(d <= tol)[0]
    if len(hits) == 0:
        return math.inf
    return int(hits[0]) + 1


class GammaElement:
    """Element gamma = (r, theta, r', tau, z, h) of the example groupoid.

    source(gamma) = (r, theta, z, h); target(gamma) =
    (r', theta + tau, e^{i nu(h) tau} z, h), both in the polar chart
    (radius, angle, z1, z2, h); theta + tau is returned unreduced.
    """

    def __init__(self, conn, r, theta, rp, tau, z, h):
        if r <= 0 or rp <= 0:
            raise ValueError("need r, r' > 0")
        lo, hi = conn.slab
        if not lo < h < hi:
            raise ValueError(f"need h strictly inside the slab interval "
                             f"({lo}, {hi})")
        self.conn = conn
        self.r = float(r)
        self.theta = float(theta)
        self.rp = float(rp)
        self.tau = float(tau)
        self.z = (float(z[0]), float(z[1]))
        self.h = float(h)

    def source(self):
        return (self.r, self.theta, self.z[0], self.z[1], self.h)

    def target(self):
        nu = self.conn.nu(self.h)
        a = nu * self.tau
        c, s = math.cos(a), math.sin(a)
        w = (c * self.z[0] - s * self.z[1], s * self.z[0] + c * self.z[1])
        return (self.rp, self.theta + self.tau, w[0], w[1], self.h)

    def then(self, other, tol=1e-9):
        """Composite doing self first, then other: taus add, radii chain.
        Requires source(other) to match target(self)."""
        if other.conn is not self.conn:
            raise ValueError("elements belong to different connections")
        tgt = self.target()
        src = other.source()
        if max(abs(a - b) for a, b in zip(tgt, src)) > tol:
            raise ValueError(f"cannot compose: target {tgt} != source {src}")
        return GammaElement(self.conn, self.r, self.theta, other.rp,
                            self.tau + other.tau, self.z, self.h)

    def is_unit(self):
        return self.tau == 0.0 and self.r == self.rp

    def __repr__(self):
        return (f"GammaElement(r={self.r}, theta={self.theta}, r'={self.rp}, "
                f"tau={self.tau}, z={self.z}, h={self.h})")


def gamma_source(g):
    return g.source()


def gamma_target(g):
    return g.target()


class DensityReport:
    """Sampled picture of the (theta', arg z') relation on the 2-torus."""

    def __init__(self, nu, tau_max, bins, cells_hit, line_count, max_gap):
        self.nu = nu
        self.tau_max = tau_max
        self.bins = bins
        self.cells_hit = cells_hit
        self.cells_total = bins * bins
        self.coverage = cells_hit / (bins * bins)
        self.line_count = line_count
        self.max_gap = max_gap

    def __repr__(self):
        return (f"DensityReport(nu={self.nu}, coverage={self.cells_hit}/"
                f"{self.cells_total}, lines={self.line_count}, "
                f"max_gap={self.max_gap:.6g})")

    def to_json(self):
        return {"nu": self.nu, "tau_max": self.tau_max, "bins": self.bins,
                "cells_hit": self.cells_hit, "cells_total": self.cells_total,
                "coverage": self.coverage, "line_count": self.line_count,
                "max_gap": self.max_gap}


TWO_PI = 2.0 * math.pi


def density_scan(nu_value, theta_offset, z0, tau_max, bins):
    """Sample (theta', arg z') = (theta0 + tau, arg z0 + nu tau) mod 2pi
    for tau in [0, tau_max].

    Reports the fraction of bins x bins cells hit, the number of distinct
    lines arg z' = nu theta' + b (cluster count of the intercepts b), and
    the maximum circular gap between consecutive intercepts.
    """
    z0 = (float(z0[0]), float(z0[1]))
    if z0 == (0.0, 0.0):
        raise ValueError("z0 must be nonzero")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    nu_value = float(nu_value)
    a0 = math.atan2(z0[1], z0[0])
    step = TWO_PI / (4.0 * bins)
    tau = np.arange(0.0, tau_max + step / 2.0, step)
    theta = np.mod(theta_offset + tau, TWO_PI)
    argz = np.mod(a0 + nu_value * tau, TWO_PI)
    it = np.minimum((theta / TWO_PI * bins).astype(int), bins - 1)
    ia = np.minimum((argz / TWO_PI * bins).astype(int), bins - 1)
    cells_hit = len(np.unique(it * bins + ia))

    # line intercepts b = (arg z' - nu theta') mod 2pi cluster into the
    # distinct lines traced on the torus
    b = np.sort(np.unique(np.round(
        np.mod(argz - nu_value * theta, TWO_PI), 9)))
    # merge clusters closer than 1e-6 (circularly)
    merged = [b[0]]
    for v in b[1:]:
        if v - merged[-1] > 1e-6:
            merged.append(v)
    if len(merged) > 1 and (TWO_PI - merged[-1] + merged[0]) <= 1e-6:
        merged.pop()
    line_count = len(merged)
    if line_count == 1:
        max_gap = TWO_PI
    else:
        arr = np.asarray(merged)
        gaps = np.diff(arr)
        max_gap = float(max(gaps.max(), TWO_PI - arr[-1] + arr[0]))
    return DensityReport(nu_value, tau_max, bins, cells_hit, line_count,
                         max_gap)


class SelfIntersectionReport:
    """Witness that the target-source immersion self-intersects: equal
    image points at tau and tau + 2pi, distinct tangent planes."""

    def __init__(self, nu, image_mismatch, gap, expected_gap, degenerate):
        self.nu = nu
        self.image_mismatch = image_mismatch
        self.gap = gap
        self.expected_gap = expected_gap
        self.degenerate = degenerate

    def __repr__(self):
        return (f"SelfIntersectionReport(nu={self.nu}, "
                f"image_mismatch={self.image_mismatch:.3e}, "
                f"gap={self.gap:.9f}, expected={self.expected_gap:.9f}, "
                f"degenerate={self.degenerate})")


def _ts_jacobian(nu, r, theta, rp, tau):
    """Jacobian of gamma -> (source, target) in the polar chart at z = 0.

    Parameter order (r, theta, r', tau, z1, z2, h); image coordinates
    (r, theta, z1, z2, h, r', theta + tau, w1, w2, h) with w = R(nu tau) z.
    Only the z-block depends on tau at z = 0.
    """
    J = np.zeros((10, 7))
    J[0, 0] = 1.0          # r
    J[1, 1] = 1.0          # theta
    J[2, 4] = 1.0          # z1
    J[3, 5] = 1.0          # z2
    J[4, 6] = 1.0          # h
    J[5, 2] = 1.0          # r'
    J[6, 1] = 1.0          # theta + tau
    J[6, 3] = 1.0
    a = nu * tau
    J[7, 4], J[7, 5] = math.cos(a), -math.sin(a)   # w1
    J[8, 4], J[8, 5] = math.sin(a), math.cos(a)    # w2
    J[9, 6] = 1.0          # h
    return J


def _ts_image(nu, r, theta, rp, tau):
    return np.array([r, theta % TWO_PI, 0.0, 0.0, 0.0,
                     rp, (theta + tau) % TWO_PI, 0.0, 0.0, 0.0])


def self_intersection_witness(conn, h, tau, r=1.0, theta=0.0, rp=1.0):
    """Compare the target-source immersion at tau and tau + 2pi, at z = 0.

    Verifies the image points coincide (angles reduced mod 2pi) and
    returns the Frobenius gap between the two tangent planes' orthogonal
    projectors; for the rotated z-columns this equals the chord distance
    2 |sin(pi nu)| of the rotation by 2 pi nu.
    """
    nu = conn.nu(h)
    img1 = _ts_image(nu, r, theta, rp, tau)
    img2 = _ts_image(nu, r, theta, rp, tau + TWO_PI)
    # the h column of the image is the evaluation point, identical by
    # construction; the mismatch is carried by the reduced angles
    mismatch = float(np.max(np.abs(img1 - img2)))
    J1 = _ts_jacobian(nu, r, theta, rp, tau)
    J2 = _ts_jacobian(nu, r, theta, rp, tau + TWO_PI)

    def projector(J):
        Q, _ = np.linalg.qr(J)
        return Q @ Q.T

    gap = float(np.linalg.norm(projector(J1) - projector(J2), "fro"))
    frac = nu - round(nu)
    degenerate = abs(frac) <= 1e-12
    expected = 2.0 * abs(math.sin(math.pi * nu))
    return SelfIntersectionReport(nu, mismatch, gap, expected, degenerate)


def holonomy_sweep(conn, h_values, radius=1.0, grid=1000, z0=(1.0, 0.0),
                   k_max=10**6):
    """Numeric holonomy phase, nu(h), and sheet count across h values.

    Rows serialize to the CSV schema 'h,nu,holonomy_angle,sheets'.
    """
    rows = []
    loop = circle_loop(conn, radius=radius, grid=grid)
    for h in h_values:
        x0 = [radius, 0.0, z0[0], z0[1], float(h)]
        rep = holonomy(conn, loop, x0)
        nu = conn.nu(h)
        rows.append({"h": float(h), "nu": nu,
                     "holonomy_angle": rep.phase,
                     "sheets": sheet_count(nu, k_max=k_max)})
    return rows


def write_sweep_csv(rows, f):
    f.write("h,nu,holonomy_angle,sheets\n")
    for row in rows:
        sheets = row["sheets"]
        sheets_str = "inf" if sheets == math.inf else str(int(sheets))
        f.write(f"{row['h']!r},{row['nu']!r},"
                f"{row['holonomy_angle']!r},{sheets_str}\n")


__all__ = [
    "FlatConnection", "ExampleConnection", "GammaElement",
    "HolonomyReport", "DensityReport", "SelfIntersectionReport",
    "as_comorphism", "flatness_residual", "holonomy", "circle_loop",
    "sheet_count", "gamma_source", "gamma_target", "density_scan",
    "self_intersection_witness", "holonomy_sweep", "write_sweep_csv",
]
