"""A-paths and A-homotopies as sampled data, with residual diagnostics,
concatenation, and matrix-group development.

An A-path over an algebroid A is a pair (x(t), eta(t)) on [0,1] with
dx/dt = rho(x) eta; the defining equation is never assumed — it is
measured by `admissibility_residual`. A-homotopies carry the variation
section beta(t,s) and are diagnosed against the two homotopy equations

    dx^i/ds   = rho^i_a beta^a
    deta^c/ds = dbeta^c/dt + f^c_{ab} beta^a eta^b.

Development solves gamma' = gamma . (eta^a(t) E_a) in a matrix group;
`log_derivative` inverts it with 4th-order difference stencils (2nd-order
stencils leave O(h^2) components outside the Lie-algebra span, which would
trip the span tolerance at N = 1000).
"""

import numpy as np

from . import expr as ex
from .algebroid import AlgebroidError, make_lie_algebra
from .numkernel import VectorFieldTD, flow


def _pt(x):
    """Point formatted for error messages (plain floats, not numpy reprs)."""
    return tuple(float(v) for v in np.asarray(x, dtype=float).ravel())


class APath:
    """Sampled A-path: uniform grid on [0,1], base and fiber samples.

    junctions: indices excluded from residual maxima (concatenation
    points, where the path is only piecewise smooth). status/t_event
    record how integration ended when the path came from integrate_apath.
    """

    def __init__(self, algebroid, times, base, eta, status="completed",
                 t_event=None, junctions=()):
        self.algebroid = algebroid
        self.times = np.asarray(times, dtype=float)
        self.base = np.asarray(base, dtype=float).reshape(len(self.times),
                                                          algebroid.n)
        self.eta = np.asarray(eta, dtype=float).reshape(len(self.times),
                                                        algebroid.r)
        self.status = status
        self.t_event = t_event
        self.junctions = frozenset(int(j) for j in junctions)
        for x in self.base:
            if not algebroid.in_domain(x):
                raise AlgebroidError(
                    f"base sample {_pt(x)} is outside the domain")

    @property
    def source(self):
        return self.base[0]

    @property
    def target(self):
        return self.base[-1]

    @property
    def completed(self):
        return self.status == "completed"

    def status_str(self):
        if self.status == "completed":
            return "completed"
        return f"{self.status}(t*={self.t_event!r})"

    def write_csv(self, f):
        n, r = self.algebroid.n, self.algebroid.r
        cols = ([f"x{i+1}" for i in range(n)]
                + [f"eta{a+1}" for a in range(r)])
        f.write("t," + ",".join(cols) + "\n")
        for t, x, e in zip(self.times, self.base, self.eta):
            row = [t] + list(x) + list(e)
            f.write(",".join(repr(float(v)) for v in row) + "\n")
        f.write(f"# status={self.status_str()}\n")

    def __repr__(self):
        return (f"APath({len(self.times)} samples, n={self.algebroid.n}, "
                f"r={self.algebroid.r}, status={self.status_str()})")


def read_apath_csv(f, algebroid):
    """Inverse of APath.write_csv for a known algebroid."""
    from .numkernel import _STATUS_RE
    header = f.readline().strip().split(",")
    n, r = algebroid.n, algebroid.r
    if len(header) != 1 + n + r or header[0] != "t":
        raise AlgebroidError(
            f"APath CSV header must be t,x1..x{n},eta1..eta{r}")
    times, base, eta = [], [], []
    status, t_event = "completed", None
    for line in f:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _STATUS_RE.match(line)
            if m:
                status = m.group(1)
                if m.group(2) is not None:
                    t_event = float(m.group(2))
            continue
        vals = [float(v) for v in line.split(",")]
        times.append(vals[0])
        base.append(vals[1:1 + n])
        eta.append(vals[1 + n:])
    return APath(algebroid, times, base, eta, status, t_event)


def integrate_apath(A, s, x0, grid_size=1000, bound=1e8):
    """Solve dx/dt = rho(x) s(t, x) on [0,1]; eta_k = s(t_k, x_k).

    Returns an APath whose status records blowup/domain exit; the samples
    then cover only the integrated prefix.
    """
    n, r = A.n, A.r
    anchor_fn = A._anchor_fn
    sec = s

    def fn(t, x):
        rho = anchor_fn(*x)
        sv = sec(t, x)
        return [sum(rho[i * r + a] * sv[a] for a in range(r))
                for i in range(n)]

    vf = VectorFieldTD(n, fn, domain=A.in_domain)
    traj = flow(vf, x0, (0.0, 1.0), step=1.0 / grid_size, bound=bound)
    eta = [sec(t, x) for t, x in zip(traj.times, traj.points)]
    return APath(A, traj.times, traj.points, eta, traj.status, traj.t_event)


def _path_derivative(values, h):
    """d/dt of sampled values: central interior, 2nd-order one-sided ends."""
    v = np.asarray(values, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return d


def admissibility_residual(g):
    """max_k |finite-difference dx/dt - rho(x_k) eta_k|, junctions skipped.

    Central differences at interior grid points, one-sided second-order
    stencils at the two endpoints.
    """
    h = g.times[1] - g.times[0]
    dx = _path_derivative(g.base, h)
    res = 0.0
    for k in range(len(g.times)):
        if k in g.junctions:
            continue
        rho = g.algebroid.anchor_matrix(g.base[k])
        r = dx[k] - rho @ g.eta[k]
        res = max(res, float(np.max(np.abs(r))))
    return res


def concat(g, g2):
    """Time-rescaled concatenation: first half 2g(2t), second half 2g'(2t-1).

    Requires matching grids and matching junction point; the junction
    becomes a grid index recorded in `junctions` (the concatenated path is
    only piecewise smooth there).
    """
    if g.algebroid is not g2.algebroid:
        raise AlgebroidError("concat needs paths over the same algebroid")
    if not (g.completed and g2.completed):
        raise AlgebroidError("concat needs completed paths")
    if len(g.times) != len(g2.times):
        raise AlgebroidError("concat needs equal grid sizes "
                             f"({len(g.times)} vs {len(g2.times)})")
    if float(np.max(np.abs(g.target - g2.source))) > 1e-9:
        raise AlgebroidError(
            f"endpoint mismatch: target {_pt(g.target)} vs "
            f"source {_pt(g2.source)}")
    m = len(g.times) - 1
    times = np.concatenate([0.5 * g.times, 0.5 + 0.5 * g2.times[1:]])
    base = np.concatenate([g.base, g2.base[1:]], axis=0)
    # the shared sample at t=1/2 takes the second path's fiber value
    # (the t >= 1/2 branch of the piecewise formula)
    eta = np.concatenate([2.0 * g.eta[:-1], 2.0 * g2.eta], axis=0)
    junctions = ({m}
                 | {j for j in g.junctions}
                 | {m + j for j in g2.junctions})
    return APath(g.algebroid, times, base, eta, junctions=junctions)


def constant_apath(A, x0, grid_size=1000):
    """The unit element at x0: constant base, zero fiber."""
    times = np.linspace(0.0, 1.0, grid_size + 1)
    base = np.tile(np.asarray(x0, dtype=float), (grid_size + 1, 1))
    eta = np.zeros((grid_size + 1, A.r))
    return APath(A, times, base, eta)


class AHomotopy:
    """Sampled A-homotopy: grids t, s on [0,1], samples x, eta, beta.

    x has shape (Nt, Ns, n); eta and beta have shape (Nt, Ns, r). The
    structural requirements — beta vanishing at t = 0, 1 and base
    endpoints constant in s — are enforced at construction.
    """

    def __init__(self, algebroid, t_grid, s_grid, x, eta, beta, tol=1e-9):
        self.algebroid = algebroid
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.s_grid = np.asarray(s_grid, dtype=float)
        nt, ns = len(self.t_grid), len(self.s_grid)
        self.x = np.asarray(x, dtype=float).reshape(nt, ns, algebroid.n)
        self.eta = np.asarray(eta, dtype=float).reshape(nt, ns, algebroid.r)
        self.beta = np.asarray(beta, dtype=float).reshape(nt, ns, algebroid.r)
        bmax = max(float(np.max(np.abs(self.beta[0]))),
                   float(np.max(np.abs(self.beta[-1]))))
        if bmax > tol:
            raise AlgebroidError(
                f"beta must vanish at t = 0, 1 (max |beta| there: {bmax:.3e})")
        drift = max(float(np.ptp(self.x[0], axis=0).max()),
                    float(np.ptp(self.x[-1], axis=0).max()))
        if drift > tol:
            raise AlgebroidError(
                f"base endpoints must be constant in s (drift {drift:.3e})")

    @classmethod
    def from_functions(cls, algebroid, x_fn, eta_fn, beta_fn, nt=200, ns=200):
        """Sample callables (t, s) -> vector on an (nt+1) x (ns+1) grid."""
        t_grid = np.linspace(0.0, 1.0, nt + 1)
        s_grid = np.linspace(0.0, 1.0, ns + 1)
        x = np.array([[x_fn(t, s) for s in s_grid] for t in t_grid], float)
        eta = np.array([[eta_fn(t, s) for s in s_grid] for t in t_grid], float)
        beta = np.array([[beta_fn(t, s) for s in s_grid] for t in t_grid], float)
        return cls(algebroid, t_grid, s_grid, x, eta, beta)

    def write_csv(self, f):
        n, r = self.algebroid.n, self.algebroid.r
        cols = (["t", "s"] + [f"x{i+1}" for i in range(n)]
                + [f"eta{a+1}" for a in range(r)]
                + [f"beta{a+1}" for a in range(r)])
        f.write(",".join(cols) + "\n")
        for k, t in enumerate(self.t_grid):
            for l, s in enumerate(self.s_grid):
                row = ([t, s] + list(self.x[k, l]) + list(self.eta[k, l])
                       + list(self.beta[k, l]))
                f.write(",".join(repr(float(v)) for v in row) + "\n")

    def __repr__(self):
        return (f"AHomotopy({len(self.t_grid)}x{len(self.s_grid)} grid, "
                f"n={self.algebroid.n}, r={self.algebroid.r})")


def read_ahomotopy_csv(f, algebroid):
    """Inverse of AHomotopy.write_csv for a known algebroid."""
    n, r = algebroid.n, algebroid.r
    header = f.readline().strip().split(",")
    if len(header) != 2 + n + 2 * r or header[:2] != ["t", "s"]:
        raise AlgebroidError("AHomotopy CSV header mismatch")
    rows = []
    for line in f:
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append([float(v) for v in line.split(",")])
    rows = np.asarray(rows)
    t_grid = np.unique(rows[:, 0])
    s_grid = np.unique(rows[:, 1])
    nt, ns = len(t_grid), len(s_grid)
    if nt * ns != len(rows):
        raise AlgebroidError("AHomotopy CSV is not a full grid")
    data = rows[np.lexsort((rows[:, 1], rows[:, 0]))]
    x = data[:, 2:2 + n].reshape(nt, ns, n)
    eta = data[:, 2 + n:2 + n + r].reshape(nt, ns, r)
    beta = data[:, 2 + n + r:].reshape(nt, ns, r)
    return AHomotopy(algebroid, t_grid, s_grid, x, eta, beta)


def homotopy_residual(H):
    """(res_x, res_eta): sup-norm residuals of the two homotopy equations
    over the interior of the (t, s) grid, derivatives by central
    differences, rho and f evaluated symbolically."""
    A = H.algebroid
    ht = H.t_grid[1] - H.t_grid[0]
    hs = H.s_grid[1] - H.s_grid[0]
    dx_ds = (H.x[:, 2:] - H.x[:, :-2]) / (2.0 * hs)
    deta_ds = (H.eta[:, 2:] - H.eta[:, :-2]) / (2.0 * hs)
    dbeta_dt = (H.beta[2:] - H.beta[:-2]) / (2.0 * ht)
    res_x = 0.0
    res_eta = 0.0
    nt, ns = len(H.t_grid), len(H.s_grid)
    for k in range(1, nt - 1):
        for l in range(1, ns - 1):
            xkl = H.x[k, l]
            rho = A.anchor_matrix(xkl)
            f = A.bracket_tensor(xkl)
            beta = H.beta[k, l]
            r1 = dx_ds[k, l - 1] - rho @ beta
            r2 = (deta_ds[k, l - 1] - dbeta_dt[k - 1, l]
                  - f @ H.eta[k, l] @ beta)
            res_x = max(res_x, float(np.max(np.abs(r1))))
            res_eta = max(res_eta, float(np.max(np.abs(r2))))
    return res_x, res_eta


class MatrixPath:
    """Sampled path in a matrix group: times plus (N+1, m, m) matrices."""

    def __init__(self, times, matrices):
        self.times = np.asarray(times, dtype=float)
        self.matrices = np.asarray(matrices, dtype=float)

    @property
    def endpoint(self):
        return self.matrices[-1]

    def __repr__(self):
        m = self.matrices.shape[-1]
        return f"MatrixPath({len(self.times)} samples, {m}x{m})"


def develop(basis, g):
    """Develop an A-path over a point into the matrix group: solve
    gamma' = gamma . (eta^a(t) E_a), gamma(0) = I, by RK4 on g's grid.

    eta between grid points is linearly interpolated.
    """
    basis = [np.asarray(E, dtype=float) for E in basis]
    if len(basis) != g.algebroid.r:
        raise AlgebroidError(
            f"rank mismatch: {len(basis)} basis matrices for rank "
            f"{g.algebroid.r}")
    m = basis[0].shape[0]
    if any(E.shape != (m, m) for E in basis):
        raise AlgebroidError("basis matrices must share a square shape")
    times = g.times
    eta = g.eta

    def eta_at(t):
        w = (t - times[0]) / (times[-1] - times[0]) * (len(times) - 1)
        k = min(int(w), len(times) - 2)
        frac = w - k
        return (1.0 - frac) * eta[k] + frac * eta[k + 1]

    def omega(t):
        ev = eta_at(t)
        M = np.zeros((m, m))
        for a, E in enumerate(basis):
            M += ev[a] * E
        return M

    gam = np.eye(m)
    out = [gam]
    for k in range(len(times) - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = gam @ omega(t)
        k2 = (gam + 0.5 * h * k1) @ omega(t + 0.5 * h)
        k3 = (gam + 0.5 * h * k2) @ omega(t + 0.5 * h)
        k4 = (gam + h * k3) @ omega(t + h)
        gam = gam + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(gam)
    return MatrixPath(times, out)


def _matrix_path_derivative(gam, h):
    """4th-order finite-difference d/dt of a stacked matrix path."""
    if len(gam) < 5:
        raise AlgebroidError("log_derivative needs at least 5 samples")
    d = np.empty_like(gam)
    d[2:-2] = (gam[:-4] - 8.0 * gam[1:-3] + 8.0 * gam[3:-1] - gam[4:]) / (12.0 * h)
    d[0] = (-25.0 * gam[0] + 48.0 * gam[1] - 36.0 * gam[2]
            + 16.0 * gam[3] - 3.0 * gam[4]) / (12.0 * h)
    d[1] = (-3.0 * gam[0] - 10.0 * gam[1] + 18.0 * gam[2]
            - 6.0 * gam[3] + gam[4]) / (12.0 * h)
    d[-2] = (3.0 * gam[-1] + 10.0 * gam[-2] - 18.0 * gam[-3]
             + 6.0 * gam[-4] - gam[-5]) / (12.0 * h)
    d[-1] = (25.0 * gam[-1] - 48.0 * gam[-2] + 36.0 * gam[-3]
             - 16.0 * gam[-4] + 3.0 * gam[-5]) / (12.0 * h)
    return d


def log_derivative(gamma, basis, algebroid=None, span_tol=1e-6):
    """eta(t) = coordinates of gamma(t)^-1 gamma'(t) in the given basis.

    gamma' uses 4th-order stencils so that the component of the logarithmic
    derivative outside the Lie-algebra span stays at discretization noise;
    a span defect beyond span_tol raises. The result is an A-path over a
    point; `algebroid` chooses its carrier (default: abelian of matching
    rank — the output is frame-coordinate data, its bracket is not used).
    """
    gam = np.asarray(gamma.matrices, dtype=float)
    times = np.asarray(gamma.times, dtype=float)
    h = times[1] - times[0]
    m = gam.shape[-1]
    basis = [np.asarray(E, dtype=float) for E in basis]
    r = len(basis)
    B = np.stack([E.reshape(-1) for E in basis], axis=1)   # (m*m, r)
    B_pinv = np.linalg.pinv(B)
    dgam = _matrix_path_derivative(gam, h)
    eta = np.empty((len(times), r))
    worst = 0.0
    for k in range(len(times)):
        try:
            V = np.linalg.solve(gam[k], dgam[k])
        except np.linalg.LinAlgError:
            raise AlgebroidError(f"gamma(t_{k}) is singular") from None
        v = V.reshape(-1)
        eta[k] = B_pinv @ v
        defect = float(np.linalg.norm(v - B @ eta[k]))
        worst = max(worst, defect)
    if worst > span_tol:
        raise AlgebroidError(
            f"logarithmic derivative leaves the basis span "
            f"(defect {worst:.3e} > {span_tol:.1e})")
    if algebroid is None:
        algebroid = make_lie_algebra(np.zeros((r, r, r)))
    base = np.zeros((len(times), algebroid.n))
    return APath(algebroid, times, base, eta)


__all__ = [
    "APath", "AHomotopy", "MatrixPath", "integrate_apath",
    "admissibility_residual", "concat", "constant_apath",
    "homotopy_residual", "develop", "log_derivative",
    "read_apath_csv", "read_ahomotopy_csv",
]
