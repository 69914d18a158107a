"""Lie algebroid comorphisms: section pullback, composition, anchor
compatibility, completeness probing, and path/homotopy lifting.

A comorphism (phi, Phi) from algebroid A over X to algebroid B over Y is
stored as the core map phi: X -> Y and a fiber matrix M(x) of shape
(rank A) x (rank B), all expression-valued; Phi(x, xi) = M(x) xi takes a
B-fiber vector over phi(x) to an A-fiber vector over x. The defining
anchor condition Dphi . rho_A . M = rho_B o phi is measured, not assumed.

Lifting integrates x' = rho_A(x) M(x) xi(t) with the fiber data xi of the
path to lift interpolated between its samples (cubic by default); blowup
or domain exit of that flow is the numerical witness that the lift fails
to exist over the full interval.
"""

import numpy as np
from scipy.interpolate import CubicSpline

from . import expr as ex
from .algebroid import AlgebroidError, SectionTD
from .apath import APath, AHomotopy, homotopy_residual
from .numkernel import VectorFieldTD, flow


class LiftError(Exception):
    pass


class Comorphism:
    """Comorphism between algebroids, expression-backed.

    phi: list of target-base-dim expressions over source coordinates.
    M:   rank_A x rank_B nested list of expressions over source coords.
    """

    def __init__(self, source, target, phi, M):
        self.source = source
        self.target = target
        if len(phi) != target.n:
            raise AlgebroidError(
                f"phi needs {target.n} components, got {len(phi)}")
        self.phi = [_as_expr(e) for e in phi]
        if len(M) != source.r or any(len(row) != target.r for row in M):
            raise AlgebroidError(
                f"M must be {source.r} x {target.r}")
        self.M = [[_as_expr(e) for e in row] for row in M]
        for e in self.phi + [e for row in self.M for e in row]:
            extra = e.variables() - set(source.coords)
            if extra:
                raise AlgebroidError(
                    f"comorphism expression uses unknown variables "
                    f"{sorted(extra)}")
        self._phi_fn = ex.compile_exprs(self.phi, source.coords)
        self._M_fn = ex.compile_exprs(
            [e for row in self.M for e in row], source.coords)
        self._dphi_fn = None

    def phi_at(self, x):
        return self._phi_fn(*x)

    def M_at(self, x):
        flat = self._M_fn(*x)
        return np.asarray(flat, dtype=float).reshape(self.source.r,
                                                     self.target.r)

    def dphi_at(self, x):
        """Jacobian Dphi(x), (target.n x source.n), symbolic partials."""
        if self._dphi_fn is None:
            flat = [p.d(v) for p in self.phi for v in self.source.coords]
            self._dphi_fn = ex.compile_exprs(flat, self.source.coords)
        flat = self._dphi_fn(*x)
        return np.asarray(flat, dtype=float).reshape(self.target.n,
                                                     self.source.n)

    def spot_check(self, samples):
        """Verify phi maps sample points of dom(A) into dom(B)."""
        for x in samples:
            if not self.source.in_domain(x):
                raise ex.DomainError(
                    f"sample {_pt(x)} outside the source domain")
            y = self.phi_at(x)
            if not self.target.in_domain(y):
                raise ex.DomainError(
                    f"phi({_pt(x)}) = {_pt(y)} outside the target domain")

    @classmethod
    def from_dict(cls, d, lookup):
        """Build from JSON {"source": ref, "target": ref, "phi": [...],
        "M": [[...]]}; `lookup` resolves algebroid references to objects."""
        source = lookup(d["source"])
        target = lookup(d["target"])
        phi = [ex.parse(str(s), source.coords) for s in d["phi"]]
        M = [[ex.parse(str(s), source.coords) for s in row]
             for row in d["M"]]
        return cls(source, target, phi, M)

    def to_dict(self, source_ref, target_ref):
        return {
            "source": source_ref,
            "target": target_ref,
            "phi": [str(e) for e in self.phi],
            "M": [[str(e) for e in row] for row in self.M],
        }

    def __repr__(self):
        return (f"Comorphism({self.source.n}d/r{self.source.r} -> "
                f"{self.target.n}d/r{self.target.r})")


def _as_expr(e):
    if isinstance(e, ex.Expr):
        return e
    if isinstance(e, (int, float)):
        return ex.Const(e)
    raise AlgebroidError(f"expected Expr or number, got {type(e).__name__}")


def _pt(x):
    """Point formatted for error messages (plain floats, not numpy reprs)."""
    return tuple(float(v) for v in np.asarray(x, dtype=float).ravel())


def identity_comorphism(A):
    """The identity comorphism (id, id) on A."""
    phi = [ex.Var(v) for v in A.coords]
    M = [[ex.Const(1.0 if a == b else 0.0) for b in range(A.r)]
         for a in range(A.r)]
    return Comorphism(A, A, phi, M)


def anchor_compat_residual(c, samples):
    """max over samples of |Dphi(x) rho_A(x) M(x) - rho_B(phi(x))|."""
    res = 0.0
    for x in samples:
        if not c.source.in_domain(x):
            raise ex.DomainError(f"sample {_pt(x)} outside the source domain")
        y = c.phi_at(x)
        if not c.target.in_domain(y):
            raise ex.DomainError(
                f"phi({_pt(x)}) = {_pt(y)} outside the target domain")
        lhs = c.dphi_at(x) @ c.source.anchor_matrix(x) @ c.M_at(x)
        rhs = c.target.anchor_matrix(y)
        res = max(res, float(np.max(np.abs(lhs - rhs))))
    return res


def pullback_section(c, s):
    """Phi† s: the section (t, x) -> M(x) s(t, phi(x)) of the source,
    built symbolically so its derivatives stay available."""
    if s.algebroid is not c.target:
        raise AlgebroidError("section must live on the comorphism's target")
    mapping = {v: c.phi[j] for j, v in enumerate(c.target.coords)}
    s_at_phi = [ex.substitute(e, mapping) for e in s.exprs]
    comps = []
    for a in range(c.source.r):
        acc = ex.Const(0.0)
        for b in range(c.target.r):
            acc = ex.add(acc, ex.mul(c.M[a][b], s_at_phi[b]))
        comps.append(acc)
    return SectionTD(c.source, comps)


def compose(c1, c2):
    """Composite comorphism A -> C of c1: A -> B and c2: B -> C:
    core phi2 o phi1, fiber M1(x) . M2(phi1(x)), all symbolic."""
    if c1.target is not c2.source:
        if c1.target.n != c2.source.n or c1.target.r != c2.source.r:
            raise AlgebroidError(
                "compose: c1's target does not chain with c2's source")
    mapping = {v: c1.phi[j] for j, v in enumerate(c2.source.coords)}
    phi = [ex.substitute(p, mapping) for p in c2.phi]
    M2_sub = [[ex.substitute(e, mapping) for e in row] for row in c2.M]
    M = []
    for a in range(c1.source.r):
        row = []
        for cc in range(c2.target.r):
            acc = ex.Const(0.0)
            for b in range(c1.target.r):
                acc = ex.add(acc, ex.mul(c1.M[a][b], M2_sub[b][cc]))
            row.append(acc)
        M.append(row)
    return Comorphism(c1.source, c2.target, phi, M)


class ProbeVerdict:
    """Outcome of a completeness probe. Only `escaped` is conclusive;
    a clean run is bounded by the horizon and bound it was run with."""

    def __init__(self, escaped, horizon, bound, witness=None):
        self.escaped = escaped
        self.horizon = horizon
        self.bound = bound
        self.witness = witness    # (seed, status, t_event) when escaped

    def __str__(self):
        if not self.escaped:
            return (f"no escape detected (T={self.horizon:g}, "
                    f"bound={self.bound:g})")
        seed, status, t_event = self.witness
        return (f"incomplete witness: {status} at t*={t_event!r} "
                f"from seed {_pt(seed)}")

    def to_json(self):
        out = {"verdict": str(self), "escaped": self.escaped,
               "horizon": self.horizon, "bound": self.bound}
        if self.witness is not None:
            seed, status, t_event = self.witness
            out["witness"] = {"seed": list(seed), "status": status,
                              "t_star": t_event}
        return out


def completeness_probe(c, s, horizon, bound, seeds):
    """Flow rho_A . Phi† s from every seed over [0, horizon].

    Returns the first escape witness found, or the (inconclusive)
    no-escape verdict. Seeds outside the source domain are an error.
    """
    pulled = pullback_section(c, s)
    A = c.source
    n, r = A.n, A.r
    anchor_fn = A._anchor_fn

    def fn(t, x):
        rho = anchor_fn(*x)
        sv = pulled(t, x)
        return [sum(rho[i * r + a] * sv[a] for a in range(r))
                for i in range(n)]

    vf = VectorFieldTD(n, fn, domain=A.in_domain)
    for seed in seeds:
        if not A.in_domain(seed):
            raise ex.DomainError(f"seed {_pt(seed)} outside the source domain")
        traj = flow(vf, seed, (0.0, horizon), step=1e-3, bound=bound)
        if not traj.completed:
            return ProbeVerdict(True, horizon, bound,
                                witness=(list(seed), traj.status,
                                         traj.t_event))
    return ProbeVerdict(False, horizon, bound)


class LiftedAPath(APath):
    """APath produced by lift_path, carrying the phi-projection error
    max_k |phi(x_k) - y_k| over the integrated prefix."""

    def __init__(self, *args, phi_projection_error=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.phi_projection_error = phi_projection_error


def _fiber_table(g, interp, refine):
    """Tabulate g's fiber data at all RK4 stage times (half-step grid)."""
    m = (len(g.times) - 1) * refine
    stage_t = np.linspace(g.times[0], g.times[-1], 2 * m + 1)
    if interp == "cubic":
        table = CubicSpline(g.times, g.eta, axis=0)(stage_t)
    elif interp == "linear":
        table = np.stack([np.interp(stage_t, g.times, g.eta[:, b])
                          for b in range(g.eta.shape[1])], axis=1)
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    return m, [list(row) for row in table]


def _lift_flow(c, g, x0, interp="cubic", refine=1, bound=1e8):
    """Integrate x' = rho_A(x) M(x) xi(t) over g's (refined) grid."""
    A = c.source
    n, rA, rB = A.n, A.r, c.target.r
    m, table = _fiber_table(g, interp, refine)
    anchor_fn = A._anchor_fn
    M_fn = c._M_fn
    t0, t1 = g.times[0], g.times[-1]
    scale = 2.0 * m / (t1 - t0)

    def fn(t, x):
        xi = table[int(round((t - t0) * scale))]
        rho = anchor_fn(*x)
        Mf = M_fn(*x)
        Mxi = [sum(Mf[a * rB + b] * xi[b] for b in range(rB))
               for a in range(rA)]
        return [sum(rho[i * rA + a] * Mxi[a] for a in range(rA))
                for i in range(n)]

    vf = VectorFieldTD(n, fn, domain=A.in_domain)
    return flow(vf, x0, (t0, t1), step=(t1 - t0) / m, bound=bound)


def lift_path(c, g, x0, interp="cubic", bound=1e8):
    """Lift the B-path g through x0 to an A-path projecting onto it.

    The returned path carries status blowup/domain_exit with partial data
    when the horizontal flow escapes (the numerical witness that the lift
    does not exist globally), and its phi_projection_error reports
    max_k |phi(x_k) - y_k| over the integrated prefix.
    """
    y0 = np.asarray(c.phi_at(x0), dtype=float)
    if float(np.max(np.abs(y0 - g.source))) > 1e-6:
        raise LiftError(
            f"phi(x0) = {_pt(y0)} does not match the path source "
            f"{_pt(g.source)}")
    traj = _lift_flow(c, g, x0, interp=interp, bound=bound)
    eta = [list(c.M_at(x) @ g.eta[k]) for k, x in enumerate(traj.points)]
    proj = 0.0
    for k, x in enumerate(traj.points):
        d = np.asarray(c.phi_at(x)) - g.base[k]
        proj = max(proj, float(np.max(np.abs(d))))
    return LiftedAPath(c.source, traj.times, traj.points, eta,
                       traj.status, traj.t_event,
                       phi_projection_error=proj)


class LiftedAHomotopy(AHomotopy):
    """AHomotopy produced by lift_homotopy, carrying its residuals and
    the endpoint spread of the slice lifts across s."""

    def __init__(self, *args, residuals=None, endpoint_spread=None,
                 **kwargs):
        super().__init__(*args, **kwargs)
        self.residuals = residuals
        self.endpoint_spread = endpoint_spread


def lift_homotopy(c, H, x0, interp="cubic", bound=1e8):
    """Lift a B-homotopy slice by slice from the common start point x0.

    beta lifts as beta_A(t, s) = M(x(t, s)) beta_B(t, s). A failing slice
    raises LiftError naming the failing s. The lifted homotopy's residuals
    and endpoint spread across s are attached to the result.
    """
    B = c.target
    nt, ns = len(H.t_grid), len(H.s_grid)
    xs = np.empty((nt, ns, c.source.n))
    etas = np.empty((nt, ns, c.source.r))
    betas = np.empty((nt, ns, c.source.r))
    for l in range(ns):
        slice_path = APath(B, H.t_grid, H.x[:, l], H.eta[:, l])
        lifted = lift_path(c, slice_path, x0, interp=interp, bound=bound)
        if not lifted.completed:
            raise LiftError(
                f"slice s={H.s_grid[l]!r} failed to lift: "
                f"{lifted.status_str()}")
        xs[:, l] = lifted.base
        etas[:, l] = lifted.eta
        for k in range(nt):
            betas[k, l] = c.M_at(xs[k, l]) @ H.beta[k, l]
    spread = float(np.max(np.ptp(xs[-1], axis=0)))
    out = LiftedAHomotopy(c.source, H.t_grid, H.s_grid, xs, etas, betas,
                          tol=max(1e-9, 10.0 * spread),
                          endpoint_spread=spread)
    out.residuals = homotopy_residual(out)
    return out


class UniquenessReport:
    """Endpoint (or exit-time) agreement of lifts under different
    interpolation schemes and step refinements."""

    def __init__(self, runs, endpoint_spread, exit_spread):
        self.runs = runs
        self.endpoint_spread = endpoint_spread
        self.exit_spread = exit_spread

    def __repr__(self):
        return (f"UniquenessReport(endpoint_spread={self.endpoint_spread}, "
                f"exit_spread={self.exit_spread})")


def lift_uniqueness_check(c, g, x0, bound=1e8):
    """Lift g through x0 with cubic and linear fiber interpolation at the
    path's grid and at a 2x refined grid; report the max pairwise endpoint
    distance (completed case) or exit-time spread (escaping case)."""
    runs = []
    for interp in ("cubic", "linear"):
        for refine in (1, 2):
            traj = _lift_flow(c, g, x0, interp=interp, refine=refine,
                              bound=bound)
            runs.append({
                "interp": interp, "refine": refine,
                "status": traj.status, "t_event": traj.t_event,
                "endpoint": list(traj.endpoint),
            })
    statuses = {r["status"] for r in runs}
    endpoint_spread = None
    exit_spread = None
    if statuses == {"completed"}:
        pts = [np.asarray(r["endpoint"]) for r in runs]
        endpoint_spread = max(
            float(np.linalg.norm(p - q)) for p in pts for q in pts)
    elif "completed" not in statuses:
        ts = [r["t_event"] for r in runs]
        exit_spread = max(ts) - min(ts)
    return UniquenessReport(runs, endpoint_spread, exit_spread)


__all__ = [
    "Comorphism", "LiftError", "ProbeVerdict", "UniquenessReport",
    "LiftedAPath", "LiftedAHomotopy", "identity_comorphism",
    "anchor_compat_residual", "pullback_section", "compose",
    "completeness_probe", "lift_path", "lift_homotopy",
    "lift_uniqueness_check",
]
