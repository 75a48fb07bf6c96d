"""Periodic-orbit search: Newton shooting on return maps, symmetric
planar shooting, natural-parameter continuation, Floquet analysis."""

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cr3bp import (effective_potential, hamiltonian, hamiltonian_gradient,
                    primaries, vector_field)
from .errors import (ConfigError, ConvergenceError, FoldDetected,
                     JacobianSingularError, NoCrossingError)
from .flows import FlowEvent, IntegratorConfig, integrate
from .sections import (SectionSpec, ellipsoid_page_point, ellipsoid_return,
                       page_coords, page_embed, page_frame, return_map_iter)

_COND_LIMIT = 1e12


@dataclass
class PeriodicOrbit:
    """A closed orbit found by shooting, with its search diagnostics."""
    representative: np.ndarray      # page state (6,) or full state
    period: float
    energy: float
    mu: float
    residual: float
    symmetry: str = "none"          # planar|spatial|vertical-collision|symmetric-x-axis|none
    k: int = 1
    floquet: Optional[np.ndarray] = None
    newton_history: tuple = ()
    command_line: Optional[str] = None

    def to_json(self):
        d = {
            "representative": list(map(float, self.representative)),
            "period": float(self.period),
            "energy": float(self.energy),
            "mu": float(self.mu),
            "residual": float(self.residual),
            "symmetry": self.symmetry,
            "k": self.k,
            "floquet": None if self.floquet is None else
                [[float(z.real), float(z.imag)] for z in self.floquet],
            "newton_history": list(map(float, self.newton_history)),
            "command_line": self.command_line,
        }
        return d


def _classify_spatial(traj):
    """planar / spatial / vertical-collision from the flight geometry."""
    planar_size = traj.min_over(lambda s: -(abs(s[2]) + abs(s[5])))
    planar_size = -planar_size  # max of |q3|+|p3|
    if planar_size < 1e-8:
        return "planar"
    horiz = traj.min_over(lambda s: -(s[0] ** 2 + s[1] ** 2
                                      + s[3] ** 2 + s[4] ** 2))
    if -horiz < 1e-10:
        return "vertical-collision"
    return "spatial"


def find_periodic_point(x0, k=1, mu=None, c=None, cfg=None, spec=None,
                        tol=1e-11, max_iter=50, fd_h=1e-6,
                        system="cr3bp", ab=None):
    """Damped Newton for a fixed point of the k-fold return map.

    G(u) = coords(f^k(embed(u))) - u in page-frame coordinates; central
    FD Jacobian, Armijo backtracking on the raw closure norm.  Raises
    JacobianSingularError when the shooting matrix is numerically rank
    deficient (degenerate root or a continuum of periodic points) and
    ConvergenceError after max_iter iterations.
    """
    if system == "ellipsoid":
        return _find_ellipsoid_periodic(x0, k, ab, tol=tol,
                                        max_iter=max_iter, fd_h=fd_h)
    if mu is None:
        raise ConfigError("mu is required for the CR3BP search")
    cfg = cfg or IntegratorConfig()
    spec = spec or SectionSpec()
    x = np.asarray(x0, dtype=float).copy()
    if c is None:
        c = hamiltonian(x, mu)
    history = []
    res = None
    for it in range(max_iter):
        fx, tau, samples = return_map_iter(x, k, mu, c=c, cfg=cfg, spec=spec)
        res = float(np.linalg.norm(fx - x))
        history.append(res)
        if res < tol:
            traj_sym = _classify_from_samples(x, k, mu, c, cfg, spec)
            return PeriodicOrbit(
                representative=x, period=tau, energy=c, mu=mu,
                residual=res, symmetry=traj_sym, k=k,
                newton_history=tuple(history))
        frame = page_frame(x, mu)
        g0 = page_coords(x, frame, fx)
        cols = []
        for i in range(4):
            du = np.zeros(4)
            du[i] = fd_h
            yp = page_embed(x, frame, du, mu, c, spec.theta)
            ym = page_embed(x, frame, -du, mu, c, spec.theta)
            fp, _, _ = return_map_iter(yp, k, mu, c=c, cfg=cfg, spec=spec)
            fm, _, _ = return_map_iter(ym, k, mu, c=c, cfg=cfg, spec=spec)
            gp = page_coords(x, frame, fp) - du
            gm = page_coords(x, frame, fm) + du
            cols.append((gp - gm) / (2.0 * fd_h))
        jac = np.column_stack(cols)
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise JacobianSingularError(
                f"shooting matrix condition {cond:.2e}; degenerate or "
                "non-isolated periodic points")
        du_full = np.linalg.solve(jac, -g0)
        # Armijo backtracking on the closure norm
        lam = 1.0
        for _ in range(12):
            x_try = page_embed(x, frame, lam * du_full, mu, c, spec.theta)
            fx_try, _, _ = return_map_iter(x_try, k, mu, c=c, cfg=cfg,
                                           spec=spec)
            res_try = float(np.linalg.norm(fx_try - x_try))
            if res_try < (1.0 - 1e-4 * lam) * res:
                x = x_try
                break
            lam *= 0.5
        else:
            raise ConvergenceError(
                f"Newton damping stalled at residual {res:.3e}")
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (residual {res:.3e})")


def _classify_from_samples(x, k, mu, c, cfg, spec):
    from .sections import return_map
    s, (lead, traj) = return_map(x, mu, c=c, cfg=cfg, spec=spec,
                                 return_traj=True)
    tag = _classify_spatial(traj)
    for _ in range(k - 1):
        s, (lead, traj) = return_map(s.fx, mu, c=c, cfg=cfg, spec=spec,
                                     return_traj=True)
        t2 = _classify_spatial(traj)
        if t2 != tag:
            tag = "spatial"
    return tag


def _find_ellipsoid_periodic(z0, k, ab, tol=1e-11, max_iter=50, fd_h=1e-6):
    if ab is None:
        raise ConfigError("ellipsoid search needs ab=(a, b)")
    a, b = ab
    z0 = np.asarray(z0, dtype=complex)

    def embed(u):
        r2sq = (1.0 - math.pi * (u @ u) / a) * b / math.pi
        if r2sq <= 0:
            raise ConvergenceError("iterate left the page disk")
        return np.array([complex(u[0], u[1]), complex(math.sqrt(r2sq), 0.0)])

    def pmap(u):
        z = embed(u)
        tau_total = 0.0
        for _ in range(k):
            z, tau, _ = ellipsoid_return(a, b, z)
            tau_total += tau
        return np.array([z[0].real, z[0].imag]), tau_total

    u = np.array([z0[0].real, z0[0].imag])
    history = []
    for it in range(max_iter):
        fu, tau = pmap(u)
        res = float(np.linalg.norm(fu - u))
        history.append(res)
        # the shooting matrix is checked even at convergence: on a
        # resonant page every point is periodic and the root degenerate
        cols = []
        for i in range(2):
            du = np.zeros(2)
            du[i] = fd_h
            gp = pmap(u + du)[0] - (u + du)
            gm = pmap(u - du)[0] - (u - du)
            cols.append((gp - gm) / (2.0 * fd_h))
        jac = np.column_stack(cols)
        cond = np.linalg.cond(jac)
        if (not np.isfinite(cond) or cond > 1e8
                or np.linalg.norm(jac) < 1e-6):
            raise JacobianSingularError(
                f"shooting matrix norm {np.linalg.norm(jac):.2e}, condition "
                f"{cond:.2e}; the whole page is {k}-periodic")
        if res < tol:
            return PeriodicOrbit(representative=embed(u), period=tau,
                                 energy=1.0, mu=float("nan"), residual=res,
                                 symmetry="none", k=k,
                                 newton_history=tuple(history))
        u = u + np.linalg.solve(jac, -(fu - u))
    raise ConvergenceError(f"no convergence after {max_iter} iterations")


def vertical_seed(mu, c):
    """Page state straight above the heavy primary at energy c.

    q = (mu, 0, z) with the equilibrium momentum (0, mu, 0) has
    H = U(q); solving U = c for z > 0 gives a seed for the vertical
    collision fixed point (exact at mu = 0).
    """
    from scipy.optimize import brentq

    def f(z):
        return effective_potential(np.array([mu, 0.0, z]), mu) - c

    if f(1e-8) > 0 or f(50.0) < 0:
        raise ConfigError(f"no vertical apex at c={c}")
    z = brentq(f, 1e-8, 50.0, xtol=1e-15)
    return np.array([mu, 0.0, z, 0.0, mu, 0.0])


# --- symmetric planar shooting ---


def _axis_momentum(q1, c, mu, branch):
    """p2 on the x-axis state (q1,0,0, 0,p2,0) at energy c.

    branch=+1 gives p2 = q1 + sigma, branch=-1 gives p2 = q1 - sigma,
    where sigma = sqrt(2 (c - U)).
    """
    u = effective_potential(np.array([q1, 0.0, 0.0]), mu)
    if c < u:
        raise ConfigError(f"q1={q1} outside the Hill region at c={c}")
    return q1 + branch * math.sqrt(2.0 * (c - u))


def _half_orbit_p1(q1, c, mu, branch, cfg):
    """p1 at the next x-axis crossing from a perpendicular start."""
    p2 = _axis_momentum(q1, c, mu, branch)
    x = np.array([q1, 0.0, 0.0, 0.0, p2, 0.0])
    ev = FlowEvent(lambda s: s[1], direction=0.0, terminal=True, name="xaxis")
    lead = integrate(x, mu, cfg, 1e-3, c=c)
    traj = integrate(lead.final_state(), mu, cfg, cfg.max_time, c=c,
                     events=[ev], t0=lead.t_end)
    hits = [h for h in traj.event_hits if h[0] == 0]
    if traj.stopped_by != 0 or not hits:
        raise NoCrossingError("no further x-axis crossing found")
    _, t_half, s_half = hits[-1]
    return s_half[3], t_half, s_half


def find_symmetric_planar_orbit(c, mu, q1_guess, branch=-1, cfg=None,
                                tol=1e-11, max_iter=50, fd_h=1e-7):
    """Planar orbit symmetric in the x-axis, by perpendicular shooting.

    Starts at (q1, 0, 0, 0, p2, 0) with p2 fixed by the energy (branch
    selects p2 = q1 +/- sqrt(2(c-U))), integrates to the next x-axis
    crossing, and Newton-drives the crossing p1 to zero in q1.  The full
    orbit is the half-orbit and its mirror; the label direct/retrograde
    comes from the sign of the average angular momentum p1 q2 - p2 q1.
    """
    cfg = cfg or IntegratorConfig()
    q1 = float(q1_guess)
    history = []
    for it in range(max_iter):
        p1, t_half, s_half = _half_orbit_p1(q1, c, mu, branch, cfg)
        history.append(abs(p1))
        if abs(p1) < tol:
            break
        dp = (_half_orbit_p1(q1 + fd_h, c, mu, branch, cfg)[0]
              - _half_orbit_p1(q1 - fd_h, c, mu, branch, cfg)[0]) / (2 * fd_h)
        if abs(dp) < 1e-14:
            raise JacobianSingularError("flat shooting function in q1")
        step = -p1 / dp
        lam = 1.0
        for _ in range(10):
            p1_try = _half_orbit_p1(q1 + lam * step, c, mu, branch, cfg)[0]
            if abs(p1_try) < abs(p1):
                q1 = q1 + lam * step
                break
            lam *= 0.5
        else:
            raise ConvergenceError(
                f"symmetric shooting stalled at |p1|={abs(p1):.3e}")
    else:
        raise ConvergenceError(
            f"symmetric shooting: no convergence (|p1|={abs(p1):.3e})")
    p2 = _axis_momentum(q1, c, mu, branch)
    x = np.array([q1, 0.0, 0.0, 0.0, p2, 0.0])
    period = 2.0 * t_half
    traj = integrate(x, mu, cfg, period, c=c)
    closure = float(np.linalg.norm(traj.final_state() - x))
    label = classify_rotation(traj)
    orbit = PeriodicOrbit(representative=x, period=period, energy=c, mu=mu,
                          residual=closure, symmetry="symmetric-x-axis", k=1,
                          newton_history=tuple(history))
    orbit.rotation = label
    return orbit


def classify_rotation(traj, mu=None, n_samples=200):
    """'retrograde' or 'direct' from the average of p1 q2 - p2 q1.

    The angular-momentum term is evaluated in the rotating chart
    centered on the primary the orbit encircles (the translation also
    shifts p2 by the primary's abscissa); retrograde orbits make it
    positive.  With the primary at the origin this is the plain
    p1 q2 - p2 q1 of the Hamiltonian.
    """
    if mu is None:
        mu = traj.mu
    ts = np.linspace(traj.t0, traj.t_end, n_samples)
    states = [traj.state(t) for t in ts]
    states = np.array([s for s in states if s is not None])
    e, m = primaries(mu)
    center = np.mean(states[:, :2], axis=0)
    prim = m if (np.linalg.norm(center - m[:2])
                 < np.linalg.norm(center - e[:2])) else e
    q1 = states[:, 0] - prim[0]
    q2 = states[:, 1]
    p1 = states[:, 3]
    p2 = states[:, 4] + prim[0]
    mean = float(np.mean(p1 * q2 - p2 * q1))
    return "retrograde" if mean > 0 else "direct"


# --- continuation ---


def continue_family(orbit, param, target, step, mu=None, c=None, cfg=None,
                    spec=None, min_step=1e-6, **newton_kw):
    """Natural-parameter continuation of a return-map fixed point.

    param is 'mu' or 'c'; the seed orbit's parameter moves toward target
    in increments of step, halving on corrector failure.  Raises
    FoldDetected when the step underflows min_step.  Returns the list of
    converged members (including the seed).
    """
    if param not in ("mu", "c"):
        raise ConfigError("param must be 'mu' or 'c'")
    if orbit.residual > 1e-9:
        raise ConfigError("seed orbit residual above 1e-9")
    cfg = cfg or IntegratorConfig()
    spec = spec or SectionSpec()
    cur_mu = orbit.mu
    cur_c = orbit.energy
    cur_x = np.asarray(orbit.representative, dtype=float)
    members = [orbit]
    cur_val = cur_mu if param == "mu" else cur_c
    direction = 1.0 if target >= cur_val else -1.0
    h = abs(step)
    while abs(cur_val - target) > 1e-14:
        h_try = min(h, abs(target - cur_val))
        while True:
            val_next = cur_val + direction * h_try
            mu_n = val_next if param == "mu" else cur_mu
            c_n = val_next if param == "c" else cur_c
            try:
                # re-seat the predictor on the new energy shell
                x_seed = page_embed(cur_x, page_frame(cur_x, mu_n),
                                    np.zeros(4), mu_n, c_n, spec.theta)
                member = find_periodic_point(x_seed, k=orbit.k, mu=mu_n,
                                             c=c_n, cfg=cfg, spec=spec,
                                             **newton_kw)
                break
            except (ConvergenceError, NoCrossingError):
                h_try *= 0.5
                if h_try < min_step:
                    raise FoldDetected(
                        f"continuation step underflow at {param}={cur_val}")
        cur_val = val_next
        cur_mu, cur_c = mu_n, c_n
        cur_x = np.asarray(member.representative, dtype=float)
        members.append(member)
    return members


# --- Floquet analysis ---


def flow_map(x, period, mu, cfg):
    # energy is recomputed from the state: the regularized-chart clock
    # is only correct on the energy level the state actually lives on
    traj = integrate(np.asarray(x, float), mu, cfg, period)
    return traj.final_state()


def floquet_multipliers(orbit, cfg=None, h=1e-7):
    """Eigenvalues of the FD monodromy of the full-period flow map.

    The raw 6x6 monodromy always carries a reciprocal-pair spectrum with
    (at least) a double unit eigenvalue along the orbit/energy
    directions.  Warns when the monodromy condition number exceeds 1e10.
    """
    if orbit.residual > 1e-9:
        raise ConfigError("orbit residual above 1e-9; refine first")
    cfg = cfg or IntegratorConfig()
    x = np.asarray(orbit.representative, dtype=float)
    mu, T = orbit.mu, orbit.period
    cols = []
    for i in range(6):
        dx = np.zeros(6)
        dx[i] = h
        fp = flow_map(x + dx, T, mu, cfg)
        fm = flow_map(x - dx, T, mu, cfg)
        cols.append((fp - fm) / (2.0 * h))
    M = np.column_stack(cols)
    cond = np.linalg.cond(M)
    if cond > 1e10:
        warnings.warn(f"ill-conditioned monodromy (cond {cond:.2e})",
                      RuntimeWarning)
    return np.linalg.eigvals(M)


def reciprocal_pair_residual(multipliers):
    """max over multipliers of min_j |lambda_i lambda_j - 1|."""
    ev = np.asarray(multipliers)
    worst = 0.0
    for lam in ev:
        worst = max(worst, min(abs(lam * other - 1.0) for other in ev))
    return float(worst)


def unit_multiplier_count(multipliers, tol=1e-6):
    return int(np.sum(np.abs(np.asarray(multipliers) - 1.0) < tol))
