"""Moser regularization onto T*S^3, Levi-Civita map, and Kepler-limit oracles.

Chart convention: x = -p, y = q with the regularized primary at the
chart origin.  Stereographic projection maps (x, y) to
(xi, eta) in T*S^n = {|xi| = 1, <xi, eta> = 0} subset of R^{n+1} x R^{n+1};
the collision locus is the north pole xi0 = 1 (momenta at infinity).

The intermediate Hamiltonian K = (H - c)|q| becomes |eta| f(xi, eta) - g
on the chart, and the regularized Hamiltonian Q = f^2 |eta|^2 / 2 is
smooth across the collision fiber; its flow on Q = g^2/2 reparametrizes
the H = c flow (dt/ds = g |q|).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .cr3bp import validate_mu
from .errors import (
    ConfigError,
    NorthPoleError,
    SecondaryCollisionError,
    ZeroVError,
)

NORTH_POLE_TOL = 1e-12


def stereo_to_chart(xi, eta):
    """Regularized (xi, eta) -> chart (x, y) = (-p, q).

    Works for any sphere dimension: inputs in R^{n+1}, outputs in R^n.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    s = 1.0 - xi[0]
    if abs(s) < NORTH_POLE_TOL:
        raise NorthPoleError("state on the collision fiber xi0 = 1")
    x = xi[1:] / s
    y = eta[0] * xi[1:] + s * eta[1:]
    return x, y


def chart_to_stereo(x, y):
    """Chart (x, y) -> regularized (xi, eta); total (defined for all inputs)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = float(x @ x)
    xi = np.empty(len(x) + 1)
    eta = np.empty_like(xi)
    xi[0] = (s - 1.0) / (s + 1.0)
    xi[1:] = 2.0 * x / (s + 1.0)
    eta[0] = float(x @ y)
    eta[1:] = 0.5 * (s + 1.0) * y - eta[0] * x
    return xi, eta


def constraint_residual(xi, eta):
    """max(| |xi|-1 |, |<xi,eta>|) -- health metric for T*S^n states."""
    return max(abs(np.linalg.norm(xi) - 1.0), abs(float(xi @ eta)))


def project_constraints(xi, eta):
    """Project onto T*S^n: normalize xi, remove the <xi,eta> component."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xi = xi / np.linalg.norm(xi)
    eta = eta - float(xi @ eta) * xi
    return xi, eta


# --- CR3BP f/b/M and the regularized Hamiltonian ---

_K_OFFSET = np.array([-1.0, 0.0, 0.0])  # chart-center minus other-primary


def _fbM(xi, eta, c, nu):
    """f, b, M of the CR3BP chart with regularized-primary mass nu.

    b carries the attraction of the other primary (mass 1-nu, at chart
    position (1,0,0)), M the magnetic pairing.  f is evaluated by its
    explicit formula; f = 1 + (1-xi0) b + M holds identically.
    """
    other = 1.0 - nu
    s = 1.0 - xi[0]
    w = xi[2] * eta[1] - xi[1] * eta[2]
    u = s * eta[1:] + eta[0] * xi[1:] + _K_OFFSET
    d = math.sqrt(float(u @ u))
    if d < 1e-12:
        raise SecondaryCollisionError(
            "regularized chart reached the other primary"
        )
    b = -(c + 0.5) - other / d
    M = s * w - xi[2] * other
    f = 1.0 + s * (-(c + 0.5) + w) - xi[2] * other - other * s / d
    return f, b, M


def moser_fbM(xi, eta, c, mu, primary="moon"):
    """(f, b, M) of the Moon (or relabeled Earth) chart at energy c."""
    validate_mu(mu)
    nu = float(mu) if primary == "moon" else 1.0 - float(mu)
    return _fbM(np.asarray(xi, float), np.asarray(eta, float), c, nu)


def regularized_hamiltonian(xi, eta, c, mu, primary="moon"):
    """Q = f^2 |eta|^2 / 2; Q = mu_reg^2 / 2 corresponds to H = c."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    f, _, _ = moser_fbM(xi, eta, c, mu, primary)
    return 0.5 * f * f * float(eta @ eta)


def _f_and_grad(xi, eta, c, nu):
    """f together with its analytic gradient in the ambient R^4 x R^4."""
    other = 1.0 - nu
    s = 1.0 - xi[0]
    w = xi[2] * eta[1] - xi[1] * eta[2]
    u = s * eta[1:] + eta[0] * xi[1:] + _K_OFFSET
    d2 = float(u @ u)
    d = math.sqrt(d2)
    if d < 1e-12:
        raise SecondaryCollisionError(
            "regularized chart reached the other primary"
        )
    d3 = d * d2
    f = 1.0 + s * (-(c + 0.5) + w) - xi[2] * other - other * s / d

    dfxi = np.zeros(4)
    dfeta = np.zeros(4)
    # angular part s*w
    dfxi[0] = (c + 0.5) - w
    dfxi[1] += -s * eta[2]
    dfxi[2] += s * eta[1]
    dfeta[1] += s * xi[2]
    dfeta[2] += -s * xi[1]
    # -xi2 * other
    dfxi[2] += -other
    # T = -other * s / d
    coef = other * s / d3
    dfxi[0] += other / d - coef * float(u @ eta[1:])
    dfxi[1:] += coef * eta[0] * u
    dfeta[0] += coef * float(u @ xi[1:])
    dfeta[1:] += coef * s * u
    return f, dfxi, dfeta


def regularized_gradient(xi, eta, c, mu, primary="moon"):
    """Ambient gradient (dQ/dxi, dQ/deta) of Q = f^2 |eta|^2 / 2."""
    validate_mu(mu)
    nu = float(mu) if primary == "moon" else 1.0 - float(mu)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    f, dfxi, dfeta = _f_and_grad(xi, eta, c, nu)
    nsq = float(eta @ eta)
    qxi = f * nsq * dfxi
    qeta = f * nsq * dfeta + f * f * eta
    return qxi, qeta


def regularized_vector_field(xi, eta, c, mu, primary="moon"):
    """Hamiltonian field of Q constrained to T*S^3 (Dirac projection).

    The ambient field (dQ/deta, -dQ/dxi) is corrected with the multipliers
    of the constraints phi1 = (|xi|^2-1)/2, phi2 = <xi,eta> so that both
    are conserved; Q itself is conserved exactly by the corrected field.
    """
    qxi, qeta = regularized_gradient(xi, eta, c, mu, primary)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lam1 = -float(qeta @ xi)
    lam2 = float(qxi @ xi) - float(qeta @ eta)
    xidot = qeta + lam1 * xi
    etadot = -qxi - lam1 * eta + lam2 * xi
    return xidot, etadot


class MoserChart:
    """Conversions between rotating-frame states and a primary's Moser chart.

    primary='moon' regularizes the light primary (g = mu).  primary='earth'
    regularizes the heavy one via the relabeling nu = 1 - mu applied to the
    frame rotated by pi about the q3 axis (which maps the CR3BP with mass
    ratio mu to the one with mass ratio 1 - mu, primaries swapped).
    """

    def __init__(self, mu, primary="moon"):
        validate_mu(mu)
        if primary not in ("moon", "earth"):
            raise ConfigError(f"unknown primary {primary!r}")
        self.mu = float(mu)
        self.primary = primary
        self.nu = float(mu) if primary == "moon" else 1.0 - float(mu)
        if self.nu == 0.0:
            raise ConfigError(
                f"primary {primary!r} is massless at mu={mu}; no chart"
            )
        self._center = np.array([self.nu - 1.0, 0.0, 0.0])
        self._rotate = primary == "earth"

    @property
    def g(self):
        return self.nu

    def _to_relabeled(self, vec3):
        if self._rotate:
            return np.array([-vec3[0], -vec3[1], vec3[2]])
        return np.asarray(vec3, dtype=float)

    def from_physical(self, state):
        """Rotating-frame (q, p) -> (xi, eta)."""
        q = self._to_relabeled(state[:3])
        p = self._to_relabeled(state[3:6])
        return chart_to_stereo(-p, q - self._center)

    def to_physical(self, xi, eta):
        """(xi, eta) -> rotating-frame (q, p); north pole has no image."""
        x, y = stereo_to_chart(xi, eta)
        q = self._to_relabeled(y + self._center)
        p = self._to_relabeled(-x)
        return np.concatenate([q, p])

    def physical_radius(self, xi, eta):
        """Distance to the regularized primary, |q_loc| = (1 - xi0)|eta|."""
        return (1.0 - xi[0]) * math.sqrt(float(np.asarray(eta) @ np.asarray(eta)))

    def fbM(self, xi, eta, c):
        return _fbM(np.asarray(xi, float), np.asarray(eta, float), c, self.nu)

    def Q(self, xi, eta, c):
        f, _, _ = self.fbM(xi, eta, c)
        return 0.5 * f * f * float(np.asarray(eta) @ np.asarray(eta))

    def q_level(self):
        """Value of Q corresponding to H = c: g^2 / 2."""
        return 0.5 * self.nu ** 2

    def field(self, xi, eta, c):
        return regularized_vector_field(xi, eta, c, self.mu, self.primary)

    def time_factor(self, xi, eta):
        """dt_physical/ds along the Q-flow on its physical level: g |q_loc|."""
        return self.nu * self.physical_radius(xi, eta)


# --- Levi-Civita ---


def levi_civita(u, v):
    """Levi-Civita map (u, v) -> (p, q) = (u / conj(v), 2 v^2).

    u, v are complex numbers; the map is a degree-2 cover
    (L(-u,-v) = L(u,v)) off v = 0.
    """
    v = complex(v)
    if abs(v) < 1e-300:
        raise ZeroVError("Levi-Civita chart requires v != 0")
    u = complex(u)
    return u / v.conjugate(), 2.0 * v * v


def lc_hamiltonian(u, v):
    """Shifted, regularized planar Kepler Hamiltonian (|u|^2 + |v|^2 - 1)/2."""
    return 0.5 * (abs(u) ** 2 + abs(v) ** 2 - 1.0)


def lc_vector_field(z):
    """Flow of the LC Hamiltonian w.r.t. the pulled-back form 4 Re(du^ x dv).

    z = (u1, u2, v1, v2) real; udot = -v/4, vdot = u/4: two harmonic
    oscillators of common angular rate 1/4.
    """
    u1, u2, v1, v2 = z
    return np.array([-v1 / 4.0, -v2 / 4.0, u1 / 4.0, u2 / 4.0])


def kepler_energy(p, q):
    """Planar Kepler Hamiltonian |p|^2/2 - 1/|q| (complex p, q)."""
    return 0.5 * abs(p) ** 2 - 1.0 / abs(q)


# --- Kepler oracles ---


def kepler_chart_hamiltonian(x, y):
    """Moser-regularized Kepler Hamiltonian on the chart: ((|x|^2+1)|y|/2)^2 / 2."""
    s = float(np.asarray(x) @ np.asarray(x))
    ny = math.sqrt(float(np.asarray(y) @ np.asarray(y)))
    g = 0.5 * (s + 1.0) * ny
    return 0.5 * g * g


def _kepler_chart_field(t, z):
    x, y = z[:2], z[2:]
    s = float(x @ x)
    ny = math.sqrt(float(y @ y))
    g = 0.5 * (s + 1.0) * ny
    dkdy = g * 0.5 * (s + 1.0) * y / ny
    dkdx = g * ny * x
    return np.concatenate([dkdy, -dkdx])


@dataclass(frozen=True)
class KeplerOracleReport:
    k_flow_planarity: float      # worst third singular value over orbits
    lc_period_spread: float      # max - min measured period
    lc_period_mean: float
    circular_max_xi0: float      # |xi0| along the circular-orbit image
    passed: bool


def kepler_oracles(seed=0, n_orbits=10, rtol=1e-12, atol=1e-12):
    """Closed-form checks of the two Kepler regularizations.

    (a) The flow of the regularized Kepler Hamiltonian in the planar
        Moser chart maps to great circles on S^2 (the xi samples of each
        orbit span only a 2-plane through the origin).
    (b) All orbits of the Levi-Civita Hamiltonian on its zero level are
        periodic with one common period (harmonic oscillators).
    (c) The Kepler circular orbit at energy -1/2 maps to the equator.
    """
    rng = np.random.default_rng(seed)

    # (a) great circles
    worst_sv = 0.0
    for _ in range(n_orbits):
        x = rng.uniform(-1.5, 1.5, size=2)
        y = rng.uniform(-1.5, 1.5, size=2)
        if np.linalg.norm(y) < 0.2:
            y += 0.5
        sol = solve_ivp(_kepler_chart_field, (0.0, 6.0),
                        np.concatenate([x, y]), method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
        ts = np.linspace(0.0, 6.0, 400)
        pts = np.empty((len(ts), 3))
        for i, t in enumerate(ts):
            z = sol.sol(t)
            xi, _ = chart_to_stereo(z[:2], z[2:])
            pts[i] = xi
        sv = np.linalg.svd(pts, compute_uv=False)
        worst_sv = max(worst_sv, sv[2])

    # (b) common LC period (exact value 8*pi) via event-located returns
    periods = []
    for _ in range(n_orbits):
        z0 = rng.normal(size=4)
        z0 /= np.linalg.norm(z0)  # Q = 0 level is the unit sphere
        w0 = np.array([-z0[2], -z0[3], z0[0], z0[1]])

        def phase(t, z, w0=w0):
            return float(z @ w0)

        phase.terminal = True
        phase.direction = 1.0
        # burn-in leg so the event does not fire on the initial zero
        lead = solve_ivp(lambda t, z: lc_vector_field(z), (0.0, 1.0), z0,
                         method="DOP853", rtol=rtol, atol=atol)
        sol = solve_ivp(lambda t, z: lc_vector_field(z), (1.0, 40.0),
                        lead.y[:, -1],
                        method="DOP853", rtol=rtol, atol=atol, events=phase)
        if not sol.t_events[0].size:
            periods.append(math.nan)
        else:
            periods.append(float(sol.t_events[0][0]))
    periods = np.asarray(periods)
    spread = float(np.max(periods) - np.min(periods))

    # (c) circular orbit at Kepler energy -1/2 -> equatorial great circle
    ts = np.linspace(0.0, 2.0 * math.pi, 200)
    max_xi0 = 0.0
    for t in ts:
        q = np.array([math.cos(t), math.sin(t)])
        p = np.array([-math.sin(t), math.cos(t)])
        xi, eta = chart_to_stereo(-p, q)
        max_xi0 = max(max_xi0, abs(xi[0]))

    passed = worst_sv < 1e-8 and spread < 1e-8 and max_xi0 < 1e-10
    return KeplerOracleReport(
        k_flow_planarity=worst_sv,
        lc_period_spread=spread,
        lc_period_mean=float(np.mean(periods)),
        circular_max_xi0=max_xi0,
        passed=passed,
    )
