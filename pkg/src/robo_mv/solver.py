"""Equilibrium allocation by backward induction over a reduced state grid.

The per-period objective E[r] - (gamma_n/2) Var[r] is time-inconsistent, so the
"optimum" is the subgame-perfect policy of the sequential game in which each
time-n decision maker takes all later decisions as fixed. That policy admits a
backward recursion in terms of two tables: a_n(d) and b_n(d), the first and
second conditional moments of the compounded return of one dollar invested
from n to the horizon, as functions of a reduced state

    d = (xi, prev_window_sum, cur_window_sum, regime),

where xi is the risk aversion communicated at the last client interaction and
the window sums hold demeaned market returns (the completed window before the
last interaction, and the partial window since). Together with the time index
these four coordinates are a sufficient statistic for the advisor's model of
client risk aversion and its law of motion.

Two kinds of time step alternate:

* plain steps (n+1 not an interaction time): xi and prev_window_sum are
  frozen; cur_window_sum picks up the next demeaned return;
* interaction steps (n+1 = k*phi): the window completes, the client
  communicates a new xi, cur resets to zero. The new xi equals the old one
  times a deterministic trend/regime adjustment, times the exponential of the
  phi-fold sum of idiosyncratic jump shocks, times the ratio of behavioral
  bias factors exp(-beta w/phi)/exp(-beta p/phi) of the new and old windows.

Expectations over the Gaussian return use Gauss-Hermite quadrature; the
phi-fold jump-shock sum is integrated exactly as a binomial mixture of
Gaussians (J jumps with probability C(phi,J) p^J (1-p)^(phi-J), conditionally
N(-J sigma_eps^2/2, J sigma_eps^2)). Off-grid evaluations use multilinear
interpolation with clamping at the grid boundary; clamped quadrature mass is
counted and reported.

The reduced state can only carry the advisor's gamma if the business-cycle
factor at the anchor time, gamma_bar_{tau_n}(Y_{tau_n}), is recoverable from
(n, current state). That holds when gamma_bar is constant across regimes
(any phi), or when phi = 1 (the anchor regime is the current one). The
remaining combination -- regime-varying gamma_bar with phi > 1 -- is rejected
at solve time.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import (
    ConfigError,
    DegenerateVariance,
    GridExhausted,
    NumericalError,
)
from .market import MarketParams, market_from_dict, validate
from .risk_profile import RiskProfileParams, profile_from_dict

# Hard sanity cap on clamped xi quadrature mass during a solve. Edge nodes of
# any bounded grid clamp a little by construction; a fraction this large means
# the grid simply does not contain the dynamics.
_SOLVE_CLAMP_CAP = 0.25


# -- reduced state and grid ----------------------------------------------------


@dataclass(frozen=True)
class ReducedState:
    """One point of the reduced state space (time index carried externally)."""

    xi: float
    prev_window_sum: float = 0.0
    cur_window_sum: float = 0.0
    regime: int = 0

    def __post_init__(self):
        if not self.xi > 0:
            raise ConfigError(f"xi must be > 0, got {self.xi}")
        if self.regime < 0:
            raise ConfigError(f"regime must be a valid index, got {self.regime}")


@dataclass(frozen=True)
class GridSpec:
    """Discretization request; concrete axes are derived from the parameters.

    xi nodes are log-spaced over [xi_lo, xi_hi] (defaults: gamma0/8 to
    8*gamma0). Each window-sum axis is uniform over +/- zsum_span_sd per-step
    return SDs times sqrt(phi). Axes that cannot matter are collapsed to a
    single node: both window axes when beta = 0, the current-window axis when
    phi = 1.
    """

    xi_count: int = 41
    xi_lo: float | None = None
    xi_hi: float | None = None
    zsum_count: int = 21
    zsum_span_sd: float = 4.0
    quad_points: int = 16
    max_clamp_fraction: float = 0.005

    def __post_init__(self):
        if self.xi_count < 2:
            raise ConfigError(f"xi_count must be >= 2, got {self.xi_count}")
        if self.zsum_count < 2:
            raise ConfigError(f"zsum_count must be >= 2, got {self.zsum_count}")
        if self.quad_points < 2:
            raise ConfigError(f"quad_points must be >= 2, got {self.quad_points}")
        if self.zsum_span_sd <= 0:
            raise ConfigError("zsum_span_sd must be > 0")
        if not 0 < self.max_clamp_fraction < 1:
            raise ConfigError("max_clamp_fraction must lie in (0, 1)")
        if (self.xi_lo is None) != (self.xi_hi is None):
            raise ConfigError("set both of xi_lo/xi_hi or neither")
        if self.xi_lo is not None and not 0 < self.xi_lo < self.xi_hi:
            raise ConfigError("need 0 < xi_lo < xi_hi")


class Grid:
    """Materialized axes of the reduced-state discretization."""

    def __init__(
        self,
        xi: np.ndarray,
        prev: np.ndarray,
        cur: np.ndarray,
        quad_points: int,
        num_states: int,
        max_clamp_fraction: float = 0.005,
    ):
        self.xi = np.asarray(xi, dtype=float)
        self.prev = np.asarray(prev, dtype=float)
        self.cur = np.asarray(cur, dtype=float)
        self.quad_points = int(quad_points)
        self.num_states = int(num_states)
        self.max_clamp_fraction = float(max_clamp_fraction)
        for name, nodes in (("xi", self.xi), ("prev", self.prev), ("cur", self.cur)):
            if len(nodes) > 1 and np.any(np.diff(nodes) <= 0):
                raise ConfigError(f"{name} grid must be strictly increasing")
        if np.any(self.xi <= 0):
            raise ConfigError("xi grid must be strictly positive")
        self.logxi = np.log(self.xi)
        # Uniform spacing (in log space for xi) is assumed by the locators.
        for name, nodes in (("logxi", self.logxi), ("prev", self.prev), ("cur", self.cur)):
            if len(nodes) > 2:
                steps = np.diff(nodes)
                if np.max(np.abs(steps - steps[0])) > 1e-9 * max(abs(steps[0]), 1e-300):
                    raise ConfigError(f"{name} grid must be uniformly spaced")

    @classmethod
    def build(cls, spec: GridSpec, market: MarketParams, profile: RiskProfileParams) -> "Grid":
        lo = spec.xi_lo if spec.xi_lo is not None else profile.gamma0 / 8.0
        hi = spec.xi_hi if spec.xi_hi is not None else profile.gamma0 * 8.0
        xi = np.geomspace(lo, hi, spec.xi_count)
        if profile.beta == 0.0:
            prev = np.zeros(1)
            cur = np.zeros(1)
        else:
            span = spec.zsum_span_sd * float(np.max(market.sigma_step)) * math.sqrt(profile.phi)
            count = spec.zsum_count if spec.zsum_count % 2 == 1 else spec.zsum_count + 1
            prev = np.linspace(-span, span, count)
            cur = np.zeros(1) if profile.phi == 1 else np.linspace(-span, span, count)
        return cls(xi, prev, cur, spec.quad_points, market.num_states,
                   spec.max_clamp_fraction)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.xi), len(self.prev), len(self.cur), self.num_states)

    @property
    def cur_zero_index(self) -> int:
        return int(np.argmin(np.abs(self.cur)))

    def to_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "prev": self.prev.tolist(),
            "cur": self.cur.tolist(),
            "quad_points": self.quad_points,
            "num_states": self.num_states,
            "max_clamp_fraction": self.max_clamp_fraction,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Grid":
        return cls(
            np.asarray(doc["xi"]), np.asarray(doc["prev"]), np.asarray(doc["cur"]),
            doc["quad_points"], doc["num_states"],
            doc.get("max_clamp_fraction", 0.005),
        )


# -- clamp accounting ----------------------------------------------------------


@dataclass
class ClampCounters:
    """Quadrature-mass (solve) or per-lookup (simulation) clamp tallies."""

    xi_mass: float = 0.0
    xi_clamped: float = 0.0
    window_mass: float = 0.0
    window_clamped: float = 0.0

    def add_xi(self, weight: float, n_total: int, n_clamped: int) -> None:
        self.xi_mass += weight * n_total
        self.xi_clamped += weight * n_clamped

    def add_window(self, weight: float, n_total: int, n_clamped: int) -> None:
        self.window_mass += weight * n_total
        self.window_clamped += weight * n_clamped

    @property
    def xi_fraction(self) -> float:
        return self.xi_clamped / self.xi_mass if self.xi_mass > 0 else 0.0

    @property
    def window_fraction(self) -> float:
        return self.window_clamped / self.window_mass if self.window_mass > 0 else 0.0

    def as_dict(self) -> dict:
        return {
            "xi_fraction": self.xi_fraction,
            "window_fraction": self.window_fraction,
            "xi_mass": self.xi_mass,
            "window_mass": self.window_mass,
        }


def _locate(nodes: np.ndarray, x: np.ndarray):
    """Linear-interpolation indices on a uniform grid, clamped to the range.

    Returns (idx, frac, n_clamped): x is approximated by
    nodes[idx]*(1-frac) + nodes[idx+1]*frac. A single-node axis absorbs every
    query at its only node (collapsed axes are exact by construction, so such
    queries are not clamping events).
    """
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    if n == 1:
        z = np.zeros(x.shape)
        return z.astype(np.intp), z, 0
    step = (nodes[-1] - nodes[0]) / (n - 1)
    t = (x - nodes[0]) / step
    n_clamped = int(np.count_nonzero((t < 0.0) | (t > n - 1.0)))
    t = np.clip(t, 0.0, n - 1.0)
    idx = np.minimum(t.astype(np.intp), n - 2)
    return idx, t - idx, n_clamped


# -- advisor gamma bookkeeping ---------------------------------------------------


class _ProfileTables:
    """Dense per-time tables derived from a risk profile for a horizon T."""

    def __init__(self, market: MarketParams, profile: RiskProfileParams, T: int):
        if not profile.gamma_bar_is_state_constant() and profile.phi > 1:
            raise ConfigError(
                "regime-varying gamma_bar requires phi = 1: with sparser "
                "interactions the anchor-time cycle factor is not recoverable "
                "from the reduced state"
            )
        self.T = T
        self.phi = profile.phi
        self.beta = profile.beta
        self.profile = profile
        self.eta = np.asarray(profile.eta_at(np.arange(T + 1), T), dtype=float)
        self.gbar = profile.gamma_bar_table(T, market.num_states)
        self.tau = profile.phi * (np.arange(T + 1) // profile.phi)
        # anchor[n, y]: cycle factor at the last interaction, as recoverable
        # from (n, current regime y)
        if profile.gamma_bar_is_state_constant():
            self.anchor = np.repeat(
                self.gbar[self.tau, :1], market.num_states, axis=1
            )
        else:  # phi == 1, so tau_n = n and the anchor regime is the current one
            self.anchor = self.gbar[np.arange(T + 1)]

    def gamma_slice(self, n: int, xi: np.ndarray) -> np.ndarray:
        """Advisor gamma over (xi, regime) at time n: shape (len(xi), M)."""
        trend = math.exp(self.eta[n] - self.eta[self.tau[n]])
        return trend * xi[:, None] * (self.gbar[n] / self.anchor[n])[None, :]

    def gamma_at(self, n: int, xi, regime) -> np.ndarray:
        """Advisor gamma at scattered (xi, regime) queries at time n."""
        trend = math.exp(self.eta[n] - self.eta[self.tau[n]])
        ratio = self.gbar[n] / self.anchor[n]
        return trend * np.asarray(xi, dtype=float) * ratio[np.asarray(regime)]

    def interaction_shift(self, n: int, y: int, y_next: int) -> float:
        """Deterministic log-xi displacement when the step into n+1 interacts."""
        return (
            self.eta[n + 1]
            - self.eta[self.tau[n]]
            + math.log(self.gbar[n + 1, y_next])
            - math.log(self.anchor[n, y])
        )


def _jump_mixture(profile: RiskProfileParams) -> list[tuple[float, float, float]]:
    """Binomial mixture for the phi-fold sum of idiosyncratic shocks.

    Returns (weight, mean, sd) triples: J jumps occur with binomial
    probability and contribute a N(-J sigma^2/2, J sigma^2) total.
    """
    phi, p, s = profile.phi, profile.p_eps, profile.sigma_eps
    out = []
    for j in range(phi + 1):
        w = math.comb(phi, j) * p**j * (1.0 - p) ** (phi - j)
        if w > 0.0:
            out.append((w, -j * s * s / 2.0, s * math.sqrt(j)))
    return out


# -- policy tables ----------------------------------------------------------------


@dataclass
class PolicyTables:
    """Backward-induction output: per-time tables over the reduced-state grid.

    pi and V cover times 0..T-1; a and b carry the extra terminal slice
    (a[T] = b[T] = 1). All tables have the grid shape
    (len(xi), len(prev), len(cur), num_states).
    """

    market: MarketParams
    profile: RiskProfileParams
    T: int
    grid: Grid
    pi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    V: np.ndarray
    bounds: tuple[float, float] | None = None
    solve_clamps: ClampCounters = field(default_factory=ClampCounters)

    def gamma_table(self, n: int) -> np.ndarray:
        """Advisor gamma over (xi, regime) at time n."""
        return _ProfileTables(self.market, self.profile, self.T).gamma_slice(
            n, self.grid.xi
        )

    def allocation_at(
        self,
        n: int,
        xi,
        prev,
        cur,
        regime,
        counters: ClampCounters | None = None,
    ) -> np.ndarray:
        """Interpolated equilibrium allocation at scattered states at time n.

        Queries outside the grid are clamped to the boundary; if `counters`
        is given, clamped lookups are tallied per lookup (xi axis and window
        axes separately).
        """
        if not 0 <= n < self.T:
            raise ConfigError(f"time index {n} outside [0, {self.T})")
        xi = np.asarray(xi, dtype=float)
        if np.any(xi <= 0):
            raise ConfigError("xi queries must be strictly positive")
        ix, fx, cx = _locate(self.grid.logxi, np.log(xi))
        ip, fp, cp = _locate(self.grid.prev, prev)
        ic, fc, cc = _locate(self.grid.cur, cur)
        if counters is not None:
            counters.add_xi(1.0, xi.size, cx)
            counters.add_window(1.0, xi.size * 2, cp + cc)
        table = self.pi[n]
        y = np.asarray(regime)
        out = np.zeros(np.broadcast(xi, prev, cur, y).shape)
        for dx in (0, 1):
            wx = np.where(dx, fx, 1.0 - fx)
            for dp in (0, 1):
                wp = np.where(dp, fp, 1.0 - fp)
                for dc in (0, 1):
                    wc = np.where(dc, fc, 1.0 - fc)
                    out += wx * wp * wc * table[
                        np.minimum(ix + dx, len(self.grid.xi) - 1),
                        np.minimum(ip + dp, len(self.grid.prev) - 1),
                        np.minimum(ic + dc, len(self.grid.cur) - 1),
                        y,
                    ]
        return out


# -- core expectation engine -------------------------------------------------------


def _gh_nodes(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = hermgauss(q)
    return x, w / math.sqrt(math.pi)


def _presmooth(
    table0: np.ndarray,
    grid: Grid,
    mixture: list[tuple[float, float, float]],
    gh: tuple[np.ndarray, np.ndarray],
    counters: ClampCounters,
) -> np.ndarray:
    """Average a (xi, prev, regime) slice over the phi-fold jump-shock sum.

    The shock sum acts as a pure displacement of log xi, so the expectation is
    a one-dimensional convolution along the xi axis, evaluated at the nodes.
    """
    gh_x, gh_w = gh
    out = np.zeros_like(table0)
    for weight, mean, sd in mixture:
        if sd == 0.0:
            out += weight * table0
            continue
        for xq, wq in zip(gh_x, gh_w):
            shift = mean + sd * math.sqrt(2.0) * xq
            idx, frac, ncl = _locate(grid.logxi, grid.logxi + shift)
            counters.add_xi(weight * wq, len(grid.logxi), ncl)
            f = frac[:, None, None]
            out += (weight * wq) * (
                table0[idx] * (1.0 - f) + table0[idx + 1] * f
            )
    return out


def _slice_expectations(
    n: int,
    specs: list[tuple[np.ndarray, int]],
    market: MarketParams,
    tabs: _ProfileTables,
    grid: Grid,
    counters: ClampCounters,
) -> list[np.ndarray]:
    """Conditional moments E[Ztilde^j X(next state)] over the whole grid.

    For each (X_table, max_power) in `specs`, returns an array of shape
    (max_power+1,) + grid.shape whose j-th entry is the conditional
    expectation of Ztilde^j times X evaluated at the transitioned state,
    given the time-n reduced state at each grid point.
    """
    Nxi, Np, Nc, M = grid.shape
    P = market.transition
    mu, sig, r = market.mu_step, market.sigma_step, market.r_step
    gh_x, gh_w = _gh_nodes(grid.quad_points)
    interaction = (n + 1) % tabs.phi == 0
    out = [np.zeros((jmax + 1, Nxi, Np, Nc, M)) for _, jmax in specs]

    if not interaction:
        # xi and prev are frozen: contract the next-regime sum first, then a
        # single 1-D interpolation along the current-window axis per node.
        contracted = [tbl @ P.T for tbl, _ in specs]  # [..., y] given current y
        for y in range(M):
            for xq, wq in zip(gh_x, gh_w):
                dm = math.sqrt(2.0) * sig[y] * xq
                zt = dm + mu[y] - r[y]
                idx, frac, ncl = _locate(grid.cur, grid.cur + dm)
                if Nc > 1:
                    counters.add_window(wq, Nc, ncl)
                idx2 = np.minimum(idx + 1, Nc - 1)
                f = frac[None, None, :]
                for (tbl, jmax), acc in zip(
                    [(c, s[1]) for c, s in zip(contracted, specs)], out
                ):
                    val = tbl[:, :, idx, y] * (1.0 - f) + tbl[:, :, idx2, y] * f
                    ztj = wq
                    for j in range(jmax + 1):
                        acc[j, :, :, :, y] += ztj * val
                        ztj = ztj * zt
        return out

    # Interaction step: the window completes (w = cur + next demeaned return),
    # xi jumps, cur resets to zero. Integrate the jump-shock sum first (it is
    # independent of the return and displaces only log xi), then quadrature
    # over the return with bilinear interpolation in (log xi, prev = w).
    mixture = _jump_mixture(tabs.profile)
    ic0 = grid.cur_zero_index
    smoothed = [
        _presmooth(tbl[:, :, ic0, :], grid, mixture, (gh_x, gh_w), counters)
        for tbl, _ in specs
    ]
    bp = tabs.beta / tabs.phi
    base = grid.logxi[:, None, None] + bp * grid.prev[None, :, None]
    for y in range(M):
        for xq, wq in zip(gh_x, gh_w):
            dm = math.sqrt(2.0) * sig[y] * xq
            zt = dm + mu[y] - r[y]
            wv = grid.cur + dm  # completed-window values, one per cur node
            ip, fp, ncp = _locate(grid.prev, wv)
            if Np > 1:
                counters.add_window(wq, Nc, ncp)
            fp_b = fp[None, None, :]
            for y2 in range(M):
                pw = P[y, y2]
                if pw == 0.0:
                    continue
                shift = tabs.interaction_shift(n, y, y2)
                lx = base + (shift - bp * wv)[None, None, :]
                ix, fx, ncx = _locate(grid.logxi, lx)
                counters.add_xi(wq * pw, lx.size, ncx)
                fx_c = 1.0 - fx
                for (sm, (_, jmax)), acc in zip(zip(smoothed, specs), out):
                    t = sm[:, :, y2]
                    lo = t[ix, ip[None, None, :]]
                    hi = t[ix + 1, ip[None, None, :]]
                    lo2 = t[ix, np.minimum(ip + 1, Np - 1)[None, None, :]]
                    hi2 = t[ix + 1, np.minimum(ip + 1, Np - 1)[None, None, :]]
                    val = (
                        fx_c * ((1.0 - fp_b) * lo + fp_b * lo2)
                        + fx * ((1.0 - fp_b) * hi + fp_b * hi2)
                    )
                    ztj = wq * pw
                    for j in range(jmax + 1):
                        acc[j, :, :, :, y] += ztj * val
                        ztj = ztj * zt
    return out


# -- public operations ---------------------------------------------------------------


def constrain(pi, lower: float = -math.inf, upper: float = math.inf):
    """Clamp an allocation into [lower, upper]."""
    if lower > upper:
        raise ConfigError(f"bounds out of order: ({lower}, {upper})")
    return np.clip(pi, lower, upper)


def liquidation_overlay(x, pi):
    """Dollar position under forced liquidation at nonpositive wealth.

    Returns pi*x when wealth x is nonnegative and 0 otherwise; applied at
    simulation time only, never inside the backward induction.
    """
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, np.asarray(pi, dtype=float) * x, 0.0)


def allocation(n, state: ReducedState, moments, gamma_n: float, market: MarketParams):
    """Equilibrium allocation from the five conditional moments.

    `moments` is (mu_a, mu_az, mu_b, mu_bz, mu_bz2) as produced by
    step_moments. The first-order condition of the per-period objective gives

        pi* = (mu_az - R gamma (mu_bz - mu_a mu_az)) / (gamma (mu_bz2 - mu_az^2)),

    whose denominator is a conditional-variance-like quantity, positive
    whenever the return is non-degenerate.
    """
    mu_a, mu_az, mu_b, mu_bz, mu_bz2 = moments
    R = float(market.R_step[state.regime])
    denom = mu_bz2 - mu_az**2
    if denom <= 0.0:
        raise DegenerateVariance(
            f"second-moment denominator {denom!r} at n={n}, state={state}"
        )
    return (mu_az - R * gamma_n * (mu_bz - mu_a * mu_az)) / (gamma_n * denom)


def allocation_independent(
    n, state: ReducedState, mu_a: float, mu_b: float, gamma_n: float,
    market: MarketParams,
):
    """Allocation when future moment tables are independent of the return.

    When the advisor's risk-aversion path does not react to market returns
    (e.g. beta = 0 with no idiosyncratic feedback into the state), the mixed
    moments factorize (mu_az = mu_tilde*mu_a etc.) and the allocation becomes
    the Markowitz ratio times a horizon correction:

        pi* = mu_tilde/(gamma sigma^2)
              * (mu_a - R gamma (mu_b - mu_a^2)) / (mu_b + (mu_tilde/sigma)^2 (mu_b - mu_a^2)).
    """
    y = state.regime
    mt = float(market.mu_tilde_step[y])
    s2 = float(market.sigma_step[y]) ** 2
    R = float(market.R_step[y])
    denom = mu_b + (mt * mt / s2) * (mu_b - mu_a * mu_a)
    if denom <= 0.0:
        raise DegenerateVariance(f"degenerate denominator {denom!r} at n={n}")
    return mt / (gamma_n * s2) * (mu_a - R * gamma_n * (mu_b - mu_a * mu_a)) / denom


def step_moments(
    n: int,
    state: ReducedState,
    tables: PolicyTables,
    market: MarketParams | None = None,
    profile: RiskProfileParams | None = None,
):
    """Conditional moments (mu_a, mu_az, mu_b, mu_bz, mu_bz2) at one state.

    Expectations of a_{n+1} and b_{n+1} (weighted by powers of the excess
    return Ztilde) over the step into n+1, conditional on the time-n reduced
    state. The jump-shock sum at an interaction step is integrated directly
    at the query point (exact binomial mixture x quadrature), so this routine
    is an independent, slower counterpart of the vectorized slice engine.
    """
    market = market if market is not None else tables.market
    profile = profile if profile is not None else tables.profile
    grid = tables.grid
    tabs = _ProfileTables(market, profile, tables.T)
    if not 0 <= n < tables.T:
        raise ConfigError(f"time index {n} outside [0, {tables.T})")
    a_next, b_next = tables.a[n + 1], tables.b[n + 1]
    P = market.transition
    y = state.regime
    mu, sig, r = market.mu_step[y], market.sigma_step[y], market.r_step[y]
    gh_x, gh_w = _gh_nodes(grid.quad_points)
    interaction = (n + 1) % profile.phi == 0

    def interp3(table, lx, pv, cv):
        ix, fx, _ = _locate(grid.logxi, np.asarray([lx]))
        ip, fp, _ = _locate(grid.prev, np.asarray([pv]))
        ic, fc, _ = _locate(grid.cur, np.asarray([cv]))
        val = 0.0
        for dx in (0, 1):
            wx = fx[0] if dx else 1.0 - fx[0]
            for dp in (0, 1):
                wp = fp[0] if dp else 1.0 - fp[0]
                for dc in (0, 1):
                    wc = fc[0] if dc else 1.0 - fc[0]
                    val += wx * wp * wc * table[
                        min(ix[0] + dx, len(grid.xi) - 1),
                        min(ip[0] + dp, len(grid.prev) - 1),
                        min(ic[0] + dc, len(grid.cur) - 1),
                    ]
        return val

    acc = np.zeros(5)
    lxi = math.log(state.xi)
    mixture = _jump_mixture(profile) if interaction else [(1.0, 0.0, 0.0)]
    for xq, wq in zip(gh_x, gh_w):
        dm = math.sqrt(2.0) * sig * xq
        zt = dm + mu - r
        for y2 in range(market.num_states):
            pw = P[y, y2]
            if pw == 0.0:
                continue
            if interaction:
                w = state.cur_window_sum + dm
                base_lx = (
                    lxi
                    + tabs.interaction_shift(n, y, y2)
                    + (tabs.beta / tabs.phi) * (state.prev_window_sum - w)
                )
                av = bv = 0.0
                for jw, jm, jsd in mixture:
                    if jsd == 0.0:
                        av += jw * interp3(a_next[..., y2], base_lx, w, 0.0)
                        bv += jw * interp3(b_next[..., y2], base_lx, w, 0.0)
                        continue
                    for exq, ewq in zip(gh_x, gh_w):
                        shift = jm + jsd * math.sqrt(2.0) * exq
                        av += jw * ewq * interp3(a_next[..., y2], base_lx + shift, w, 0.0)
                        bv += jw * ewq * interp3(b_next[..., y2], base_lx + shift, w, 0.0)
            else:
                cv = state.cur_window_sum + dm
                av = interp3(a_next[..., y2], lxi, state.prev_window_sum, cv)
                bv = interp3(b_next[..., y2], lxi, state.prev_window_sum, cv)
            wgt = wq * pw
            acc[0] += wgt * av
            acc[1] += wgt * zt * av
            acc[2] += wgt * bv
            acc[3] += wgt * zt * bv
            acc[4] += wgt * zt * zt * bv
    return tuple(acc)


def update_ab(
    n: int,
    state: ReducedState,
    pi_star: float,
    tables: PolicyTables,
    market: MarketParams | None = None,
    profile: RiskProfileParams | None = None,
):
    """One-state moment recursion: a_n = E[(R+Ztilde pi) a_{n+1}], same for b."""
    market = market if market is not None else tables.market
    mu_a, mu_az, mu_b, mu_bz, mu_bz2 = step_moments(n, state, tables, market, profile)
    R = float(market.R_step[state.regime])
    a_n = R * mu_a + pi_star * mu_az
    b_n = R * R * mu_b + 2.0 * R * pi_star * mu_bz + pi_star**2 * mu_bz2
    return a_n, b_n


def solve(
    market: MarketParams,
    profile: RiskProfileParams,
    T: int,
    grid: GridSpec | Grid | None = None,
    bounds: tuple[float, float] | None = None,
) -> PolicyTables:
    """Backward induction over the reduced-state grid.

    Produces allocation, moment and value tables for n = T-1 down to 0 under
    the terminal condition a_T = b_T = 1. When `bounds` is given the
    allocation is truncated inside the induction, so the moment tables (and
    hence all earlier allocations) reflect the constrained policy.
    """
    validate(market)
    if T < 1:
        raise ConfigError(f"horizon T must be >= 1, got {T}")
    if bounds is not None and bounds[0] > bounds[1]:
        raise ConfigError(f"bounds out of order: {bounds}")
    if isinstance(grid, Grid):
        g = grid
    else:
        g = Grid.build(grid if grid is not None else GridSpec(), market, profile)
    tabs = _ProfileTables(market, profile, T)

    shape = g.shape
    pi = np.empty((T,) + shape)
    a = np.empty((T + 1,) + shape)
    b = np.empty((T + 1,) + shape)
    V = np.empty((T,) + shape)
    a[T] = 1.0
    b[T] = 1.0
    counters = ClampCounters()
    R = market.R_step  # broadcast over the trailing regime axis

    for n in range(T - 1, -1, -1):
        ma, mb = _slice_expectations(
            n, [(a[n + 1], 1), (b[n + 1], 2)], market, tabs, g, counters
        )
        mu_a, mu_az = ma[0], ma[1]
        mu_b, mu_bz, mu_bz2 = mb[0], mb[1], mb[2]
        gam = tabs.gamma_slice(n, g.xi)[:, None, None, :]
        denom = mu_bz2 - mu_az**2
        if np.any(denom <= 0.0):
            worst = float(denom.min())
            raise DegenerateVariance(
                f"nonpositive second-moment denominator ({worst:.3e}) at n={n}"
            )
        p_n = (mu_az - R * gam * (mu_bz - mu_a * mu_az)) / (gam * denom)
        if bounds is not None:
            p_n = np.clip(p_n, bounds[0], bounds[1])
        pi[n] = p_n
        a[n] = R * mu_a + p_n * mu_az
        b[n] = R * R * mu_b + 2.0 * R * p_n * mu_bz + p_n**2 * mu_bz2
        V[n] = a[n] - 1.0 - 0.5 * gam * (b[n] - a[n] ** 2)

    if counters.xi_fraction > _SOLVE_CLAMP_CAP:
        raise GridExhausted(
            f"clamped xi quadrature mass fraction {counters.xi_fraction:.3f} "
            f"exceeds {_SOLVE_CLAMP_CAP}; widen the xi grid"
        )
    return PolicyTables(
        market=market, profile=profile, T=T, grid=g,
        pi=pi, a=a, b=b, V=V, bounds=bounds, solve_clamps=counters,
    )


def moment_m(
    m: int,
    policy: PolicyTables,
    state: ReducedState,
    n: int,
) -> float:
    """m-th conditional moment of the compounded return under the solved policy.

    Runs the recursion mu^(m)_k = E[(R + Ztilde pi_k)^m mu^(m)_{k+1}] from the
    terminal condition mu^(m)_T = 1 down to time n on the policy's own grid,
    then interpolates at `state`. m = 1 and m = 2 reproduce the a and b
    tables.
    """
    if m < 1:
        raise ConfigError(f"moment order must be >= 1, got {m}")
    if not 0 <= n < policy.T:
        raise ConfigError(f"time index {n} outside [0, {policy.T})")
    market, grid = policy.market, policy.grid
    tabs = _ProfileTables(market, policy.profile, policy.T)
    counters = ClampCounters()
    R = market.R_step
    binom = [math.comb(m, j) for j in range(m + 1)]
    cur = np.ones(grid.shape)
    for k in range(policy.T - 1, n - 1, -1):
        (zm,) = _slice_expectations(k, [(cur, m)], market, tabs, grid, counters)
        p_k = policy.pi[k]
        nxt = np.zeros(grid.shape)
        for j in range(m + 1):
            nxt += binom[j] * R ** (m - j) * p_k**j * zm[j]
        cur = nxt

    ix, fx, _ = _locate(grid.logxi, np.asarray([math.log(state.xi)]))
    ip, fp, _ = _locate(grid.prev, np.asarray([state.prev_window_sum]))
    ic, fc, _ = _locate(grid.cur, np.asarray([state.cur_window_sum]))
    val = 0.0
    for dx in (0, 1):
        wx = fx[0] if dx else 1.0 - fx[0]
        for dp in (0, 1):
            wp = fp[0] if dp else 1.0 - fp[0]
            for dc in (0, 1):
                wc = fc[0] if dc else 1.0 - fc[0]
                val += wx * wp * wc * cur[
                    min(ix[0] + dx, len(grid.xi) - 1),
                    min(ip[0] + dp, len(grid.prev) - 1),
                    min(ic[0] + dc, len(grid.cur) - 1),
                    state.regime,
                ]
    return float(val)


def state_only_ab(market: MarketParams, allocations: np.ndarray):
    """Exact moment recursion for a policy that depends only on (time, regime).

    `allocations` has shape (T, M). Because the return is conditionally
    independent of the next regime, the recursion needs no quadrature:

        a_n(y) = (R + mu_tilde pi_n(y)) * sum_y' P[y,y'] a_{n+1}(y'),
        b_n(y) = ((R + mu_tilde pi_n)^2 + sigma^2 pi_n^2) * sum_y' P[y,y'] b_{n+1}(y').

    Returns (a, b) of shape (T+1, M).
    """
    allocations = np.atleast_2d(np.asarray(allocations, dtype=float))
    T, M = allocations.shape
    if M != market.num_states:
        raise ConfigError(
            f"allocations must have one column per regime ({market.num_states}), "
            f"got {M}"
        )
    P = market.transition
    R, mt = market.R_step, market.mu_tilde_step
    s2 = market.sigma_step**2
    a = np.empty((T + 1, M))
    b = np.empty((T + 1, M))
    a[T] = 1.0
    b[T] = 1.0
    for n in range(T - 1, -1, -1):
        mu_a = P @ a[n + 1]
        mu_b = P @ b[n + 1]
        g = R + mt * allocations[n]
        a[n] = g * mu_a
        b[n] = (g * g + s2 * allocations[n] ** 2) * mu_b
    return a, b


def brute_force_equilibrium(
    market: MarketParams,
    gamma: float,
    T: int,
    grid_points: int = 4001,
    span: tuple[float, float] = (-2.0, 6.0),
    refinements: int = 4,
) -> np.ndarray:
    """Reference equilibrium for tiny single-state instances by grid search.

    The terminal allocation is the exact one-period mean-variance maximizer;
    each earlier allocation maximizes the time-n objective over a fine grid
    of candidate values with all later allocations held fixed. The objective
    is evaluated through exact Gaussian product moments (no quadrature, no
    interpolation), so this shares no machinery with the production solver.
    """
    validate(market)
    if market.num_states != 1:
        raise ConfigError("the brute-force oracle only handles a single regime")
    if not 1 <= T <= 3:
        raise ConfigError(f"the brute-force oracle is for T in 1..3, got {T}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    R = float(market.R_step[0])
    mt = float(market.mu_tilde_step[0])
    s2 = float(market.sigma_step[0]) ** 2

    pis = np.empty(T)
    A = 1.0  # product of E[R + Ztilde pi_k] over k > n
    B = 1.0  # product of E[(R + Ztilde pi_k)^2] over k > n
    for n in range(T - 1, -1, -1):
        if n == T - 1:
            best = mt / (gamma * s2)
        else:
            lo, hi = span
            pts = grid_points
            best = 0.0
            for _ in range(refinements):
                cand = np.linspace(lo, hi, pts)
                g1 = R + mt * cand
                # objective: A*E[g] - gamma/2 * Var of the compound return
                obj = A * g1 - 0.5 * gamma * (
                    (B - A * A) * g1 * g1 + B * s2 * cand * cand
                )
                k = int(np.argmax(obj))
                best = float(cand[k])
                width = (hi - lo) / (pts - 1)
                lo, hi = best - 2 * width, best + 2 * width
        pis[n] = best
        A *= R + mt * best
        B *= (R + mt * best) ** 2 + s2 * best * best
    return pis


# -- persistence ------------------------------------------------------------------


def _params_digest(market: MarketParams, profile: RiskProfileParams, T: int,
                   grid: Grid, bounds) -> str:
    doc = {
        "market": _market_doc(market),
        "risk_profile": _profile_doc(profile),
        "T": T,
        "grid": grid.to_dict(),
        "bounds": list(bounds) if bounds is not None else None,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _market_doc(market: MarketParams) -> dict:
    return {
        "states": (
            list(market.labels) if market.labels is not None else market.num_states
        ),
        "transition": market.transition.tolist(),
        "risk_free": market.risk_free.tolist(),
        "mean_return": market.mean_return.tolist(),
        "vol_return": market.vol_return.tolist(),
        "steps_per_year": market.steps_per_year,
    }


def _profile_doc(profile: RiskProfileParams) -> dict:
    doc = {
        "gamma0": profile.gamma0,
        "alpha": profile.alpha,
        "p_eps": profile.p_eps,
        "sigma_eps": profile.sigma_eps,
        "beta": profile.beta,
        "phi": profile.phi,
    }
    gb = np.asarray(profile.gamma_bar, dtype=float)
    doc["gamma_bar"] = float(gb) if gb.ndim == 0 else gb.tolist()
    if profile.eta is not None:
        doc["eta"] = np.asarray(profile.eta).tolist()
    return doc


def save_policy(tables: PolicyTables, outdir: str | Path) -> Path:
    """Write one CSV per time slice plus a JSON manifest.

    Rows enumerate the grid in (xi, prev, cur, regime) order with columns
    (xi, prev_sum, cur_sum, regime, pi_star, a, b, V), 12 significant digits.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    g = tables.grid
    coords = [
        arr.ravel()
        for arr in np.meshgrid(
            g.xi, g.prev, g.cur, np.arange(g.num_states), indexing="ij"
        )
    ]
    for n in range(tables.T):
        with open(outdir / f"policy_{n:04d}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["xi", "prev_sum", "cur_sum", "regime", "pi_star", "a", "b", "V"]
            )
            cols = [
                tables.pi[n].ravel(), tables.a[n].ravel(),
                tables.b[n].ravel(), tables.V[n].ravel(),
            ]
            for i in range(coords[0].size):
                w.writerow(
                    [f"{coords[0][i]:.12g}", f"{coords[1][i]:.12g}",
                     f"{coords[2][i]:.12g}", int(coords[3][i])]
                    + [f"{c[i]:.12g}" for c in cols]
                )
    manifest = {
        "kind": "policy_tables",
        "T": tables.T,
        "bounds": list(tables.bounds) if tables.bounds is not None else None,
        "grid": g.to_dict(),
        "market": _market_doc(tables.market),
        "risk_profile": _profile_doc(tables.profile),
        "solve_clamps": tables.solve_clamps.as_dict(),
        "params_sha256": _params_digest(
            tables.market, tables.profile, tables.T, g, tables.bounds
        ),
    }
    with open(outdir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return outdir


def load_policy(indir: str | Path) -> PolicyTables:
    """Rebuild PolicyTables from a save_policy directory."""
    indir = Path(indir)
    with open(indir / "manifest.json") as f:
        manifest = json.load(f)
    if manifest.get("kind") != "policy_tables":
        raise ConfigError(f"{indir} does not hold policy tables")
    market = market_from_dict(manifest["market"])
    profile = profile_from_dict(manifest["risk_profile"])
    g = Grid.from_dict(manifest["grid"])
    T = manifest["T"]
    shape = g.shape
    pi = np.empty((T,) + shape)
    a = np.empty((T + 1,) + shape)
    b = np.empty((T + 1,) + shape)
    V = np.empty((T,) + shape)
    a[T] = 1.0
    b[T] = 1.0
    n_rows = int(np.prod(shape))
    for n in range(T):
        path = indir / f"policy_{n:04d}.csv"
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        if data.shape[0] != n_rows:
            raise ConfigError(
                f"{path} has {data.shape[0]} rows, expected {n_rows}"
            )
        pi[n] = data[:, 4].reshape(shape)
        a[n] = data[:, 5].reshape(shape)
        b[n] = data[:, 6].reshape(shape)
        V[n] = data[:, 7].reshape(shape)
    bounds = manifest.get("bounds")
    clamps = ClampCounters()
    saved = manifest.get("solve_clamps", {})
    clamps.xi_mass = saved.get("xi_mass", 0.0)
    clamps.xi_clamped = saved.get("xi_fraction", 0.0) * clamps.xi_mass
    clamps.window_mass = saved.get("window_mass", 0.0)
    clamps.window_clamped = saved.get("window_fraction", 0.0) * clamps.window_mass
    return PolicyTables(
        market=market, profile=profile, T=T, grid=g,
        pi=pi, a=a, b=b, V=V,
        bounds=tuple(bounds) if bounds is not None else None,
        solve_clamps=clamps,
    )
