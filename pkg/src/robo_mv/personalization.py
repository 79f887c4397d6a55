"""Interaction-frequency tradeoff: personalization gained by frequent client
contact versus behavioral bias picked up at each contact.

Two Monte Carlo measures quantify the tradeoff. R averages the relative gap
between the client's true risk tolerance and the advisor's model of it; S
averages the relative gap between the corresponding equilibrium allocations.
R has a closed-form approximation (r_tilde) whose unique minimizer in the
interaction period phi -- when one exists -- is computed analytically, along
with the sign test for whether interacting every step is suboptimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from robo_mv.errors import ConfigError, InsufficientSamples, ZeroAllocation
from robo_mv.market import MarketParams
from robo_mv.risk_profile import RiskProfileParams, sample_eps, simulate_clients
from robo_mv.solver import GridSpec, solve

_ROOT_2_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class PersonalizationInputs:
    """Inputs of the closed-form analysis.

    sigma0 is the per-step return SD in the starting regime (annual vol
    divided by sqrt(steps per year)); phi_values is the sweep grid used by
    the CLI and the trade-off curves.
    """

    beta: float
    p_eps: float
    sigma_eps: float
    sigma0: float
    T: int
    phi_values: tuple[int, ...] = (1, 2, 3, 4, 6, 9, 12)

    def __post_init__(self):
        for name in ("beta", "p_eps", "sigma_eps", "sigma0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.p_eps > 1:
            raise ConfigError(f"p_eps must lie in [0, 1], got {self.p_eps}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        vals = tuple(int(p) for p in self.phi_values)
        if any(p < 1 for p in vals) or vals != tuple(self.phi_values):
            raise ConfigError(f"phi_values must be integers >= 1, got {self.phi_values}")
        object.__setattr__(self, "phi_values", vals)

    def flanking_multiples(self, phi: int) -> tuple[int, int]:
        """Largest multiple of phi <= T and smallest multiple >= T."""
        if phi < 1:
            raise ConfigError(f"phi must be >= 1, got {phi}")
        return phi * (self.T // phi), phi * math.ceil(self.T / phi)


def r_tilde(phi: float, beta: float, sigma0: float, p_eps: float, sigma_eps: float) -> float:
    """Closed-form approximation of the personalization measure R.

    sqrt(2/pi) * ( beta*sigma0/sqrt(phi) * (1 - (phi-1)/2 * p_eps)
                   + sqrt(beta^2 sigma0^2/phi + sigma_eps^2) * (phi-1)/2 * p_eps )

    The first term is the behavioral bias accrued over the return window; the
    second is the drift of idiosyncratic shocks since the last interaction.
    """
    if phi < 1:
        raise ConfigError(f"phi must be >= 1, got {phi}")
    c = beta * sigma0
    half_tail = 0.5 * (phi - 1.0) * p_eps
    return _ROOT_2_PI * (
        c / math.sqrt(phi) * (1.0 - half_tail)
        + math.sqrt(c * c / phi + sigma_eps * sigma_eps) * half_tail
    )


def r_tilde_dphi(phi: float, beta: float, sigma0: float, p_eps: float, sigma_eps: float) -> float:
    """Analytic derivative of r_tilde with respect to phi."""
    if phi < 1:
        raise ConfigError(f"phi must be >= 1, got {phi}")
    c = beta * sigma0
    v = math.sqrt(c * c / phi + sigma_eps * sigma_eps)
    terms = (
        -0.5 * c * phi**-1.5 * (1.0 - 0.5 * (phi - 1.0) * p_eps)
        - 0.5 * c * p_eps / math.sqrt(phi)
        + 0.5 * v * p_eps
    )
    if v > 0.0:
        terms -= c * c * (phi - 1.0) * p_eps / (4.0 * phi * phi * v)
    return _ROOT_2_PI * terms


def interact_every_step_suboptimal(
    beta: float, sigma0: float, p_eps: float, sigma_eps: float
) -> bool:
    """Whether r_tilde is falling at phi = 1, so that waiting beats
    interacting every step.

    Equivalent to p_eps*sigma_eps/(beta*sigma0) < sqrt(1 + 2 p_eps): the
    idiosyncratic drift rate must stay below the (slightly inflated)
    behavioral-bias rate.
    """
    if beta * sigma0 == 0.0:
        raise ZeroDivisionError("the condition compares against beta*sigma0 > 0")
    return r_tilde_dphi(1.0, beta, sigma0, p_eps, sigma_eps) < 0.0


@dataclass(frozen=True)
class PhiStar:
    """Minimizer of r_tilde over phi >= 1.

    phi is +inf with unbounded=True when r_tilde is strictly decreasing
    (no idiosyncratic shocks to track). phi_int is the better of the two
    adjacent integers, since actual schedules are integer-spaced.
    """

    phi: float
    unbounded: bool
    phi_int: int | None


def phi_star(
    beta: float,
    sigma0: float,
    p_eps: float,
    sigma_eps: float,
    phi_max: float = 1200.0,
) -> PhiStar:
    """Unique minimizer of r_tilde in phi.

    Case table: no bias (beta*sigma0 = 0) -> 1; bias but no shocks to chase
    (p_eps = 0 or sigma_eps = 0) -> unbounded; otherwise the root of the
    derivative, which starts negative (if it does) and crosses zero once.
    """
    for name, val in (("beta", beta), ("sigma0", sigma0), ("p_eps", p_eps),
                      ("sigma_eps", sigma_eps)):
        if val < 0:
            raise ConfigError(f"{name} must be >= 0, got {val}")
    if beta * sigma0 == 0.0:
        return PhiStar(phi=1.0, unbounded=False, phi_int=1)
    if p_eps == 0.0 or sigma_eps == 0.0:
        return PhiStar(phi=math.inf, unbounded=True, phi_int=None)

    def d(x):
        return r_tilde_dphi(x, beta, sigma0, p_eps, sigma_eps)

    if d(1.0) >= 0.0:
        return PhiStar(phi=1.0, unbounded=False, phi_int=1)
    lo, hi = 1.0, 2.0
    while d(hi) <= 0.0:
        lo, hi = hi, hi * 2.0
        if hi > phi_max:
            return PhiStar(phi=math.inf, unbounded=True, phi_int=None)
    phi0 = float(brentq(d, lo, hi, xtol=1e-10, maxiter=200))
    fl, ce = math.floor(phi0), math.ceil(phi0)
    args = (beta, sigma0, p_eps, sigma_eps)
    best = fl if r_tilde(fl, *args) <= r_tilde(ce, *args) else ce
    return PhiStar(phi=phi0, unbounded=False, phi_int=int(best))


def r_tilde_sandwich(
    phi: int, beta: float, sigma0: float, p_eps: float, sigma_eps: float, T: int
) -> tuple[float, float]:
    """Bracketing values (T_phi/T * r_tilde, T^phi/T * r_tilde) for the Monte
    Carlo R, where T_phi and T^phi are the multiples of phi flanking T."""
    inputs = PersonalizationInputs(
        beta=beta, p_eps=p_eps, sigma_eps=sigma_eps, sigma0=sigma0, T=T
    )
    t_lo, t_hi = inputs.flanking_multiples(int(phi))
    rt = r_tilde(phi, beta, sigma0, p_eps, sigma_eps)
    return t_lo / T * rt, t_hi / T * rt


# -- Monte Carlo measures -----------------------------------------------------


def _reduced_gamma_ratio(
    profile: RiskProfileParams, sigma0: float, T: int, n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-path, per-step ratio gamma^C_n / gamma_n in the frozen-regime
    reduction, where everything except the idiosyncratic martingale and the
    window bias cancels: ratio = gamma^id_n / (gamma^id_tau * gamma^Z_tau)."""
    phi, beta = profile.phi, profile.beta
    demeaned = rng.normal(0.0, sigma0, size=(n_paths, T))
    eps = sample_eps(profile, rng, size=(n_paths, T))
    log_id = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(eps, axis=1)], axis=1)

    n_inter = T // phi + 1
    log_gz = np.zeros((n_paths, n_inter))
    for k in range(1, n_inter):
        tau = k * phi
        log_gz[:, k] = -beta * demeaned[:, tau - phi : tau].sum(axis=1) / phi

    times = np.arange(T)
    tau_of_n = phi * (times // phi)
    return np.exp(
        log_id[:, times] - log_id[:, tau_of_n] - log_gz[:, times // phi]
    )


def r_measure(
    phi: int,
    beta: float,
    market: MarketParams,
    profile: RiskProfileParams,
    T: int,
    n_paths: int,
    seed,
    y0: int = 0,
    reduced: bool = False,
) -> tuple[float, float]:
    """Monte Carlo estimate (value, standard error) of the personalization
    measure R: the time-averaged relative gap |gamma^C_n/gamma_n - 1|.

    phi and beta override the profile's values; the profile supplies the
    idiosyncratic-shock and trend parameters. With reduced=True the regime is
    frozen at y0 (the single-regime form the closed-form approximation is
    built on) and no market paths are simulated; the default simulates the
    full regime-switching dynamics.
    """
    if n_paths < 100:
        raise InsufficientSamples(f"need at least 100 paths, got {n_paths}")
    prof = replace(profile, phi=int(phi), beta=float(beta))
    rng = np.random.default_rng(seed)
    if reduced:
        ratio = _reduced_gamma_ratio(prof, float(market.sigma_step[y0]), T, n_paths, rng)
    else:
        batch = simulate_clients(market, prof, T, n_paths, rng, y0=y0)
        ratio = batch["gamma_client"][:, :T] / batch["gamma_robo"][:, :T]
    per_path = np.abs(ratio - 1.0).mean(axis=1)
    est = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(n_paths))
    return est, se


@dataclass(frozen=True)
class SMeasure:
    """Monte Carlo estimate of the allocation-gap measure S."""

    estimate: float
    se: float
    excluded_steps: int
    total_steps: int


def s_measure(
    phi: int,
    beta: float,
    market: MarketParams,
    profile: RiskProfileParams,
    T: int,
    grid: GridSpec,
    n_paths: int,
    seed,
    y0: int = 0,
) -> SMeasure:
    """Monte Carlo estimate of S: the time-averaged relative gap between the
    allocation the advisor's model produces and the allocation under full
    information (every-step interaction, no bias).

    Both policies are solved on the same grid and evaluated along shared
    simulated paths. Path-steps where the full-information allocation is
    below 1e-10 in magnitude are excluded from the average and counted in
    excluded_steps; if nothing remains the estimate is undefined.
    """
    if n_paths < 100:
        raise InsufficientSamples(f"need at least 100 paths, got {n_paths}")
    robo_prof = replace(profile, phi=int(phi), beta=float(beta))
    full_prof = replace(profile, phi=1, beta=0.0)
    policy_robo = solve(market, robo_prof, T, grid)
    policy_full = solve(market, full_prof, T, grid)

    rng = np.random.default_rng(seed)
    batch = simulate_clients(market, robo_prof, T, n_paths, rng, y0=y0)
    regimes = batch["regimes"]
    demeaned = batch["returns"] - market.mu_step[regimes[:, :-1]]
    csum = np.concatenate(
        [np.zeros((n_paths, 1)), np.cumsum(demeaned, axis=1)], axis=1
    )

    zeros = np.zeros(n_paths)
    path_sum = np.zeros(n_paths)
    path_cnt = np.zeros(n_paths, dtype=int)
    p = int(phi)
    for n in range(T):
        tau = p * (n // p)
        prev = csum[:, tau] - csum[:, tau - p] if tau >= p else zeros
        cur = csum[:, n] - csum[:, tau]
        y = regimes[:, n]
        pi_robo = policy_robo.allocation_at(n, batch["xi"][:, n], prev, cur, y)
        pi_full = policy_full.allocation_at(
            n, batch["gamma_client"][:, n], zeros, zeros, y
        )
        ok = np.abs(pi_full) >= 1e-10
        gap = np.where(
            ok, np.abs(pi_robo - pi_full) / np.where(ok, np.abs(pi_full), 1.0), 0.0
        )
        path_sum += gap
        path_cnt += ok

    excluded = int(T * n_paths - path_cnt.sum())
    live = path_cnt > 0
    if not live.any():
        raise ZeroAllocation(
            "every path-step had a full-information allocation below 1e-10"
        )
    per_path = path_sum[live] / path_cnt[live]
    est = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(live.sum()))
    return SMeasure(
        estimate=est, se=se, excluded_steps=excluded, total_steps=T * n_paths
    )
