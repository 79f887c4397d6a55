"""Long-run Sharpe-ratio analytics for state-homogeneous allocation rules.

A rule here keeps the risky fraction constant within each regime: a base
allocation in the growth state and a tilted allocation in the recessionary
state. The long-run (stationary) Sharpe ratio of such a rule has a closed
form, and so do the signs of its derivatives with respect to the market
asymmetry parameters. The module also inverts the construction: given the
rule, it recovers the unique risk-aversion process that makes the rule the
equilibrium policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from robo_mv.errors import (
    BadDimension,
    ConfigError,
    DegenerateDenominator,
    RootBracketFailure,
)
from robo_mv.market import MarketParams, stationary_distribution, validate
from robo_mv.solver import ReducedState, allocation_independent, state_only_ab


@dataclass(frozen=True)
class CycleStrategy:
    """Fixed-mix rule: `pi_bar` in the growth state, `pi_bar*(1+delta)` in
    every other state."""

    pi_bar: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.pi_bar > 0:
            raise ConfigError(f"pi_bar must be > 0, got {self.pi_bar}")
        if not self.delta > -1.0:
            raise ConfigError(f"delta must be > -1, got {self.delta}")

    def allocations(self, num_states: int) -> np.ndarray:
        """Per-regime risky fractions, the tilt applied to states 1, 2, ..."""
        out = np.full(num_states, self.pi_bar * (1.0 + self.delta))
        out[0] = self.pi_bar
        return out


@dataclass(frozen=True)
class SharpeInputs:
    """Reduced two-state parameters of the closed-form Sharpe ratio.

    lam  -- stationary probability of the recessionary state,
    a    -- ratio of mean excess returns, state 2 over state 1,
    b    -- ratio of return volatilities, state 2 over state 1,
    u    -- squared inverse market Sharpe ratio of state 1, per step.

    All per-step: u scales with the number of steps per year, a and b do not.
    """

    lam: float
    a: float
    b: float
    u: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        for name in ("a", "b", "u"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")


def inputs_from_market(market: MarketParams) -> SharpeInputs:
    """Reduce a two-state market to the (lam, a, b, u) parameterization."""
    validate(market)
    if market.num_states != 2:
        raise BadDimension(
            f"the reduced parameterization needs exactly 2 states, "
            f"got {market.num_states}"
        )
    mt = market.mu_tilde_step
    sg = market.sigma_step
    if mt[0] == 0.0:
        raise DegenerateDenominator("state-1 excess mean is zero")
    lam = float(stationary_distribution(market)[1])
    return SharpeInputs(
        lam=lam,
        a=float(mt[1] / mt[0]),
        b=float(sg[1] / sg[0]),
        u=float((sg[0] / mt[0]) ** 2),
    )


def sharpe_general(allocations, market: MarketParams) -> float:
    """Stationary per-step Sharpe ratio of a per-regime fixed-mix rule.

    Mean and variance of the one-step excess return are taken under the
    stationary regime distribution; the variance splits into a within-state
    part and a between-state part, which is what caps the ratio at the best
    single-state market Sharpe ratio.
    """
    validate(market)
    pi = np.asarray(allocations, dtype=float)
    if pi.shape != (market.num_states,):
        raise BadDimension(
            f"need one allocation per state, got shape {pi.shape} "
            f"for {market.num_states} states"
        )
    lam = stationary_distribution(market)
    mt = market.mu_tilde_step
    sg = market.sigma_step
    mean = float(np.sum(lam * mt * pi))
    var = float(np.sum(lam * (sg**2 * pi**2 + (mt * pi - mean) ** 2)))
    if var <= 0.0:
        raise DegenerateDenominator("the rule has zero return variance")
    return mean / math.sqrt(var)


def sharpe_delta(delta: float, inputs: SharpeInputs) -> float:
    """Closed-form per-step Sharpe ratio of the tilted rule as a function of
    the tilt.

    The base allocation cancels, leaving s = 1/sqrt(h - 1) with

        h = ((1-lam)(1+u) + lam (a^2 + u b^2)(1+delta)^2) / g^2,
        g = 1 + lam (a (1+delta) - 1).
    """
    lam, a, b, u = inputs.lam, inputs.a, inputs.b, inputs.u
    g = 1.0 + lam * (a * (1.0 + delta) - 1.0)
    if g <= 0.0:
        raise DegenerateDenominator(
            f"mean excess return is not positive at delta={delta}"
        )
    h = ((1.0 - lam) * (1.0 + u) + lam * (a * a + u * b * b) * (1.0 + delta) ** 2) / (
        g * g
    )
    if h - 1.0 <= 0.0:
        raise DegenerateDenominator(f"zero return variance at delta={delta}")
    return 1.0 / math.sqrt(h - 1.0)


def monotone_in_delta(delta: float, inputs: SharpeInputs) -> bool:
    """Whether the Sharpe ratio is rising in the tilt at this point:

        ds/ddelta > 0  <=>  1 + u > a (1 + (b^2/a^2) u) (1 + delta).
    """
    a, b, u = inputs.a, inputs.b, inputs.u
    return 1.0 + u > (a + u * b * b / a) * (1.0 + delta)


def sensitivity_predicates(inputs: SharpeInputs, delta: float = 0.0) -> dict:
    """Signs of the Sharpe ratio's derivatives in (a, b, lam) at a tilt.

    Each entry is the exact inequality characterization, rearranged into a
    division-free form so it stays valid at the lam = 1 boundary and when
    a (1+delta) crosses 1 (the textbook single-fraction display silently
    assumes both factors of its denominator are positive):

        increasing_in_a:   a (1-lam)(1+delta) < (1-lam)(1+u) + lam u b^2 (1+delta)^2
        decreasing_in_b:   always, for b > 0
        increasing_in_lam: lam * e * (c1 - c0) > c1 - c0 (2 a (1+delta) - 1)

    with e = a(1+delta) - 1, c0 = 1 + u, c1 = (a^2 + u b^2)(1+delta)^2.
    """
    lam, a, b, u = inputs.lam, inputs.a, inputs.b, inputs.u
    d1 = 1.0 + delta
    e = a * d1 - 1.0
    c0 = 1.0 + u
    c1 = (a * a + u * b * b) * d1 * d1
    return {
        "increasing_in_a": a * (1.0 - lam) * d1 < (1.0 - lam) * c0 + lam * u * b * b * d1 * d1,
        "decreasing_in_b": b > 0.0,
        "increasing_in_lam": lam * e * (c1 - c0) > c1 - c0 * (2.0 * a * d1 - 1.0),
    }


def concavity_at_zero(inputs: SharpeInputs, step: float = 1e-3) -> float:
    """Central second difference of the Sharpe ratio at zero tilt.

    Negative for small positive lam (the ratio is locally concave: cutting
    the recession allocation hurts more than raising it helps) and zero at
    lam = 0, where the tilt never applies.
    """
    if not step > 0:
        raise ConfigError(f"step must be > 0, got {step}")
    s = lambda d: sharpe_delta(d, inputs)
    return (s(step) - 2.0 * s(0.0) + s(-step)) / (step * step)


def implied_gamma(pi_bar: float, delta: float, market: MarketParams, T: int) -> np.ndarray:
    """Risk-aversion table (T, num_states) whose equilibrium policy is the
    tilted fixed-mix rule.

    At the final step the policy is the one-period ratio, inverted directly.
    Earlier, the map from risk aversion to allocation (at the rule's own
    future moments) is strictly decreasing on (0, mu_a / (R (mu_b - mu_a^2))),
    spans (-target, +inf) there, and is bisected to its unique root.
    """
    validate(market)
    strategy = CycleStrategy(pi_bar, delta)
    if T < 1:
        raise ConfigError(f"horizon T must be >= 1, got {T}")
    M = market.num_states
    alloc = strategy.allocations(M)
    targets = np.tile(alloc, (T, 1))
    a, b = state_only_ab(market, targets)

    P = market.transition
    mt = market.mu_tilde_step
    sg = market.sigma_step
    R = market.R_step
    gam = np.empty((T, M))
    gam[T - 1] = mt / (alloc * sg**2)
    for n in range(T - 2, -1, -1):
        mu_a = P @ a[n + 1]
        mu_b = P @ b[n + 1]
        for y in range(M):
            gap = mu_b[y] - mu_a[y] ** 2
            if gap <= 0.0:
                raise RootBracketFailure(
                    f"future moment gap {gap!r} at n={n}, state {y}: "
                    "no admissible risk-aversion interval"
                )
            hi = mu_a[y] / (R[y] * gap)
            st = ReducedState(xi=1.0, regime=y)

            def f(x, n=n, y=y, st=st, ma=mu_a[y], mb=mu_b[y]):
                return allocation_independent(n, st, ma, mb, x, market) - alloc[y]

            lo = hi / 2.0
            while f(lo) <= 0.0:
                lo /= 2.0
                if lo < hi * 1e-300:
                    raise RootBracketFailure(
                        f"no sign change below gamma={hi} at n={n}, state {y}"
                    )
            gam[n, y] = bisect(f, lo, hi, xtol=1e-13, maxiter=300)
    return gam


def annualize_sharpe(s_step: float, steps_per_year: int) -> float:
    """Scale a per-step Sharpe ratio to an annual one."""
    if steps_per_year < 1:
        raise ConfigError(f"steps_per_year must be >= 1, got {steps_per_year}")
    return s_step * math.sqrt(steps_per_year)
