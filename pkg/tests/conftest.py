"""Shared fixtures: the two market calibrations used throughout the suite."""

import numpy as np
import pytest

from robo_mv.market import MarketParams


@pytest.fixture
def two_state_market() -> MarketParams:
    """Two-regime monthly market (bull state 0, bear state 1)."""
    return MarketParams(
        num_states=2,
        transition=np.array([[0.95, 0.05], [0.10, 0.90]]),
        risk_free=np.array([0.015, 0.0]),
        mean_return=np.array([0.081, 0.137]),
        vol_return=np.array([0.155, 0.173]),
        steps_per_year=12,
    )


@pytest.fixture
def single_state_market() -> MarketParams:
    """One-regime monthly market with zero risk-free rate."""
    return MarketParams(
        num_states=1,
        transition=np.array([[1.0]]),
        risk_free=np.array([0.0]),
        mean_return=np.array([0.10]),
        vol_return=np.array([0.20]),
        steps_per_year=12,
    )
