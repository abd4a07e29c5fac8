"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riszf.channel import ChannelSet

settings.register_profile(
    "suite",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def crandn(rng, shape):
    """Circular complex Gaussian with unit per-entry variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_channelset(rng, k=2, m=4, nr=8) -> ChannelSet:
    return ChannelSet.from_legs(
        crandn(rng, (k, m)), crandn(rng, (nr, m)), crandn(rng, (k, nr)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
