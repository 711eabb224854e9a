from fractions import Fraction

import pytest

from crowdsense.crypto_primitives import generate_group, paillier_keygen, seeded_rng
from crowdsense.mechanisms import JobModel
from crowdsense.protocol import AuctionConfig
from crowdsense.settings import Settings

TEST_BITS = 128


@pytest.fixture(scope="session")
def settings():
    return Settings(group_bits=TEST_BITS, paillier_bits=TEST_BITS, code_bits=32, scale_headroom=10)


@pytest.fixture(scope="session")
def group():
    return generate_group(TEST_BITS, 1)


@pytest.fixture(scope="session")
def paillier():
    return paillier_keygen(TEST_BITS, 3)


@pytest.fixture
def rng():
    return seeded_rng(42)


@pytest.fixture
def make_config(settings):
    """AuctionConfig factory with test-sized keys"""

    def factory(model=JobModel.HOMOGENEOUS, budget=8, bids=(1, 2, 3, 4), limits=(1,), **kwargs):
        return AuctionConfig(
            tid=kwargs.pop("tid", "test-task"),
            budget=Fraction(budget),
            job_model=model,
            bid_domain=bids,
            limit_domain=limits,
            settings=settings,
            **kwargs,
        )

    return factory
