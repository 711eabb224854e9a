"""Privacy-preserving verifiable incentive mechanisms for crowd-sensing auctions."""

__version__ = "0.1.0"
