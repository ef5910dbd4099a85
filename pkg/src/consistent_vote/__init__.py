"""Selective ensembles: plurality votes that abstain unless a binomial test certifies the winner."""

__version__ = "0.1.0"
