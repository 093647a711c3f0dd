"""Distributionally robust chance-constrained MDPs."""
