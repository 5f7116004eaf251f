"""Desk-scale laboratory for unsupervised video domain adaptation with
global/local adversarial view alignment, background debiasing, clip-order
self-supervision, and domain-gap metrics on a synthetic two-domain
benchmark."""

__version__ = "0.1.0"
