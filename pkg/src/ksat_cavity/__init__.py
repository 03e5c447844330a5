"""One-step RSB cavity analysis of random K-SAT: survey propagation,
population dynamics, thresholds, stability and large-K expansions."""

__version__ = "0.1.0"
