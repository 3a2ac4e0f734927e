"""Battery ageing trajectories as continuous functions: knee/EOL descriptors,
population lifetime statistics and early-life RUL prediction."""

__version__ = "0.1.0"
