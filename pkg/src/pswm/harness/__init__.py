"""CLI, configuration, training, evaluation, planning and benchmarks."""
