"""Counter-based expansion of one user seed into per-stage seeds."""

import numpy as np

STAGES = ("split", "smote", "init", "search", "transfer", "grpo")


def derive_seed(seed, *counters):
    """Deterministic 32-bit seed for the stage addressed by ``counters``."""
    keys = [int(c) if not isinstance(c, str) else STAGES.index(c) for c in counters]
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(keys)).generate_state(1)[0])


def stage_seeds(seed):
    return {name: derive_seed(seed, name) for name in STAGES}
