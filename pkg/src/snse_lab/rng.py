"""Counter-based random substreams for reproducible parallel Monte Carlo."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(base_seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory `index` of a run seeded by `base_seed`.

    Uses the Philox counter-based generator keyed by (base_seed, index), so the
    stream assigned to a trajectory does not depend on worker scheduling or on
    how many other trajectories were drawn before it.
    """
    if index < 0:
        raise ValueError("substream index must be nonnegative")
    key = np.array([base_seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
