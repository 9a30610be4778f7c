import numpy as np


def derive_seed(base: int, *keys: int) -> int:
    """Independent 64-bit seed for a work item, fixed by (base, keys) alone."""
    state = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return int(state.generate_state(1, dtype=np.uint64)[0])
