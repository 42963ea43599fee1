"""Process-pool fan-out for independent work items."""

from concurrent.futures import ProcessPoolExecutor

import numpy as np


def split_indices(n_items: int, workers: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n_items), max(1, workers)) if len(c)]


def map_chunks(fn, chunks, workers: int = 1):
    """Apply ``fn`` to each chunk, in order; ``workers > 1`` uses separate processes."""
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))
