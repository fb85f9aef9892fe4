"""Independent numerical oracles shared by the test suite.

Deliberately written from scratch (finite differences, brute-force
enumeration) so they stay independent of the library code they check.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def central_difference(f, x, h=1e-5):
    """Gradient of a scalar function at x, one entry at a time."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        kept = flat[i]
        flat[i] = kept + h
        up = f(x)
        flat[i] = kept - h
        down = f(x)
        flat[i] = kept
        out[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Max absolute gap over the larger infinity norm."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def connected_components(mask):
    """4-connected components of a boolean grid, by breadth-first search.

    Returns a list of components, each a list of (row, col) cells, in scan
    order of their first cell.
    """
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    components = []
    rows, cols = mask.shape
    for r0 in range(rows):
        for c0 in range(cols):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            queue = deque([(r0, c0)])
            seen[r0, c0] = True
            cells = []
            while queue:
                r, c = queue.popleft()
                cells.append((r, c))
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if (0 <= rr < rows and 0 <= cc < cols
                            and mask[rr, cc] and not seen[rr, cc]):
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            components.append(cells)
    return components
