"""NumPy fallback for the compiled kernels (see _kernels.pyx).

Same formulas and accumulation order as the compiled backend; results agree
to ~1e-15 relative (libm vs numpy transcendentals), which the test suite
checks explicitly.
"""

import numpy as np

BACKEND = "numpy"


def pairwise_distances(rx, tx):
    """(N_r, N_t) Euclidean distances between two point sets."""
    diff = rx[:, None, :] - tx[None, :, :]
    return np.sqrt(np.einsum("ilk,ilk->il", diff, diff))


def accumulate_path_phasors(out, rx, tx, amp, k, ref_dist, distance_scaled):
    """out[i, l] += a_il * exp(-1j * k * |rx_i - tx_l|)."""
    dist = pairwise_distances(rx, tx)
    ph = -k * dist
    if distance_scaled:
        a = amp * ref_dist / dist
    else:
        a = amp
    out += a * (np.cos(ph) + 1j * np.sin(ph))
    return out
