# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: pairwise distances and per-path phasor accumulation.

Must stay numerically interchangeable with hspm._kernels_py (same formulas,
same accumulation order); the two backends are cross-checked in the tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

cnp.import_array()

BACKEND = "cython"


def pairwise_distances(double[:, ::1] rx, double[:, ::1] tx):
    """(N_r, N_t) Euclidean distances between two point sets."""
    cdef Py_ssize_t nr = rx.shape[0]
    cdef Py_ssize_t nt = tx.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nr, nt))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, l
    cdef double dx, dy, dz
    for i in range(nr):
        for l in range(nt):
            dx = rx[i, 0] - tx[l, 0]
            dy = rx[i, 1] - tx[l, 1]
            dz = rx[i, 2] - tx[l, 2]
            o[i, l] = sqrt(dx * dx + dy * dy + dz * dz)
    return out


def accumulate_path_phasors(complex[:, ::1] out, double[:, ::1] rx,
                            double[:, ::1] tx, double amp, double k,
                            double ref_dist, bint distance_scaled):
    """out[i, l] += a_il * exp(-1j * k * |rx_i - tx_l|).

    a_il is amp (equal-amplitude mode) or amp * ref_dist / D_il
    (distance-scaled mode).
    """
    cdef Py_ssize_t nr = rx.shape[0]
    cdef Py_ssize_t nt = tx.shape[0]
    cdef Py_ssize_t i, l
    cdef double dx, dy, dz, dist, ph, a
    for i in range(nr):
        for l in range(nt):
            dx = rx[i, 0] - tx[l, 0]
            dy = rx[i, 1] - tx[l, 1]
            dz = rx[i, 2] - tx[l, 2]
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            ph = -k * dist
            if distance_scaled:
                a = amp * ref_dist / dist
            else:
                a = amp
            out[i, l] = out[i, l] + a * (cos(ph) + 1j * sin(ph))
