# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counterparts of ``ebnsim._pykernels`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double _SQ = 0.7071067811865476
# BELL[k][b][c], k = (x << 1) | z
cdef double BELL[4][2][2]
BELL[0][0][0] = _SQ; BELL[0][0][1] = 0.0; BELL[0][1][0] = 0.0; BELL[0][1][1] = _SQ
BELL[1][0][0] = _SQ; BELL[1][0][1] = 0.0; BELL[1][1][0] = 0.0; BELL[1][1][1] = -_SQ
BELL[2][0][0] = 0.0; BELL[2][0][1] = _SQ; BELL[2][1][0] = _SQ; BELL[2][1][1] = 0.0
BELL[3][0][0] = 0.0; BELL[3][0][1] = _SQ; BELL[3][1][0] = -_SQ; BELL[3][1][1] = 0.0


def pauli_channel(rho, int qubit, double px, double py, double pz):
    cdef double complex[:, ::1] r = np.ascontiguousarray(rho, dtype=np.complex128)
    out = np.empty((4, 4), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef int i, j, fi, fj, bit
    cdef double pi = 1.0 - px - py - pz
    cdef double s
    bit = 2 if qubit == 0 else 1
    for i in range(4):
        for j in range(4):
            fi = i ^ bit
            fj = j ^ bit
            s = 1.0 if ((i & bit) == 0) == ((j & bit) == 0) else -1.0
            # Z r Z on (i, j) carries the sign; X r X reads the flipped entry,
            # whose sign equals that of (i, j).
            o[i, j] = (pi + pz * s) * r[i, j] + (px + py * s) * r[fi, fj]
    return out


def amplitude_damp(rho, int qubit, double gamma):
    cdef double complex[:, ::1] r = np.ascontiguousarray(rho, dtype=np.complex128)
    out = np.empty((4, 4), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef int i, j, bit
    cdef double k1 = sqrt(1.0 - gamma)
    cdef double f
    bit = 2 if qubit == 0 else 1
    for i in range(4):
        for j in range(4):
            f = 1.0
            if i & bit:
                f *= k1
            if j & bit:
                f *= k1
            o[i, j] = f * r[i, j]
            if (i & bit) == 0 and (j & bit) == 0:
                o[i, j] = o[i, j] + gamma * r[i | bit, j | bit]
    return out


def swap_project(rho_left, rho_right):
    cdef double complex[:, ::1] r1 = np.ascontiguousarray(rho_left, dtype=np.complex128)
    cdef double complex[:, ::1] r2 = np.ascontiguousarray(rho_right, dtype=np.complex128)
    posts = np.zeros((4, 4, 4), dtype=np.complex128)
    probs = np.empty(4, dtype=np.float64)
    cdef double complex[:, :, ::1] po = posts
    cdef double[::1] pr = probs
    cdef int k, a, d, a2, d2, b, c, b2, c2
    cdef double w, w2
    cdef double complex acc
    for k in range(4):
        for a in range(2):
            for d in range(2):
                for a2 in range(2):
                    for d2 in range(2):
                        acc = 0.0
                        for b in range(2):
                            for c in range(2):
                                w = BELL[k][b][c]
                                if w == 0.0:
                                    continue
                                for b2 in range(2):
                                    for c2 in range(2):
                                        w2 = BELL[k][b2][c2]
                                        if w2 == 0.0:
                                            continue
                                        acc = acc + w * w2 * r1[2 * a + b, 2 * a2 + b2] * r2[2 * c + d, 2 * c2 + d2]
                        po[k, 2 * a + d, 2 * a2 + d2] = acc
        pr[k] = (po[k, 0, 0] + po[k, 1, 1] + po[k, 2, 2] + po[k, 3, 3]).real
    return probs, posts


def shor_decode(frames):
    cdef cnp.uint8_t[:, ::1] f = np.ascontiguousarray(frames, dtype=np.uint8).reshape(-1, 9)
    cdef Py_ssize_t n = f.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] o = out
    cdef Py_ssize_t row
    cdef int blk, q, xw, zp, xfails, zflips, lab
    for row in range(n):
        xfails = 0
        zflips = 0
        for blk in range(3):
            xw = 0
            zp = 0
            for q in range(3):
                lab = f[row, 3 * blk + q]
                xw += (lab >> 1) & 1
                zp ^= lab & 1
            if xw >= 2:
                xfails += 1
            zflips += zp
        o[row] = ((1 if zflips >= 2 else 0) << 1) | (xfails & 1)
    return out
