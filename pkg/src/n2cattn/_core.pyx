# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Mirrors ``n2cattn._pycore`` function for function."""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t

# bi-level kernel modes shared with _pycore
cdef enum:
    TENSOR = 0
    CONVEX = 1
    CLUSTER_ONLY = 2
    NODE_ONLY = 3


def naive_sums(const double[:, ::1] kc, const double[:, ::1] gate,
               const double[:, ::1] psi_q, const double[:, ::1] psi_k,
               const double[:, ::1] v, const idx_t[::1] nodes,
               const idx_t[::1] clusters, const double[::1] w,
               int mode, double alpha):
    """Term-by-term double sum over (cluster j, node t) for every query cluster."""
    cdef Py_ssize_t m = gate.shape[0]
    cdef Py_ssize_t dn = psi_q.shape[1]
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t nnz = w.shape[0]
    cdef Py_ssize_t i, e, a, b, t, j
    cdef double kn, kb, term, acc
    cdef double beta = 1.0 - alpha
    num_arr = np.zeros((m, dv), dtype=np.float64)
    den_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[::1] den = den_arr
    with nogil:
        for i in range(m):
            acc = 0.0
            for e in range(nnz):
                t = nodes[e]
                j = clusters[e]
                kn = 0.0
                if mode != CLUSTER_ONLY:
                    for a in range(dn):
                        kn = kn + psi_q[i, a] * psi_k[t, a]
                if mode == TENSOR:
                    kb = kc[i, j] * kn
                elif mode == CONVEX:
                    kb = alpha * kc[i, j] + beta * kn
                elif mode == CLUSTER_ONLY:
                    kb = kc[i, j]
                else:
                    kb = kn
                term = gate[i, j] * w[e] * kb
                acc = acc + term
                for b in range(dv):
                    num[i, b] = num[i, b] + term * v[t, b]
            den[i] = acc
    return num_arr, den_arr


def aggregate(const idx_t[::1] nodes, const idx_t[::1] clusters,
              const double[::1] w, const double[:, ::1] psi_k,
              const double[:, ::1] v, Py_ssize_t m):
    """Per-cluster sums  S_j = sum_t C_tj psi(k_t) v_t^T  and  z_j = sum_t C_tj psi(k_t)."""
    cdef Py_ssize_t dn = psi_k.shape[1]
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t nnz = w.shape[0]
    cdef Py_ssize_t e, a, b, t, j
    cdef double pa
    S_arr = np.zeros((m, dn, dv), dtype=np.float64)
    z_arr = np.zeros((m, dn), dtype=np.float64)
    cdef double[:, :, ::1] S = S_arr
    cdef double[:, ::1] z = z_arr
    with nogil:
        for e in range(nnz):
            t = nodes[e]
            j = clusters[e]
            for a in range(dn):
                pa = w[e] * psi_k[t, a]
                z[j, a] = z[j, a] + pa
                for b in range(dv):
                    S[j, a, b] = S[j, a, b] + pa * v[t, b]
    return S_arr, z_arr


def propagate(const idx_t[::1] indptr, const idx_t[::1] indices,
              const double[::1] gates, const double[:, ::1] X):
    """Gated message passing over CSR edges:  Y_i = sum_e gates_e X[indices_e]."""
    cdef Py_ssize_t m = indptr.shape[0] - 1
    cdef Py_ssize_t f = X.shape[1]
    cdef Py_ssize_t i, e, c, j
    cdef double g
    Y_arr = np.zeros((m, f), dtype=np.float64)
    cdef double[:, ::1] Y = Y_arr
    with nogil:
        for i in range(m):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                g = gates[e]
                for c in range(f):
                    Y[i, c] = Y[i, c] + g * X[j, c]
    return Y_arr


def readout(const double[:, ::1] psi_q, const double[:, :, ::1] M,
            const double[:, ::1] Z):
    """Contract aggregated messages with each cluster's node-level query."""
    cdef Py_ssize_t m = psi_q.shape[0]
    cdef Py_ssize_t dn = psi_q.shape[1]
    cdef Py_ssize_t dv = M.shape[2]
    cdef Py_ssize_t i, a, b
    cdef double p, acc
    num_arr = np.zeros((m, dv), dtype=np.float64)
    den_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[::1] den = den_arr
    with nogil:
        for i in range(m):
            acc = 0.0
            for a in range(dn):
                p = psi_q[i, a]
                acc = acc + p * Z[i, a]
                for b in range(dv):
                    num[i, b] = num[i, b] + p * M[i, a, b]
            den[i] = acc
    return num_arr, den_arr
