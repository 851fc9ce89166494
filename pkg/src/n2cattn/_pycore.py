"""numpy implementations of the hot loops; fallback for ``n2cattn._core``.

Signatures and return shapes match the compiled module exactly.
"""
import numpy as np
import scipy.sparse as sp

TENSOR, CONVEX, CLUSTER_ONLY, NODE_ONLY = 0, 1, 2, 3


# query rows per block in naive_sums, sized so a block holds about 2**20 terms
_BLOCK_TERMS = 1 << 20


def naive_sums(kc, gate, psi_q, psi_k, v, nodes, clusters, w, mode, alpha):
    """Every (query cluster, CAM entry) term, evaluated in blocks of query rows."""
    m = gate.shape[0]
    num = np.zeros((m, v.shape[1]))
    den = np.zeros(m)
    vt = v[nodes]
    kt = psi_k[nodes]
    step = max(1, _BLOCK_TERMS // max(len(nodes), 1))
    for lo in range(0, m, step):
        rows = slice(lo, min(lo + step, m))
        kcb = kc[rows][:, clusters]
        if mode == CLUSTER_ONLY:
            kb = kcb
        else:
            kn = psi_q[rows] @ kt.T
            if mode == TENSOR:
                kb = kcb * kn
            elif mode == CONVEX:
                kb = alpha * kcb + (1.0 - alpha) * kn
            else:
                kb = kn
        terms = gate[rows][:, clusters] * w * kb
        den[rows] = terms.sum(axis=1)
        num[rows] = terms @ vt
    return num, den


def aggregate(nodes, clusters, w, psi_k, v, m):
    n, dn = psi_k.shape
    dv = v.shape[1]
    C_t = sp.csr_matrix((w, (clusters, nodes)), shape=(m, n))
    outer = (psi_k[:, :, None] * v[:, None, :]).reshape(n, dn * dv)
    S = np.asarray(C_t @ outer).reshape(m, dn, dv)
    z = np.asarray(C_t @ psi_k)
    return S, z


def propagate(indptr, indices, gates, X):
    m = len(indptr) - 1
    G = sp.csr_matrix((gates, indices, indptr), shape=(m, X.shape[0]))
    return np.asarray(G @ X)


def readout(psi_q, M, Z):
    num = np.einsum("ia,iab->ib", psi_q, M)
    den = np.einsum("ia,ia->i", psi_q, Z)
    return num, den
