# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled SGD kernel for the bag-of-words KGE classifier.

Same contract as graphmt.kge_inner.train_shard. With threads > 1 the
record loop runs under OpenMP with lock-free shared updates to V and W
(hogwild); results are then nondeterministic by design. threads == 1 is
bit-reproducible for a fixed record order.
"""

from libc.math cimport exp, log1p
from libc.stdlib cimport calloc, free

cimport openmp
from cython.parallel cimport prange


cdef double SIGMOID_CLIP = 30.0


cdef inline double _sigmoid(double s) nogil:
    if s > SIGMOID_CLIP:
        s = SIGMOID_CLIP
    elif s < -SIGMOID_CLIP:
        s = -SIGMOID_CLIP
    return 1.0 / (1.0 + exp(-s))


cdef inline double _softplus(double x) nogil:
    if x > SIGMOID_CLIP:
        return x
    if x < -SIGMOID_CLIP:
        return exp(x)
    return log1p(exp(x))


cdef inline double _record_step(double[:, ::1] V, double[:, ::1] W,
                                const int[::1] feat_flat, const long[::1] feat_off,
                                const int[::1] path_flat, const signed char[::1] code_flat,
                                const long[::1] path_off,
                                long j, double lr, double* h, double* gh) nogil:
    cdef long i0 = feat_off[j]
    cdef long i1 = feat_off[j + 1]
    cdef long n_in = i1 - i0
    cdef long dim = V.shape[1]
    cdef long i, k, c, node, row
    cdef double s, f, g, loss = 0.0
    cdef signed char bit

    for c in range(dim):
        h[c] = 0.0
        gh[c] = 0.0
    for i in range(i0, i1):
        row = feat_flat[i]
        for c in range(dim):
            h[c] += V[row, c]
    for c in range(dim):
        h[c] /= n_in

    for k in range(path_off[j], path_off[j + 1]):
        node = path_flat[k]
        bit = code_flat[k]
        s = 0.0
        for c in range(dim):
            s += W[node, c] * h[c]
        f = _sigmoid(s)
        g = lr * (bit - f)
        loss += _softplus(-s) if bit else _softplus(s)
        for c in range(dim):
            gh[c] += g * W[node, c]
            W[node, c] += g * h[c]

    for c in range(dim):
        gh[c] /= n_in
    for i in range(i0, i1):
        row = feat_flat[i]
        for c in range(dim):
            V[row, c] += gh[c]
    return loss


def train_shard(double[:, ::1] V, double[:, ::1] W,
                const int[::1] feat_flat, const long[::1] feat_off,
                const int[::1] path_flat, const signed char[::1] code_flat,
                const long[::1] path_off,
                const long[::1] order,
                double lr0, long done_before, long total_records,
                int threads=1):
    """One pass over `order`, updating V and W in place; returns summed loss."""
    cdef long n = order.shape[0]
    cdef long dim = V.shape[1]
    cdef long idx, j
    cdef double lr, total_loss = 0.0
    cdef double inv_total = 1.0 / total_records
    cdef int tid
    cdef double* scratch

    if threads <= 1:
        scratch = <double*> calloc(2 * dim, sizeof(double))
        if scratch == NULL:
            raise MemoryError()
        try:
            with nogil:
                for idx in range(n):
                    j = order[idx]
                    lr = lr0 * (1.0 - (done_before + idx) * inv_total)
                    total_loss += _record_step(V, W, feat_flat, feat_off,
                                               path_flat, code_flat, path_off,
                                               j, lr, scratch, scratch + dim)
        finally:
            free(scratch)
        return total_loss

    scratch = <double*> calloc(2 * dim * threads, sizeof(double))
    if scratch == NULL:
        raise MemoryError()
    try:
        for idx in prange(n, nogil=True, num_threads=threads, schedule="static"):
            j = order[idx]
            lr = lr0 * (1.0 - (done_before + idx) * inv_total)
            tid = openmp.omp_get_thread_num()
            total_loss += _record_step(V, W, feat_flat, feat_off,
                                       path_flat, code_flat, path_off,
                                       j, lr, scratch + 2 * dim * tid,
                                       scratch + 2 * dim * tid + dim)
    finally:
        free(scratch)
    return total_loss
