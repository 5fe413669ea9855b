# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event kernel: a thin wrapper around ``_kernel.c``.

The C kernel is an operation-for-operation port of ``_engine_py.PyEngine``
and consumes the random stream identically, so both backends produce
bitwise-identical trajectories for the same seed.
"""

cimport cython
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int32_t
from libc.math cimport INFINITY

from .rng import ZIG_R, exp_ziggurat_tables

cnp.import_array()


cdef extern from "_kernel.h":
    int NF_REFR, NF_HORIZON, NF_ABSORBING, NF_NOMEM

    ctypedef struct nf_rng:
        uint64_t s0, s1, s2, s3

    ctypedef struct nf_vec:
        int32_t* data
        int64_t size, cap

    ctypedef struct nf_engine:
        int64_t n_pop, n_e, n_i, npp, n_neurons, threshold, reversal
        int allow_self
        double inv_tau[4]
        double inv_tau_r, ext_sum
        const int64_t* ext_thresh
        const int64_t* ext_alias
        int64_t kick_base[4]
        int64_t kick_sign[4]
        uint64_t kick_frac[4]
        const int64_t* nb_ptr
        const int64_t* nb_idx
        int64_t tab_offset[12]
        int64_t tab_size[12]
        const int64_t* tab_thresh
        const int64_t* tab_alias
        const int32_t* pop_of
        nf_rng rng
        double t, t_ext, t_int
        double cum[6]
        int32_t* v
        int32_t* h
        int32_t* pos
        int64_t* n_spikes
        int64_t* n_exits
        int64_t* stamp
        int64_t token
        nf_vec bags[4]
        nf_vec refr[2]
        int64_t* pend_count
        int64_t* delivered
        int64_t* missed
        int64_t* refr_count
        int64_t* ext_arrivals
        int64_t* ext_missed
        double* refr_time
        double* refr_last
        double* spike_t
        int32_t* spike_g
        int64_t n_spk, cap_spk

    void nf_set_ziggurat(const uint64_t* ke, const double* we, const double* fe, double r)
    int nf_init_storage(nf_engine* e)
    void nf_free_storage(nf_engine* e)
    int nf_vec_push(nf_vec* v, int32_t x)
    void nf_start_clocks(nf_engine* e)
    void nf_refr_touch(nf_engine* e, int64_t idx)
    int nf_step(nf_engine* e, double t_end, int64_t* spiked)
    int nf_advance(nf_engine* e, double t_end) nogil


HORIZON = NF_HORIZON
ABSORBING = NF_ABSORBING


def _load_tables():
    ke, we, fe = exp_ziggurat_tables()
    cdef uint64_t[::1] k = np.array(ke, dtype=np.uint64)
    cdef double[::1] w = np.array(we, dtype=np.float64)
    cdef double[::1] f = np.array(fe, dtype=np.float64)
    nf_set_ziggurat(&k[0], &w[0], &f[0], ZIG_R)


_load_tables()


cdef inline int64_t* i64(object a):
    return <int64_t*>cnp.PyArray_DATA(a)


cdef inline int32_t* i32(object a):
    return <int32_t*>cnp.PyArray_DATA(a)


cdef inline double* f64(object a):
    return <double*>cnp.PyArray_DATA(a)


@cython.final
cdef class Engine:
    cdef nf_engine e
    cdef list _keep
    cdef public str backend

    def __cinit__(self):
        cdef int i
        for i in range(4):
            self.e.bags[i].data = NULL
        for i in range(2):
            self.e.refr[i].data = NULL
        self.e.spike_t = NULL
        self.e.spike_g = NULL

    def __dealloc__(self):
        nf_free_storage(&self.e)

    cdef object _hold(self, a, dtype):
        arr = np.ascontiguousarray(np.array(a, dtype=dtype).ravel())
        self._keep.append(arr)
        return arr

    def __init__(self, layout, voltages, rng_state, double t0=0.0):
        cdef int i
        cdef int64_t g, n, q, P
        cdef nf_engine* e = &self.e
        self.backend = "cython"
        self._keep = []
        e.n_pop = layout.n_pop
        e.n_e = layout.n_e
        e.n_i = layout.n_i
        e.npp = e.n_e + e.n_i
        n = layout.n_neurons
        e.n_neurons = n
        e.threshold = layout.threshold
        e.reversal = layout.reversal
        e.allow_self = bool(layout.allow_self_kick)
        for i in range(4):
            e.inv_tau[i] = float(layout.inv_tau[i])
            e.kick_base[i] = int(layout.kick_base[i])
            e.kick_frac[i] = int(layout.kick_frac[i])
            e.kick_sign[i] = 1 if i < 2 else -1
        e.inv_tau_r = float(layout.inv_tau_r)
        e.ext_sum = float(layout.ext_sum)
        for i in range(12):
            e.tab_offset[i] = int(layout.tab_offset[i])
            e.tab_size[i] = int(layout.tab_size[i])
        e.ext_thresh = i64(self._hold(layout.ext_thresh, np.int64))
        e.ext_alias = i64(self._hold(layout.ext_alias, np.int64))
        e.nb_ptr = i64(self._hold(layout.nb_ptr, np.int64))
        nb = np.asarray(layout.nb_idx, dtype=np.int64)
        e.nb_idx = i64(self._hold(nb if nb.size else np.zeros(1), np.int64))
        e.tab_thresh = i64(self._hold(layout.tab_thresh, np.int64))
        e.tab_alias = i64(self._hold(layout.tab_alias, np.int64))
        e.pop_of = i32(self._hold(np.arange(n) // max(e.npp, 1), np.int32))

        st = [int(w) for w in rng_state]
        e.rng.s0 = st[0]
        e.rng.s1 = st[1]
        e.rng.s2 = st[2]
        e.rng.s3 = st[3]
        e.t = t0

        vin = np.asarray(voltages, dtype=np.int64)
        if vin.shape != (n,):
            raise ValueError(f"expected {n} voltages, got shape {vin.shape}")
        P = e.n_pop
        e.v = i32(self._hold(vin, np.int32))
        e.h = i32(self._hold(np.zeros(2 * n), np.int32))
        e.pos = i32(self._hold(np.full(n, -1), np.int32))
        e.n_spikes = i64(self._hold(np.zeros(n), np.int64))
        e.n_exits = i64(self._hold(np.zeros(n), np.int64))
        e.stamp = i64(self._hold(np.zeros(max(e.n_e, e.n_i, 1)), np.int64))
        e.token = 0
        e.pend_count = i64(self._hold(np.zeros(4 * P), np.int64))
        e.delivered = i64(self._hold(np.zeros(4 * P), np.int64))
        e.missed = i64(self._hold(np.zeros(4 * P), np.int64))
        e.refr_count = i64(self._hold(np.zeros(2 * P), np.int64))
        e.ext_arrivals = i64(self._hold(np.zeros(2 * P), np.int64))
        e.ext_missed = i64(self._hold(np.zeros(2 * P), np.int64))
        e.refr_time = f64(self._hold(np.zeros(2 * P), np.float64))
        e.refr_last = f64(self._hold(np.full(2 * P, t0), np.float64))
        if nf_init_storage(e):
            raise MemoryError()

        for g in range(n):
            if e.v[g] == NF_REFR:
                q = 0 if g % e.npp < e.n_e else 1
                e.pos[g] = <int32_t>e.refr[q].size
                if nf_vec_push(&e.refr[q], <int32_t>g):
                    raise MemoryError()
                e.refr_count[q * P + g // e.npp] += 1
        nf_start_clocks(e)

    # -- dynamics -------------------------------------------------------

    def total_rate(self):
        cdef int c
        cdef double internal = <double>self.e.bags[0].size * self.e.inv_tau[0]
        for c in range(1, 4):
            internal = internal + <double>self.e.bags[c].size * self.e.inv_tau[c]
        internal = internal + <double>self.e.refr[0].size * self.e.inv_tau_r
        internal = internal + <double>self.e.refr[1].size * self.e.inv_tau_r
        return self.e.ext_sum + internal

    def step(self, double t_end=INFINITY):
        """Apply one event; returns ``(channel, spiking gid or -1)``."""
        cdef int64_t spiked = -1
        cdef int ch = nf_step(&self.e, t_end, &spiked)
        if ch == NF_NOMEM:
            raise MemoryError()
        return ch, spiked

    def advance(self, double t_end):
        """Step until the clock reaches ``t_end``; returns HORIZON or ABSORBING."""
        cdef int ch
        with nogil:
            ch = nf_advance(&self.e, t_end)
        if ch == NF_NOMEM:
            raise MemoryError()
        return ch

    # -- export ---------------------------------------------------------

    def flush(self):
        cdef int64_t i
        for i in range(2 * self.e.n_pop):
            nf_refr_touch(&self.e, i)

    def arrays(self):
        self.flush()
        n, P = self.e.n_neurons, self.e.n_pop
        h = np.asarray(<int32_t[:2 * n]>self.e.h)
        return dict(
            v=np.asarray(<int32_t[:n]>self.e.v).astype(np.int64),
            h_e=h[:n].astype(np.int64),
            h_i=h[n:].astype(np.int64),
            n_spikes=np.asarray(<int64_t[:n]>self.e.n_spikes).copy(),
            n_exits=np.asarray(<int64_t[:n]>self.e.n_exits).copy(),
            pend_count=np.asarray(<int64_t[:4 * P]>self.e.pend_count).reshape(4, P).copy(),
            refr_count=np.asarray(<int64_t[:2 * P]>self.e.refr_count).reshape(2, P).copy(),
            refr_time=np.asarray(<double[:2 * P]>self.e.refr_time).reshape(2, P).copy(),
            delivered=np.asarray(<int64_t[:4 * P]>self.e.delivered).reshape(4, P).copy(),
            missed=np.asarray(<int64_t[:4 * P]>self.e.missed).reshape(4, P).copy(),
            ext_arrivals=np.asarray(<int64_t[:2 * P]>self.e.ext_arrivals).reshape(2, P).copy(),
            ext_missed=np.asarray(<int64_t[:2 * P]>self.e.ext_missed).reshape(2, P).copy(),
        )

    cdef object _vec(self, nf_vec* v):
        if v.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.asarray(<int32_t[:v.size]>v.data).astype(np.int64)

    def bag(self, int slot):
        return self._vec(&self.e.bags[slot])

    def refractory_list(self, int q):
        return self._vec(&self.e.refr[q])

    def spikes(self):
        cdef int64_t m = self.e.n_spk
        if m == 0:
            return np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int64)
        return (np.asarray(<double[:m]>self.e.spike_t).copy(),
                np.asarray(<int32_t[:m]>self.e.spike_g).astype(np.int64))

    def clear_spikes(self):
        self.e.n_spk = 0

    @property
    def clock(self):
        return self.e.t

    def rng_state(self):
        return [int(self.e.rng.s0), int(self.e.rng.s1), int(self.e.rng.s2), int(self.e.rng.s3)]
