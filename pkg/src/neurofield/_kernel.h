/* Event kernel in plain C, wrapped by _engine.pyx.
 *
 * Mirrors _engine_py.PyEngine operation for operation; both must consume the
 * random stream identically (tests/test_backends.py checks bitwise parity).
 */
#ifndef NEUROFIELD_KERNEL_H
#define NEUROFIELD_KERNEL_H

#include <stdint.h>

#define NF_REFR INT32_MIN
#define NF_HORIZON (-1)
#define NF_ABSORBING (-2)
#define NF_NOMEM (-4)

typedef struct {
    uint64_t s0, s1, s2, s3;
} nf_rng;

typedef struct {
    int32_t *data;
    int64_t size, cap;
} nf_vec;

typedef struct {
    /* configuration (arrays owned by the wrapper) */
    int64_t n_pop, n_e, n_i, npp, n_neurons, threshold, reversal;
    int allow_self;
    double inv_tau[4], inv_tau_r, ext_sum;
    const int64_t *ext_thresh, *ext_alias;      /* (2 * n_pop) */
    int64_t kick_base[4], kick_sign[4];
    uint64_t kick_frac[4];
    const int64_t *nb_ptr, *nb_idx;
    int64_t tab_offset[12], tab_size[12];
    const int64_t *tab_thresh, *tab_alias;
    const int32_t *pop_of;

    /* state */
    nf_rng rng;
    double t, t_ext, t_int;
    double cum[6];
    int32_t *v, *h, *pos;                        /* h: (2 * n_neurons), E then I */
    int64_t *n_spikes, *n_exits, *stamp;
    int64_t token;
    nf_vec bags[4], refr[2];
    int64_t *pend_count, *delivered, *missed;   /* (4 * n_pop) */
    int64_t *refr_count, *ext_arrivals, *ext_missed;  /* (2 * n_pop) */
    double *refr_time, *refr_last;              /* (2 * n_pop) */
    double *spike_t;
    int32_t *spike_g;
    int64_t n_spk, cap_spk;
} nf_engine;

void nf_set_ziggurat(const uint64_t *ke, const double *we, const double *fe, double r);
int nf_init_storage(nf_engine *e);
void nf_free_storage(nf_engine *e);
int nf_vec_push(nf_vec *v, int32_t x);
void nf_start_clocks(nf_engine *e);
void nf_refr_touch(nf_engine *e, int64_t idx);
int nf_step(nf_engine *e, double t_end, int64_t *spiked);
int nf_advance(nf_engine *e, double t_end);

/* exposed for tests */
uint64_t nf_next64(nf_rng *r);
double nf_exponential(nf_rng *r);

#endif
