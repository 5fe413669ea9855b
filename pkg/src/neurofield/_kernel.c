/* Event kernel; see _kernel.h and _engine_py.py (the reference). */
#include <math.h>
#include <stdlib.h>

#include "_kernel.h"

#define LIKELY(x) __builtin_expect(!!(x), 1)
#define UNLIKELY(x) __builtin_expect(!!(x), 0)

static const double INV53 = 1.0 / 9007199254740992.0;

static uint64_t ZKE[256];
static double ZWE[256];
static double ZFE[256];
static double ZR;

void nf_set_ziggurat(const uint64_t *ke, const double *we, const double *fe, double r)
{
    for (int i = 0; i < 256; i++) {
        ZKE[i] = ke[i];
        ZWE[i] = we[i];
        ZFE[i] = fe[i];
    }
    ZR = r;
}

/* -- random variates ---------------------------------------------------- */

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

static inline uint64_t next64(nf_rng *r)
{
    const uint64_t result = rotl(r->s1 * 5, 7) * 9;
    const uint64_t t = r->s1 << 17;
    r->s2 ^= r->s0;
    r->s3 ^= r->s1;
    r->s1 ^= r->s2;
    r->s0 ^= r->s3;
    r->s2 ^= t;
    r->s3 = rotl(r->s3, 45);
    return result;
}

static inline double uniform_open(nf_rng *r) { return (double)((next64(r) >> 11) + 1) * INV53; }
static inline double uniform(nf_rng *r) { return (double)(next64(r) >> 11) * INV53; }

static inline int64_t below(nf_rng *r, int64_t n)
{
    return (int64_t)(((next64(r) >> 32) * (uint64_t)n) >> 32);
}

static inline int64_t alias_draw(nf_rng *r, int64_t size, const int64_t *thresh, const int64_t *alias)
{
    const uint64_t x = next64(r);
    int64_t col = (int64_t)(((x >> 32) * (uint64_t)size) >> 32);
    if ((int64_t)(x & 0xFFFFFFFFULL) >= thresh[col])
        col = alias[col];
    return col;
}

static __attribute__((noinline)) double exp_slow(nf_rng *r, uint64_t idx, double x)
{
    for (;;) {
        if (idx == 0)
            return ZR - log(uniform_open(r));
        if ((ZFE[idx - 1] - ZFE[idx]) * uniform(r) + ZFE[idx] < exp(-x))
            return x;
        uint64_t ri = next64(r) >> 3;
        idx = ri & 0xFF;
        ri >>= 8;
        x = (double)ri * ZWE[idx];
        if (ri < ZKE[idx])
            return x;
    }
}

static inline double exponential(nf_rng *r)
{
    uint64_t ri = next64(r) >> 3;
    const uint64_t idx = ri & 0xFF;
    ri >>= 8;
    const double x = (double)ri * ZWE[idx];
    if (LIKELY(ri < ZKE[idx]))
        return x;
    nf_rng tmp = *r;
    const double y = exp_slow(&tmp, idx, x);
    *r = tmp;
    return y;
}

uint64_t nf_next64(nf_rng *r) { return next64(r); }
double nf_exponential(nf_rng *r) { return exponential(r); }

/* -- storage ------------------------------------------------------------ */

static int vec_init(nf_vec *v, int64_t cap)
{
    if (cap < 16)
        cap = 16;
    v->data = (int32_t *)malloc((size_t)cap * sizeof(int32_t));
    v->size = 0;
    v->cap = cap;
    return v->data ? 0 : NF_NOMEM;
}

static int vec_reserve(nf_vec *v, int64_t need)
{
    if (need <= v->cap)
        return 0;
    int64_t cap = v->cap;
    while (cap < need)
        cap *= 2;
    int32_t *nd = (int32_t *)realloc(v->data, (size_t)cap * sizeof(int32_t));
    if (!nd)
        return NF_NOMEM;
    v->data = nd;
    v->cap = cap;
    return 0;
}

int nf_vec_push(nf_vec *v, int32_t x)
{
    if (UNLIKELY(v->size == v->cap) && vec_reserve(v, v->size + 1))
        return NF_NOMEM;
    v->data[v->size++] = x;
    return 0;
}

int nf_init_storage(nf_engine *e)
{
    for (int i = 0; i < 4; i++)
        if (vec_init(&e->bags[i], 1024))
            return NF_NOMEM;
    if (vec_init(&e->refr[0], e->n_e * e->n_pop) || vec_init(&e->refr[1], e->n_i * e->n_pop))
        return NF_NOMEM;
    e->cap_spk = 4096;
    e->n_spk = 0;
    e->spike_t = (double *)malloc((size_t)e->cap_spk * sizeof(double));
    e->spike_g = (int32_t *)malloc((size_t)e->cap_spk * sizeof(int32_t));
    return (e->spike_t && e->spike_g) ? 0 : NF_NOMEM;
}

void nf_free_storage(nf_engine *e)
{
    for (int i = 0; i < 4; i++) {
        free(e->bags[i].data);
        e->bags[i].data = NULL;
    }
    for (int i = 0; i < 2; i++) {
        free(e->refr[i].data);
        e->refr[i].data = NULL;
    }
    free(e->spike_t);
    free(e->spike_g);
    e->spike_t = NULL;
    e->spike_g = NULL;
}

/* -- bookkeeping -------------------------------------------------------- */

void nf_refr_touch(nf_engine *e, int64_t idx)
{
    e->refr_time[idx] += (double)e->refr_count[idx] * (e->t - e->refr_last[idx]);
    e->refr_last[idx] = e->t;
}

/* Recompute the internal cumulative rates and redraw the internal clock.
 * cum[] is reused by the next internal event; the rates cannot change before
 * then without another redraw. */
static inline void redraw(nf_engine *e, nf_rng *r)
{
    double *cum = e->cum;
    cum[0] = (double)e->bags[0].size * e->inv_tau[0];
    cum[1] = cum[0] + (double)e->bags[1].size * e->inv_tau[1];
    cum[2] = cum[1] + (double)e->bags[2].size * e->inv_tau[2];
    cum[3] = cum[2] + (double)e->bags[3].size * e->inv_tau[3];
    cum[4] = cum[3] + (double)e->refr[0].size * e->inv_tau_r;
    cum[5] = cum[4] + (double)e->refr[1].size * e->inv_tau_r;
    if (cum[5] > 0.0)
        e->t_int = e->t + exponential(r) / cum[5];
    else
        e->t_int = INFINITY;
}

void nf_start_clocks(nf_engine *e)
{
    e->t_ext = INFINITY;
    if (e->ext_sum > 0.0)
        e->t_ext = e->t + exponential(&e->rng) / e->ext_sum;
    e->t_int = INFINITY;
    redraw(e, &e->rng);
}

/* Pick k distinct candidates out of n_cand and queue a kick to each. */
static int choose(nf_engine *e, nf_rng *r, int64_t k, int64_t n_cand, int64_t skip, int slot,
                  int64_t pop, int64_t base)
{
    if (k == 0)
        return 0;
    nf_vec *bag = &e->bags[slot];
    if (vec_reserve(bag, bag->size + k))
        return NF_NOMEM;
    int32_t *h = e->h + (slot >> 1) * e->n_neurons;
    int64_t *stamp = e->stamp;
    int32_t *out = bag->data + bag->size;
    const int64_t token = ++e->token;
    if (2 * k <= n_cand) {
        int64_t got = 0;
        while (got < k) {
            int64_t c = below(r, n_cand);
            if (stamp[c] != token) {
                stamp[c] = token;
                if (skip >= 0 && c >= skip)
                    c++;
                out[got++] = (int32_t)(base + c);
                h[base + c]++;
            }
        }
    } else {
        const int64_t excluded = n_cand - k;
        int64_t got = 0;
        while (got < excluded) {
            const int64_t c = below(r, n_cand);
            if (stamp[c] != token) {
                stamp[c] = token;
                got++;
            }
        }
        got = 0;
        for (int64_t c = 0; c < n_cand; c++) {
            if (stamp[c] != token) {
                const int64_t g = base + ((skip >= 0 && c >= skip) ? c + 1 : c);
                out[got++] = (int32_t)g;
                h[g]++;
            }
        }
    }
    bag->size += k;
    e->pend_count[slot * e->n_pop + pop] += k;
    return 0;
}

static inline int64_t table_draw(nf_engine *e, nf_rng *r, int table)
{
    const int64_t off = e->tab_offset[table];
    return alias_draw(r, e->tab_size[table], e->tab_thresh + off, e->tab_alias + off);
}

static __attribute__((noinline)) int spike(nf_engine *e, nf_rng *r, int64_t g)
{
    const int64_t npp = e->npp;
    const int64_t p = e->pop_of[g];
    const int64_t k = g - p * npp;
    const int src = k < e->n_e ? 0 : 1;
    const int64_t ridx = src * e->n_pop + p;
    e->v[g] = NF_REFR;
    nf_refr_touch(e, ridx);
    e->refr_count[ridx]++;
    e->pos[g] = (int32_t)e->refr[src].size;
    if (nf_vec_push(&e->refr[src], (int32_t)g))
        return NF_NOMEM;
    e->n_spikes[g]++;
    if (e->n_spk == e->cap_spk) {
        double *nt = (double *)realloc(e->spike_t, (size_t)(2 * e->cap_spk) * sizeof(double));
        if (!nt)
            return NF_NOMEM;
        e->spike_t = nt;
        int32_t *ng = (int32_t *)realloc(e->spike_g, (size_t)(2 * e->cap_spk) * sizeof(int32_t));
        if (!ng)
            return NF_NOMEM;
        e->spike_g = ng;
        e->cap_spk *= 2;
    }
    e->spike_t[e->n_spk] = e->t;
    e->spike_g[e->n_spk] = (int32_t)g;
    e->n_spk++;

    const int64_t local_self = src == 0 ? k : k - e->n_e;
    for (int tgt = 0; tgt < 2; tgt++) {
        const int slot = 2 * src + tgt;
        const int64_t n_tgt = tgt == 0 ? e->n_e : e->n_i;
        const int64_t offset = tgt == 0 ? 0 : e->n_e;
        int rc;
        if (tgt == src && !e->allow_self) {
            const int64_t kk = table_draw(e, r, slot * 3 + 1);
            rc = choose(e, r, kk, n_tgt - 1, local_self, slot, p, p * npp + offset);
        } else {
            const int64_t kk = table_draw(e, r, slot * 3);
            rc = choose(e, r, kk, n_tgt, -1, slot, p, p * npp + offset);
        }
        if (rc)
            return rc;
        for (int64_t j = e->nb_ptr[p]; j < e->nb_ptr[p + 1]; j++) {
            const int64_t q = e->nb_idx[j];
            const int64_t kk = table_draw(e, r, slot * 3 + 2);
            if ((rc = choose(e, r, kk, n_tgt, -1, slot, q, q * npp + offset)))
                return rc;
        }
    }
    return 0;
}

/* Spill the (register-resident) generator around the out-of-line spike. */
static inline int spike_at(nf_engine *e, nf_rng *r, int64_t g)
{
    e->rng = *r;
    const int rc = spike(e, &e->rng, g);
    *r = e->rng;
    return rc;
}

/* -- one event ---------------------------------------------------------- */

static inline int step(nf_engine *e, nf_rng *r, double t_end, int64_t *spiked)
{
    const double t_ext = e->t_ext;
    const double t_int = e->t_int;
    *spiked = -1;
    if (UNLIKELY(t_ext == INFINITY && t_int == INFINITY))
        return NF_ABSORBING;
    const int ext = t_ext <= t_int;
    const double nxt = ext ? t_ext : t_int;
    if (UNLIKELY(nxt > t_end)) {
        e->t = t_end;
        return NF_HORIZON;
    }
    e->t = nxt;

    if (ext) {
        const int64_t P = e->n_pop;
        const uint64_t x = next64(r);
        int64_t col = (int64_t)(((x >> 32) * (uint64_t)(2 * P)) >> 32);
        if ((int64_t)(x & 0xFFFFFFFFULL) >= e->ext_thresh[col])
            col = e->ext_alias[col];
        const int q = col >= P;
        const int64_t p = col - q * P;
        const int64_t g = p * e->npp + (q ? e->n_e + below(r, e->n_i) : below(r, e->n_e));
        e->ext_arrivals[col]++;
        const int32_t vg = e->v[g];
        const int refr = vg == NF_REFR;
        e->ext_missed[col] += refr;
        const int32_t nv = refr ? NF_REFR : vg + 1;
        e->v[g] = nv;
        if (UNLIKELY(nv >= e->threshold)) {
            if (spike_at(e, r, g))
                return NF_NOMEM;
            *spiked = g;
        }
        e->t_ext = e->t + exponential(r) / e->ext_sum;
        if (UNLIKELY(*spiked >= 0))
            redraw(e, r);
        return q;
    }

    const double *cum = e->cum;
    const double u = uniform(r) * cum[5];
    int c = (cum[0] <= u) + (cum[1] <= u) + (cum[2] <= u) + (cum[3] <= u) + (cum[4] <= u) + (cum[5] <= u);
    if (UNLIKELY(c == 6)) {
        /* rounding pushed u onto the total: take the last nonempty channel */
        c = 5;
        while ((c < 4 ? e->bags[c].size : e->refr[c - 4].size) == 0)
            c--;
    }

    if (LIKELY(c < 4)) {
        const int slot = c;
        nf_vec *bag = &e->bags[slot];
        const int64_t j = below(r, bag->size);
        const int64_t g = bag->data[j];
        bag->data[j] = bag->data[--bag->size];
        const int64_t idx = slot * e->n_pop + e->pop_of[g];
        e->h[(slot >> 1) * e->n_neurons + g]--;
        e->pend_count[idx]--;
        e->delivered[idx]++;
        const uint64_t w = next64(r);
        const int32_t vg = e->v[g];
        const int refr = vg == NF_REFR;
        e->missed[idx] += refr;
        const int64_t mag = e->kick_base[slot] + (w < e->kick_frac[slot]);
        int64_t nv = vg + e->kick_sign[slot] * mag;
        if (nv < -e->reversal)
            nv = -e->reversal;
        e->v[g] = refr ? NF_REFR : (int32_t)nv;
        if (UNLIKELY(!refr && nv >= e->threshold)) {
            if (spike_at(e, r, g))
                return NF_NOMEM;
            *spiked = g;
        }
    } else {
        const int q = c - 4;
        nf_vec *lst = &e->refr[q];
        const int64_t j = below(r, lst->size);
        const int64_t g = lst->data[j];
        const int32_t tail = lst->data[--lst->size];
        lst->data[j] = tail;
        e->pos[tail] = (int32_t)j;
        e->pos[g] = -1;
        const int64_t idx = q * e->n_pop + e->pop_of[g];
        nf_refr_touch(e, idx);
        e->refr_count[idx]--;
        e->v[g] = 0;
        e->n_exits[g]++;
    }
    redraw(e, r);
    return c + 2;
}

int nf_step(nf_engine *e, double t_end, int64_t *spiked)
{
    nf_rng r = e->rng;
    const int ch = step(e, &r, t_end, spiked);
    e->rng = r;
    return ch;
}

int nf_advance(nf_engine *e, double t_end)
{
    nf_rng r = e->rng;
    int64_t spiked;
    int ch;
    do {
        ch = step(e, &r, t_end, &spiked);
    } while (ch >= 0);
    e->rng = r;
    if (ch == NF_ABSORBING && e->t < t_end)
        e->t = t_end;
    return ch;
}
