/* Relaxed atomic access to IEEE doubles through their 64-bit image. */
#ifndef A2BCD_ATOMIC_H
#define A2BCD_ATOMIC_H

#include <stdint.h>
#include <string.h>

static inline double a2bcd_load(double *addr) {
    uint64_t bits = __atomic_load_n((uint64_t *)addr, __ATOMIC_RELAXED);
    double out;
    memcpy(&out, &bits, sizeof out);
    return out;
}

static inline void a2bcd_store(double *addr, double value) {
    uint64_t bits;
    memcpy(&bits, &value, sizeof bits);
    __atomic_store_n((uint64_t *)addr, bits, __ATOMIC_RELAXED);
}

/* *addr += delta as a single read-modify-write (CAS loop). */
static inline void a2bcd_add(double *addr, double delta) {
    uint64_t old_bits = __atomic_load_n((uint64_t *)addr, __ATOMIC_RELAXED);
    for (;;) {
        double old, upd;
        uint64_t new_bits;
        memcpy(&old, &old_bits, sizeof old);
        upd = old + delta;
        memcpy(&new_bits, &upd, sizeof new_bits);
        if (__atomic_compare_exchange_n((uint64_t *)addr, &old_bits, new_bits, 1,
                                        __ATOMIC_RELAXED, __ATOMIC_RELAXED))
            return;
    }
}

#endif
