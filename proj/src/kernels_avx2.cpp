// AVX2 lane. Mirrors the scalar lane bit-for-bit: multiply-then-add (no
// FMA), vectorization only across independent output slots, remainders in
// the scalar expressions. Compiled with -mavx2 and entered only after the
// runtime CPU check in kernels.cpp.

#include "ctfusion/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

namespace ctfusion::kernels {
namespace {

constexpr std::size_t kLanes = 4;  // doubles per __m256d

void ew_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        _mm256_storeu_pd(out + k, _mm256_add_pd(_mm256_loadu_pd(a + k),
                                                _mm256_loadu_pd(b + k)));
    }
    for (; k < n; ++k) out[k] = a[k] + b[k];
}

void ew_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        _mm256_storeu_pd(out + k, _mm256_mul_pd(_mm256_loadu_pd(a + k),
                                                _mm256_loadu_pd(b + k)));
    }
    for (; k < n; ++k) out[k] = a[k] * b[k];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + k));
        _mm256_storeu_pd(y + k, _mm256_add_pd(_mm256_loadu_pd(y + k), prod));
    }
    for (; k < n; ++k) y[k] += alpha * x[k];
}

void relu(const double* x, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        _mm256_storeu_pd(out + k, _mm256_max_pd(_mm256_loadu_pd(x + k), zero));
    }
    for (; k < n; ++k) out[k] = x[k] > 0.0 ? x[k] : 0.0;
}

void relu_grad(const double* x, const double* g, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + k), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + k, _mm256_and_pd(mask, _mm256_loadu_pd(g + k)));
    }
    for (; k < n; ++k) out[k] = x[k] > 0.0 ? g[k] : 0.0;
}

void mul_channels(const double* x, const double* v, double* out,
                  std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        std::size_t k = 0;
        for (; k + kLanes <= c; k += kLanes) {
            _mm256_storeu_pd(op + k, _mm256_mul_pd(_mm256_loadu_pd(xp + k),
                                                   _mm256_loadu_pd(v + k)));
        }
        for (; k < c; ++k) op[k] = xp[k] * v[k];
    }
}

void add_channels(const double* x, const double* v, double* out,
                  std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        std::size_t k = 0;
        for (; k + kLanes <= c; k += kLanes) {
            _mm256_storeu_pd(op + k, _mm256_add_pd(_mm256_loadu_pd(xp + k),
                                                   _mm256_loadu_pd(v + k)));
        }
        for (; k < c; ++k) op[k] = xp[k] + v[k];
    }
}

void mul_positions(const double* x, const double* m, double* out,
                   std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        const __m256d mv = _mm256_set1_pd(m[p]);
        std::size_t k = 0;
        for (; k + kLanes <= c; k += kLanes) {
            _mm256_storeu_pd(op + k, _mm256_mul_pd(_mm256_loadu_pd(xp + k), mv));
        }
        for (; k < c; ++k) op[k] = xp[k] * m[p];
    }
}

void add_positions(const double* x, const double* m, double* out,
                   std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        const __m256d mv = _mm256_set1_pd(m[p]);
        std::size_t k = 0;
        for (; k + kLanes <= c; k += kLanes) {
            _mm256_storeu_pd(op + k, _mm256_add_pd(_mm256_loadu_pd(xp + k), mv));
        }
        for (; k < c; ++k) op[k] = xp[k] + m[p];
    }
}

void sum_channels(const double* x, double* acc, std::size_t n_pos,
                  std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        std::size_t k = 0;
        for (; k + kLanes <= c; k += kLanes) {
            _mm256_storeu_pd(acc + k, _mm256_add_pd(_mm256_loadu_pd(acc + k),
                                                    _mm256_loadu_pd(xp + k)));
        }
        for (; k < c; ++k) acc[k] += xp[k];
    }
}

void fma_block(const double* x, const double* w, double* y, std::size_t rows,
               std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        const __m256d xv = _mm256_set1_pd(xi);
        const double* wi = w + i * cols;
        std::size_t j = 0;
        for (; j + kLanes <= cols; j += kLanes) {
            __m256d prod = _mm256_mul_pd(xv, _mm256_loadu_pd(wi + j));
            _mm256_storeu_pd(y + j, _mm256_add_pd(_mm256_loadu_pd(y + j), prod));
        }
        for (; j < cols; ++j) y[j] += xi * wi[j];
    }
}

void outer_acc(const double* x, const double* g, double* gw, std::size_t rows,
               std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        const __m256d xv = _mm256_set1_pd(xi);
        double* gwi = gw + i * cols;
        std::size_t j = 0;
        for (; j + kLanes <= cols; j += kLanes) {
            __m256d prod = _mm256_mul_pd(xv, _mm256_loadu_pd(g + j));
            _mm256_storeu_pd(gwi + j,
                             _mm256_add_pd(_mm256_loadu_pd(gwi + j), prod));
        }
        for (; j < cols; ++j) gwi[j] += xi * g[j];
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable t{
        ew_add,       ew_mul,        axpy,          relu,
        relu_grad,    mul_channels,  add_channels,  mul_positions,
        add_positions, sum_channels, fma_block,     outer_acc,
    };
    return t;
}

}  // namespace ctfusion::kernels

#endif  // x86
