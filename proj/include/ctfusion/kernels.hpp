#pragma once

// Data-parallel inner loops behind the tensor operations, in two lanes:
// a scalar reference lane and an AVX2 lane selected at runtime.
//
// Both lanes are contracted to produce bit-identical results: vector code
// multiplies then adds (no FMA contraction, see -ffp-contract=off in the
// build) and accumulates in the same order as the scalar loops, vectorizing
// only across independent output slots. The equivalence suite asserts
// bitwise equality between lanes.
//
// Layout contract: "channels" kernels operate on n_pos consecutive groups
// of c contiguous doubles, matching the Tensor layout in tensor.hpp.

#include <cstddef>

namespace ctfusion::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
    // out[k] = a[k] + b[k] / a[k] * b[k]
    void (*ew_add)(const double* a, const double* b, double* out, std::size_t n);
    void (*ew_mul)(const double* a, const double* b, double* out, std::size_t n);
    // y[k] += alpha * x[k]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out[k] = max(x[k], 0)
    void (*relu)(const double* x, double* out, std::size_t n);
    // out[k] = x[k] > 0 ? g[k] : 0
    void (*relu_grad)(const double* x, const double* g, double* out, std::size_t n);
    // out[p,c] = x[p,c] op v[c]
    void (*mul_channels)(const double* x, const double* v, double* out,
                         std::size_t n_pos, std::size_t c);
    void (*add_channels)(const double* x, const double* v, double* out,
                         std::size_t n_pos, std::size_t c);
    // out[p,c] = x[p,c] op m[p]
    void (*mul_positions)(const double* x, const double* m, double* out,
                          std::size_t n_pos, std::size_t c);
    void (*add_positions)(const double* x, const double* m, double* out,
                          std::size_t n_pos, std::size_t c);
    // acc[c] += sum over p of x[p,c]
    void (*sum_channels)(const double* x, double* acc, std::size_t n_pos,
                         std::size_t c);
    // y[j] += sum over i of x[i] * w[i*cols + j]; i ascending
    void (*fma_block)(const double* x, const double* w, double* y,
                      std::size_t rows, std::size_t cols);
    // gw[i*cols + j] += x[i] * g[j]
    void (*outer_acc)(const double* x, const double* g, double* gw,
                      std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(__i386__)
const KernelTable& avx2_table();
#endif

// True when the running CPU can execute the AVX2 lane.
bool avx2_supported();

// Table for an explicit lane; throws std::invalid_argument if unavailable.
const KernelTable& table_for(Backend backend);

// Lane in use. Resolution order: force_backend() > CTFUSION_SIMD environment
// variable ("scalar", "avx2", "auto") > best supported lane.
Backend active_backend();
void force_backend(Backend backend);

const char* backend_name(Backend backend);

// Active lane's table.
const KernelTable& table();

}  // namespace ctfusion::kernels
