// Scalar reference lane. The AVX2 lane mirrors these loops exactly; any
// change to accumulation order here must be reflected there.

#include "ctfusion/kernels.hpp"

namespace ctfusion::kernels {
namespace {

void ew_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] + b[k];
}

void ew_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * b[k];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

void relu(const double* x, double* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = x[k] > 0.0 ? x[k] : 0.0;
}

void relu_grad(const double* x, const double* g, double* out, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = x[k] > 0.0 ? g[k] : 0.0;
}

void mul_channels(const double* x, const double* v, double* out,
                  std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        for (std::size_t k = 0; k < c; ++k) op[k] = xp[k] * v[k];
    }
}

void add_channels(const double* x, const double* v, double* out,
                  std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        for (std::size_t k = 0; k < c; ++k) op[k] = xp[k] + v[k];
    }
}

void mul_positions(const double* x, const double* m, double* out,
                   std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        const double mp = m[p];
        for (std::size_t k = 0; k < c; ++k) op[k] = xp[k] * mp;
    }
}

void add_positions(const double* x, const double* m, double* out,
                   std::size_t n_pos, std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        double* op = out + p * c;
        const double mp = m[p];
        for (std::size_t k = 0; k < c; ++k) op[k] = xp[k] + mp;
    }
}

void sum_channels(const double* x, double* acc, std::size_t n_pos,
                  std::size_t c) {
    for (std::size_t p = 0; p < n_pos; ++p) {
        const double* xp = x + p * c;
        for (std::size_t k = 0; k < c; ++k) acc[k] += xp[k];
    }
}

void fma_block(const double* x, const double* w, double* y, std::size_t rows,
               std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        const double* wi = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) y[j] += xi * wi[j];
    }
}

void outer_acc(const double* x, const double* g, double* gw, std::size_t rows,
               std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        double* gwi = gw + i * cols;
        for (std::size_t j = 0; j < cols; ++j) gwi[j] += xi * g[j];
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{
        ew_add,       ew_mul,        axpy,          relu,
        relu_grad,    mul_channels,  add_channels,  mul_positions,
        add_positions, sum_channels, fma_block,     outer_acc,
    };
    return t;
}

}  // namespace ctfusion::kernels
