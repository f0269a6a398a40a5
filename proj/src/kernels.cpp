// Runtime lane selection.

#include "ctfusion/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace ctfusion::kernels {
namespace {

std::atomic<int> g_forced{-1};

Backend env_or_auto() {
    const char* env = std::getenv("CTFUSION_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (avx2_supported()) return Backend::avx2;
            // Requested lane not available on this CPU; fall through to auto.
        }
    }
    return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

const KernelTable& table_for(Backend backend) {
    switch (backend) {
        case Backend::scalar:
            return scalar_table();
        case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
            if (avx2_supported()) return avx2_table();
#endif
            throw std::invalid_argument("AVX2 lane not available on this CPU");
    }
    throw std::invalid_argument("unknown kernel backend");
}

Backend active_backend() {
    const int forced = g_forced.load(std::memory_order_relaxed);
    if (forced >= 0) return static_cast<Backend>(forced);
    static const Backend resolved = env_or_auto();
    return resolved;
}

void force_backend(Backend backend) {
    table_for(backend);  // validates availability
    g_forced.store(static_cast<int>(backend), std::memory_order_relaxed);
}

const char* backend_name(Backend backend) {
    switch (backend) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "unknown";
}

const KernelTable& table() { return table_for(active_backend()); }

}  // namespace ctfusion::kernels
