// Lane equivalence: the AVX2 kernels must reproduce the scalar reference
// lane bit for bit, across sizes that exercise both the vector body and
// the remainder loops.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

#include "ctfusion/fusion.hpp"
#include "ctfusion/kernels.hpp"
#include "ctfusion/tensor_ops.hpp"

using namespace ctfusion;
namespace k = ctfusion::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::vector<double> v(n);
    for (double& x : v) {
        x = (static_cast<double>(eng() >> 11) * 0x1.0p-53) * 4.0 - 2.0;
    }
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 64, 101};

}  // namespace

TEST_CASE("scalar lane is always available") {
    CHECK_NOTHROW(k::table_for(k::Backend::scalar));
}

TEST_CASE("avx2 lane matches scalar lane bitwise") {
    if (!k::avx2_supported()) {
        MESSAGE("AVX2 not available on this CPU; lane comparison skipped");
        return;
    }
    const k::KernelTable& s = k::table_for(k::Backend::scalar);
    const k::KernelTable& v = k::table_for(k::Backend::avx2);

    SUBCASE("elementwise ops") {
        for (std::size_t n : kSizes) {
            auto a = random_vec(n, 10 + n);
            auto b = random_vec(n, 20 + n);
            std::vector<double> out_s(n), out_v(n);

            s.ew_add(a.data(), b.data(), out_s.data(), n);
            v.ew_add(a.data(), b.data(), out_v.data(), n);
            CHECK(bit_equal(out_s, out_v));

            s.ew_mul(a.data(), b.data(), out_s.data(), n);
            v.ew_mul(a.data(), b.data(), out_v.data(), n);
            CHECK(bit_equal(out_s, out_v));

            s.relu(a.data(), out_s.data(), n);
            v.relu(a.data(), out_v.data(), n);
            CHECK(bit_equal(out_s, out_v));

            s.relu_grad(a.data(), b.data(), out_s.data(), n);
            v.relu_grad(a.data(), b.data(), out_v.data(), n);
            CHECK(bit_equal(out_s, out_v));

            auto y_s = random_vec(n, 30 + n);
            auto y_v = y_s;
            s.axpy(0.37, a.data(), y_s.data(), n);
            v.axpy(0.37, a.data(), y_v.data(), n);
            CHECK(bit_equal(y_s, y_v));
        }
    }

    SUBCASE("broadcast ops") {
        for (std::size_t c : kSizes) {
            const std::size_t n_pos = 7;
            auto x = random_vec(n_pos * c, 40 + c);
            auto vec = random_vec(c, 50 + c);
            auto map = random_vec(n_pos, 60 + c);
            std::vector<double> out_s(n_pos * c), out_v(n_pos * c);

            s.mul_channels(x.data(), vec.data(), out_s.data(), n_pos, c);
            v.mul_channels(x.data(), vec.data(), out_v.data(), n_pos, c);
            CHECK(bit_equal(out_s, out_v));

            s.add_channels(x.data(), vec.data(), out_s.data(), n_pos, c);
            v.add_channels(x.data(), vec.data(), out_v.data(), n_pos, c);
            CHECK(bit_equal(out_s, out_v));

            s.mul_positions(x.data(), map.data(), out_s.data(), n_pos, c);
            v.mul_positions(x.data(), map.data(), out_v.data(), n_pos, c);
            CHECK(bit_equal(out_s, out_v));

            s.add_positions(x.data(), map.data(), out_s.data(), n_pos, c);
            v.add_positions(x.data(), map.data(), out_v.data(), n_pos, c);
            CHECK(bit_equal(out_s, out_v));

            std::vector<double> acc_s(c, 0.125), acc_v(c, 0.125);
            s.sum_channels(x.data(), acc_s.data(), n_pos, c);
            v.sum_channels(x.data(), acc_v.data(), n_pos, c);
            CHECK(bit_equal(acc_s, acc_v));
        }
    }

    SUBCASE("accumulation blocks") {
        for (std::size_t rows : {1u, 3u, 8u, 13u}) {
            for (std::size_t cols : kSizes) {
                auto x = random_vec(rows, 70 + rows + cols);
                auto w = random_vec(rows * cols, 80 + rows + cols);
                auto g = random_vec(cols, 90 + rows + cols);

                std::vector<double> y_s(cols, 0.5), y_v(cols, 0.5);
                s.fma_block(x.data(), w.data(), y_s.data(), rows, cols);
                v.fma_block(x.data(), w.data(), y_v.data(), rows, cols);
                CHECK(bit_equal(y_s, y_v));

                std::vector<double> gw_s(rows * cols, 0.25), gw_v(rows * cols, 0.25);
                s.outer_acc(x.data(), g.data(), gw_s.data(), rows, cols);
                v.outer_acc(x.data(), g.data(), gw_v.data(), rows, cols);
                CHECK(bit_equal(gw_s, gw_v));
            }
        }
    }
}

TEST_CASE("whole fusion pipeline is lane independent") {
    if (!k::avx2_supported()) {
        MESSAGE("AVX2 not available on this CPU; lane comparison skipped");
        return;
    }
    // Channel counts off the vector width to cover remainders.
    for (int C : {4, 6, 8}) {
        FusionParams p = seeded_fusion_params(C, 2, 99);
        Tensor f_c = seeded_tensor(9, 7, C, 100);
        Tensor f_t = seeded_tensor(9, 7, C, 101);
        Tensor g = seeded_tensor(9, 7, C, 102);

        k::force_backend(k::Backend::scalar);
        Tensor out_scalar = fusion_forward(f_c, f_t, p);
        FusionGrads grads_scalar = fusion_backward(f_c, f_t, p, g);

        k::force_backend(k::Backend::avx2);
        Tensor out_avx2 = fusion_forward(f_c, f_t, p);
        FusionGrads grads_avx2 = fusion_backward(f_c, f_t, p, g);

        k::force_backend(k::avx2_supported() ? k::Backend::avx2
                                             : k::Backend::scalar);

        REQUIRE(out_scalar.size() == out_avx2.size());
        CHECK(std::memcmp(out_scalar.data().data(), out_avx2.data().data(),
                          out_scalar.size() * sizeof(double)) == 0);

        auto gs = param_groups(grads_scalar);
        auto gv = param_groups(grads_avx2);
        REQUIRE(gs.size() == gv.size());
        for (std::size_t i = 0; i < gs.size(); ++i) {
            CHECK(std::memcmp(gs[i].data, gv[i].data,
                              gs[i].size * sizeof(double)) == 0);
        }
        CHECK(std::memcmp(grads_scalar.f_color.data().data(),
                          grads_avx2.f_color.data().data(),
                          grads_scalar.f_color.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(grads_scalar.f_thermal.data().data(),
                          grads_avx2.f_thermal.data().data(),
                          grads_scalar.f_thermal.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("backend selection") {
    CHECK(std::string(k::backend_name(k::Backend::scalar)) == "scalar");
    CHECK(std::string(k::backend_name(k::Backend::avx2)) == "avx2");
    k::force_backend(k::Backend::scalar);
    CHECK(k::active_backend() == k::Backend::scalar);
    if (k::avx2_supported()) {
        k::force_backend(k::Backend::avx2);
        CHECK(k::active_backend() == k::Backend::avx2);
    }
}
