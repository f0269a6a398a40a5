#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "ctfusion/fusion.hpp"
#include "ctfusion/tensor_ops.hpp"

using namespace ctfusion;

namespace {

// Independent direct convolution: one quadruple loop per output value,
// deliberately not sharing any code with the library path.
Tensor conv_direct(const Tensor& in, const ConvKernel& k, int pad) {
    Tensor out(in.width(), in.height(), k.out_channels());
    for (int x = 0; x < in.width(); ++x) {
        for (int y = 0; y < in.height(); ++y) {
            for (int o = 0; o < k.out_channels(); ++o) {
                double s = k.bias()[static_cast<std::size_t>(o)];
                for (int dy = 0; dy < k.size(); ++dy) {
                    for (int dx = 0; dx < k.size(); ++dx) {
                        for (int i = 0; i < k.in_channels(); ++i) {
                            const int ix = x + dx - pad;
                            const int iy = y + dy - pad;
                            if (ix < 0 || ix >= in.width() || iy < 0 ||
                                iy >= in.height()) {
                                continue;
                            }
                            s += in.at(ix, iy, i) * k.weight(dy, dx, i, o);
                        }
                    }
                }
                out.at(x, y, o) = s;
            }
        }
    }
    return out;
}

ConvKernel seeded_kernel(int size, int in_c, int out_c, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    auto next = [&eng] {
        return (static_cast<double>(eng() >> 11) * 0x1.0p-53) * 2.0 - 1.0;
    };
    ConvKernel k(size, in_c, out_c);
    for (double& w : k.weights()) w = next();
    for (double& b : k.bias()) b = next();
    return k;
}

double dot_all(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

}  // namespace

TEST_CASE("construction rejects invalid shapes") {
    CHECK_THROWS_AS(Tensor(0, 3, 2), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(2, 2, 2, std::vector<double>(5)), std::invalid_argument);
    CHECK_THROWS_AS(ConvKernel(2, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ConvKernel(4, 1, 1), std::invalid_argument);
    CHECK_NOTHROW(ConvKernel(7, 1, 1));
    CHECK_THROWS_AS(ConvKernel(3, 2, 2, std::vector<double>(35),
                               std::vector<double>(2)),
                    std::invalid_argument);
}

TEST_CASE("conv2d hand-checked values") {
    SUBCASE("1x1 scaling kernel doubles every value") {
        Tensor t = seeded_tensor(3, 4, 2, 5);
        ConvKernel twice(1, 2, 2);
        twice.weight(0, 0, 0, 0) = 2.0;
        twice.weight(0, 0, 1, 1) = 2.0;
        Tensor out = conv2d(t, twice, 0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(out.data()[i] == doctest::Approx(2.0 * t.data()[i]).epsilon(1e-15));
        }
    }
    SUBCASE("centered identity kernel") {
        Tensor t = seeded_tensor(4, 4, 3, 6);
        ConvKernel ident(3, 3, 3);
        for (int c = 0; c < 3; ++c) ident.weight(1, 1, c, c) = 1.0;
        Tensor out = conv2d(t, ident, 1);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(out.data()[i] == t.data()[i]);
        }
    }
    SUBCASE("all-ones kernel counts the zero-padded window") {
        ConvKernel ones(3, 1, 1);
        for (double& w : ones.weights()) w = 1.0;
        Tensor flat = Tensor::full(4, 4, 1, 1.0);
        Tensor out = conv2d(flat, ones, 1);
        for (int x = 0; x < 4; ++x) {
            for (int y = 0; y < 4; ++y) {
                const bool ex = x == 0 || x == 3;
                const bool ey = y == 0 || y == 3;
                const double want = ex && ey ? 4.0 : (ex || ey ? 6.0 : 9.0);
                CHECK(out.at(x, y, 0) == want);
            }
        }
    }
    SUBCASE("channel mismatch is rejected") {
        Tensor t(2, 2, 3);
        CHECK_THROWS_AS(conv2d(t, ConvKernel(1, 2, 2), 0), std::invalid_argument);
    }
    SUBCASE("padding must preserve the spatial size") {
        Tensor t(4, 4, 2);
        CHECK_THROWS_AS(conv2d(t, ConvKernel(3, 2, 2), 0), std::invalid_argument);
        CHECK_THROWS_AS(conv2d(t, ConvKernel(3, 2, 2), 2), std::invalid_argument);
        CHECK_NOTHROW(conv2d(t, ConvKernel(3, 2, 2), 1));
    }
}

TEST_CASE("conv2d agrees with the direct quadruple loop") {
    std::mt19937_64 eng(77);
    for (int trial = 0; trial < 12; ++trial) {
        const int size = (trial % 3 == 0) ? 1 : (trial % 3 == 1 ? 3 : 7);
        const int W = 3 + static_cast<int>(eng() % 6);
        const int H = 3 + static_cast<int>(eng() % 6);
        const int in_c = 1 + static_cast<int>(eng() % 4);
        const int out_c = 1 + static_cast<int>(eng() % 4);
        Tensor in = seeded_tensor(W, H, in_c, 1000 + trial);
        ConvKernel k = seeded_kernel(size, in_c, out_c, 2000 + trial);
        Tensor got = conv2d(in, k, k.same_padding());
        Tensor want = conv_direct(in, k, k.same_padding());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::fabs(got.data()[i] - want.data()[i]) < 1e-12);
        }
    }
}

TEST_CASE("conv2d is linear in its input") {
    Tensor x = seeded_tensor(5, 4, 3, 31);
    Tensor y = seeded_tensor(5, 4, 3, 32);
    ConvKernel k = seeded_kernel(3, 3, 2, 33);
    for (double& b : k.bias()) b = 0.0;
    const double alpha = 0.7, beta = -1.3;

    Tensor mix(5, 4, 3);
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix.data()[i] = alpha * x.data()[i] + beta * y.data()[i];
    }
    Tensor lhs = conv2d(mix, k, 1);
    Tensor cx = conv2d(x, k, 1);
    Tensor cy = conv2d(y, k, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        CHECK(std::fabs(lhs.data()[i] -
                        (alpha * cx.data()[i] + beta * cy.data()[i])) < 1e-12);
    }
}

TEST_CASE("conv2d_backward") {
    SUBCASE("zero upstream gradient zeroes everything") {
        Tensor in = seeded_tensor(4, 4, 2, 8);
        ConvKernel k = seeded_kernel(3, 2, 3, 9);
        Conv2dGrads g = conv2d_backward(in, k, Tensor(4, 4, 3), 1);
        for (double v : g.input.data()) CHECK(v == 0.0);
        for (double v : g.kernel.weights()) CHECK(v == 0.0);
        for (double v : g.kernel.bias()) CHECK(v == 0.0);
    }
    SUBCASE("identity 1x1 kernel passes the gradient through") {
        Tensor in = seeded_tensor(3, 3, 2, 10);
        ConvKernel ident(1, 2, 2);
        ident.weight(0, 0, 0, 0) = 1.0;
        ident.weight(0, 0, 1, 1) = 1.0;
        Tensor g = seeded_tensor(3, 3, 2, 11);
        Conv2dGrads grads = conv2d_backward(in, ident, g, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(grads.input.data()[i] == g.data()[i]);
        }
    }
    SUBCASE("matches central finite differences") {
        Tensor in = seeded_tensor(5, 5, 2, 12);
        ConvKernel k = seeded_kernel(3, 2, 2, 13);
        Tensor g = seeded_tensor(5, 5, 2, 14);
        Conv2dGrads grads = conv2d_backward(in, k, g, 1);

        const double h = 1e-4;
        auto objective = [&](const Tensor& input, const ConvKernel& kernel) {
            return dot_all(conv2d(input, kernel, 1), g);
        };
        for (std::size_t i = 0; i < in.size(); ++i) {
            Tensor up = in, dn = in;
            up.data()[i] += h;
            dn.data()[i] -= h;
            const double num = (objective(up, k) - objective(dn, k)) / (2 * h);
            const double a = grads.input.data()[i];
            CHECK(std::fabs(a - num) <=
                  1e-5 * std::max({std::fabs(a), std::fabs(num), 1e-3}));
        }
        for (std::size_t i = 0; i < k.weights().size(); ++i) {
            ConvKernel up = k, dn = k;
            up.weights()[i] += h;
            dn.weights()[i] -= h;
            const double num = (objective(in, up) - objective(in, dn)) / (2 * h);
            const double a = grads.kernel.weights()[i];
            CHECK(std::fabs(a - num) <=
                  1e-5 * std::max({std::fabs(a), std::fabs(num), 1e-3}));
        }
    }
    SUBCASE("shape mismatch is rejected") {
        Tensor in(4, 4, 2);
        ConvKernel k(3, 2, 2);
        CHECK_THROWS_AS(conv2d_backward(in, k, Tensor(4, 4, 3), 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(conv2d_backward(in, k, Tensor(3, 4, 2), 1),
                        std::invalid_argument);
    }
}

TEST_CASE("batchnorm_infer") {
    SUBCASE("identity statistics reproduce the input") {
        Tensor t = seeded_tensor(3, 3, 2, 15);
        BatchNormParams bn(2, 1e-300);
        Tensor out = batchnorm_infer(t, bn);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(out.data()[i] == doctest::Approx(t.data()[i]).epsilon(1e-12));
        }
    }
    SUBCASE("zero gamma collapses to beta") {
        Tensor t = seeded_tensor(3, 3, 2, 16);
        BatchNormParams bn(2);
        bn.gamma = {0.0, 0.0};
        bn.beta = {1.5, -2.5};
        Tensor out = batchnorm_infer(t, bn);
        for (int x = 0; x < 3; ++x) {
            for (int y = 0; y < 3; ++y) {
                CHECK(out.at(x, y, 0) == 1.5);
                CHECK(out.at(x, y, 1) == -2.5);
            }
        }
    }
    SUBCASE("hand affine value") {
        BatchNormParams bn(1, 1e-300);
        bn.gamma[0] = 2.0;
        bn.beta[0] = 1.0;
        bn.running_mean[0] = 3.0;
        bn.running_var[0] = 4.0;
        Tensor out = batchnorm_infer(Tensor::full(1, 1, 1, 5.0), bn);
        CHECK(out.at(0, 0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("length mismatch is rejected") {
        CHECK_THROWS_AS(batchnorm_infer(Tensor(2, 2, 3), BatchNormParams(2)),
                        std::invalid_argument);
    }
    SUBCASE("backward matches finite differences") {
        Tensor in = seeded_tensor(4, 4, 3, 17);
        BatchNormParams bn(3);
        bn.gamma = {1.3, 0.7, -0.4};
        bn.beta = {0.2, -0.1, 0.5};
        bn.running_mean = {0.1, -0.2, 0.3};
        bn.running_var = {1.2, 0.8, 2.0};
        Tensor g = seeded_tensor(4, 4, 3, 18);
        BatchNormGrads grads = batchnorm_infer_backward(in, bn, g);

        const double h = 1e-4;
        for (std::size_t i = 0; i < in.size(); i += 7) {
            Tensor up = in, dn = in;
            up.data()[i] += h;
            dn.data()[i] -= h;
            const double num = (dot_all(batchnorm_infer(up, bn), g) -
                                dot_all(batchnorm_infer(dn, bn), g)) /
                               (2 * h);
            CHECK(grads.input.data()[i] == doctest::Approx(num).epsilon(1e-6));
        }
        for (int c = 0; c < 3; ++c) {
            BatchNormParams up = bn, dn = bn;
            up.gamma[static_cast<std::size_t>(c)] += h;
            dn.gamma[static_cast<std::size_t>(c)] -= h;
            const double num = (dot_all(batchnorm_infer(in, up), g) -
                                dot_all(batchnorm_infer(in, dn), g)) /
                               (2 * h);
            CHECK(grads.gamma[static_cast<std::size_t>(c)] ==
                  doctest::Approx(num).epsilon(1e-6));
            up = bn;
            dn = bn;
            up.beta[static_cast<std::size_t>(c)] += h;
            dn.beta[static_cast<std::size_t>(c)] -= h;
            const double numb = (dot_all(batchnorm_infer(in, up), g) -
                                 dot_all(batchnorm_infer(in, dn), g)) /
                                (2 * h);
            CHECK(grads.beta[static_cast<std::size_t>(c)] ==
                  doctest::Approx(numb).epsilon(1e-6));
        }
    }
}

TEST_CASE("activations") {
    Tensor t(1, 1, 3, {-1.0, 0.0, 2.0});
    Tensor r = relu(t);
    CHECK(r.at(0, 0, 0) == 0.0);
    CHECK(r.at(0, 0, 1) == 0.0);
    CHECK(r.at(0, 0, 2) == 2.0);

    ChannelVector v(2, {0.0, std::log(3.0)});
    ChannelVector s = sigmoid(v);
    CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-14));

    SUBCASE("sigmoid stays strictly inside (0,1), relu non-negative") {
        Tensor wide(1, 1, 6, {-1e9, -50.0, -1e-9, 1e-9, 50.0, 1e9});
        Tensor sg = sigmoid(wide);
        Tensor rl = relu(wide);
        for (double x : sg.data()) {
            CHECK(x > 0.0);
            CHECK(x < 1.0);
        }
        for (double x : rl.data()) CHECK(x >= 0.0);
    }

    SUBCASE("relu backward masks by sign of the pre-activation") {
        Tensor g = seeded_tensor(1, 1, 3, 19);
        Tensor dg = relu_backward(t, g);
        CHECK(dg.at(0, 0, 0) == 0.0);
        CHECK(dg.at(0, 0, 1) == 0.0);
        CHECK(dg.at(0, 0, 2) == g.at(0, 0, 2));
    }

    SUBCASE("sigmoid backward matches finite differences") {
        ChannelVector x(3, {0.3, -1.1, 2.2});
        ChannelVector g(3, {1.0, -0.5, 0.25});
        ChannelVector y = sigmoid(x);
        ChannelVector dx = sigmoid_backward_from_output(y, g);
        const double h = 1e-6;
        for (int c = 0; c < 3; ++c) {
            ChannelVector up = x, dn = x;
            up[c] += h;
            dn[c] -= h;
            double num = (sigmoid(up)[c] - sigmoid(dn)[c]) / (2 * h) * g[c];
            CHECK(dx[c] == doctest::Approx(num).epsilon(1e-7));
        }
    }
}

TEST_CASE("poolings") {
    SUBCASE("global average pool") {
        CHECK(global_avg_pool(Tensor::full(3, 5, 2, 7.25))[1] == 7.25);
        Tensor sq(2, 2, 1, {1.0, 2.0, 3.0, 4.0});
        CHECK(global_avg_pool(sq)[0] == 2.5);
        CHECK(global_avg_pool(Tensor(4, 4, 3))[2] == 0.0);
    }
    SUBCASE("global max pool and its backward routing") {
        Tensor t(2, 2, 2, {1.0, -1.0, 5.0, 2.0, 3.0, 2.0, 4.0, -7.0});
        ChannelVector m = global_max_pool(t);
        CHECK(m[0] == 5.0);
        CHECK(m[1] == 2.0);
        ChannelVector g(2, {10.0, 20.0});
        Tensor back = global_max_pool_backward(t, g);
        // channel 0 max at position 1, channel 1 max tied at positions 1 and
        // 2; the first in memory order wins
        CHECK(back.data()[2] == 10.0);
        CHECK(back.data()[3] == 20.0);
        double total = 0.0;
        for (double v : back.data()) total += std::fabs(v);
        CHECK(total == 30.0);
    }
    SUBCASE("channel pool") {
        Tensor one = seeded_tensor(3, 3, 1, 20);
        SpatialMap avg = channel_pool(one, PoolKind::avg);
        SpatialMap mx = channel_pool(one, PoolKind::max);
        for (std::size_t i = 0; i < avg.size(); ++i) {
            CHECK(avg.data()[i] == one.data()[i]);
            CHECK(mx.data()[i] == one.data()[i]);
        }
        Tensor two(1, 1, 2, {1.0, 5.0});
        CHECK(channel_pool(two, PoolKind::avg).at(0, 0) == 3.0);
        CHECK(channel_pool(two, PoolKind::max).at(0, 0) == 5.0);
        Tensor c = Tensor::full(2, 3, 4, -1.5);
        SpatialMap cavg = channel_pool(c, PoolKind::avg);
        SpatialMap cmax = channel_pool(c, PoolKind::max);
        for (double v : cavg.data()) CHECK(v == -1.5);
        for (double v : cmax.data()) CHECK(v == -1.5);
    }
    SUBCASE("pool backwards match finite differences") {
        Tensor in = seeded_tensor(3, 4, 3, 21);
        const double h = 1e-5;
        ChannelVector gc(3, {1.0, -2.0, 0.5});
        SpatialMap gm(3, 4);
        for (std::size_t i = 0; i < gm.size(); ++i) {
            gm.data()[i] = 0.1 * static_cast<double>(i) - 0.4;
        }
        Tensor b_avg = global_avg_pool_backward(in, gc);
        Tensor b_max = global_max_pool_backward(in, gc);
        Tensor b_cavg = channel_pool_backward(in, PoolKind::avg, gm);
        Tensor b_cmax = channel_pool_backward(in, PoolKind::max, gm);
        for (std::size_t i = 0; i < in.size(); i += 5) {
            Tensor up = in, dn = in;
            up.data()[i] += h;
            dn.data()[i] -= h;
            auto vdot = [&](const ChannelVector& a) {
                double s = 0.0;
                for (int c = 0; c < 3; ++c) s += a[c] * gc[c];
                return s;
            };
            auto mdot = [&](const SpatialMap& a) {
                double s = 0.0;
                for (std::size_t p = 0; p < a.size(); ++p) {
                    s += a.data()[p] * gm.data()[p];
                }
                return s;
            };
            CHECK(b_avg.data()[i] ==
                  doctest::Approx((vdot(global_avg_pool(up)) -
                                   vdot(global_avg_pool(dn))) / (2 * h))
                      .epsilon(1e-6));
            CHECK(b_max.data()[i] ==
                  doctest::Approx((vdot(global_max_pool(up)) -
                                   vdot(global_max_pool(dn))) / (2 * h))
                      .epsilon(1e-6));
            CHECK(b_cavg.data()[i] ==
                  doctest::Approx((mdot(channel_pool(up, PoolKind::avg)) -
                                   mdot(channel_pool(dn, PoolKind::avg))) /
                                  (2 * h))
                      .epsilon(1e-6));
            CHECK(b_cmax.data()[i] ==
                  doctest::Approx((mdot(channel_pool(up, PoolKind::max)) -
                                   mdot(channel_pool(dn, PoolKind::max))) /
                                  (2 * h))
                      .epsilon(1e-6));
        }
    }
}

TEST_CASE("broadcast combine") {
    Tensor t = seeded_tensor(3, 2, 2, 22);
    SUBCASE("multiplying by ones and adding zero are identities") {
        ChannelVector ones(2, {1.0, 1.0});
        Tensor a = broadcast_combine(t, ones, CombineOp::mul);
        Tensor b = broadcast_combine(t, Tensor(3, 2, 2), CombineOp::add);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(a.data()[i] == t.data()[i]);
            CHECK(b.data()[i] == t.data()[i]);
        }
    }
    SUBCASE("channel vector broadcast") {
        Tensor base(1, 1, 2, {3.0, 4.0});
        ChannelVector w(2, {2.0, 0.5});
        Tensor out = broadcast_combine(base, w, CombineOp::mul);
        CHECK(out.at(0, 0, 0) == 6.0);
        CHECK(out.at(0, 0, 1) == 2.0);
    }
    SUBCASE("spatial map broadcast") {
        SpatialMap m(3, 2);
        for (std::size_t i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<double>(i);
        }
        Tensor out = broadcast_combine(t, m, CombineOp::mul);
        for (int x = 0; x < 3; ++x) {
            for (int y = 0; y < 2; ++y) {
                for (int c = 0; c < 2; ++c) {
                    CHECK(out.at(x, y, c) == t.at(x, y, c) * m.at(x, y));
                }
            }
        }
    }
    SUBCASE("incompatible shapes are rejected") {
        CHECK_THROWS_AS(broadcast_combine(t, ChannelVector(3), CombineOp::mul),
                        std::invalid_argument);
        CHECK_THROWS_AS(broadcast_combine(t, SpatialMap(2, 2), CombineOp::add),
                        std::invalid_argument);
        CHECK_THROWS_AS(broadcast_combine(t, Tensor(3, 2, 3), CombineOp::mul),
                        std::invalid_argument);
    }
    SUBCASE("average pool is invariant to a ones-vector multiply") {
        ChannelVector ones(2, {1.0, 1.0});
        ChannelVector a = global_avg_pool(t);
        ChannelVector b = global_avg_pool(broadcast_combine(t, ones, CombineOp::mul));
        CHECK(a[0] == b[0]);
        CHECK(a[1] == b[1]);
    }
}

TEST_CASE("concat and split") {
    Tensor a = seeded_tensor(2, 3, 2, 23);
    Tensor b = seeded_tensor(2, 3, 3, 24);
    Tensor cat = concat_channels(a, b);
    REQUIRE(cat.channels() == 5);
    for (int x = 0; x < 2; ++x) {
        for (int y = 0; y < 3; ++y) {
            for (int c = 0; c < 2; ++c) CHECK(cat.at(x, y, c) == a.at(x, y, c));
            for (int c = 0; c < 3; ++c) CHECK(cat.at(x, y, 2 + c) == b.at(x, y, c));
        }
    }
    auto [sa, sb] = split_channels(cat, 2);
    CHECK(std::memcmp(sa.data().data(), a.data().data(),
                      a.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(sb.data().data(), b.data().data(),
                      b.size() * sizeof(double)) == 0);
    CHECK_THROWS_AS(concat_channels(a, Tensor(3, 3, 1)), std::invalid_argument);
}

TEST_CASE("forward ops are bit-deterministic") {
    Tensor in = seeded_tensor(5, 5, 4, 25);
    ConvKernel k = seeded_kernel(3, 4, 4, 26);
    Tensor a = conv2d(in, k, 1);
    Tensor b = conv2d(in, k, 1);
    CHECK(std::memcmp(a.data().data(), b.data().data(),
                      a.size() * sizeof(double)) == 0);
    ChannelVector p1 = global_avg_pool(in);
    ChannelVector p2 = global_avg_pool(in);
    CHECK(std::memcmp(p1.data().data(), p2.data().data(),
                      p1.data().size() * sizeof(double)) == 0);
}
