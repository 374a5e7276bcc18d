#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcmae/altdecoders.hpp"
#include "lcmae/graph.hpp"
#include "lcmae/masking.hpp"
#include "lcmae/objectives.hpp"
#include "lcmae/rng.hpp"
#include "lcmae/vitmodel.hpp"

using namespace lcmae;

TEST_CASE("gaussian_kernel: size 1 is the identity weight") {
    const GaussianKernel k = gaussian_kernel(1, 1.0);
    CHECK(k.weights.data == std::vector<double>{1.0});
}

TEST_CASE("gaussian_kernel: huge sigma tends to the uniform kernel") {
    const GaussianKernel k = gaussian_kernel(3, 1e6);
    for (double w : k.weights.data) CHECK(std::abs(w - 1.0 / 9.0) <= 1e-6);
}

TEST_CASE("gaussian_kernel: center weight equals exp(0)/Z with Z from direct summation") {
    const GaussianKernel k = gaussian_kernel(5, 1.0);
    double z = 0.0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) z += std::exp(-(dy * dy + dx * dx) / 2.0);
    CHECK(k.weights.at(2, 2) == doctest::Approx(1.0 / z).epsilon(1e-12));
}

TEST_CASE("gaussian_kernel: invariants (sum 1, symmetry), even size rejected") {
    const GaussianKernel k = gaussian_kernel(5, 0.8);
    double s = 0.0;
    for (double w : k.weights.data) s += w;
    CHECK(std::abs(s - 1.0) <= 1e-10);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            CHECK(k.weights.at(i, j) == k.weights.at(j, i));          // transpose
            CHECK(k.weights.at(i, j) == k.weights.at(4 - i, 4 - j));  // 180 degrees
            CHECK(k.weights.at(i, j) == k.weights.at(j, 4 - i));      // 90 degrees
        }
    CHECK_THROWS_AS(gaussian_kernel(4, 1.0), ConfigError);
    CHECK_THROWS_AS(gaussian_kernel(3, 0.0), ConfigError);
}

TEST_CASE("weighted average: constant field stays constant everywhere") {
    const GaussianKernel k = gaussian_kernel(5, 1.0);
    Array<double> tokens({16, 3}, 0.0);
    for (int64_t i = 0; i < 16; ++i)
        for (int64_t d = 0; d < 3; ++d) tokens.at(i, d) = 2.5 - d;
    const Array<double> out = weighted_avg_features(tokens, 4, k);
    for (int64_t i = 0; i < 16; ++i)
        for (int64_t d = 0; d < 3; ++d) CHECK(out.at(i, d) == doctest::Approx(2.5 - d).epsilon(1e-12));
}

TEST_CASE("weighted average: kernel size 1 is the identity on features") {
    Rng rng(1, 0);
    Array<double> tokens({9, 4});
    for (auto& v : tokens.data) v = rng.normal();
    const Array<double> out = weighted_avg_features(tokens, 3, gaussian_kernel(1, 1.0));
    for (int64_t i = 0; i < tokens.size(); ++i) CHECK(out[i] == doctest::Approx(tokens[i]).epsilon(1e-15));
}

TEST_CASE("weighted average: corner cell matches a brute-force window sum") {
    Rng rng(2, 0);
    const int64_t g = 4, d = 3;
    Array<double> tokens({g * g, d});
    for (auto& v : tokens.data) v = rng.normal();
    const GaussianKernel k = gaussian_kernel(5, 1.0);
    const Array<double> out = weighted_avg_features(tokens, g, k);
    // corner (0,0): renormalize over the in-bounds window
    for (int64_t dim = 0; dim < d; ++dim) {
        double acc = 0.0, z = 0.0;
        for (int64_t dy = -2; dy <= 2; ++dy)
            for (int64_t dx = -2; dx <= 2; ++dx) {
                const int64_t y = dy, x = dx;
                if (y < 0 || y >= g || x < 0 || x >= g) continue;
                const double w = k.weights.at(dy + 2, dx + 2);
                z += w;
                acc += w * tokens.at(y * g + x, dim);
            }
        CHECK(out.at(0, dim) == doctest::Approx(acc / z).epsilon(1e-12));
    }
}

TEST_CASE("weighted-average mixing has no trainable parameters and rows sum to one") {
    const Array<double> m = weighted_avg_mixing(4, gaussian_kernel(5, 1.0));
    for (int64_t r = 0; r < 16; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 16; ++c) s += m.at(r, c);
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("conv decoder: center-delta kernel is the identity on features") {
    Graph<double> g;
    Rng rng(3, 0);
    const int64_t c = 3, gr = 4;
    Array<double> x({c, gr, gr});
    for (auto& v : x.data) v = rng.normal();
    Array<double> w({c, c, 5, 5});
    for (int64_t i = 0; i < c; ++i) w.data[static_cast<size_t>(((i * c + i) * 5 + 2) * 5 + 2)] = 1.0;
    Var out = g.conv2d(g.constant(x), g.constant(w));
    g.forward();
    CHECK(g.value(out).data == x.data);
}

TEST_CASE("conv decoder: output keeps the grid footprint and passes gradcheck") {
    Rng rng(4, 0);
    Graph<double> g;
    Array<double> w({2, 2, 5, 5});
    for (auto& v : w.data) v = rng.normal() * 0.2;
    Array<double> x({2, 4, 4});
    for (auto& v : x.data) v = rng.normal();
    Var out = g.conv2d(g.constant(x), g.param("w", w));
    CHECK(g.node(out).shape == Shape{2, 4, 4});
    Array<double> c({2, 4, 4});
    for (auto& v : c.data) v = rng.normal();
    Var loss = g.sum_all(g.mul(out, g.constant(c)));
    CHECK(gradcheck(g, loss, {"w"}) <= 1e-5);
}

TEST_CASE("ae_block_targets: B == p reproduces patchify exactly") {
    Rng rng(5, 0);
    Array<double> img({3, 16, 16});
    for (auto& v : img.data) v = rng.normal();
    const BlockTargets t = ae_block_targets(img, BlockTargetSpec{4, 4});
    const Array<double> p = patchify(img, 4);
    CHECK(t.values.shape == p.shape);
    CHECK(t.values.data == p.data);
    for (double v : t.valid.data) CHECK(v == 1.0);
}

TEST_CASE("ae_block_targets: whole-image block at the center cell equals the image") {
    Rng rng(6, 0);
    Array<double> img({2, 6, 6});
    for (auto& v : img.data) v = rng.normal();
    const BlockTargets t = ae_block_targets(img, BlockTargetSpec{6, 2});
    // grid is 3x3; the center cell (1,1) has center pixel (3,3), block [0,6)
    const int64_t center = 1 * 3 + 1;
    for (int64_t by = 0; by < 6; ++by)
        for (int64_t bx = 0; bx < 6; ++bx)
            for (int64_t ch = 0; ch < 2; ++ch) {
                CHECK(t.valid.at(center, (by * 6 + bx) * 2 + ch) == 1.0);
                CHECK(t.values.at(center, (by * 6 + bx) * 2 + ch) ==
                      img.data[static_cast<size_t>((ch * 6 + by) * 6 + bx)]);
            }
}

TEST_CASE("ae_block_targets: interior crop matches a brute-force pixel crop (32x32, p=4, B=12)") {
    Rng rng(7, 0);
    Array<double> img({3, 32, 32});
    for (auto& v : img.data) v = rng.normal();
    const BlockTargets t = ae_block_targets(img, BlockTargetSpec{12, 4});
    const int64_t gy = 4, gx = 3, row = gy * 8 + gx;
    const int64_t y0 = gy * 4 + 2 - 6, x0 = gx * 4 + 2 - 6;
    for (int64_t by = 0; by < 12; ++by)
        for (int64_t bx = 0; bx < 12; ++bx)
            for (int64_t ch = 0; ch < 3; ++ch)
                CHECK(t.values.at(row, (by * 12 + bx) * 3 + ch) ==
                      img.data[static_cast<size_t>((ch * 32 + y0 + by) * 32 + x0 + bx)]);
    CHECK_THROWS_AS(ae_block_targets(img, BlockTargetSpec{2, 4}), ConfigError);
}

TEST_CASE("loss_ae: zero at perfect prediction, c^2 at constant offset, padding excluded") {
    Rng rng(8, 0);
    Array<double> img({3, 16, 16});
    for (auto& v : img.data) v = rng.normal();
    const BlockTargets t = ae_block_targets(img, BlockTargetSpec{8, 4});
    CHECK(loss_ae(t.values, t) == 0.0);
    Array<double> off = t.values;
    for (int64_t i = 0; i < off.size(); ++i)
        if (t.valid[i] == 1.0) off[i] += 0.3;
    CHECK(loss_ae(off, t) == doctest::Approx(0.09).epsilon(1e-12));
    // padded entries must not change the loss
    Array<double> junk = t.values;
    for (int64_t i = 0; i < junk.size(); ++i)
        if (t.valid[i] == 0.0) junk[i] = 999.0;
    CHECK(loss_ae(junk, t) == 0.0);
}

TEST_CASE("loss_ae at B == p equals loss_mae with the all-ones mask (consistency bridge)") {
    Rng rng(9, 0);
    const int64_t n = 16, d = 48;
    Array<double> img({3, 16, 16});
    for (auto& v : img.data) v = rng.normal();
    const BlockTargets t = ae_block_targets(img, BlockTargetSpec{4, 4});
    Array<double> pred({n, d});
    for (auto& v : pred.data) v = rng.normal();
    const double via_ae = loss_ae(pred, t);

    Graph<double> g;
    Var pv = g.input("pred", {n, d});
    const RowLayout lay{1, n, 0, n};
    const auto h = append_loss_mae(g, pv, lay, d, TargetMode::Raw, "mae.");
    g.bind(pv, pred);
    Mask all_ones;
    all_ones.n = n;
    all_ones.bits.assign(static_cast<size_t>(n), 1);
    all_ones.ratio = 1.0;
    bind_loss_mae(g, h, lay, d, {patchify(img, 4)}, {all_ones}, TargetMode::Raw, true);
    g.forward();
    CHECK(std::abs(g.value(h.loss).data[0] - via_ae) <= 1e-10);
}

TEST_CASE("default block grid mirrors the scaled paper grid") {
    CHECK(default_block_grid(32, 4) == std::vector<int64_t>{4, 8, 12, 28});
    CHECK(default_block_grid(32, 8) == std::vector<int64_t>{8, 16, 24, 28});
}
