#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcmae/masking.hpp"

using namespace lcmae;

TEST_CASE("mask_count rounds half away from zero") {
    CHECK(mask_count(196, 0.75) == 147);
    CHECK(mask_count(16, 0.75) == 12);
    CHECK(mask_count(2, 0.25) == 1);   // 0.5 -> 1
    CHECK(mask_count(3, 0.5) == 2);    // 1.5 -> 2
    CHECK(mask_count(16, 0.0) == 0);
}

TEST_CASE("sample_mask: exact popcount, ratio bounds") {
    Rng rng(1, 0);
    CHECK(sample_mask(196, 0.75, rng).popcount() == 147);
    const Mask zero = sample_mask(16, 0.0, rng);
    CHECK(zero.popcount() == 0);
    CHECK_THROWS_AS(sample_mask(16, 1.5, rng), ConfigError);
    CHECK_THROWS_AS(sample_mask(16, -0.1, rng), ConfigError);
}

TEST_CASE("sample_mask: per-position frequency is ratio within 0.01 over 1e5 draws") {
    const int64_t n = 16;
    const int64_t draws = 100000;
    Rng rng(42, 1);
    std::vector<int64_t> counts(n, 0);
    for (int64_t d = 0; d < draws; ++d) {
        const Mask m = sample_mask(n, 0.75, rng);
        for (int64_t i = 0; i < n; ++i) counts[static_cast<size_t>(i)] += m.bits[static_cast<size_t>(i)];
    }
    for (int64_t i = 0; i < n; ++i) {
        const double freq = static_cast<double>(counts[static_cast<size_t>(i)]) / static_cast<double>(draws);
        CHECK(std::abs(freq - 0.75) <= 0.01);
    }
}

TEST_CASE("sample_mask_pair: ratio 1 gives full masks and full intersection") {
    Rng rng(3, 0);
    const auto [a, b] = sample_mask_pair(8, 1.0, rng);
    CHECK(a.popcount() == 8);
    CHECK(b.popcount() == 8);
    CHECK(intersect(a, b).popcount() == 8);
}

TEST_CASE("sample_mask_pair: expected intersection popcount is ratio^2 * n") {
    const int64_t n = 16;
    const double ratio = 0.75;
    const int64_t draws = 100000;
    Rng rng(7, 2);
    double sum = 0.0, sumsq = 0.0;
    for (int64_t d = 0; d < draws; ++d) {
        const auto [a, b] = sample_mask_pair(n, ratio, rng);
        const double k = static_cast<double>(intersect(a, b).popcount());
        sum += k;
        sumsq += k * k;
    }
    const double mean = sum / draws;
    const double var = sumsq / draws - mean * mean;
    const double expected = ratio * ratio * static_cast<double>(n);
    const double sigma_of_mean = std::sqrt(var / draws);
    CHECK(std::abs(mean - expected) <= 3.0 * sigma_of_mean + 1e-9);
}

TEST_CASE("sample_mask_pair: identical RngState reproduces the pair") {
    Rng r1(99, 5), r2(99, 5);
    const auto [a1, b1] = sample_mask_pair(32, 0.6, r1);
    const auto [a2, b2] = sample_mask_pair(32, 0.6, r2);
    CHECK(a1.bits == a2.bits);
    CHECK(b1.bits == b2.bits);
}

TEST_CASE("intersect: identities") {
    Rng rng(4, 0);
    const Mask m = sample_mask(12, 0.5, rng);
    CHECK(intersect(m, complement(m)).popcount() == 0);
    CHECK(intersect(m, m).bits == m.bits);
    Mask a, b;
    a.n = b.n = 4;
    a.bits = {1, 1, 0, 0};
    b.bits = {1, 0, 1, 0};
    CHECK(intersect(a, b).bits == std::vector<uint8_t>{1, 0, 0, 0});
    Mask c;
    c.n = 5;
    c.bits = {0, 0, 0, 0, 0};
    CHECK_THROWS_AS(intersect(a, c), ShapeError);
}

TEST_CASE("split_tokens: all-zero mask is the identity") {
    Array<double> seq({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Mask m;
    m.n = 4;
    m.bits = {0, 0, 0, 0};
    const auto [vis, idx] = split_tokens(seq, m);
    CHECK(vis.data == seq.data);
    CHECK(idx == std::vector<int64_t>{0, 1, 2, 3});
}

TEST_CASE("split_tokens: visible positions keep original order") {
    Array<double> seq({4, 1}, {10, 11, 12, 13});
    Mask m;
    m.n = 4;
    m.bits = {0, 1, 0, 1};
    const auto [vis, idx] = split_tokens(seq, m);
    CHECK(idx == std::vector<int64_t>{0, 2});
    CHECK(vis.data == std::vector<double>{10, 12});
}

TEST_CASE("split then reinsert restores unmasked positions exactly (property)") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed, 9);
        const int64_t n = 1 + rng.below(20);
        const double ratio = rng.next_double();
        const Mask m = sample_mask(n, ratio, rng);
        Array<double> seq({n, 3});
        for (auto& v : seq.data) v = rng.normal();
        const auto [vis, idx] = split_tokens(seq, m);
        const Array<double> back = reinsert_tokens(vis, idx, n, -7.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < 3; ++c) {
                if (m.bits[static_cast<size_t>(i)])
                    CHECK(back.at(i, c) == -7.0);
                else
                    CHECK(back.at(i, c) == seq.at(i, c));
            }
    }
}

TEST_CASE("mask pack/unpack round-trips") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, 13);
        const int64_t n = 1 + rng.below(70);
        const Mask m = sample_mask(n, rng.next_double(), rng);
        const Mask back = Mask::unpack(n, m.pack());
        CHECK(back.bits == m.bits);
    }
}

TEST_CASE("mask sequences are deterministic per (seed, stream) and differ across streams") {
    Rng a(5, 1), b(5, 1), c(5, 2);
    bool all_same = true;
    for (int i = 0; i < 8; ++i) {
        const Mask ma = sample_mask(64, 0.75, a);
        const Mask mb = sample_mask(64, 0.75, b);
        const Mask mc = sample_mask(64, 0.75, c);
        CHECK(ma.bits == mb.bits);
        all_same = all_same && ma.bits == mc.bits;
    }
    CHECK_FALSE(all_same);
}
