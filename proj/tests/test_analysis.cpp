#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lcmae/analysis.hpp"
#include "lcmae/io.hpp"
#include "lcmae/rng.hpp"

using namespace lcmae;

namespace {

// A decoder-style record over a 2x2 grid plus CLS: 6 tokens would be wrong --
// rows are [CLS, p0..p3].
AttentionRecord make_record(int64_t heads, const std::vector<uint8_t>& mask_bits, bool with_cls) {
    AttentionRecord rec;
    const int64_t n = static_cast<int64_t>(mask_bits.size());
    const int64_t rows = n + (with_cls ? 1 : 0);
    rec.heads = heads;
    rec.queries = rows;
    rec.keys = rows;
    rec.weights.assign(static_cast<size_t>(heads * rows * rows), 0.0);
    for (int64_t t = 0; t < rows; ++t) {
        if (with_cls && t == 0) {
            rec.roles.push_back(TokenRole::Cls);
            rec.patch_index.push_back(-1);
        } else {
            const int64_t p = t - (with_cls ? 1 : 0);
            rec.roles.push_back(mask_bits[static_cast<size_t>(p)] ? TokenRole::MaskTok : TokenRole::Visible);
            rec.patch_index.push_back(static_cast<int32_t>(p));
        }
    }
    return rec;
}

void set_w(AttentionRecord& r, int64_t h, int64_t q, int64_t k, double v) {
    r.weights[static_cast<size_t>((h * r.queries + q) * r.keys + k)] = v;
}

void fill_uniform(AttentionRecord& r) {
    const double w = 1.0 / static_cast<double>(r.keys);
    for (auto& v : r.weights) v = w;
}

}  // namespace

TEST_CASE("attn_similarity: identical maps give exactly one") {
    AttentionRecord a = make_record(2, {1, 1, 0, 0}, true);
    Rng rng(1, 0);
    for (auto& v : a.weights) v = rng.uniform(0.01, 1.0);
    const std::vector<AttentionRecord> recs = {a, a, a};
    CHECK(attn_similarity(recs) == 1.0);
    CHECK(attn_similarity(recs, true) == 1.0);
}

TEST_CASE("attn_similarity: disjoint-support maps give zero") {
    AttentionRecord a = make_record(1, {1, 0, 0, 0}, false);
    AttentionRecord b = a;
    set_w(a, 0, 0, 1, 1.0);
    set_w(b, 0, 0, 2, 1.0);
    CHECK(attn_similarity({a, b}) == 0.0);
}

TEST_CASE("attn_similarity: three random images match the brute-force pairwise loop") {
    Rng rng(2, 0);
    std::vector<AttentionRecord> recs;
    for (int i = 0; i < 3; ++i) {
        AttentionRecord r = make_record(2, {1, 0, 1, 0}, true);
        for (auto& v : r.weights) v = rng.uniform(0.0, 1.0);
        recs.push_back(std::move(r));
    }
    auto flatten = [&](const AttentionRecord& r) {
        std::vector<double> out;
        for (int64_t q = 0; q < r.queries; ++q) {
            if (r.roles[static_cast<size_t>(q)] != TokenRole::MaskTok) continue;
            for (int64_t h = 0; h < r.heads; ++h)
                for (int64_t k = 0; k < r.keys; ++k)
                    if (r.patch_index[static_cast<size_t>(k)] >= 0) out.push_back(r.at(h, q, k));
        }
        return out;
    };
    auto cosv = [](const std::vector<double>& x, const std::vector<double>& y) {
        double nx = 0, ny = 0, dot = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            nx += x[i] * x[i];
            ny += y[i] * y[i];
            dot += x[i] * y[i];
        }
        return dot / std::sqrt(nx * ny);
    };
    double want = 0.0;
    int pairs = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            want += cosv(flatten(recs[static_cast<size_t>(i)]), flatten(recs[static_cast<size_t>(j)]));
            ++pairs;
        }
    want /= pairs;
    CHECK(std::abs(attn_similarity(recs) - want) <= 1e-10);
}

TEST_CASE("attn_similarity: fewer than two images or differing masks error") {
    AttentionRecord a = make_record(1, {1, 0, 0, 0}, false);
    fill_uniform(a);
    CHECK_THROWS_AS(attn_similarity({a}), ConfigError);
    AttentionRecord b = make_record(1, {0, 1, 0, 0}, false);
    fill_uniform(b);
    CHECK_THROWS_AS(attn_similarity({a, b}), ConfigError);
}

TEST_CASE("feature_cosine_matrix: orthonormal features give zero off-diagonal") {
    Array<double> f({3, 3});
    for (int64_t i = 0; i < 3; ++i) f.at(i, i) = 1.0;
    const Array<double> w = feature_cosine_matrix(f);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(w.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("feature_sim_weights: identical features map to the all-ones matrix") {
    Array<double> f({4, 3});
    for (int64_t i = 0; i < 4; ++i) {
        f.at(i, 0) = 0.3;
        f.at(i, 1) = -0.2;
        f.at(i, 2) = 0.9;
    }
    const Array<double> w = feature_sim_weights(f);
    for (double v : w.data) CHECK(v == 1.0);
}

TEST_CASE("feature_sim_weights: random features match the brute-force loop and invariants") {
    Rng rng(3, 0);
    Array<double> f({4, 3});
    for (auto& v : f.data) v = rng.normal();
    const Array<double> w = feature_sim_weights(f);
    // brute force: raw cosines then min-max over off-diagonals
    Array<double> raw({4, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            double ni = 0, nj = 0, dot = 0;
            for (int64_t k = 0; k < 3; ++k) {
                ni += f.at(i, k) * f.at(i, k);
                nj += f.at(j, k) * f.at(j, k);
                dot += f.at(i, k) * f.at(j, k);
            }
            raw.at(i, j) = dot / std::sqrt(ni * nj);
        }
    double lo = 1e99, hi = -1e99;
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j)
            if (i != j) {
                lo = std::min(lo, raw.at(i, j));
                hi = std::max(hi, raw.at(i, j));
            }
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            if (i == j) {
                CHECK(w.at(i, j) == 1.0);
            } else {
                CHECK(std::abs(w.at(i, j) - (raw.at(i, j) - lo) / (hi - lo)) <= 1e-10);
                CHECK(w.at(i, j) >= 0.0);
                CHECK(w.at(i, j) <= 1.0);
            }
            CHECK(w.at(i, j) == w.at(j, i));  // exact symmetry
        }
    Array<double> zf({2, 2});
    CHECK_THROWS_AS(feature_sim_weights(zf), NumericError);
}

TEST_CASE("reference_similarity: equal weights give one, single image is the plain cosine") {
    Rng rng(4, 0);
    std::vector<Array<double>> ws;
    for (int i = 0; i < 3; ++i) {
        Array<double> w({3, 3});
        for (auto& v : w.data) v = rng.uniform(0.0, 1.0);
        ws.push_back(std::move(w));
    }
    CHECK(reference_similarity(ws, ws) == 1.0);

    Array<double> a({2, 2}, {1, 0, 0, 1});
    Array<double> b({2, 2}, {1, 1, 1, 1});
    const double got = reference_similarity({a}, {b});
    CHECK(got == doctest::Approx(2.0 / (std::sqrt(2.0) * 2.0)).epsilon(1e-12));
}

TEST_CASE("reference_similarity: five random images match the brute-force loop") {
    Rng rng(5, 0);
    std::vector<Array<double>> wa, wb;
    for (int i = 0; i < 5; ++i) {
        Array<double> a({3, 3}), b({3, 3});
        for (auto& v : a.data) v = rng.uniform(0.1, 1.0);
        for (auto& v : b.data) v = rng.uniform(0.1, 1.0);
        wa.push_back(std::move(a));
        wb.push_back(std::move(b));
    }
    double want = 0.0;
    for (int i = 0; i < 5; ++i) {
        double na = 0, nb = 0, dot = 0;
        for (int64_t k = 0; k < 9; ++k) {
            na += wa[static_cast<size_t>(i)][k] * wa[static_cast<size_t>(i)][k];
            nb += wb[static_cast<size_t>(i)][k] * wb[static_cast<size_t>(i)][k];
            dot += wa[static_cast<size_t>(i)][k] * wb[static_cast<size_t>(i)][k];
        }
        want += dot / std::sqrt(na * nb);
    }
    want /= 5.0;
    CHECK(std::abs(reference_similarity(wa, wb) - want) <= 1e-10);
    CHECK_THROWS_AS(reference_similarity(wa, {wb[0]}), ConfigError);
}

TEST_CASE("attention_distance: self-focused attention is zero") {
    AttentionRecord r = make_record(2, {1, 0, 0, 0}, false);
    for (int64_t h = 0; h < 2; ++h)
        for (int64_t q = 0; q < 4; ++q) set_w(r, h, q, q, 1.0);
    const AttentionDistance d = attention_distance(r, 2, 4);
    for (double v : d.per_head) CHECK(v == 0.0);
}

TEST_CASE("attention_distance: uniform attention on a 2x2 grid matches brute force") {
    AttentionRecord r = make_record(1, {0, 0, 0, 0}, false);
    fill_uniform(r);
    const int64_t p = 4;
    // centers at (1.5,1.5),(1.5,5.5),(5.5,1.5),(5.5,5.5)
    double want = 0.0;
    const double c[4][2] = {{1.5, 1.5}, {1.5, 5.5}, {5.5, 1.5}, {5.5, 5.5}};
    for (int q = 0; q < 4; ++q) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
            acc += 0.25 * std::sqrt((c[q][0] - c[k][0]) * (c[q][0] - c[k][0]) +
                                    (c[q][1] - c[k][1]) * (c[q][1] - c[k][1]));
        want += acc;
    }
    want /= 4.0;
    const AttentionDistance d = attention_distance(r, 2, p);
    CHECK(d.mean == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("attention_distance: one-hot diagonal neighbor gives p*sqrt(2)") {
    AttentionRecord r = make_record(1, {0, 0, 0, 0}, false);
    for (int64_t q = 0; q < 4; ++q) set_w(r, 0, q, 3 - q, 1.0);  // (0,0)<->(1,1), (0,1)<->(1,0)
    const AttentionDistance d = attention_distance(r, 2, 4);
    CHECK(d.mean == doctest::Approx(4.0 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("attention_distance: head relabeling, translation invariance, and linear scaling in p") {
    Rng rng(6, 0);
    AttentionRecord r = make_record(3, {1, 1, 0, 0}, true);
    for (int64_t h = 0; h < 3; ++h)
        for (int64_t q = 0; q < r.queries; ++q) {
            double z = 0.0;
            std::vector<double> row(static_cast<size_t>(r.keys));
            for (auto& v : row) {
                v = rng.uniform(0.01, 1.0);
                z += v;
            }
            for (int64_t k = 0; k < r.keys; ++k) set_w(r, h, q, k, row[static_cast<size_t>(k)] / z);
        }
    const AttentionDistance d4 = attention_distance(r, 2, 4);
    const AttentionDistance d8 = attention_distance(r, 2, 8);
    CHECK(d8.mean == doctest::Approx(2.0 * d4.mean).epsilon(1e-12));

    AttentionRecord swapped = r;
    for (int64_t q = 0; q < r.queries; ++q)
        for (int64_t k = 0; k < r.keys; ++k) {
            set_w(swapped, 0, q, k, r.at(2, q, k));
            set_w(swapped, 2, q, k, r.at(0, q, k));
        }
    CHECK(attention_distance(swapped, 2, 4).mean == doctest::Approx(d4.mean).epsilon(1e-15));

    // grouped queries: CLS is excluded everywhere, groups partition the rest
    const AttentionDistance dm = attention_distance(r, 2, 4, QueryGroup::MaskOnly);
    const AttentionDistance dv = attention_distance(r, 2, 4, QueryGroup::VisibleOnly);
    CHECK(d4.mean == doctest::Approx((dm.mean + dv.mean) / 2.0).epsilon(1e-12));
}

TEST_CASE("collapse_metric: identical outputs collapse, spherical noise does not") {
    const int64_t n = 4, d = 16;
    std::vector<Array<double>> same;
    Rng rng(7, 0);
    Array<double> one({n, d});
    for (auto& v : one.data) v = rng.normal();
    for (int i = 0; i < 8; ++i) same.push_back(one);
    const CollapseReport rep = collapse_metric(same);
    CHECK(rep.aggregate == 0.0);
    CHECK(collapse_declared(rep.aggregate, 1.0));

    // i.i.d. unit-sphere outputs: aggregate matches an independent Monte Carlo
    // estimate of the same statistic
    auto sphere_batch = [&](uint64_t seed) {
        Rng r2(seed, 1);
        std::vector<Array<double>> vs;
        for (int b = 0; b < 32; ++b) {
            Array<double> v({n, d});
            for (auto& x : v.data) x = r2.normal();
            vs.push_back(std::move(v));
        }
        return vs;
    };
    const double got = collapse_metric(sphere_batch(1)).aggregate;
    double mc = 0.0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) mc += collapse_metric(sphere_batch(100 + t)).aggregate;
    mc /= trials;
    CHECK(std::abs(got - mc) <= 0.1);  // both near 1 - 1/B for unit vectors
    CHECK_FALSE(collapse_declared(got, got));

    std::vector<Array<double>> tiny(same.begin(), same.begin() + 4);
    CHECK_THROWS_AS(collapse_metric(tiny), ConfigError);
}

TEST_CASE("collapse declaration needs both the floor and the decay") {
    CHECK(collapse_declared(5e-4, 1.0));
    CHECK_FALSE(collapse_declared(5e-4, 0.01));   // less than 100x decay
    CHECK_FALSE(collapse_declared(5e-3, 100.0));  // above the absolute floor
}

TEST_CASE("dump_attention: uniform map is constant, one-hot is a single white pixel, round-trips") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "lcmae_test_dump").string();
    fs::create_directories(dir);

    AttentionRecord r = make_record(1, {1, 0, 0, 0}, true);
    fill_uniform(r);
    dump_attention(r, 1, 2, dir + "/uniform.pgm");
    const Pgm u = read_pgm(dir + "/uniform.pgm");
    CHECK(u.width == 2);
    CHECK(u.height == 2);
    for (uint8_t px : u.pixels) CHECK(px == 255);  // degenerate min-max maps to white

    AttentionRecord oh = make_record(1, {1, 0, 0, 0}, true);
    set_w(oh, 0, 1, 3, 1.0);  // query row 1 attends to patch 2 (key row 3)
    dump_attention(oh, 1, 2, dir + "/onehot.pgm");
    const Pgm o = read_pgm(dir + "/onehot.pgm");
    int whites = 0;
    for (uint8_t px : o.pixels) whites += px == 255;
    CHECK(whites == 1);
    CHECK(o.pixels[2] == 255);

    // sidecar carries the CLS weight
    const std::string sidecar = read_text_file(dir + "/onehot.pgm.txt");
    CHECK(sidecar.find("cls_weight") != std::string::npos);

    // round-trip: rewriting the decoded pixels reproduces the file exactly
    write_pgm(dir + "/copy.pgm", o.width, o.height, o.pixels);
    CHECK(read_text_file(dir + "/copy.pgm") == read_text_file(dir + "/onehot.pgm"));
}

TEST_CASE("spearman: monotone, reversed, and tied sequences") {
    CHECK(spearman({1, 2, 3, 4, 5}, {10, 20, 30, 40, 50}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
    // one adjacent swap on five points
    CHECK(spearman({1, 2, 3, 4, 5}, {1, 2, 4, 3, 5}) == doctest::Approx(0.9));
    CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), NumericError);
}
