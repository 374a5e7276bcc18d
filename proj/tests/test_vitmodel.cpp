#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcmae/vitmodel.hpp"

using namespace lcmae;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.img_size = 16;
    cfg.patch = 4;
    cfg.channels = 3;
    cfg.enc_depth = 2;
    cfg.enc_dim = 16;
    cfg.enc_heads = 2;
    cfg.dec_depth = 2;
    cfg.dec_dim = 8;
    cfg.dec_heads = 2;
    cfg.proj_dim = 8;
    return cfg;
}

Array<double> random_image(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed, 0);
    Array<double> img({cfg.channels, cfg.img_size, cfg.img_size});
    for (auto& v : img.data) v = rng.normal();
    return img;
}

Mask mask_of(std::vector<uint8_t> bits) {
    Mask m;
    m.n = static_cast<int64_t>(bits.size());
    m.bits = std::move(bits);
    m.ratio = static_cast<double>(m.popcount()) / static_cast<double>(m.n);
    return m;
}

}  // namespace

TEST_CASE("patchify: 1x4x4 with p=2 gives 4 patches of dim 4 and exact round-trip") {
    Array<double> img({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
    const Array<double> p = patchify(img, 2);
    CHECK(p.shape == Shape{4, 4});
    CHECK(p.at(0, 0) == 0.0);
    CHECK(p.at(3, 3) == 15.0);
    const Array<double> back = unpatchify(p, 2, 1, 4, 4);
    CHECK(back.data == img.data);
}

TEST_CASE("patchify: constant image gives identical patches") {
    Array<double> img({3, 8, 8}, 0.37);
    const Array<double> p = patchify(img, 4);
    for (int64_t i = 1; i < p.shape[0]; ++i)
        for (int64_t c = 0; c < p.shape[1]; ++c) CHECK(p.at(i, c) == p.at(0, c));
}

TEST_CASE("patchify: 3x32x32 with p=4 gives n=64, patch_dim=48") {
    Array<double> img({3, 32, 32}, 1.0);
    const Array<double> p = patchify(img, 4);
    CHECK(p.shape == Shape{64, 48});
    CHECK_THROWS_AS(patchify(img, 5), ShapeError);
}

TEST_CASE("positional embeddings are pure deterministic functions of the grid") {
    const Array<double> a = posembed_sincos_2d(4, 4, 16);
    const Array<double> b = posembed_sincos_2d(4, 4, 16);
    CHECK(a.data == b.data);
    CHECK(a.shape == Shape{16, 16});
    // distinct positions get distinct embeddings
    bool any_diff = false;
    for (int64_t c = 0; c < 16; ++c) any_diff = any_diff || a.at(0, c) != a.at(5, c);
    CHECK(any_diff);
}

TEST_CASE("encoder output is invariant to masked-patch values and batch-equivariant") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 7);
    const int64_t n = cfg.n_patches();
    const Mask m = mask_of({1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
    MaeForward<double> mf =
        build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 2, n - m.popcount(), {});

    Array<double> imgA = random_image(cfg, 1);
    Array<double> imgB = random_image(cfg, 2);
    auto run = [&](const Array<double>& a, const Array<double>& b) {
        mf.bind_view(0, {patchify(a, cfg.patch), patchify(b, cfg.patch)}, {m, m});
        mf.g.forward();
        return mf.g.value(mf.view[0].enc_out).data;
    };
    const auto base = run(imgA, imgB);

    SUBCASE("perturbing masked patches leaves the output bit-identical") {
        Array<double> imgA2 = imgA;
        // patch 0 is masked: pixels (0..3, 0..3) of every channel
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < 4; ++y)
                for (int64_t x = 0; x < 4; ++x)
                    imgA2.data[static_cast<size_t>((ch * 16 + y) * 16 + x)] += 1000.0;
        CHECK(run(imgA2, imgB) == base);
    }
    SUBCASE("perturbing a visible patch changes the output") {
        Array<double> imgA2 = imgA;
        // patch 1 is visible: pixels (0..3, 4..7)
        imgA2.data[static_cast<size_t>((0 * 16 + 0) * 16 + 4)] += 1.0;
        CHECK(run(imgA2, imgB) != base);
    }
    SUBCASE("swapping images in the batch permutes the outputs") {
        const auto swapped = run(imgB, imgA);
        const int64_t rows = mf.view[0].rows_enc;
        const int64_t dim = cfg.enc_dim;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < dim; ++c) {
                CHECK(swapped[static_cast<size_t>(r * dim + c)] ==
                      base[static_cast<size_t>((rows + r) * dim + c)]);
                CHECK(swapped[static_cast<size_t>((rows + r) * dim + c)] ==
                      base[static_cast<size_t>(r * dim + c)]);
            }
    }
}

TEST_CASE("zeroed patch embedding makes the encoder depend only on positions") {
    const ModelConfig cfg = tiny_config();
    ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 7);
    for (auto& v : params.values["pe.w"].data) v = 0.0;
    for (auto& v : params.values["pe.b"].data) v = 0.0;
    const int64_t n = cfg.n_patches();
    const Mask m = mask_of({1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
    MaeForward<double> mf =
        build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 2, n - m.popcount(), {});
    mf.bind_view(0, {patchify(random_image(cfg, 3), cfg.patch), patchify(random_image(cfg, 4), cfg.patch)},
                 {m, m});
    mf.g.forward();
    const auto& enc = mf.g.value(mf.view[0].enc_out);
    const int64_t rows = mf.view[0].rows_enc;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cfg.enc_dim; ++c)
            CHECK(enc.at(r, c) == enc.at(rows + r, c));  // both images identical under zero content
}

TEST_CASE("decoder attention rows sum to one at every layer") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 11);
    const Mask m = mask_of({1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1});
    MaeForward<double> mf = build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 1,
                                              cfg.n_patches() - m.popcount(), {});
    mf.bind_view(0, {patchify(random_image(cfg, 5), cfg.patch)}, {m});
    mf.g.forward();
    for (bool decoder : {false, true}) {
        const auto recs = mf.attention_records(0, 0, decoder, m);
        for (const auto& rec : recs)
            for (int64_t h = 0; h < rec.heads; ++h)
                for (int64_t q = 0; q < rec.queries; ++q) {
                    double s = 0.0;
                    for (int64_t k = 0; k < rec.keys; ++k) s += rec.at(h, q, k);
                    CHECK(std::abs(s - 1.0) <= 1e-5);
                }
    }
}

TEST_CASE("zeroed value/MLP decoder reduces to the residual path") {
    ModelConfig cfg = tiny_config();
    cfg.dec_depth = 2;
    ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 13);
    for (auto& [name, arr] : params.values) {
        if (name.rfind("dec.", 0) == 0 &&
            (name.find("qkv") != std::string::npos || name.find("proj") != std::string::npos ||
             name.find("fc1") != std::string::npos || name.find("fc2") != std::string::npos))
            for (auto& v : arr.data) v = 0.0;
    }
    const Mask m = mask_of({1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
    MaeForward<double> mf = build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 1,
                                              cfg.n_patches() - m.popcount(), {});
    mf.bind_view(0, {patchify(random_image(cfg, 6), cfg.patch)}, {m});
    mf.g.forward();

    // with all block weights zero the blocks are the identity, so the
    // prediction at each row is head(affine_norm(assembled_input_row))
    const Array<double>& pred = mf.g.value(mf.view[0].pred);
    // recompute the expected value at a masked row: e_M + pos embedding
    const Array<double> pos = posembed_sincos_2d(cfg.grid(), cfg.grid(), cfg.dec_dim);
    const auto& e_m = params.values.at("mask_token");
    const auto& ng = params.values.at("dec.norm.g");
    const auto& nb = params.values.at("dec.norm.b");
    const auto& hw = params.values.at("head.w");
    const auto& hb = params.values.at("head.b");
    const int64_t d = cfg.dec_dim;
    const int64_t j = 0;  // masked position
    std::vector<double> row(static_cast<size_t>(d));
    for (int64_t k = 0; k < d; ++k) row[static_cast<size_t>(k)] = e_m[k] + pos.at(j, k);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    std::vector<double> normed(static_cast<size_t>(d));
    for (int64_t k = 0; k < d; ++k)
        normed[static_cast<size_t>(k)] = (row[static_cast<size_t>(k)] - mu) / std::sqrt(var + 1e-6) * ng[k] + nb[k];
    for (int64_t c = 0; c < cfg.patch_dim(); ++c) {
        double want = hb[c];
        for (int64_t k = 0; k < d; ++k) want += normed[static_cast<size_t>(k)] * hw.at(k, c);
        const int64_t r = mf.view[0].grid_row(0, j);
        CHECK(pred.at(r, c) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("shared mask token still yields position-dependent outputs") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 17);
    const Mask m = mask_of({1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1});
    MaeForward<double> mf = build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 1,
                                              cfg.n_patches() - m.popcount(), {});
    mf.bind_view(0, {patchify(random_image(cfg, 8), cfg.patch)}, {m});
    mf.g.forward();
    const Array<double> pred = mf.prediction(0, 0);
    bool differ = false;
    for (int64_t c = 0; c < cfg.patch_dim(); ++c) differ = differ || pred.at(0, c) != pred.at(1, c);
    CHECK(differ);
}

TEST_CASE("forward_mae: ratio 0 degenerates to an autoencoder and stays deterministic") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 23);
    const int64_t n = cfg.n_patches();
    Mask zero;
    zero.n = n;
    zero.bits.assign(static_cast<size_t>(n), 0);
    MaeForward<double> mf = build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 1, n, {});
    CHECK_FALSE(mf.view[0].scatter_mask.valid());  // no mask token in the graph
    mf.bind_view(0, {patchify(random_image(cfg, 9), cfg.patch)}, {zero});
    mf.g.forward();
    const Array<double> p1 = mf.prediction(0, 0);
    CHECK(p1.shape == Shape{n, cfg.patch_dim()});
    mf.g.forward();
    CHECK(mf.prediction(0, 0).data == p1.data);
}

TEST_CASE("empty visible set is rejected") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<double> params = init_params<double>(cfg, DecoderKind::Transformer, cfg.patch_dim(), 3);
    CHECK_THROWS_AS(build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), 1, 0, {}),
                    ConfigError);
}

TEST_CASE("weighted-average and conv decoders produce grid-shaped predictions") {
    const ModelConfig cfg = tiny_config();
    const Mask m = mask_of({1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
    for (DecoderKind kind : {DecoderKind::WeightedAvg, DecoderKind::Conv}) {
        const ParamStore<double> params = init_params<double>(cfg, kind, cfg.patch_dim(), 29);
        MaeForward<double> mf =
            build_mae_forward(cfg, params, kind, cfg.patch_dim(), 2, cfg.n_patches() - m.popcount(), {});
        mf.bind_view(0, {patchify(random_image(cfg, 10), cfg.patch), patchify(random_image(cfg, 11), cfg.patch)},
                     {m, m});
        mf.g.forward();
        CHECK(mf.prediction(0, 1).shape == Shape{cfg.n_patches(), cfg.patch_dim()});
    }
}
