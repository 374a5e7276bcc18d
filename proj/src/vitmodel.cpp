#include "lcmae/vitmodel.hpp"

#include <cmath>

#include "lcmae/altdecoders.hpp"

namespace lcmae {

void ModelConfig::validate() const {
    if (img_size < 1 || patch < 1 || channels < 1) throw ConfigError("bad image geometry");
    if (img_size % patch != 0) throw ConfigError("img_size must be divisible by patch");
    if (enc_dim % enc_heads != 0) throw ConfigError("enc_dim must be divisible by enc_heads");
    if (dec_dim % dec_heads != 0) throw ConfigError("dec_dim must be divisible by dec_heads");
    if (enc_dim % 4 != 0 || dec_dim % 4 != 0) throw ConfigError("embedding dims must be divisible by 4");
    if (enc_depth < 1 || dec_depth < 1) throw ConfigError("depths must be >= 1");
    if (proj_dim < 1) throw ConfigError("proj_dim must be >= 1");
}

DecoderKind decoder_kind_from_string(const std::string& s) {
    if (s == "transformer" || s == "ae_block") return DecoderKind::Transformer;
    if (s == "weighted_avg") return DecoderKind::WeightedAvg;
    if (s == "conv") return DecoderKind::Conv;
    throw ConfigError("unknown decoder kind '" + s + "'");
}

std::string to_string(DecoderKind k) {
    switch (k) {
        case DecoderKind::Transformer: return "transformer";
        case DecoderKind::WeightedAvg: return "weighted_avg";
        case DecoderKind::Conv: return "conv";
    }
    return "?";
}

template <typename T>
Array<T> patchify(const Array<T>& image, int64_t p) {
    if (image.rank() != 3) throw ShapeError("patchify expects [C,H,W], got " + shape_str(image.shape));
    const int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
    if (h % p != 0 || w % p != 0)
        throw ShapeError("image " + shape_str(image.shape) + " not divisible by patch " + std::to_string(p));
    const int64_t gh = h / p, gw = w / p;
    Array<T> out({gh * gw, p * p * c});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            T* row = out.data.data() + (gy * gw + gx) * p * p * c;
            // within a patch: row-major pixels, channels fastest
            for (int64_t py = 0; py < p; ++py)
                for (int64_t px = 0; px < p; ++px)
                    for (int64_t ch = 0; ch < c; ++ch)
                        row[(py * p + px) * c + ch] =
                            image.data[static_cast<size_t>((ch * h + gy * p + py) * w + gx * p + px)];
        }
    return out;
}

template <typename T>
Array<T> unpatchify(const Array<T>& patches, int64_t p, int64_t channels, int64_t h, int64_t w) {
    const int64_t gh = h / p, gw = w / p;
    if (patches.rank() != 2 || patches.shape[0] != gh * gw || patches.shape[1] != p * p * channels)
        throw ShapeError("unpatchify shape mismatch: " + shape_str(patches.shape));
    Array<T> out({channels, h, w});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            const T* row = patches.data.data() + (gy * gw + gx) * p * p * channels;
            for (int64_t py = 0; py < p; ++py)
                for (int64_t px = 0; px < p; ++px)
                    for (int64_t ch = 0; ch < channels; ++ch)
                        out.data[static_cast<size_t>((ch * h + gy * p + py) * w + gx * p + px)] =
                            row[(py * p + px) * channels + ch];
        }
    return out;
}

Array<double> posembed_sincos_2d(int64_t gh, int64_t gw, int64_t dim) {
    if (dim % 4 != 0) throw ConfigError("sincos embedding needs dim % 4 == 0");
    const int64_t d4 = dim / 4;
    Array<double> out({gh * gw, dim});
    for (int64_t y = 0; y < gh; ++y)
        for (int64_t x = 0; x < gw; ++x) {
            double* row = out.data.data() + (y * gw + x) * dim;
            for (int64_t i = 0; i < d4; ++i) {
                const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d4));
                row[i] = std::sin(static_cast<double>(y) * omega);
                row[d4 + i] = std::cos(static_cast<double>(y) * omega);
                row[2 * d4 + i] = std::sin(static_cast<double>(x) * omega);
                row[3 * d4 + i] = std::cos(static_cast<double>(x) * omega);
            }
        }
    return out;
}

namespace {

template <typename T>
Array<T> normal_init(Shape s, Rng& rng, double std_dev) {
    Array<T> a(std::move(s));
    for (auto& v : a.data) v = static_cast<T>(rng.normal() * std_dev);
    return a;
}

template <typename T>
void block_params(ParamStore<T>& ps, const std::string& pfx, int64_t dim, int64_t mlp_ratio, Rng& rng,
                  double std_dev) {
    ps.values[pfx + ".ln1.g"] = Array<T>::full({dim}, T(1));
    ps.values[pfx + ".ln1.b"] = Array<T>::zeros({dim});
    ps.values[pfx + ".qkv.w"] = normal_init<T>({dim, 3 * dim}, rng, std_dev);
    ps.values[pfx + ".q.b"] = Array<T>::zeros({dim});
    ps.values[pfx + ".v.b"] = Array<T>::zeros({dim});
    ps.values[pfx + ".proj.w"] = normal_init<T>({dim, dim}, rng, std_dev);
    ps.values[pfx + ".proj.b"] = Array<T>::zeros({dim});
    ps.values[pfx + ".ln2.g"] = Array<T>::full({dim}, T(1));
    ps.values[pfx + ".ln2.b"] = Array<T>::zeros({dim});
    ps.values[pfx + ".fc1.w"] = normal_init<T>({dim, mlp_ratio * dim}, rng, std_dev);
    ps.values[pfx + ".fc1.b"] = Array<T>::zeros({mlp_ratio * dim});
    ps.values[pfx + ".fc2.w"] = normal_init<T>({mlp_ratio * dim, dim}, rng, std_dev);
    ps.values[pfx + ".fc2.b"] = Array<T>::zeros({dim});
}

}  // namespace

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, DecoderKind kind, int64_t out_dim, uint64_t seed) {
    cfg.validate();
    Rng rng(seed, /*stream=*/0xC0DE);
    const double sd = cfg.init_std;
    ParamStore<T> ps;
    if (cfg.use_cls) ps.values["cls"] = normal_init<T>({cfg.enc_dim}, rng, sd);
    ps.values["pe.w"] = normal_init<T>({cfg.patch_dim(), cfg.enc_dim}, rng, sd);
    ps.values["pe.b"] = Array<T>::zeros({cfg.enc_dim});
    for (int64_t i = 0; i < cfg.enc_depth; ++i)
        block_params(ps, "enc." + std::to_string(i), cfg.enc_dim, cfg.mlp_ratio, rng, sd);
    ps.values["enc.norm.g"] = Array<T>::full({cfg.enc_dim}, T(1));
    ps.values["enc.norm.b"] = Array<T>::zeros({cfg.enc_dim});
    ps.values["dec_embed.w"] = normal_init<T>({cfg.enc_dim, cfg.dec_dim}, rng, sd);
    ps.values["dec_embed.b"] = Array<T>::zeros({cfg.dec_dim});
    ps.values["mask_token"] = normal_init<T>({cfg.dec_dim}, rng, sd);
    switch (kind) {
        case DecoderKind::Transformer:
            for (int64_t i = 0; i < cfg.dec_depth; ++i)
                block_params(ps, "dec." + std::to_string(i), cfg.dec_dim, cfg.mlp_ratio, rng, sd);
            ps.values["dec.norm.g"] = Array<T>::full({cfg.dec_dim}, T(1));
            ps.values["dec.norm.b"] = Array<T>::zeros({cfg.dec_dim});
            ps.values["head.w"] = normal_init<T>({cfg.dec_dim, out_dim}, rng, sd);
            ps.values["head.b"] = Array<T>::zeros({out_dim});
            break;
        case DecoderKind::WeightedAvg:
            ps.values["wavg.fc1.w"] = normal_init<T>({cfg.dec_dim, cfg.dec_dim}, rng, sd);
            ps.values["wavg.fc1.b"] = Array<T>::zeros({cfg.dec_dim});
            ps.values["wavg.fc2.w"] = normal_init<T>({cfg.dec_dim, out_dim}, rng, sd);
            ps.values["wavg.fc2.b"] = Array<T>::zeros({out_dim});
            break;
        case DecoderKind::Conv:
            ps.values["conv.w"] = normal_init<T>({cfg.dec_dim, cfg.dec_dim, 5, 5}, rng, sd);
            ps.values["conv.b"] = Array<T>::zeros({cfg.dec_dim});
            ps.values["head.w"] = normal_init<T>({cfg.dec_dim, out_dim}, rng, sd);
            ps.values["head.b"] = Array<T>::zeros({out_dim});
            break;
    }
    ps.values["proj.w"] = normal_init<T>({cfg.dec_dim, cfg.proj_dim}, rng, sd);
    ps.values["proj.b"] = Array<T>::zeros({cfg.proj_dim});
    ps.values["projpx.w"] = normal_init<T>({out_dim, cfg.proj_dim}, rng, sd);
    ps.values["projpx.b"] = Array<T>::zeros({cfg.proj_dim});
    return ps;
}

// ---- graph building ----

namespace {

template <typename T>
struct Builder {
    Graph<T>& g;
    const ParamStore<T>& store;
    std::map<std::string, Var> cache;

    Var P(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        auto sit = store.values.find(name);
        if (sit == store.values.end()) throw ConfigError("missing parameter '" + name + "'");
        Var v = g.param(name, sit->second);
        cache[name] = v;
        return v;
    }

    Var affine_norm(Var x, const std::string& pfx) {
        Var y = g.layernorm_rows(x);
        return g.add(g.mul(y, P(pfx + ".g")), P(pfx + ".b"));
    }

    // One pre-norm transformer block over stacked rows; attention runs per
    // image. Returns the block output and appends per-(image, head) softmax
    // nodes to `attn`.
    Var block(Var x, const std::string& pfx, int64_t batch, int64_t rows, int64_t dim, int64_t heads,
              std::vector<std::vector<Var>>* attn) {
        const int64_t dh = dim / heads;
        Var h1 = g.layernorm_rows(x);
        h1 = g.add(g.mul(h1, P(pfx + ".ln1.g")), P(pfx + ".ln1.b"));
        Var kzero = g.constant(Array<T>::zeros({dim}));
        Var qkv_bias = g.concat_rows({P(pfx + ".q.b"), kzero, P(pfx + ".v.b")});
        Var qkv = g.add(g.matmul(h1, P(pfx + ".qkv.w")), qkv_bias);
        std::vector<Var> per_image;
        per_image.reserve(static_cast<size_t>(batch));
        for (int64_t i = 0; i < batch; ++i) {
            Var qkv_i = g.slice_rows(qkv, i * rows, rows);
            std::vector<Var> heads_out;
            heads_out.reserve(static_cast<size_t>(heads));
            if (attn) (*attn).emplace_back();
            for (int64_t h = 0; h < heads; ++h) {
                Var q = g.slice_cols(qkv_i, h * dh, dh);
                Var k = g.slice_cols(qkv_i, dim + h * dh, dh);
                Var v = g.slice_cols(qkv_i, 2 * dim + h * dh, dh);
                Var scores = g.mul_scalar(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
                Var p = g.softmax_rows(scores);
                if (attn) (*attn).back().push_back(p);
                heads_out.push_back(g.matmul(p, v));
            }
            per_image.push_back(heads > 1 ? g.concat_cols(heads_out) : heads_out[0]);
        }
        Var ctx = batch > 1 ? g.concat_rows(per_image) : per_image[0];
        Var att = g.add(g.matmul(ctx, P(pfx + ".proj.w")), P(pfx + ".proj.b"));
        Var x2 = g.add(x, att);
        Var h2 = g.layernorm_rows(x2);
        h2 = g.add(g.mul(h2, P(pfx + ".ln2.g")), P(pfx + ".ln2.b"));
        Var m = g.add(g.matmul(h2, P(pfx + ".fc1.w")), P(pfx + ".fc1.b"));
        m = g.add(g.matmul(g.gelu(m), P(pfx + ".fc2.w")), P(pfx + ".fc2.b"));
        return g.add(x2, m);
    }
};

// Stacked decoder positional embeddings: per image [CLS zeros?, grid rows].
template <typename T>
Array<T> stacked_pos(const Array<double>& pos, int64_t batch, int64_t cls, int64_t dim) {
    const int64_t n = pos.shape[0];
    const int64_t rows = n + cls;
    Array<T> out({batch * rows, dim});
    for (int64_t i = 0; i < batch; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t d = 0; d < dim; ++d)
                out.data[static_cast<size_t>(((i * rows + cls + j) * dim + d))] =
                    static_cast<T>(pos.data[static_cast<size_t>(j * dim + d)]);
    return out;
}

}  // namespace

template <typename T>
MaeForward<T> build_mae_forward(const ModelConfig& cfg, const ParamStore<T>& params, DecoderKind kind,
                                int64_t out_dim, int64_t batch, int64_t n_vis, const ForwardOptions& opts) {
    cfg.validate();
    if (batch < 1) throw ConfigError("batch must be >= 1");
    const int64_t n = cfg.n_patches();
    if (n_vis < 1) throw ConfigError("empty visible set: encoder needs at least one visible patch");
    if (n_vis > n) throw ConfigError("n_vis exceeds patch count");

    MaeForward<T> mf;
    mf.cfg = cfg;
    mf.kind = kind;
    mf.out_dim = out_dim;
    mf.batch = batch;
    mf.two_view = opts.two_view;
    mf.posemb_enc = posembed_sincos_2d(cfg.grid(), cfg.grid(), cfg.enc_dim).template astype<T>();

    Graph<T>& g = mf.g;
    Builder<T> b{g, params, {}};

    const Array<double> pos_dec = posembed_sincos_2d(cfg.grid(), cfg.grid(), cfg.dec_dim);
    const int n_views = opts.two_view ? 2 : 1;
    for (int view = 0; view < n_views; ++view) {
        ViewHandles<T>& vh = mf.view[view];
        vh.prefix = "v" + std::to_string(view) + ".";
        vh.n = n;
        vh.n_vis = n_vis;
        vh.n_mask = n - n_vis;
        vh.cls_enc = cfg.use_cls ? 1 : 0;
        vh.cls_dec = (kind == DecoderKind::Transformer && cfg.use_cls) ? 1 : 0;
        vh.rows_enc = n_vis + vh.cls_enc;
        vh.rows_dec = n + vh.cls_dec;

        vh.vis_patches = g.input(vh.prefix + "vis_patches", {batch * n_vis, cfg.patch_dim()});
        vh.vis_pos = g.input(vh.prefix + "vis_pos", {batch * n_vis, cfg.enc_dim});

        // ---- encoder ----
        Var emb = g.add(g.matmul(vh.vis_patches, b.P("pe.w")), b.P("pe.b"));
        emb = g.add(emb, vh.vis_pos);
        Var x;
        if (vh.cls_enc) {
            std::vector<int64_t> emb_dst(static_cast<size_t>(batch * n_vis));
            std::vector<int64_t> cls_dst(static_cast<size_t>(batch));
            for (int64_t i = 0; i < batch; ++i) {
                cls_dst[static_cast<size_t>(i)] = i * vh.rows_enc;
                for (int64_t j = 0; j < n_vis; ++j)
                    emb_dst[static_cast<size_t>(i * n_vis + j)] = i * vh.rows_enc + 1 + j;
            }
            Var cls_rows = g.tile_rows(b.P("cls"), batch);
            x = g.add(g.scatter_rows(emb, emb_dst, batch * vh.rows_enc),
                      g.scatter_rows(cls_rows, cls_dst, batch * vh.rows_enc));
        } else {
            x = emb;
        }
        vh.enc_attn.resize(static_cast<size_t>(cfg.enc_depth));
        for (int64_t l = 0; l < cfg.enc_depth; ++l)
            x = b.block(x, "enc." + std::to_string(l), batch, vh.rows_enc, cfg.enc_dim, cfg.enc_heads,
                        &vh.enc_attn[static_cast<size_t>(l)]);
        vh.enc_out = b.affine_norm(x, "enc.norm");

        // ---- decoder input assembly ----
        Var zd = g.add(g.matmul(vh.enc_out, b.P("dec_embed.w")), b.P("dec_embed.b"));
        std::vector<int64_t> vis_src(static_cast<size_t>(batch * n_vis));
        std::vector<int64_t> vis_dst(static_cast<size_t>(batch * n_vis));
        for (int64_t i = 0; i < batch; ++i)
            for (int64_t j = 0; j < n_vis; ++j) {
                vis_src[static_cast<size_t>(i * n_vis + j)] = i * vh.rows_enc + vh.cls_enc + j;
                vis_dst[static_cast<size_t>(i * n_vis + j)] = i * vh.rows_dec + vh.cls_dec + j;  // placeholder
            }
        Var vis_tok = g.gather_rows(zd, vis_src);
        vh.scatter_vis = g.scatter_rows(vis_tok, vis_dst, batch * vh.rows_dec, vh.prefix + "scatter_vis");
        Var dec_in = vh.scatter_vis;
        if (vh.n_mask > 0) {
            std::vector<int64_t> mask_dst(static_cast<size_t>(batch * vh.n_mask));
            // placeholder layout: the leftover grid slots, rebound per step
            for (int64_t i = 0; i < batch; ++i)
                for (int64_t k = 0; k < vh.n_mask; ++k)
                    mask_dst[static_cast<size_t>(i * vh.n_mask + k)] = i * vh.rows_dec + vh.cls_dec + n_vis + k;
            Var mtok = g.tile_rows(b.P("mask_token"), batch * vh.n_mask);
            vh.scatter_mask = g.scatter_rows(mtok, mask_dst, batch * vh.rows_dec, vh.prefix + "scatter_mask");
            dec_in = g.add(dec_in, vh.scatter_mask);
        }
        if (vh.cls_dec) {
            std::vector<int64_t> cls_src(static_cast<size_t>(batch)), cls_dst(static_cast<size_t>(batch));
            for (int64_t i = 0; i < batch; ++i) {
                cls_src[static_cast<size_t>(i)] = i * vh.rows_enc;
                cls_dst[static_cast<size_t>(i)] = i * vh.rows_dec;
            }
            dec_in = g.add(dec_in, g.scatter_rows(g.gather_rows(zd, cls_src), cls_dst, batch * vh.rows_dec));
        }
        dec_in = g.add(dec_in, g.constant(stacked_pos<T>(pos_dec, batch, vh.cls_dec, cfg.dec_dim),
                                          vh.prefix + "pos_dec"));

        // ---- decoder ----
        switch (kind) {
            case DecoderKind::Transformer: {
                Var y = dec_in;
                vh.dec_attn.resize(static_cast<size_t>(cfg.dec_depth));
                for (int64_t l = 0; l < cfg.dec_depth; ++l) {
                    y = b.block(y, "dec." + std::to_string(l), batch, vh.rows_dec, cfg.dec_dim, cfg.dec_heads,
                                &vh.dec_attn[static_cast<size_t>(l)]);
                    vh.dec_layer_tokens.push_back(y);
                }
                vh.dec_tokens = b.affine_norm(y, "dec.norm");
                vh.pred = g.add(g.matmul(vh.dec_tokens, b.P("head.w")), b.P("head.b"));
                break;
            }
            case DecoderKind::WeightedAvg: {
                const GaussianKernel ker = gaussian_kernel(5, 1.0);
                Var mix = g.constant(weighted_avg_mixing(cfg.grid(), ker).template astype<T>(), vh.prefix + "mix");
                std::vector<Var> mixed;
                for (int64_t i = 0; i < batch; ++i)
                    mixed.push_back(g.matmul(mix, g.slice_rows(dec_in, i * n, n)));
                Var feats = batch > 1 ? g.concat_rows(mixed) : mixed[0];
                vh.dec_tokens = feats;
                vh.dec_layer_tokens.push_back(feats);
                Var h = g.add(g.matmul(feats, b.P("wavg.fc1.w")), b.P("wavg.fc1.b"));
                vh.pred = g.add(g.matmul(g.gelu(h), b.P("wavg.fc2.w")), b.P("wavg.fc2.b"));
                break;
            }
            case DecoderKind::Conv: {
                const int64_t gr = cfg.grid();
                std::vector<Var> outs;
                for (int64_t i = 0; i < batch; ++i) {
                    Var t = g.slice_rows(dec_in, i * n, n);                     // [n, D]
                    Var chw = g.reshape(g.transpose(t), {cfg.dec_dim, gr, gr});  // [D, g, g]
                    Var c = g.add_channel_bias(g.conv2d(chw, b.P("conv.w")), b.P("conv.b"));
                    outs.push_back(g.transpose(g.reshape(c, {cfg.dec_dim, n})));
                }
                Var feats = batch > 1 ? g.concat_rows(outs) : outs[0];
                vh.dec_tokens = feats;
                vh.dec_layer_tokens.push_back(feats);
                vh.pred = g.add(g.matmul(feats, b.P("head.w")), b.P("head.b"));
                break;
            }
        }

        if (opts.with_projector) {
            if (opts.projector_input == ProjectorInput::DecoderTokens)
                vh.proj = g.add(g.matmul(vh.dec_tokens, b.P("proj.w")), b.P("proj.b"));
            else
                vh.proj = g.add(g.matmul(vh.pred, b.P("projpx.w")), b.P("projpx.b"));
        }
    }
    return mf;
}

template <typename T>
void MaeForward<T>::bind_view(int v, const std::vector<Array<T>>& patch_seqs, const std::vector<Mask>& masks) {
    ViewHandles<T>& vh = view[v];
    if (static_cast<int64_t>(patch_seqs.size()) != batch || static_cast<int64_t>(masks.size()) != batch)
        throw ShapeError("bind_view: batch size mismatch");
    const int64_t pd = cfg.patch_dim();
    Array<T> vis_patches({batch * vh.n_vis, pd});
    Array<T> vis_pos({batch * vh.n_vis, cfg.enc_dim});
    std::vector<int64_t> vis_dst(static_cast<size_t>(batch * vh.n_vis));
    std::vector<int64_t> mask_dst(static_cast<size_t>(batch * vh.n_mask));
    for (int64_t i = 0; i < batch; ++i) {
        const Mask& m = masks[static_cast<size_t>(i)];
        if (m.n != vh.n) throw ShapeError("mask length does not match patch count");
        const auto vis = m.visible_indices();
        const auto msk = m.masked_indices();
        if (static_cast<int64_t>(vis.size()) != vh.n_vis)
            throw ShapeError("mask popcount does not match the graph's visible count");
        const Array<T>& seq = patch_seqs[static_cast<size_t>(i)];
        if (seq.shape != Shape{vh.n, pd}) throw ShapeError("patch sequence shape mismatch");
        for (int64_t j = 0; j < vh.n_vis; ++j) {
            const int64_t src = vis[static_cast<size_t>(j)];
            std::copy(seq.data.begin() + src * pd, seq.data.begin() + (src + 1) * pd,
                      vis_patches.data.begin() + (i * vh.n_vis + j) * pd);
            std::copy(posemb_enc.data.begin() + src * cfg.enc_dim, posemb_enc.data.begin() + (src + 1) * cfg.enc_dim,
                      vis_pos.data.begin() + (i * vh.n_vis + j) * cfg.enc_dim);
            vis_dst[static_cast<size_t>(i * vh.n_vis + j)] = vh.grid_row(i, src);
        }
        for (int64_t k = 0; k < vh.n_mask; ++k)
            mask_dst[static_cast<size_t>(i * vh.n_mask + k)] = vh.grid_row(i, msk[static_cast<size_t>(k)]);
    }
    g.bind(vh.vis_patches, std::move(vis_patches));
    g.bind(vh.vis_pos, std::move(vis_pos));
    g.bind_indices(vh.scatter_vis, std::move(vis_dst));
    if (vh.n_mask > 0) g.bind_indices(vh.scatter_mask, std::move(mask_dst));
}

template <typename T>
std::vector<AttentionRecord> MaeForward<T>::attention_records(int v, int64_t image, bool decoder,
                                                              const Mask& mask) const {
    const ViewHandles<T>& vh = view[v];
    const auto& layers = decoder ? vh.dec_attn : vh.enc_attn;
    std::vector<AttentionRecord> out;
    const int64_t cls = decoder ? vh.cls_dec : vh.cls_enc;
    const int64_t rows = decoder ? vh.rows_dec : vh.rows_enc;
    std::vector<TokenRole> roles(static_cast<size_t>(rows));
    std::vector<int32_t> pidx(static_cast<size_t>(rows));
    if (decoder) {
        for (int64_t t = 0; t < rows; ++t) {
            if (cls && t == 0) {
                roles[0] = TokenRole::Cls;
                pidx[0] = -1;
            } else {
                const int64_t patch = t - cls;
                roles[static_cast<size_t>(t)] =
                    mask.bits[static_cast<size_t>(patch)] ? TokenRole::MaskTok : TokenRole::Visible;
                pidx[static_cast<size_t>(t)] = static_cast<int32_t>(patch);
            }
        }
    } else {
        const auto vis = mask.visible_indices();
        for (int64_t t = 0; t < rows; ++t) {
            if (cls && t == 0) {
                roles[0] = TokenRole::Cls;
                pidx[0] = -1;
            } else {
                roles[static_cast<size_t>(t)] = TokenRole::Visible;
                pidx[static_cast<size_t>(t)] = static_cast<int32_t>(vis[static_cast<size_t>(t - cls)]);
            }
        }
    }
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& heads = layers[l][static_cast<size_t>(image)];
        AttentionRecord rec;
        rec.layer = static_cast<int>(l);
        rec.heads = static_cast<int64_t>(heads.size());
        rec.queries = rows;
        rec.keys = rows;
        rec.roles = roles;
        rec.patch_index = pidx;
        rec.weights.resize(static_cast<size_t>(rec.heads * rows * rows));
        for (int64_t h = 0; h < rec.heads; ++h) {
            const Array<T>& w = g.value(heads[static_cast<size_t>(h)]);
            for (int64_t q = 0; q < rows; ++q)
                for (int64_t k = 0; k < rows; ++k)
                    rec.weights[static_cast<size_t>((h * rows + q) * rows + k)] =
                        static_cast<double>(w.data[static_cast<size_t>(q * rows + k)]);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

template <typename T>
std::vector<Array<double>> MaeForward<T>::decoder_layer_tokens(int v, int64_t image) const {
    const ViewHandles<T>& vh = view[v];
    std::vector<Array<double>> out;
    for (Var layer : vh.dec_layer_tokens) {
        const Array<T>& stacked = g.value(layer);
        Array<double> toks({vh.n, cfg.dec_dim});
        for (int64_t j = 0; j < vh.n; ++j) {
            const int64_t r = vh.grid_row(image, j);
            for (int64_t d = 0; d < cfg.dec_dim; ++d)
                toks.data[static_cast<size_t>(j * cfg.dec_dim + d)] =
                    static_cast<double>(stacked.data[static_cast<size_t>(r * cfg.dec_dim + d)]);
        }
        out.push_back(std::move(toks));
    }
    return out;
}

template <typename T>
Array<T> MaeForward<T>::prediction(int v, int64_t image) const {
    const ViewHandles<T>& vh = view[v];
    const Array<T>& stacked = g.value(vh.pred);
    Array<T> out({vh.n, out_dim});
    for (int64_t j = 0; j < vh.n; ++j) {
        const int64_t r = vh.grid_row(image, j);
        std::copy(stacked.data.begin() + r * out_dim, stacked.data.begin() + (r + 1) * out_dim,
                  out.data.begin() + j * out_dim);
    }
    return out;
}

template <typename T>
Array<T> MaeForward<T>::projected(int v, int64_t image) const {
    const ViewHandles<T>& vh = view[v];
    if (!vh.proj.valid()) throw ConfigError("forward graph was built without a projector");
    const Array<T>& stacked = g.value(vh.proj);
    Array<T> out({vh.n, cfg.proj_dim});
    for (int64_t j = 0; j < vh.n; ++j) {
        const int64_t r = vh.grid_row(image, j);
        std::copy(stacked.data.begin() + r * cfg.proj_dim, stacked.data.begin() + (r + 1) * cfg.proj_dim,
                  out.data.begin() + j * cfg.proj_dim);
    }
    return out;
}

template Array<float> patchify(const Array<float>&, int64_t);
template Array<double> patchify(const Array<double>&, int64_t);
template Array<float> unpatchify(const Array<float>&, int64_t, int64_t, int64_t, int64_t);
template Array<double> unpatchify(const Array<double>&, int64_t, int64_t, int64_t, int64_t);
template ParamStore<float> init_params(const ModelConfig&, DecoderKind, int64_t, uint64_t);
template ParamStore<double> init_params(const ModelConfig&, DecoderKind, int64_t, uint64_t);
template struct MaeForward<float>;
template struct MaeForward<double>;
template MaeForward<float> build_mae_forward(const ModelConfig&, const ParamStore<float>&, DecoderKind, int64_t,
                                             int64_t, int64_t, const ForwardOptions&);
template MaeForward<double> build_mae_forward(const ModelConfig&, const ParamStore<double>&, DecoderKind, int64_t,
                                              int64_t, int64_t, const ForwardOptions&);

}  // namespace lcmae
