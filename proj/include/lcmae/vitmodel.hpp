#pragma once

#include <map>
#include <string>
#include <vector>

#include "lcmae/graph.hpp"
#include "lcmae/masking.hpp"

namespace lcmae {

struct ModelConfig {
    int64_t img_size = 32;
    int64_t patch = 4;
    int64_t channels = 3;
    int64_t enc_depth = 6;
    int64_t enc_dim = 192;
    int64_t enc_heads = 3;
    int64_t dec_depth = 4;
    int64_t dec_dim = 96;
    int64_t dec_heads = 3;
    bool use_cls = true;
    int64_t proj_dim = 128;
    int64_t mlp_ratio = 4;
    double init_std = 0.02;

    int64_t grid() const { return img_size / patch; }
    int64_t n_patches() const { return grid() * grid(); }
    int64_t patch_dim() const { return patch * patch * channels; }
    void validate() const;
};

enum class DecoderKind { Transformer, WeightedAvg, Conv };
DecoderKind decoder_kind_from_string(const std::string& s);
std::string to_string(DecoderKind k);

// Where the projector reads from: decoder token embeddings (default) or the
// pixel-head output.
enum class ProjectorInput { DecoderTokens, PixelOutput };

enum class TokenRole : uint8_t { Cls = 0, Visible = 1, MaskTok = 2 };

// Per-layer query x key attention weights captured during a forward pass,
// for one image. Rows and columns share the same token ordering.
struct AttentionRecord {
    int layer = 0;
    int64_t heads = 0, queries = 0, keys = 0;
    std::vector<double> weights;        // [heads][queries][keys]
    std::vector<TokenRole> roles;       // per token
    std::vector<int32_t> patch_index;   // per token; -1 for CLS

    double at(int64_t h, int64_t q, int64_t k) const {
        return weights[static_cast<size_t>((h * queries + q) * keys + k)];
    }
};

// Named parameter tensors; graphs copy values in at build time and sync back
// after training. Ordered map keeps iteration deterministic.
template <typename T>
struct ParamStore {
    std::map<std::string, Array<T>> values;

    template <typename U>
    ParamStore<U> astype() const {
        ParamStore<U> out;
        for (const auto& [k, v] : values) out.values[k] = v.template astype<U>();
        return out;
    }
};

// ---- pure functions ----

// image [C,H,W] -> [n, p*p*C], patches in row-major grid order
template <typename T>
Array<T> patchify(const Array<T>& image, int64_t p);
template <typename T>
Array<T> unpatchify(const Array<T>& patches, int64_t p, int64_t channels, int64_t h, int64_t w);

// Fixed 2-D sin-cos positional embeddings, [gh*gw, dim]; dim % 4 == 0.
Array<double> posembed_sincos_2d(int64_t gh, int64_t gw, int64_t dim);

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, DecoderKind kind, int64_t out_dim, uint64_t seed);

// ---- retained forward graph ----

// Stacked-row addressing shared by forward outputs and losses: per image,
// `rows_per_image` rows of which the first `cls` are non-grid tokens.
struct RowLayout {
    int64_t batch = 0;
    int64_t rows_per_image = 0;
    int64_t cls = 0;
    int64_t n = 0;  // grid tokens per image
    int64_t rows() const { return batch * rows_per_image; }
    int64_t row(int64_t image, int64_t patch) const { return image * rows_per_image + cls + patch; }
};

// Handles into one masked view of the batch. Token rows are stacked per
// image: encoder rows are [CLS?, visible...], decoder rows [CLS?, grid...].
template <typename T>
struct ViewHandles {
    std::string prefix;
    int64_t n = 0;                       // grid token count
    int64_t n_vis = 0, n_mask = 0;
    int64_t cls_enc = 0, cls_dec = 0;    // 1 when a CLS row is present
    int64_t rows_enc = 0, rows_dec = 0;  // per image
    Var vis_patches;                     // input [B*n_vis, patch_dim]
    Var vis_pos;                         // input [B*n_vis, enc_dim]
    Var scatter_vis;                     // rebindable
    Var scatter_mask;                    // rebindable (invalid when n_mask == 0)
    Var enc_out;                         // [B*rows_enc, enc_dim]
    Var dec_tokens;                      // [B*rows_dec, dec_dim]
    Var pred;                            // [B*rows_dec, out_dim]
    Var proj;                            // [B*rows_dec, proj_dim] (invalid if not built)
    std::vector<std::vector<std::vector<Var>>> enc_attn;  // [layer][image][head]
    std::vector<std::vector<std::vector<Var>>> dec_attn;  // transformer decoder only
    std::vector<Var> dec_layer_tokens;                    // [layer] stacked [B*rows_dec, dec_dim]

    int64_t grid_row(int64_t image, int64_t patch) const { return image * rows_dec + cls_dec + patch; }
    RowLayout layout(int64_t batch) const { return RowLayout{batch, rows_dec, cls_dec, n}; }
};

struct ForwardOptions {
    bool two_view = false;
    bool with_projector = false;
    ProjectorInput projector_input = ProjectorInput::DecoderTokens;
};

template <typename T>
struct MaeForward {
    ModelConfig cfg;
    DecoderKind kind = DecoderKind::Transformer;
    int64_t out_dim = 0;
    int64_t batch = 0;
    Graph<T> g;
    ViewHandles<T> view[2];
    bool two_view = false;
    Array<T> posemb_enc;  // [n, enc_dim], host side for per-mask gathering

    // Rebinds one view's inputs for a batch of patchified images. Visible
    // patches are gathered on the host, so the graph never sees masked
    // patch values.
    void bind_view(int v, const std::vector<Array<T>>& patch_seqs, const std::vector<Mask>& masks);

    // Extraction after forward(); converts to double for analysis.
    std::vector<AttentionRecord> attention_records(int v, int64_t image, bool decoder,
                                                   const Mask& mask) const;
    std::vector<Array<double>> decoder_layer_tokens(int v, int64_t image) const;  // [layer] -> [n, dec_dim]
    Array<T> prediction(int v, int64_t image) const;                              // [n, out_dim]
    Array<T> projected(int v, int64_t image) const;                               // [n, proj_dim]
};

template <typename T>
MaeForward<T> build_mae_forward(const ModelConfig& cfg, const ParamStore<T>& params, DecoderKind kind,
                                int64_t out_dim, int64_t batch, int64_t n_vis, const ForwardOptions& opts);

}  // namespace lcmae
