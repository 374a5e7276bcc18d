#pragma once

#include <optional>

#include "lcmae/vitmodel.hpp"

namespace lcmae {

// How reconstruction targets (and predictions) are normalized. The loss is
// always an MSE; PatchStandardized standardizes each target patch to zero
// mean / unit variance, PredL2Normalized l2-normalizes the predicted patch
// vectors instead and keeps raw targets.
enum class TargetMode { Raw, PatchStandardized, PredL2Normalized };
TargetMode target_mode_from_string(const std::string& s);
std::string to_string(TargetMode m);

template <typename T>
Array<T> standardize_patches(const Array<T>& patches, double eps = 1e-6);

struct LossBreakdown {
    std::optional<double> mae;
    std::optional<double> cross;
    std::optional<double> in;
    double total = 0.0;
};

struct LossFlags {
    bool mae = false;
    bool cross = false;
    bool in = false;
    bool any() const { return mae || cross || in; }
};

// Table-style letter presets: (a) all, (b) mae, (c) cross, (d) in,
// (e) mae+cross, (f) mae+in, (g) cross+in.
LossFlags flags_for_setting(char letter);

// ---- graph-side losses ----
// Each appends a loss subgraph over stacked prediction/projection rows and
// exposes the inputs that must be rebound per batch. The `normalized` switch
// divides by the contributing count (masked count / intersection size / pair
// count); raw mode keeps the plain per-image sums (batch-averaged).

template <typename T>
struct MaeLossHandles {
    Var target;      // input [rows, out_dim]
    Var weight;      // input [rows, out_dim], elementwise
    Var pred_used;   // prediction node actually compared (post l2-normalize in PredL2Normalized mode)
    Var loss;        // scalar
};

template <typename T>
MaeLossHandles<T> append_loss_mae(Graph<T>& g, Var pred, const RowLayout& lay, int64_t out_dim,
                                  TargetMode mode, const std::string& pfx);

// targets: per image [n, out_dim] already in target space
template <typename T>
void bind_loss_mae(Graph<T>& g, const MaeLossHandles<T>& h, const RowLayout& lay, int64_t out_dim,
                   const std::vector<Array<T>>& targets, const std::vector<Mask>& masks, TargetMode mode,
                   bool normalized);

// AE variant: every grid token contributes; per-pixel validity excludes
// padding from the mean.
template <typename T>
void bind_loss_ae(Graph<T>& g, const MaeLossHandles<T>& h, const RowLayout& lay, int64_t out_dim,
                  const std::vector<Array<T>>& targets, const std::vector<Array<T>>& valid);

template <typename T>
struct CrossLossHandles {
    Var cosine;  // rebindable enable = intersection rows
    Var weight;  // input [rows]
    Var loss;
};

template <typename T>
CrossLossHandles<T> append_loss_cross(Graph<T>& g, Var proj0, Var proj1, const RowLayout& lay,
                                      const std::string& pfx);

template <typename T>
void bind_loss_cross(Graph<T>& g, const CrossLossHandles<T>& h, const RowLayout& lay,
                     const std::vector<Mask>& m1, const std::vector<Mask>& m2, bool normalized);

template <typename T>
struct InLossHandles {
    std::vector<Var> normalize;  // per image, rebindable enable = masked rows
    Var gx;                      // input [batch*n, n]: per-image patch cosine matrices
    Var wpair;                   // input [batch*n, n]: pair weights
    Var loss;
};

template <typename T>
InLossHandles<T> append_loss_in(Graph<T>& g, Var proj, const RowLayout& lay, const std::string& pfx);

// patch_seqs supply cos(x_i, x_j); zero-norm patches among masked positions
// are an error (silent epsilons would hide collapse).
template <typename T>
void bind_loss_in(Graph<T>& g, const InLossHandles<T>& h, const RowLayout& lay,
                  const std::vector<Array<T>>& patch_seqs, const std::vector<Mask>& masks, bool normalized);

// ---- array-side operations ----

// h(x,m)_j - x_j at a masked position j; target space is the caller's.
template <typename T>
Array<T> prediction_error(const Array<T>& pred, const Array<T>& target, int64_t j, const Mask& m);

enum class DecompositionKind { TwoMask, OneMask };

// |LHS - RHS| of the per-patch loss decompositions. TwoMask compares
// ||h_a[j]-x[j]||^2 with ||(h_a[j]-h_b[j]) + e_pred(j|m_b)||^2 at a position
// masked in both views; OneMask compares ||h[i]-x[i]||^2 with
// ||[(h[i]-h[j]) - (x[i]-x[j])] + e_pred(j|m)||^2 for two masked positions.
double decomposition_residual(DecompositionKind kind, const Array<double>& h_a, const Array<double>& h_b,
                              const Array<double>& x, int64_t i, int64_t j, const Mask& ma, const Mask& mb);

// Patch-pair cosine matrix restricted to masked pairs (others zero); errors
// on a zero-norm masked patch.
template <typename T>
Array<T> masked_patch_cosine(const Array<T>& patches, const Mask& m);

LossBreakdown make_breakdown(std::optional<double> mae, std::optional<double> cross, std::optional<double> in);

}  // namespace lcmae
