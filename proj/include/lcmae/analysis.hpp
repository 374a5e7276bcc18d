#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcmae/vitmodel.hpp"

namespace lcmae {

// Average pairwise cosine similarity of attention maps across images under an
// identical mask, restricted to mask-token query rows; key columns are the n
// patch columns. High values mean position-driven attention. `per_head`
// computes the cosine per head and averages instead of flattening.
double attn_similarity(const std::vector<AttentionRecord>& records, bool per_head = false);

// Raw pairwise cosine matrix: diagonal 1, exactly symmetric, entries in
// [-1, 1]; errors on zero-norm rows.
Array<double> feature_cosine_matrix(const Array<double>& features);

// feature_cosine_matrix, min-max normalized to [0,1] over off-diagonal
// entries per image; diagonal fixed at 1; constant matrices map to all ones.
Array<double> feature_sim_weights(const Array<double>& features);

// Mean over images of cos(W_ref_i, W_dec_i), matrices flattened.
double reference_similarity(const std::vector<Array<double>>& w_ref, const std::vector<Array<double>>& w_dec);

enum class QueryGroup { All, MaskOnly, VisibleOnly };

struct AttentionDistance {
    std::vector<double> per_head;
    double mean = 0.0;
};

// Attention-weighted mean pixel distance between query and key patch centers.
// CLS rows/columns are excluded and key weights renormalized over patch keys.
AttentionDistance attention_distance(const AttentionRecord& rec, int64_t grid, int64_t patch_pixels,
                                     QueryGroup group = QueryGroup::All);

struct CollapseReport {
    std::vector<double> per_position;  // variance of unit-normalized v across the batch
    double aggregate = 0.0;            // mean over positions
};

// v_per_image: projected tokens, one [n, d] array per image; batch >= 8.
CollapseReport collapse_metric(const std::vector<Array<double>>& v_per_image);

// Declaration rule: aggregate < 1e-3 and decayed at least 100x from init.
bool collapse_declared(double aggregate, double init_aggregate);

// Per-query attention map over the key grid as a binary PGM (P5, maxval 255),
// min-max scaled; the CLS key weight goes to a sidecar text file. head < 0
// dumps the mean over heads.
void dump_attention(const AttentionRecord& rec, int64_t query_index, int64_t grid, const std::string& path,
                    int64_t head = -1);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Reference feature provider for the semantic-similarity probe: per-image
// [n, d] features plus a provenance tag saying where they came from.
struct ReferenceFeatures {
    std::vector<Array<double>> per_image;
    std::string provenance;
};

}  // namespace lcmae
