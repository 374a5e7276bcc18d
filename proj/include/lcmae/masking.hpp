#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lcmae/array.hpp"
#include "lcmae/rng.hpp"

namespace lcmae {

// Binary mask over n tokens, 1 = masked. Exact-count masking: popcount is a
// deterministic function of (n, ratio), never stochastic.
struct Mask {
    int64_t n = 0;
    std::vector<uint8_t> bits;  // length n, values in {0,1}
    double ratio = 0.0;

    int64_t popcount() const {
        int64_t k = 0;
        for (uint8_t b : bits) k += b;
        return k;
    }
    std::vector<int64_t> masked_indices() const;
    std::vector<int64_t> visible_indices() const;

    // packed little-endian bitset, 8 positions per byte
    std::vector<uint8_t> pack() const;
    static Mask unpack(int64_t n, const std::vector<uint8_t>& packed);
};

// round(ratio * n), half away from zero
int64_t mask_count(int64_t n, double ratio);

Mask sample_mask(int64_t n, double ratio, Rng& rng);
std::pair<Mask, Mask> sample_mask_pair(int64_t n, double ratio, Rng& rng);
Mask intersect(const Mask& m1, const Mask& m2);
Mask complement(const Mask& m);

// Visible-token extraction. index_map[i] is the original position of visible
// row i; re-insertion via index_map restores originals at unmasked slots.
template <typename T>
std::pair<Array<T>, std::vector<int64_t>> split_tokens(const Array<T>& seq, const Mask& m);

// Scatter visible rows back to a full-length sequence, fill elsewhere.
template <typename T>
Array<T> reinsert_tokens(const Array<T>& visible, const std::vector<int64_t>& index_map, int64_t n, T fill);

}  // namespace lcmae
