#include "lcmae/masking.hpp"

#include <algorithm>
#include <cmath>

#include "lcmae/common.hpp"

namespace lcmae {

std::vector<int64_t> Mask::masked_indices() const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i)
        if (bits[static_cast<size_t>(i)]) out.push_back(i);
    return out;
}

std::vector<int64_t> Mask::visible_indices() const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i)
        if (!bits[static_cast<size_t>(i)]) out.push_back(i);
    return out;
}

std::vector<uint8_t> Mask::pack() const {
    std::vector<uint8_t> out(static_cast<size_t>((n + 7) / 8), 0);
    for (int64_t i = 0; i < n; ++i)
        if (bits[static_cast<size_t>(i)]) out[static_cast<size_t>(i / 8)] |= static_cast<uint8_t>(1u << (i % 8));
    return out;
}

Mask Mask::unpack(int64_t n, const std::vector<uint8_t>& packed) {
    if (static_cast<int64_t>(packed.size()) != (n + 7) / 8)
        throw ShapeError("packed mask length mismatch for n=" + std::to_string(n));
    Mask m;
    m.n = n;
    m.bits.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        m.bits[static_cast<size_t>(i)] = (packed[static_cast<size_t>(i / 8)] >> (i % 8)) & 1u;
    m.ratio = n > 0 ? static_cast<double>(m.popcount()) / static_cast<double>(n) : 0.0;
    return m;
}

int64_t mask_count(int64_t n, double ratio) {
    const double x = ratio * static_cast<double>(n);
    return static_cast<int64_t>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

Mask sample_mask(int64_t n, double ratio, Rng& rng) {
    if (n < 1) throw ConfigError("mask needs n >= 1");
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio must be in [0,1], got " + std::to_string(ratio));
    const int64_t k = mask_count(n, ratio);
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    Mask m;
    m.n = n;
    m.ratio = ratio;
    m.bits.assign(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < k; ++i) m.bits[static_cast<size_t>(perm[static_cast<size_t>(i)])] = 1;
    return m;
}

std::pair<Mask, Mask> sample_mask_pair(int64_t n, double ratio, Rng& rng) {
    Mask a = sample_mask(n, ratio, rng);
    Mask b = sample_mask(n, ratio, rng);
    return {std::move(a), std::move(b)};
}

Mask intersect(const Mask& m1, const Mask& m2) {
    if (m1.n != m2.n)
        throw ShapeError("mask length mismatch: " + std::to_string(m1.n) + " vs " + std::to_string(m2.n));
    Mask out;
    out.n = m1.n;
    out.bits.resize(static_cast<size_t>(m1.n));
    for (int64_t i = 0; i < m1.n; ++i)
        out.bits[static_cast<size_t>(i)] = m1.bits[static_cast<size_t>(i)] & m2.bits[static_cast<size_t>(i)];
    out.ratio = m1.n > 0 ? static_cast<double>(out.popcount()) / static_cast<double>(m1.n) : 0.0;
    return out;
}

Mask complement(const Mask& m) {
    Mask out = m;
    for (auto& b : out.bits) b = b ? 0 : 1;
    out.ratio = 1.0 - m.ratio;
    return out;
}

template <typename T>
std::pair<Array<T>, std::vector<int64_t>> split_tokens(const Array<T>& seq, const Mask& m) {
    if (seq.rank() < 1 || seq.shape[0] != m.n)
        throw ShapeError("token count " + shape_str(seq.shape) + " does not match mask n=" + std::to_string(m.n));
    const std::vector<int64_t> vis = m.visible_indices();
    const int64_t rs = seq.size() / seq.shape[0];
    Shape s = seq.shape;
    s[0] = static_cast<int64_t>(vis.size());
    Array<T> out(s);
    for (size_t r = 0; r < vis.size(); ++r)
        std::copy(seq.data.begin() + vis[r] * rs, seq.data.begin() + (vis[r] + 1) * rs,
                  out.data.begin() + static_cast<int64_t>(r) * rs);
    return {std::move(out), vis};
}

template <typename T>
Array<T> reinsert_tokens(const Array<T>& visible, const std::vector<int64_t>& index_map, int64_t n, T fill) {
    if (visible.rank() < 1 || visible.shape[0] != static_cast<int64_t>(index_map.size()))
        throw ShapeError("index map length does not match visible rows");
    const int64_t rs = visible.shape[0] > 0 ? visible.size() / visible.shape[0] : 0;
    Shape s = visible.shape;
    s[0] = n;
    Array<T> out(s, fill);
    for (size_t r = 0; r < index_map.size(); ++r) {
        const int64_t dst = index_map[r];
        if (dst < 0 || dst >= n) throw ShapeError("index map entry out of range");
        std::copy(visible.data.begin() + static_cast<int64_t>(r) * rs,
                  visible.data.begin() + static_cast<int64_t>(r + 1) * rs, out.data.begin() + dst * rs);
    }
    return out;
}

template std::pair<Array<float>, std::vector<int64_t>> split_tokens(const Array<float>&, const Mask&);
template std::pair<Array<double>, std::vector<int64_t>> split_tokens(const Array<double>&, const Mask&);
template Array<float> reinsert_tokens(const Array<float>&, const std::vector<int64_t>&, int64_t, float);
template Array<double> reinsert_tokens(const Array<double>&, const std::vector<int64_t>&, int64_t, double);

}  // namespace lcmae
