#include "lcmae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lcmae/io.hpp"

namespace lcmae {

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine of a zero-norm map");
    if (dot * dot == na * nb) return dot > 0.0 ? 1.0 : -1.0;  // collinear, exactly
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Flattened k x h x n attention array of one image: mask-token query rows,
// patch key columns.
std::vector<double> mask_query_array(const AttentionRecord& rec, int64_t head /* -1 = all */) {
    std::vector<int64_t> qrows, kcols;
    for (int64_t t = 0; t < rec.queries; ++t)
        if (rec.roles[static_cast<size_t>(t)] == TokenRole::MaskTok) qrows.push_back(t);
    for (int64_t t = 0; t < rec.keys; ++t)
        if (rec.patch_index[static_cast<size_t>(t)] >= 0) kcols.push_back(t);
    std::vector<double> out;
    const int64_t h0 = head < 0 ? 0 : head;
    const int64_t h1 = head < 0 ? rec.heads : head + 1;
    out.reserve(static_cast<size_t>((h1 - h0) * static_cast<int64_t>(qrows.size() * kcols.size())));
    for (int64_t q : qrows)
        for (int64_t h = h0; h < h1; ++h)
            for (int64_t k : kcols) out.push_back(rec.at(h, q, k));
    return out;
}

}  // namespace

double attn_similarity(const std::vector<AttentionRecord>& records, bool per_head) {
    const size_t m = records.size();
    if (m < 2) throw ConfigError("attn_similarity needs at least 2 images");
    for (size_t i = 1; i < m; ++i) {
        if (records[i].roles != records[0].roles)
            throw ConfigError("attn_similarity: images were masked with different masks");
        if (records[i].heads != records[0].heads || records[i].queries != records[0].queries)
            throw ShapeError("attn_similarity: record shapes differ");
    }
    double acc = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            if (per_head) {
                double h_acc = 0.0;
                for (int64_t h = 0; h < records[i].heads; ++h)
                    h_acc += cosine(mask_query_array(records[i], h), mask_query_array(records[j], h));
                acc += h_acc / static_cast<double>(records[i].heads);
            } else {
                acc += cosine(mask_query_array(records[i], -1), mask_query_array(records[j], -1));
            }
            ++pairs;
        }
    return acc / static_cast<double>(pairs);
}

Array<double> feature_cosine_matrix(const Array<double>& features) {
    if (features.rank() != 2) throw ShapeError("features must be [n, d]");
    const int64_t n = features.shape[0], d = features.shape[1];
    std::vector<double> norms(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) acc += features.at(i, k) * features.at(i, k);
        if (acc == 0.0) throw NumericError("feature_sim_weights: zero-norm feature row " + std::to_string(i));
        norms[static_cast<size_t>(i)] = std::sqrt(acc);
    }
    Array<double> w({n, n});
    for (int64_t i = 0; i < n; ++i) {
        w.at(i, i) = 1.0;
        for (int64_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (int64_t k = 0; k < d; ++k) dot += features.at(i, k) * features.at(j, k);
            const double c = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
            w.at(i, j) = c;
            w.at(j, i) = c;  // mirror, exact symmetry
        }
    }
    return w;
}

Array<double> feature_sim_weights(const Array<double>& features) {
    Array<double> w = feature_cosine_matrix(features);
    const int64_t n = w.shape[0];
    if (n < 2) return w;
    double lo = w.at(0, 1), hi = w.at(0, 1);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            if (i == j) continue;
            lo = std::min(lo, w.at(i, j));
            hi = std::max(hi, w.at(i, j));
        }
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            if (i == j) continue;
            w.at(i, j) = hi > lo ? (w.at(i, j) - lo) / (hi - lo) : 1.0;  // constant matrix -> all ones
        }
    return w;
}

double reference_similarity(const std::vector<Array<double>>& w_ref, const std::vector<Array<double>>& w_dec) {
    if (w_ref.size() != w_dec.size() || w_ref.empty())
        throw ConfigError("reference_similarity: image sets differ or are empty");
    double acc = 0.0;
    for (size_t i = 0; i < w_ref.size(); ++i) {
        if (w_ref[i].shape != w_dec[i].shape) throw ShapeError("reference_similarity: grid mismatch");
        acc += cosine(w_ref[i].data, w_dec[i].data);
    }
    return acc / static_cast<double>(w_ref.size());
}

AttentionDistance attention_distance(const AttentionRecord& rec, int64_t grid, int64_t patch_pixels,
                                     QueryGroup group) {
    if (grid < 1) throw ConfigError("attention_distance: bad grid");
    for (int64_t t = 0; t < rec.keys; ++t) {
        const int32_t p = rec.patch_index[static_cast<size_t>(t)];
        if (p >= grid * grid) throw ConfigError("attention_distance: patch index exceeds grid");
    }
    auto center = [&](int32_t patch) {
        const double off = (static_cast<double>(patch_pixels) - 1.0) / 2.0;
        return std::pair<double, double>{static_cast<double>(patch / grid) * patch_pixels + off,
                                         static_cast<double>(patch % grid) * patch_pixels + off};
    };
    std::vector<int64_t> qrows, kcols;
    for (int64_t t = 0; t < rec.queries; ++t) {
        const TokenRole r = rec.roles[static_cast<size_t>(t)];
        if (r == TokenRole::Cls) continue;
        if (group == QueryGroup::MaskOnly && r != TokenRole::MaskTok) continue;
        if (group == QueryGroup::VisibleOnly && r != TokenRole::Visible) continue;
        qrows.push_back(t);
    }
    for (int64_t t = 0; t < rec.keys; ++t)
        if (rec.patch_index[static_cast<size_t>(t)] >= 0) kcols.push_back(t);
    if (qrows.empty()) throw ConfigError("attention_distance: no queries in the requested group");
    AttentionDistance out;
    out.per_head.resize(static_cast<size_t>(rec.heads), 0.0);
    for (int64_t h = 0; h < rec.heads; ++h) {
        double acc = 0.0;
        for (int64_t q : qrows) {
            const auto [qy, qx] = center(rec.patch_index[static_cast<size_t>(q)]);
            double wsum = 0.0, dsum = 0.0;
            for (int64_t k : kcols) {
                const auto [ky, kx] = center(rec.patch_index[static_cast<size_t>(k)]);
                const double w = rec.at(h, q, k);
                wsum += w;
                dsum += w * std::sqrt((qy - ky) * (qy - ky) + (qx - kx) * (qx - kx));
            }
            if (wsum <= 0.0) throw NumericError("attention_distance: query row with no key mass");
            acc += dsum / wsum;  // renormalized over patch keys
        }
        out.per_head[static_cast<size_t>(h)] = acc / static_cast<double>(qrows.size());
    }
    out.mean = std::accumulate(out.per_head.begin(), out.per_head.end(), 0.0) /
               static_cast<double>(std::max<size_t>(1, out.per_head.size()));
    return out;
}

CollapseReport collapse_metric(const std::vector<Array<double>>& v_per_image) {
    const int64_t b = static_cast<int64_t>(v_per_image.size());
    if (b < 8) throw ConfigError("collapse_metric needs a batch of at least 8 distinct images");
    const int64_t n = v_per_image[0].shape[0], d = v_per_image[0].shape[1];
    for (const auto& v : v_per_image)
        if (v.shape != Shape{n, d}) throw ShapeError("collapse_metric: inconsistent shapes");
    // unit-normalize every token vector; zero-norm rows stay zero
    std::vector<Array<double>> unit;
    unit.reserve(static_cast<size_t>(b));
    for (const auto& v : v_per_image) {
        Array<double> u({n, d});
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int64_t k = 0; k < d; ++k) acc += v.at(i, k) * v.at(i, k);
            const double inv = acc > 0.0 ? 1.0 / std::sqrt(acc) : 0.0;
            for (int64_t k = 0; k < d; ++k) u.at(i, k) = v.at(i, k) * inv;
        }
        unit.push_back(std::move(u));
    }
    CollapseReport rep;
    rep.per_position.resize(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        bool all_equal = true;
        for (size_t b2 = 1; b2 < unit.size() && all_equal; ++b2)
            for (int64_t k = 0; k < d; ++k)
                if (unit[b2].at(i, k) != unit[0].at(i, k)) {
                    all_equal = false;
                    break;
                }
        if (all_equal) {
            rep.per_position[static_cast<size_t>(i)] = 0.0;
            continue;
        }
        std::vector<double> mean(static_cast<size_t>(d), 0.0);
        for (const auto& u : unit)
            for (int64_t k = 0; k < d; ++k) mean[static_cast<size_t>(k)] += u.at(i, k);
        for (auto& m : mean) m /= static_cast<double>(b);
        double var = 0.0;
        for (const auto& u : unit)
            for (int64_t k = 0; k < d; ++k) {
                const double dv = u.at(i, k) - mean[static_cast<size_t>(k)];
                var += dv * dv;
            }
        rep.per_position[static_cast<size_t>(i)] = var / static_cast<double>(b);
    }
    rep.aggregate = std::accumulate(rep.per_position.begin(), rep.per_position.end(), 0.0) /
                    static_cast<double>(n);
    return rep;
}

bool collapse_declared(double aggregate, double init_aggregate) {
    return aggregate < 1e-3 && aggregate * 100.0 <= init_aggregate;
}

void dump_attention(const AttentionRecord& rec, int64_t query_index, int64_t grid, const std::string& path,
                    int64_t head) {
    if (query_index < 0 || query_index >= rec.queries) throw ConfigError("dump_attention: bad query row");
    std::vector<double> map(static_cast<size_t>(grid * grid), 0.0);
    double cls_weight = -1.0;
    const int64_t h0 = head < 0 ? 0 : head;
    const int64_t h1 = head < 0 ? rec.heads : head + 1;
    for (int64_t t = 0; t < rec.keys; ++t) {
        double w = 0.0;
        for (int64_t h = h0; h < h1; ++h) w += rec.at(h, query_index, t);
        w /= static_cast<double>(h1 - h0);
        const int32_t p = rec.patch_index[static_cast<size_t>(t)];
        if (p < 0)
            cls_weight = w;
        else
            map[static_cast<size_t>(p)] = w;
    }
    const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<uint8_t> pix(map.size());
    for (size_t i = 0; i < map.size(); ++i)
        pix[i] = hi > lo ? static_cast<uint8_t>(std::lround((map[i] - lo) / (hi - lo) * 255.0)) : 255;
    write_pgm(path, grid, grid, pix);
    std::string sidecar = "query_row " + std::to_string(query_index) + "\n";
    sidecar += "min " + format_double(lo) + "\nmax " + format_double(hi) + "\n";
    sidecar += "cls_weight " + (cls_weight >= 0.0 ? format_double(cls_weight) : std::string("absent")) + "\n";
    write_text_file(path + ".txt", sidecar);
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ConfigError("spearman needs >= 2 paired values");
    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t(0));
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(xs), ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("spearman: constant ranks");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace lcmae
