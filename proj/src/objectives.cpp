#include "lcmae/objectives.hpp"

#include <cmath>

namespace lcmae {

TargetMode target_mode_from_string(const std::string& s) {
    if (s == "raw") return TargetMode::Raw;
    if (s == "patch_standardized") return TargetMode::PatchStandardized;
    if (s == "pred_l2") return TargetMode::PredL2Normalized;
    throw ConfigError("unknown target mode '" + s + "'");
}

std::string to_string(TargetMode m) {
    switch (m) {
        case TargetMode::Raw: return "raw";
        case TargetMode::PatchStandardized: return "patch_standardized";
        case TargetMode::PredL2Normalized: return "pred_l2";
    }
    return "?";
}

LossFlags flags_for_setting(char letter) {
    switch (letter) {
        case 'a': return {true, true, true};
        case 'b': return {true, false, false};
        case 'c': return {false, true, false};
        case 'd': return {false, false, true};
        case 'e': return {true, true, false};
        case 'f': return {true, false, true};
        case 'g': return {false, true, true};
        default: throw ConfigError(std::string("unknown loss setting '") + letter + "', expected a..g");
    }
}

template <typename T>
Array<T> standardize_patches(const Array<T>& patches, double eps) {
    if (patches.rank() != 2) throw ShapeError("standardize_patches expects [n, d]");
    const int64_t n = patches.shape[0], d = patches.shape[1];
    Array<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (int64_t k = 0; k < d; ++k) mu += static_cast<double>(patches.at(i, k));
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t k = 0; k < d; ++k) {
            const double dv = static_cast<double>(patches.at(i, k)) - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t k = 0; k < d; ++k)
            out.at(i, k) = static_cast<T>((static_cast<double>(patches.at(i, k)) - mu) * inv);
    }
    return out;
}

// ---- L_MAE ----

template <typename T>
MaeLossHandles<T> append_loss_mae(Graph<T>& g, Var pred, const RowLayout& lay, int64_t out_dim,
                                  TargetMode mode, const std::string& pfx) {
    MaeLossHandles<T> h;
    const int64_t rows = lay.rows();
    h.target = g.input(pfx + "target", {rows, out_dim});
    h.weight = g.input(pfx + "weight", {rows, out_dim});
    h.pred_used = pred;
    if (mode == TargetMode::PredL2Normalized)
        h.pred_used = g.normalize_rows(pred, std::vector<uint8_t>(static_cast<size_t>(rows), 0), pfx + "pred_l2");
    Var diff = g.sub(h.pred_used, h.target);
    h.loss = g.sum_all(g.mul(h.weight, g.mul(diff, diff)));
    g.rename(h.loss, pfx + "loss");
    return h;
}

template <typename T>
void bind_loss_mae(Graph<T>& g, const MaeLossHandles<T>& h, const RowLayout& lay, int64_t out_dim,
                   const std::vector<Array<T>>& targets, const std::vector<Mask>& masks, TargetMode mode,
                   bool normalized) {
    const int64_t rows = lay.rows();
    Array<T> target({rows, out_dim});
    Array<T> weight({rows, out_dim});
    std::vector<uint8_t> enable;
    if (mode == TargetMode::PredL2Normalized) enable.assign(static_cast<size_t>(rows), 0);
    for (int64_t i = 0; i < lay.batch; ++i) {
        const Mask& m = masks[static_cast<size_t>(i)];
        if (m.n != lay.n) throw ShapeError("mask length does not match grid token count");
        const int64_t k = m.popcount();
        if (k == 0) throw NumericError("loss_mae undefined: mask has popcount 0");
        const double w = normalized ? 1.0 / (static_cast<double>(lay.batch) * static_cast<double>(k) *
                                             static_cast<double>(out_dim))
                                    : 1.0 / static_cast<double>(lay.batch);
        const Array<T>& t = targets[static_cast<size_t>(i)];
        if (t.shape != Shape{lay.n, out_dim}) throw ShapeError("target shape mismatch");
        for (int64_t j = 0; j < lay.n; ++j) {
            const int64_t r = lay.row(i, j);
            std::copy(t.data.begin() + j * out_dim, t.data.begin() + (j + 1) * out_dim,
                      target.data.begin() + r * out_dim);
            if (m.bits[static_cast<size_t>(j)]) {
                for (int64_t c = 0; c < out_dim; ++c) weight.at(r, c) = static_cast<T>(w);
                if (!enable.empty()) enable[static_cast<size_t>(r)] = 1;
            }
        }
    }
    g.bind(h.target, std::move(target));
    g.bind(h.weight, std::move(weight));
    if (mode == TargetMode::PredL2Normalized) g.bind_enable(h.pred_used, std::move(enable));
}

template <typename T>
void bind_loss_ae(Graph<T>& g, const MaeLossHandles<T>& h, const RowLayout& lay, int64_t out_dim,
                  const std::vector<Array<T>>& targets, const std::vector<Array<T>>& valid) {
    const int64_t rows = lay.rows();
    Array<T> target({rows, out_dim});
    Array<T> weight({rows, out_dim});
    for (int64_t i = 0; i < lay.batch; ++i) {
        const Array<T>& t = targets[static_cast<size_t>(i)];
        const Array<T>& v = valid[static_cast<size_t>(i)];
        if (t.shape != Shape{lay.n, out_dim} || v.shape != t.shape) throw ShapeError("target shape mismatch");
        double count = 0.0;
        for (const T& x : v.data) count += static_cast<double>(x);
        if (count == 0.0) throw NumericError("loss_ae: no valid target pixels");
        const double w = 1.0 / (static_cast<double>(lay.batch) * count);
        for (int64_t j = 0; j < lay.n; ++j) {
            const int64_t r = lay.row(i, j);
            for (int64_t c = 0; c < out_dim; ++c) {
                target.at(r, c) = t.at(j, c);
                weight.at(r, c) = static_cast<T>(static_cast<double>(v.at(j, c)) * w);
            }
        }
    }
    g.bind(h.target, std::move(target));
    g.bind(h.weight, std::move(weight));
}

// ---- L_cross ----

template <typename T>
CrossLossHandles<T> append_loss_cross(Graph<T>& g, Var proj0, Var proj1, const RowLayout& lay,
                                      const std::string& pfx) {
    CrossLossHandles<T> h;
    const int64_t rows = lay.rows();
    h.cosine = g.cosine_rows(proj0, proj1, std::vector<uint8_t>(static_cast<size_t>(rows), 0), pfx + "cos");
    h.weight = g.input(pfx + "weight", {rows});
    Var one_minus = g.add_scalar(g.mul_scalar(h.cosine, -1.0), 1.0);
    h.loss = g.sum_all(g.mul(h.weight, one_minus));
    g.rename(h.loss, pfx + "loss");
    return h;
}

template <typename T>
void bind_loss_cross(Graph<T>& g, const CrossLossHandles<T>& h, const RowLayout& lay,
                     const std::vector<Mask>& m1, const std::vector<Mask>& m2, bool normalized) {
    const int64_t rows = lay.rows();
    Array<T> weight({rows});
    std::vector<uint8_t> enable(static_cast<size_t>(rows), 0);
    for (int64_t i = 0; i < lay.batch; ++i) {
        const Mask inter = intersect(m1[static_cast<size_t>(i)], m2[static_cast<size_t>(i)]);
        const int64_t k = inter.popcount();
        const double w = normalized
                             ? 1.0 / (static_cast<double>(lay.batch) * static_cast<double>(std::max<int64_t>(1, k)))
                             : 1.0 / static_cast<double>(lay.batch);
        for (int64_t j = 0; j < lay.n; ++j) {
            if (!inter.bits[static_cast<size_t>(j)]) continue;
            const int64_t r = lay.row(i, j);
            enable[static_cast<size_t>(r)] = 1;
            weight.data[static_cast<size_t>(r)] = static_cast<T>(w);
        }
    }
    g.bind_enable(h.cosine, std::move(enable));
    g.bind(h.weight, std::move(weight));
}

// ---- L_in ----

template <typename T>
InLossHandles<T> append_loss_in(Graph<T>& g, Var proj, const RowLayout& lay, const std::string& pfx) {
    InLossHandles<T> h;
    const int64_t n = lay.n;
    h.gx = g.input(pfx + "gx", {lay.batch * n, n});
    h.wpair = g.input(pfx + "wpair", {lay.batch * n, n});
    std::vector<Var> diffs;
    for (int64_t i = 0; i < lay.batch; ++i) {
        Var v_i = g.slice_rows(proj, i * lay.rows_per_image + lay.cls, n);
        Var vn = g.normalize_rows(v_i, std::vector<uint8_t>(static_cast<size_t>(n), 0),
                                  pfx + "norm" + std::to_string(i));
        h.normalize.push_back(vn);
        Var gram = g.matmul_nt(vn, vn);
        diffs.push_back(g.abs(g.sub(gram, g.slice_rows(h.gx, i * n, n))));
    }
    Var d = lay.batch > 1 ? g.concat_rows(diffs) : diffs[0];
    h.loss = g.sum_all(g.mul(h.wpair, d));
    g.rename(h.loss, pfx + "loss");
    return h;
}

template <typename T>
Array<T> masked_patch_cosine(const Array<T>& patches, const Mask& m) {
    const int64_t n = patches.shape[0], d = patches.shape[1];
    if (n != m.n) throw ShapeError("mask length does not match patch count");
    std::vector<double> norms(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) {
            const double v = static_cast<double>(patches.at(i, k));
            acc += v * v;
        }
        norms[static_cast<size_t>(i)] = std::sqrt(acc);
        if (m.bits[static_cast<size_t>(i)] && acc == 0.0)
            throw NumericError("loss_in: zero-norm patch at masked position " + std::to_string(i));
    }
    Array<T> gx({n, n});
    for (int64_t i = 0; i < n; ++i) {
        if (!m.bits[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < n; ++j) {
            if (!m.bits[static_cast<size_t>(j)]) continue;
            double dot = 0.0;
            for (int64_t k = 0; k < d; ++k)
                dot += static_cast<double>(patches.at(i, k)) * static_cast<double>(patches.at(j, k));
            gx.at(i, j) = static_cast<T>(dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]));
        }
    }
    return gx;
}

template <typename T>
void bind_loss_in(Graph<T>& g, const InLossHandles<T>& h, const RowLayout& lay,
                  const std::vector<Array<T>>& patch_seqs, const std::vector<Mask>& masks, bool normalized) {
    const int64_t n = lay.n;
    Array<T> gx({lay.batch * n, n});
    Array<T> wpair({lay.batch * n, n});
    for (int64_t i = 0; i < lay.batch; ++i) {
        const Mask& m = masks[static_cast<size_t>(i)];
        const Array<T> gxi = masked_patch_cosine(patch_seqs[static_cast<size_t>(i)], m);
        const int64_t k = m.popcount();
        const double denom = normalized ? static_cast<double>(lay.batch) *
                                              static_cast<double>(std::max<int64_t>(1, k * (k - 1)))
                                        : static_cast<double>(lay.batch);
        for (int64_t a = 0; a < n; ++a)
            for (int64_t b = 0; b < n; ++b) {
                gx.at(i * n + a, b) = gxi.at(a, b);
                const bool pair = a != b && m.bits[static_cast<size_t>(a)] && m.bits[static_cast<size_t>(b)];
                wpair.at(i * n + a, b) = pair ? static_cast<T>(1.0 / denom) : T(0);
            }
        std::vector<uint8_t> enable(m.bits.begin(), m.bits.end());
        g.bind_enable(h.normalize[static_cast<size_t>(i)], std::move(enable));
    }
    g.bind(h.gx, std::move(gx));
    g.bind(h.wpair, std::move(wpair));
}

// ---- array-side ----

template <typename T>
Array<T> prediction_error(const Array<T>& pred, const Array<T>& target, int64_t j, const Mask& m) {
    if (pred.shape != target.shape || pred.rank() != 2) throw ShapeError("pred/target shape mismatch");
    if (j < 0 || j >= m.n) throw ShapeError("position out of range");
    if (!m.bits[static_cast<size_t>(j)])
        throw ConfigError("prediction_error: position " + std::to_string(j) + " is not masked");
    const int64_t d = pred.shape[1];
    Array<T> out({d});
    for (int64_t k = 0; k < d; ++k) out[k] = pred.at(j, k) - target.at(j, k);
    return out;
}

namespace {
double sq_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}
}  // namespace

double decomposition_residual(DecompositionKind kind, const Array<double>& h_a, const Array<double>& h_b,
                              const Array<double>& x, int64_t i, int64_t j, const Mask& ma, const Mask& mb) {
    const int64_t d = x.shape[1];
    auto row = [&](const Array<double>& arr, int64_t r) {
        std::vector<double> out(static_cast<size_t>(d));
        for (int64_t k = 0; k < d; ++k) out[static_cast<size_t>(k)] = arr.at(r, k);
        return out;
    };
    if (kind == DecompositionKind::TwoMask) {
        if (!ma.bits[static_cast<size_t>(j)] || !mb.bits[static_cast<size_t>(j)])
            throw ConfigError("two-mask decomposition needs position j masked in both views");
        const auto haj = row(h_a, j), hbj = row(h_b, j), xj = row(x, j);
        std::vector<double> lhs(static_cast<size_t>(d)), rhs(static_cast<size_t>(d));
        for (int64_t k = 0; k < d; ++k) {
            lhs[static_cast<size_t>(k)] = haj[static_cast<size_t>(k)] - xj[static_cast<size_t>(k)];
            rhs[static_cast<size_t>(k)] = (haj[static_cast<size_t>(k)] - hbj[static_cast<size_t>(k)]) +
                                          (hbj[static_cast<size_t>(k)] - xj[static_cast<size_t>(k)]);
        }
        return std::abs(sq_norm(lhs) - sq_norm(rhs));
    }
    if (!ma.bits[static_cast<size_t>(i)] || !ma.bits[static_cast<size_t>(j)])
        throw ConfigError("one-mask decomposition needs positions i and j masked");
    const auto hi = row(h_a, i), hj = row(h_a, j), xi = row(x, i), xj = row(x, j);
    std::vector<double> lhs(static_cast<size_t>(d)), rhs(static_cast<size_t>(d));
    for (int64_t k = 0; k < d; ++k) {
        lhs[static_cast<size_t>(k)] = hi[static_cast<size_t>(k)] - xi[static_cast<size_t>(k)];
        rhs[static_cast<size_t>(k)] =
            ((hi[static_cast<size_t>(k)] - hj[static_cast<size_t>(k)]) -
             (xi[static_cast<size_t>(k)] - xj[static_cast<size_t>(k)])) +
            (hj[static_cast<size_t>(k)] - xj[static_cast<size_t>(k)]);
    }
    return std::abs(sq_norm(lhs) - sq_norm(rhs));
}

LossBreakdown make_breakdown(std::optional<double> mae, std::optional<double> cross, std::optional<double> in) {
    if (!mae && !cross && !in) throw ConfigError("total_loss: no loss term enabled");
    LossBreakdown b;
    b.mae = mae;
    b.cross = cross;
    b.in = in;
    b.total = mae.value_or(0.0) + cross.value_or(0.0) + in.value_or(0.0);
    return b;
}

// explicit instantiations
template Array<float> standardize_patches(const Array<float>&, double);
template Array<double> standardize_patches(const Array<double>&, double);
template MaeLossHandles<float> append_loss_mae(Graph<float>&, Var, const RowLayout&, int64_t, TargetMode,
                                               const std::string&);
template MaeLossHandles<double> append_loss_mae(Graph<double>&, Var, const RowLayout&, int64_t, TargetMode,
                                                const std::string&);
template void bind_loss_mae(Graph<float>&, const MaeLossHandles<float>&, const RowLayout&, int64_t,
                            const std::vector<Array<float>>&, const std::vector<Mask>&, TargetMode, bool);
template void bind_loss_mae(Graph<double>&, const MaeLossHandles<double>&, const RowLayout&, int64_t,
                            const std::vector<Array<double>>&, const std::vector<Mask>&, TargetMode, bool);
template void bind_loss_ae(Graph<float>&, const MaeLossHandles<float>&, const RowLayout&, int64_t,
                           const std::vector<Array<float>>&, const std::vector<Array<float>>&);
template void bind_loss_ae(Graph<double>&, const MaeLossHandles<double>&, const RowLayout&, int64_t,
                           const std::vector<Array<double>>&, const std::vector<Array<double>>&);
template CrossLossHandles<float> append_loss_cross(Graph<float>&, Var, Var, const RowLayout&, const std::string&);
template CrossLossHandles<double> append_loss_cross(Graph<double>&, Var, Var, const RowLayout&,
                                                    const std::string&);
template void bind_loss_cross(Graph<float>&, const CrossLossHandles<float>&, const RowLayout&,
                              const std::vector<Mask>&, const std::vector<Mask>&, bool);
template void bind_loss_cross(Graph<double>&, const CrossLossHandles<double>&, const RowLayout&,
                              const std::vector<Mask>&, const std::vector<Mask>&, bool);
template InLossHandles<float> append_loss_in(Graph<float>&, Var, const RowLayout&, const std::string&);
template InLossHandles<double> append_loss_in(Graph<double>&, Var, const RowLayout&, const std::string&);
template void bind_loss_in(Graph<float>&, const InLossHandles<float>&, const RowLayout&,
                           const std::vector<Array<float>>&, const std::vector<Mask>&, bool);
template void bind_loss_in(Graph<double>&, const InLossHandles<double>&, const RowLayout&,
                           const std::vector<Array<double>>&, const std::vector<Mask>&, bool);
template Array<float> masked_patch_cosine(const Array<float>&, const Mask&);
template Array<double> masked_patch_cosine(const Array<double>&, const Mask&);
template Array<float> prediction_error(const Array<float>&, const Array<float>&, int64_t, const Mask&);
template Array<double> prediction_error(const Array<double>&, const Array<double>&, int64_t, const Mask&);

}  // namespace lcmae
