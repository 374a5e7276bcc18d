#include "lcmae/altdecoders.hpp"

#include <cmath>

#include "lcmae/common.hpp"

namespace lcmae {

GaussianKernel gaussian_kernel(int64_t size, double sigma) {
    if (size < 1 || size % 2 == 0) throw ConfigError("gaussian kernel size must be odd and positive");
    if (!(sigma > 0.0)) throw ConfigError("gaussian sigma must be > 0");
    GaussianKernel k;
    k.size = size;
    k.sigma = sigma;
    k.weights = Array<double>({size, size});
    const int64_t h = size / 2;
    double z = 0.0;
    for (int64_t dy = -h; dy <= h; ++dy)
        for (int64_t dx = -h; dx <= h; ++dx) {
            const double w = std::exp(-static_cast<double>(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            k.weights.at(dy + h, dx + h) = w;
            z += w;
        }
    for (auto& w : k.weights.data) w /= z;
    return k;
}

Array<double> weighted_avg_mixing(int64_t grid, const GaussianKernel& kernel) {
    if (grid < 1) throw ConfigError("grid must be >= 1");
    const int64_t n = grid * grid;
    const int64_t h = kernel.size / 2;
    Array<double> m({n, n});
    for (int64_t r = 0; r < grid; ++r)
        for (int64_t c = 0; c < grid; ++c) {
            const int64_t row = r * grid + c;
            double z = 0.0;
            for (int64_t dy = -h; dy <= h; ++dy)
                for (int64_t dx = -h; dx <= h; ++dx) {
                    const int64_t rr = r + dy, cc = c + dx;
                    if (rr < 0 || rr >= grid || cc < 0 || cc >= grid) continue;
                    z += kernel.weights.at(dy + h, dx + h);
                }
            for (int64_t dy = -h; dy <= h; ++dy)
                for (int64_t dx = -h; dx <= h; ++dx) {
                    const int64_t rr = r + dy, cc = c + dx;
                    if (rr < 0 || rr >= grid || cc < 0 || cc >= grid) continue;
                    m.at(row, rr * grid + cc) = kernel.weights.at(dy + h, dx + h) / z;
                }
        }
    return m;
}

template <typename T>
Array<T> weighted_avg_features(const Array<T>& tokens, int64_t grid, const GaussianKernel& kernel) {
    if (tokens.rank() != 2 || tokens.shape[0] != grid * grid)
        throw ShapeError("token field is not a square grid: " + shape_str(tokens.shape));
    const Array<double> m = weighted_avg_mixing(grid, kernel);
    const int64_t n = grid * grid, d = tokens.shape[1];
    Array<T> out({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const double w = m.at(i, j);
            if (w == 0.0) continue;
            for (int64_t k = 0; k < d; ++k)
                out.at(i, k) += static_cast<T>(w * static_cast<double>(tokens.at(j, k)));
        }
    return out;
}

template <typename T>
BlockTargets ae_block_targets(const Array<T>& image, const BlockTargetSpec& spec) {
    if (image.rank() != 3) throw ShapeError("ae_block_targets expects [C,H,W]");
    const int64_t c = image.shape[0], hh = image.shape[1], ww = image.shape[2];
    const int64_t b = spec.block, p = spec.patch;
    if (b < p) throw ConfigError("block size must be >= patch size");
    if (hh % p != 0 || ww % p != 0) throw ShapeError("image not divisible by patch");
    const int64_t gh = hh / p, gw = ww / p;
    const int64_t n = gh * gw;
    BlockTargets t;
    t.values = Array<double>({n, b * b * c});
    t.valid = Array<double>({n, b * b * c});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            const int64_t row = gy * gw + gx;
            // block spans [center - B/2, center + B/2) around the cell-center pixel
            const int64_t y0 = gy * p + p / 2 - b / 2;
            const int64_t x0 = gx * p + p / 2 - b / 2;
            for (int64_t by = 0; by < b; ++by)
                for (int64_t bx = 0; bx < b; ++bx) {
                    const int64_t y = y0 + by, x = x0 + bx;
                    const bool in = y >= 0 && y < hh && x >= 0 && x < ww;
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const int64_t k = (by * b + bx) * c + ch;
                        t.valid.at(row, k) = in ? 1.0 : 0.0;
                        t.values.at(row, k) =
                            in ? static_cast<double>(image.data[static_cast<size_t>((ch * hh + y) * ww + x)]) : 0.0;
                    }
                }
        }
    return t;
}

double loss_ae(const Array<double>& pred, const BlockTargets& targets) {
    if (pred.shape != targets.values.shape)
        throw ShapeError("prediction shape " + shape_str(pred.shape) + " != target shape " +
                         shape_str(targets.values.shape));
    double num = 0.0, den = 0.0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        if (targets.valid[i] == 0.0) continue;
        const double d = pred[i] - targets.values[i];
        num += d * d;
        den += 1.0;
    }
    if (den == 0.0) throw NumericError("loss_ae: no valid target pixels");
    return num / den;
}

std::vector<int64_t> default_block_grid(int64_t img_size, int64_t patch) {
    return {patch, 2 * patch, 3 * patch,
            static_cast<int64_t>(std::ceil(0.875 * static_cast<double>(img_size)))};
}

template Array<float> weighted_avg_features(const Array<float>&, int64_t, const GaussianKernel&);
template Array<double> weighted_avg_features(const Array<double>&, int64_t, const GaussianKernel&);
template BlockTargets ae_block_targets(const Array<float>&, const BlockTargetSpec&);
template BlockTargets ae_block_targets(const Array<double>&, const BlockTargetSpec&);

}  // namespace lcmae
