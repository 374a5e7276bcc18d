#pragma once

#include <vector>

#include "lcmae/array.hpp"

namespace lcmae {

// Normalized 2-D Gaussian used by the nonparametric weighted-average decoder.
struct GaussianKernel {
    int64_t size = 5;
    double sigma = 1.0;
    Array<double> weights;  // [size, size], sums to 1
};

GaussianKernel gaussian_kernel(int64_t size, double sigma);

// Row-stochastic [n, n] mixing matrix placing the kernel at every grid cell,
// renormalized over in-bounds neighbors.
Array<double> weighted_avg_mixing(int64_t grid, const GaussianKernel& kernel);

// Kernel-weighted average of a [n, d] token field arranged on a g x g grid.
template <typename T>
Array<T> weighted_avg_features(const Array<T>& tokens, int64_t grid, const GaussianKernel& kernel);

// Block-prediction autoencoder targets: each grid cell's target is the B x B
// pixel block centered on the cell's center pixel.
struct BlockTargetSpec {
    int64_t block = 0;  // B, in pixels
    int64_t patch = 0;  // p
};

struct BlockTargets {
    Array<double> values;  // [n, B*B*C], zero where the block leaves the image
    Array<double> valid;   // same shape, 1 inside the image, 0 in padding
};

template <typename T>
BlockTargets ae_block_targets(const Array<T>& image, const BlockTargetSpec& spec);

// MSE over all tokens and block pixels; padding excluded from the mean.
double loss_ae(const Array<double>& pred, const BlockTargets& targets);

// Desk-scale analog of the paper-scale block grid.
std::vector<int64_t> default_block_grid(int64_t img_size, int64_t patch);

}  // namespace lcmae
