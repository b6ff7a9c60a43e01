#pragma once

#include <set>
#include <string>

#include "richctl/nn.hpp"

namespace richctl {

struct AppearanceConfig {
    std::set<std::string> layers;
    double window_lo = 0.0;  // normalized-time interval of activity
    double window_hi = 1.0;
    double epsilon_var = 1e-6;
    bool enabled = true;
};

// Remove per-channel mean/std across the spatial dimension (population
// statistics). The transfer statistics re-color a whitened feature map.
nn::Mat spatial_norm(const nn::Mat& f);

// Cross-image attention map between spatially-normalized features:
// A = rowsoftmax(norm(f_out) Wq (norm(f_app) Wk)^T / sqrt(d)).
// norm removes per-channel mean/std across the spatial dimension (population
// statistics).
nn::Mat appearance_attention(const nn::Mat& f_out, const nn::Mat& f_app, const nn::Mat& wq,
                             const nn::Mat& wk, int d);

// Attention-weighted statistic matching with a caller-supplied map:
// M = A f_app, S = sqrt(max(A (f_app*f_app) - M*M, 0)), out = S*f_out + M.
nn::Mat transfer_with_attention(const nn::Mat& A, const nn::Mat& f_out, const nn::Mat& f_app);

// Full spatially-aware transfer. Throws on non-finite output.
nn::Mat transfer(const nn::Mat& f_out, const nn::Mat& f_app, const nn::Mat& wq,
                 const nn::Mat& wk, int d);

}  // namespace richctl
