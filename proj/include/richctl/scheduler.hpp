#pragma once

#include <vector>

#include "richctl/image.hpp"

namespace richctl {

// Variance-preserving noise schedule: cumulative products alpha_bar[0..T],
// alpha_bar[0] = 1, strictly decreasing.
struct NoiseSchedule {
    int T = 1000;
    std::vector<double> alpha_bar;

    // Linear-beta schedule (Stable Diffusion family defaults).
    static NoiseSchedule linear_vp(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

    double sigma(int t) const;  // sqrt((1 - abar_t) / abar_t), strictly increasing

    // argmin_t |sigma(t) - sigma|; ties resolve to the smaller timestep.
    int nearest_timestep_for_sigma(double sigma) const;

    void check_t(int t) const {
        if (t < 0 || t > T) throw std::invalid_argument("timestep out of [0, T]");
    }
};

// Normalized-time convention: 0 <-> timestep T (noisiest), 1 <-> timestep 0 (clean).
inline double to_normalized(int t, int T) { return 1.0 - double(t) / double(T); }
inline int to_timestep(double norm, int T) {
    if (norm < 0.0 || norm > 1.0) throw std::invalid_argument("normalized time out of [0,1]");
    return int(std::lround(double(T) * (1.0 - norm)));
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Image forward_diffuse(const NoiseSchedule& s, const Image& x0, int t, const Image& eps);
Image forward_diffuse(const NoiseSchedule& s, const Image& x0, int t, uint64_t seed);

// xhat_t = (x_t - sqrt(1 - abar_t) eps_pred) / sqrt(abar_t), tagged t=0
Image estimate_clean(const NoiseSchedule& s, const Image& xt, const Image& eps_pred, int t);

// One DDIM update t -> t_prev; eta in [0,1] scales the stochastic term.
Image ddim_step(const NoiseSchedule& s, const Image& xt, const Image& eps_pred, int t,
                int t_prev, double eta, uint64_t seed);

// Perturbation kernel between timesteps under the VP schedule:
// x_hi = sqrt(abar_hi/abar_lo) x_lo + sqrt(1 - abar_hi/abar_lo) eps
Image perturb_between(const NoiseSchedule& s, const Image& x_lo, int t_lo, int t_hi,
                      uint64_t seed);

}  // namespace richctl
