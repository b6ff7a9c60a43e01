#include "richctl/scheduler.hpp"

#include <cmath>

namespace richctl {

NoiseSchedule NoiseSchedule::linear_vp(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(size_t(T) + 1);
    s.alpha_bar[0] = 1.0;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        prod *= 1.0 - beta;
        s.alpha_bar[size_t(t)] = prod;
    }
    return s;
}

double NoiseSchedule::sigma(int t) const {
    check_t(t);
    double ab = alpha_bar[size_t(t)];
    return std::sqrt((1.0 - ab) / ab);
}

int NoiseSchedule::nearest_timestep_for_sigma(double target) const {
    if (target < 0.0) throw std::invalid_argument("sigma must be >= 0");
    int best = 0;
    double best_d = std::abs(sigma(0) - target);
    for (int t = 1; t <= T; ++t) {
        double d = std::abs(sigma(t) - target);
        if (d < best_d) {  // strict: ties keep the smaller timestep
            best_d = d;
            best = t;
        }
    }
    return best;
}

Image forward_diffuse(const NoiseSchedule& s, const Image& x0, int t, const Image& eps) {
    s.check_t(t);
    if (x0.t != 0) throw std::invalid_argument("forward_diffuse: input must be tagged t=0");
    if (!x0.same_shape(eps)) throw std::invalid_argument("forward_diffuse: eps shape mismatch");
    const float a = float(std::sqrt(s.alpha_bar[size_t(t)]));
    const float b = float(std::sqrt(1.0 - s.alpha_bar[size_t(t)]));
    Image out = x0;
    out.t = t;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Image forward_diffuse(const NoiseSchedule& s, const Image& x0, int t, uint64_t seed) {
    return forward_diffuse(s, x0, t, gaussian_image(x0.h, x0.w, x0.c, seed));
}

Image estimate_clean(const NoiseSchedule& s, const Image& xt, const Image& eps_pred, int t) {
    s.check_t(t);
    if (t == 0) {
        Image out = xt;
        out.t = 0;
        return out;
    }
    if (!xt.same_shape(eps_pred)) throw std::invalid_argument("estimate_clean: shape mismatch");
    const double ab = s.alpha_bar[size_t(t)];
    const float inv_sa = float(1.0 / std::sqrt(ab));
    const float sb = float(std::sqrt(1.0 - ab));
    Image out = xt;
    out.t = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (xt.data[i] - sb * eps_pred.data[i]) * inv_sa;
    return out;
}

Image ddim_step(const NoiseSchedule& s, const Image& xt, const Image& eps_pred, int t,
                int t_prev, double eta, uint64_t seed) {
    s.check_t(t);
    s.check_t(t_prev);
    if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("ddim_step: eta must be in [0,1]");
    if (!xt.same_shape(eps_pred)) throw std::invalid_argument("ddim_step: shape mismatch");

    const double ab_t = s.alpha_bar[size_t(t)];
    const double ab_p = s.alpha_bar[size_t(t_prev)];
    // DDIM posterior std, scaled by eta
    double sig = 0.0;
    if (eta > 0.0 && t_prev > 0)
        sig = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    const double dir2 = std::max(1.0 - ab_p - sig * sig, 0.0);

    const float sa_p = float(std::sqrt(ab_p));
    const float sdir = float(std::sqrt(dir2));
    const float inv_sa = float(1.0 / std::sqrt(ab_t));
    const float sb_t = float(std::sqrt(1.0 - ab_t));
    const float fsig = float(sig);

    Image out = xt;
    out.t = t_prev;
    if (sig > 0.0) {
        Image z = gaussian_image(xt.h, xt.w, xt.c, seed);
        for (size_t i = 0; i < out.data.size(); ++i) {
            float xhat = (xt.data[i] - sb_t * eps_pred.data[i]) * inv_sa;
            out.data[i] = sa_p * xhat + sdir * eps_pred.data[i] + fsig * z.data[i];
        }
    } else {
        for (size_t i = 0; i < out.data.size(); ++i) {
            float xhat = (xt.data[i] - sb_t * eps_pred.data[i]) * inv_sa;
            out.data[i] = sa_p * xhat + sdir * eps_pred.data[i];
        }
    }
    return out;
}

Image perturb_between(const NoiseSchedule& s, const Image& x_lo, int t_lo, int t_hi,
                      uint64_t seed) {
    s.check_t(t_lo);
    s.check_t(t_hi);
    if (t_lo > t_hi) throw std::invalid_argument("perturb_between: requires t_lo <= t_hi");
    if (t_lo == t_hi) {
        Image out = x_lo;
        return out;
    }
    const double ratio = s.alpha_bar[size_t(t_hi)] / s.alpha_bar[size_t(t_lo)];
    const float a = float(std::sqrt(ratio));
    const float b = float(std::sqrt(1.0 - ratio));
    Image eps = gaussian_image(x_lo.h, x_lo.w, x_lo.c, seed);
    Image out = x_lo;
    out.t = t_hi;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * x_lo.data[i] + b * eps.data[i];
    return out;
}

}  // namespace richctl
