#include "richctl/restart.hpp"

#include <cmath>

namespace richctl {

std::vector<int> restart_ladder(int t_min, int t_max, int s_steps) {
    if (t_max - t_min < s_steps)
        throw std::invalid_argument("restart: range too small for a strictly descending ladder");
    std::vector<int> ladder;
    for (int j = 1; j <= s_steps; ++j) {
        int t = int(std::lround(t_max - double(j) * (t_max - t_min) / s_steps));
        if (!ladder.empty() && t >= ladder.back()) t = ladder.back() - 1;  // keep strict descent
        ladder.push_back(t);
    }
    ladder.back() = t_min;
    return ladder;
}

Image restart_refine(const Image& x_tmin, const NoiseSchedule& sched, const Stepper& stepper,
                     const RestartConfig& cfg, uint64_t seed) {
    if (cfg.N == 0) return x_tmin;
    cfg.validate();
    const int t_min = sched.nearest_timestep_for_sigma(cfg.sigma_tmin);
    const int t_max = sched.nearest_timestep_for_sigma(cfg.sigma_tmax);
    if (t_min >= t_max) throw std::invalid_argument("restart: mapped t_min >= t_max");
    const auto ladder = restart_ladder(t_min, t_max, cfg.S_steps);

    Image x = x_tmin;
    for (int i = 0; i < cfg.N; ++i) {
        x = perturb_between(sched, x, t_min, t_max, mix_seed(seed, uint64_t(i)));
        int cur = t_max;
        for (size_t j = 0; j < ladder.size(); ++j) {
            x = stepper(x, cur, ladder[j], mix_seed(seed, uint64_t(i) * 1000 + j + 1));
            cur = ladder[j];
        }
    }
    return x;
}

Image self_recur_step(const Image& x, int t, int t_prev, const NoiseSchedule& sched,
                      const Stepper& stepper, const RestartConfig& cfg, uint64_t seed) {
    double norm = to_normalized(t, sched.T);
    bool in_window = norm >= cfg.tprime_min - 1e-12 && norm <= cfg.tprime_max + 1e-12;
    if (cfg.N_prime <= 1 || !in_window) return stepper(x, t, t_prev, seed);

    Image cur = x;
    Image stepped;
    for (int k = 0; k < cfg.N_prime; ++k) {
        stepped = stepper(cur, t, t_prev, mix_seed(seed, uint64_t(2 * k)));
        if (k + 1 < cfg.N_prime)
            cur = perturb_between(sched, stepped, t_prev, t, mix_seed(seed, uint64_t(2 * k + 1)));
    }
    return stepped;
}

}  // namespace richctl
