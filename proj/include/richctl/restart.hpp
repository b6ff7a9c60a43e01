#pragma once

#include <functional>
#include <vector>

#include "richctl/scheduler.hpp"

namespace richctl {

struct RestartConfig {
    double sigma_tmin = 1.0;
    double sigma_tmax = 2.0;
    int N = 3;        // forward-backward cycles
    int S_steps = 5;  // backward steps per cycle
    int N_prime = 2;  // per-step self-recurrence count
    double tprime_min = 0.1;  // normalized self-recurrence window
    double tprime_max = 0.5;

    void validate() const {
        if (sigma_tmin >= sigma_tmax)
            throw std::invalid_argument("restart: sigma_tmin must be < sigma_tmax");
        if (N < 0 || S_steps < 1 || N_prime < 1)
            throw std::invalid_argument("restart: N >= 0, S_steps >= 1, N_prime >= 1");
        if (tprime_min >= tprime_max)
            throw std::invalid_argument("restart: tprime_min must be < tprime_max");
    }
};

// One backward step x_t -> x_{t_prev}; the runner binds structure/appearance
// control into this so restarted steps stay controlled.
using Stepper = std::function<Image(const Image& x, int t, int t_prev, uint64_t seed)>;

// The S_steps backward timestep ladder from t_max down to t_min (t_max excluded,
// t_min included), evenly spaced. Requires t_max - t_min >= s_steps so the
// ladder can descend strictly.
std::vector<int> restart_ladder(int t_min, int t_max, int s_steps);

// N cycles of perturb(t_min -> t_max) followed by S_steps backward steps.
// N == 0 is an explicit bypass. Input and output are tagged at t_min.
Image restart_refine(const Image& x_tmin, const NoiseSchedule& sched, const Stepper& stepper,
                     const RestartConfig& cfg, uint64_t seed);

// DDIM step with self-recurrence: inside [tprime_min, tprime_max] (normalized)
// the step is taken N' times, re-noising t_prev -> t between repeats; the last
// repeat's result is kept. Outside the window: one plain step.
Image self_recur_step(const Image& x, int t, int t_prev, const NoiseSchedule& sched,
                      const Stepper& stepper, const RestartConfig& cfg, uint64_t seed);

}  // namespace richctl
