#pragma once

#include <map>
#include <set>
#include <string>

#include "richctl/denoiser.hpp"
#include "richctl/scheduler.hpp"

namespace richctl {

enum class InjectionSchedule { Constant, Synchronous };

struct InjectionConfig {
    double tau = 0.6;  // normalized-time cutoff: control active while norm(t) <= tau
    InjectionSchedule schedule = InjectionSchedule::Constant;
    double C = 0.4;  // normalized extraction time for the constant schedule
    std::set<std::string> layers;
    bool replace_features = true;
    bool replace_attention = true;

    void validate() const {
        if (tau < 0 || tau > 1 || C < 0 || C > 1)
            throw std::invalid_argument("injection: tau and C must lie in [0,1]");
    }
};

// Structure-branch taps keyed by effective timestep; one sampling run owns one
// cache. The forward-diffusion noise is drawn from a single run-fixed seed so
// cached and fresh taps are bit-equal.
struct StructureCache {
    std::map<int, TapBundle> by_timestep;
    long hits = 0;
    long misses = 0;
    uint64_t noise_seed = 0;
};

// true iff t falls in the control window (first tau fraction of the trajectory)
bool injection_active(int t, int T, double tau);

// effective structure-extraction timestep g(t)
int effective_timestep(const InjectionConfig& cfg, int t, int T);

// Forward-diffuses the clean condition latent to t_effective and captures the
// configured layers' taps, serving repeats from the cache.
const TapBundle& structure_taps(const Image& cond_latent, int t_effective,
                                const PromptEmbedding& prompt, const DenoiserModel& model,
                                const NoiseSchedule& sched, const InjectionConfig& cfg,
                                StructureCache& cache);

// Build the per-layer overrides for the output branch at step t, merged on top
// of `extra` (appearance-transfer entries). Empty when outside the window.
InjectionOverrides injection_overrides(const Image& cond_latent, int t,
                                       const PromptEmbedding& prompt, const DenoiserModel& model,
                                       const NoiseSchedule& sched, const InjectionConfig& cfg,
                                       StructureCache& cache,
                                       const InjectionOverrides* extra = nullptr);

// One output-branch step: denoise with injection (+ optional appearance)
// overrides, then DDIM to t_prev.
Image controlled_step(const Image& x, int t, int t_prev, const Image& cond_latent,
                      const PromptEmbedding& prompt, const DenoiserModel& model,
                      const NoiseSchedule& sched, const InjectionConfig& cfg,
                      StructureCache& cache, double eta, uint64_t step_seed,
                      const InjectionOverrides* extra = nullptr);

}  // namespace richctl
