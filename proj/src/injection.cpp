#include "richctl/injection.hpp"

namespace richctl {

bool injection_active(int t, int T, double tau) {
    return to_normalized(t, T) <= tau + 1e-12;
}

int effective_timestep(const InjectionConfig& cfg, int t, int T) {
    return cfg.schedule == InjectionSchedule::Constant ? to_timestep(cfg.C, T) : t;
}

const TapBundle& structure_taps(const Image& cond_latent, int t_effective,
                                const PromptEmbedding& prompt, const DenoiserModel& model,
                                const NoiseSchedule& sched, const InjectionConfig& cfg,
                                StructureCache& cache) {
    auto it = cache.by_timestep.find(t_effective);
    if (it != cache.by_timestep.end()) {
        ++cache.hits;
        return it->second;
    }
    ++cache.misses;
    Image cond_t = forward_diffuse(sched, cond_latent, t_effective, cache.noise_seed);
    TapBundle tb = model.denoise(cond_t, t_effective, prompt, cfg.layers);
    return cache.by_timestep.emplace(t_effective, std::move(tb)).first->second;
}

InjectionOverrides injection_overrides(const Image& cond_latent, int t,
                                       const PromptEmbedding& prompt, const DenoiserModel& model,
                                       const NoiseSchedule& sched, const InjectionConfig& cfg,
                                       StructureCache& cache, const InjectionOverrides* extra) {
    InjectionOverrides ov;
    if (extra) ov = *extra;
    if (cfg.layers.empty() || !injection_active(t, sched.T, cfg.tau)) return ov;
    cfg.validate();
    int t_eff = effective_timestep(cfg, t, sched.T);
    const TapBundle& taps = structure_taps(cond_latent, t_eff, prompt, model, sched, cfg, cache);
    for (const auto& layer : cfg.layers) {
        if (cfg.replace_features) ov[layer].f = taps.features.at(layer);
        if (cfg.replace_attention) ov[layer].A = taps.attentions.at(layer);
    }
    return ov;
}

Image controlled_step(const Image& x, int t, int t_prev, const Image& cond_latent,
                      const PromptEmbedding& prompt, const DenoiserModel& model,
                      const NoiseSchedule& sched, const InjectionConfig& cfg,
                      StructureCache& cache, double eta, uint64_t step_seed,
                      const InjectionOverrides* extra) {
    InjectionOverrides ov =
        injection_overrides(cond_latent, t, prompt, model, sched, cfg, cache, extra);
    TapBundle tb = model.denoise(x, t, prompt, {}, ov.empty() ? nullptr : &ov);
    return ddim_step(sched, x, tb.eps_pred, t, t_prev, eta, step_seed);
}

}  // namespace richctl
