#include "richctl/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "richctl/analysis.hpp"

namespace richctl {

namespace {
std::set<std::string> parse_layers(const std::string& csv) {
    std::set<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.insert(item);
    return out;
}

std::string layers_csv(const std::set<std::string>& layers) {
    std::string out;
    for (const auto& l : layers) {
        if (!out.empty()) out += ',';
        out += l;
    }
    return out;
}
}  // namespace

RunConfig RunConfig::from_map(const ConfigMap& m) {
    RunConfig c;
    c.steps = get_int(m, "steps", c.steps);
    c.eta = get_double(m, "eta", c.eta);
    c.seed = uint64_t(get_int(m, "seed", 0));

    c.injection_enabled = get_bool(m, "injection.enabled", c.injection_enabled);
    c.injection.tau = get_double(m, "injection.tau", c.injection.tau);
    c.injection.C = get_double(m, "injection.C", c.injection.C);
    std::string sched = get_str(m, "injection.schedule", "constant");
    if (sched == "constant")
        c.injection.schedule = InjectionSchedule::Constant;
    else if (sched == "synchronous")
        c.injection.schedule = InjectionSchedule::Synchronous;
    else
        throw std::invalid_argument("injection.schedule must be constant|synchronous");
    c.injection.layers = parse_layers(get_str(m, "injection.layers", "d0,d1,d2"));
    c.injection.replace_features = get_bool(m, "injection.replace_features", true);
    c.injection.replace_attention = get_bool(m, "injection.replace_attention", true);

    c.appearance.enabled = get_bool(m, "appearance.enabled", true);
    c.appearance.layers = parse_layers(get_str(m, "appearance.layers", "d1,d2"));
    c.appearance.window_lo = get_double(m, "appearance.window_lo", 0.0);
    c.appearance.window_hi = get_double(m, "appearance.window_hi", 1.0);

    c.restart_enabled = get_bool(m, "restart.enabled", true);
    c.restart.sigma_tmin = get_double(m, "restart.sigma_tmin", c.restart.sigma_tmin);
    c.restart.sigma_tmax = get_double(m, "restart.sigma_tmax", c.restart.sigma_tmax);
    c.restart.N = get_int(m, "restart.N", c.restart.N);
    c.restart.S_steps = get_int(m, "restart.S_steps", c.restart.S_steps);
    c.restart.N_prime = get_int(m, "restart.N_prime", c.restart.N_prime);
    c.restart.tprime_min = get_double(m, "restart.tprime_min", c.restart.tprime_min);
    c.restart.tprime_max = get_double(m, "restart.tprime_max", c.restart.tprime_max);

    c.arp_enabled = get_bool(m, "arp.enabled", true);
    c.prep_enabled = get_bool(m, "prep.enabled", true);
    c.prep.w_min = get_double(m, "prep.w_min", c.prep.w_min);
    c.prep.w_max = get_double(m, "prep.w_max", c.prep.w_max);
    c.prep.kernel = get_int(m, "prep.kernel", c.prep.kernel);
    c.prep.gamma = get_double(m, "prep.gamma", c.prep.gamma);
    c.prep.blur_radius = get_double(m, "prep.blur_radius", c.prep.blur_radius);
    return c;
}

std::vector<int> sampling_ladder(int T, int steps) {
    if (steps < 1 || steps > T) throw std::invalid_argument("steps must be in [1, T]");
    std::vector<int> ladder;
    for (int i = 0; i <= steps; ++i)
        ladder.push_back(int(std::lround(double(T) * (1.0 - double(i) / steps))));
    return ladder;
}

std::vector<int> insert_timestep(std::vector<int> ladder, int t) {
    auto it = std::lower_bound(ladder.begin(), ladder.end(), t, std::greater<int>());
    if (it == ladder.end() || *it != t) ladder.insert(it, t);
    return ladder;
}

double pixel_l2(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("pixel_l2: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

RunRecord generate(const Image& cond_pixels, const std::string& prompt,
                   const DenoiserModel& model, const NoiseSchedule& sched, const RunConfig& cfg,
                   LlmClient* client) {
    const auto& dcfg = model.config();
    RunRecord rec;
    rec.prompt = prompt;

    Image cond = cond_pixels;
    if (cfg.prep_enabled) {
        PrepResult pr = preprocess(cond_pixels, cfg.prep);
        cond = std::move(pr.image);
        rec.prep_morph = pr.morph;
    }
    if (cond.h != dcfg.img_size || cond.w != dcfg.img_size || cond.c != dcfg.channels)
        throw std::invalid_argument("condition image does not match model shape");
    rec.condition = cond;

    std::string prompt_app = prompt;
    if (cfg.arp_enabled) {
        if (!client) throw std::invalid_argument("arp enabled but no LLM client supplied");
        prompt_app = enrich(cond, prompt, *client, &rec.arp);
    }
    rec.enriched_prompt = prompt_app;

    const PromptEmbedding pemb = PromptEmbedding::encode(prompt);
    const PromptEmbedding pemb_app = PromptEmbedding::encode(prompt_app);
    const Image cond_latent = to_latent(cond);

    std::vector<int> ladder = sampling_ladder(sched.T, cfg.steps);
    const int t_min =
        cfg.restart_enabled ? sched.nearest_timestep_for_sigma(cfg.restart.sigma_tmin) : -1;
    if (cfg.restart_enabled) ladder = insert_timestep(ladder, t_min);

    InjectionConfig inj = cfg.injection;
    if (!cfg.injection_enabled) inj.layers.clear();
    StructureCache cache;
    cache.noise_seed = mix_seed(cfg.seed, 0xA11CEull);

    model.reset_call_count();

    Image x = gaussian_image(dcfg.img_size, dcfg.img_size, dcfg.channels,
                             mix_seed(cfg.seed, 0x1717ull));
    x.t = sched.T;
    Image x_app;
    if (cfg.appearance.enabled) {
        x_app = gaussian_image(dcfg.img_size, dcfg.img_size, dcfg.channels,
                               mix_seed(cfg.seed, 0xA99ull));
        x_app.t = sched.T;
    }
    std::map<int, std::map<std::string, nn::Mat>> app_taps;

    auto in_app_window = [&](int t) {
        double norm = to_normalized(t, sched.T);
        return cfg.appearance.enabled && norm >= cfg.appearance.window_lo - 1e-12 &&
               norm <= cfg.appearance.window_hi + 1e-12;
    };

    Stepper stepper = [&](const Image& xt, int t, int t_prev, uint64_t seed) {
        InjectionOverrides extra;
        auto it = app_taps.find(t);
        if (it != app_taps.end() && in_app_window(t))
            for (const auto& [layer, f] : it->second) extra[layer].f_app = f;
        return controlled_step(xt, t, t_prev, cond_latent, pemb, model, sched, inj, cache,
                               cfg.eta, seed, extra.empty() ? nullptr : &extra);
    };

    for (size_t i = 0; i + 1 < ladder.size(); ++i) {
        const int t = ladder[i], t_prev = ladder[i + 1];
        rec.timestep_log.push_back(t);

        if (cfg.appearance.enabled) {
            bool want = in_app_window(t);
            TapBundle tbA = model.denoise(x_app, t, pemb_app,
                                          want ? cfg.appearance.layers : std::set<std::string>{});
            if (want) {
                auto& slot = app_taps[t];
                for (const auto& layer : cfg.appearance.layers)
                    slot[layer] = tbA.features.at(layer);
            }
            x_app = ddim_step(sched, x_app, tbA.eps_pred, t, t_prev, cfg.eta,
                              mix_seed(cfg.seed, 0xB000ull + i));
        }

        uint64_t step_seed = mix_seed(cfg.seed, 0xC000ull + i);
        if (cfg.restart_enabled)
            x = self_recur_step(x, t, t_prev, sched, stepper, cfg.restart, step_seed);
        else
            x = stepper(x, t, t_prev, step_seed);

        if (cfg.restart_enabled && t_prev == t_min)
            x = restart_refine(x, sched, stepper, cfg.restart, mix_seed(cfg.seed, 0xD00Dull));
    }

    rec.cache_hits = cache.hits;
    rec.cache_misses = cache.misses;
    rec.denoiser_calls = model.call_count();
    rec.output = from_latent(x);
    return rec;
}

long expected_denoiser_calls(const RunConfig& cfg, const NoiseSchedule& sched) {
    std::vector<int> ladder = sampling_ladder(sched.T, cfg.steps);
    const int t_min =
        cfg.restart_enabled ? sched.nearest_timestep_for_sigma(cfg.restart.sigma_tmin) : -1;
    const int t_max =
        cfg.restart_enabled ? sched.nearest_timestep_for_sigma(cfg.restart.sigma_tmax) : -1;
    if (cfg.restart_enabled) ladder = insert_timestep(ladder, t_min);

    const bool injecting = cfg.injection_enabled && !cfg.injection.layers.empty();
    std::set<int> structure_keys;  // distinct effective timesteps hit by the structure branch
    long calls = 0;

    auto output_call = [&](int t) {
        ++calls;
        if (injecting && injection_active(t, sched.T, cfg.injection.tau))
            structure_keys.insert(effective_timestep(cfg.injection, t, sched.T));
    };

    for (size_t i = 0; i + 1 < ladder.size(); ++i) {
        const int t = ladder[i], t_prev = ladder[i + 1];
        if (cfg.appearance.enabled) ++calls;  // appearance branch
        double norm = to_normalized(t, sched.T);
        int reps = (cfg.restart_enabled && cfg.restart.N_prime > 1 &&
                    norm >= cfg.restart.tprime_min - 1e-12 &&
                    norm <= cfg.restart.tprime_max + 1e-12)
                       ? cfg.restart.N_prime
                       : 1;
        for (int r = 0; r < reps; ++r) output_call(t);
        if (cfg.restart_enabled && t_prev == t_min) {
            auto rladder = restart_ladder(t_min, t_max, cfg.restart.S_steps);
            for (int n = 0; n < cfg.restart.N; ++n) {
                int cur = t_max;
                for (int tgt : rladder) {
                    output_call(cur);
                    cur = tgt;
                }
            }
        }
    }
    return calls + long(structure_keys.size());
}

void save_record(const RunRecord& rec, const RunConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_pnm(rec.output, dir / "output.ppm");
    write_pnm(rec.condition, dir / "condition.ppm");
    nlohmann::json j;
    j["prompt"] = rec.prompt;
    j["enriched_prompt"] = rec.enriched_prompt;
    j["prep_morph"] = rec.prep_morph == MorphApplied::None
                          ? "none"
                          : (rec.prep_morph == MorphApplied::Dilate ? "dilate" : "erode");
    j["cache_hits"] = rec.cache_hits;
    j["cache_misses"] = rec.cache_misses;
    j["denoiser_calls"] = rec.denoiser_calls;
    j["timestep_log"] = rec.timestep_log;
    j["output_checksum"] =
        fnv1a(rec.output.data.data(), rec.output.data.size() * sizeof(float));
    j["config"] = {
        {"steps", cfg.steps},
        {"eta", cfg.eta},
        {"seed", cfg.seed},
        {"injection.enabled", cfg.injection_enabled},
        {"injection.tau", cfg.injection.tau},
        {"injection.C", cfg.injection.C},
        {"injection.schedule",
         cfg.injection.schedule == InjectionSchedule::Constant ? "constant" : "synchronous"},
        {"injection.layers", layers_csv(cfg.injection.layers)},
        {"appearance.enabled", cfg.appearance.enabled},
        {"appearance.layers", layers_csv(cfg.appearance.layers)},
        {"restart.enabled", cfg.restart_enabled},
        {"restart.N", cfg.restart.N},
        {"restart.S_steps", cfg.restart.S_steps},
        {"restart.N_prime", cfg.restart.N_prime},
        {"arp.enabled", cfg.arp_enabled},
        {"prep.enabled", cfg.prep_enabled},
    };
    std::ofstream f(dir / "record.json");
    f << j.dump(2) << "\n";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "injection_C") return AblationAxis::InjectionC;
    if (s == "arp_on_off") return AblationAxis::ArpOnOff;
    if (s == "restart_on_off") return AblationAxis::RestartOnOff;
    throw std::invalid_argument("unknown ablation axis: " + s);
}

std::vector<double> AblationReport::column(const std::string& setting,
                                           double AblationRow::* metric) const {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.setting == setting) out.push_back(r.*metric);
    return out;
}

AblationReport ablate(AblationAxis axis, const std::vector<std::string>& grid,
                      const SamplePair& pair, const DenoiserModel& model,
                      const NoiseSchedule& sched, const RunConfig& base,
                      const std::vector<uint64_t>& seeds, LlmClient* client) {
    AblationReport report;
    report.axis = axis;
    std::vector<std::string> settings =
        axis == AblationAxis::InjectionC ? grid : std::vector<std::string>{"off", "on"};

    for (const auto& setting : settings) {
        RunConfig cfg = base;
        switch (axis) {
            case AblationAxis::InjectionC:
                cfg.injection.schedule = InjectionSchedule::Constant;
                cfg.injection.C = std::stod(setting);
                break;
            case AblationAxis::ArpOnOff:
                cfg.arp_enabled = setting == "on";
                break;
            case AblationAxis::RestartOnOff:
                cfg.restart_enabled = setting == "on";
                break;
        }
        for (uint64_t seed : seeds) {
            cfg.seed = seed;
            long calls_before = client ? client->calls() : 0;
            RunRecord rec = generate(pair.condition, pair.prompt, model, sched, cfg, client);
            AblationRow row;
            row.setting = setting;
            row.seed = seed;
            row.alignment = struct_distance(rec.output, pair.natural);
            row.leakage = -(dft_gap(rec.output, rec.condition) +
                            pixel_l2(rec.output, rec.condition));
            row.denoiser_calls = rec.denoiser_calls;
            row.client_calls = client ? client->calls() - calls_before : 0;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

void write_ablation_csv(const AblationReport& report, const std::filesystem::path& path) {
    std::ofstream f(path);
    f << "setting,seed,alignment,leakage,denoiser_calls,client_calls\n";
    for (const auto& r : report.rows)
        f << r.setting << ',' << r.seed << ',' << r.alignment << ',' << r.leakage << ','
          << r.denoiser_calls << ',' << r.client_calls << "\n";
}

}  // namespace richctl
