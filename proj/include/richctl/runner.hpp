#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "richctl/appearance.hpp"
#include "richctl/arp.hpp"
#include "richctl/condprep.hpp"
#include "richctl/configfile.hpp"
#include "richctl/dataset.hpp"
#include "richctl/denoiser.hpp"
#include "richctl/injection.hpp"
#include "richctl/restart.hpp"

namespace richctl {

struct RunConfig {
    int steps = 50;
    double eta = 1.0;
    uint64_t seed = 0;

    bool injection_enabled = true;
    InjectionConfig injection;
    AppearanceConfig appearance;
    bool restart_enabled = true;
    RestartConfig restart;
    bool arp_enabled = true;
    bool prep_enabled = true;
    PrepConfig prep;

    static RunConfig from_map(const ConfigMap& m);
};

struct RunRecord {
    std::string prompt;
    std::string enriched_prompt;
    ArpRecord arp;
    MorphApplied prep_morph = MorphApplied::None;
    long cache_hits = 0;
    long cache_misses = 0;
    long denoiser_calls = 0;
    std::vector<int> timestep_log;  // main-trajectory source timesteps
    Image condition;                // post-preprocessing
    Image output;                   // pixel space [0,1]
};

// Uniform DDIM timestep ladder T..0 inclusive, `steps` intervals.
std::vector<int> sampling_ladder(int T, int steps);
// Insert t into a strictly-descending ladder (no-op when already present).
std::vector<int> insert_timestep(std::vector<int> ladder, int t);

double pixel_l2(const Image& a, const Image& b);

// Full three-branch pipeline: condition preprocessing, prompt enrichment,
// structure injection + appearance transfer along the main trajectory, restart
// refinement at t_min. `client` may be null when ARP is disabled.
RunRecord generate(const Image& cond_pixels, const std::string& prompt,
                   const DenoiserModel& model, const NoiseSchedule& sched, const RunConfig& cfg,
                   LlmClient* client = nullptr);

// Denoiser-call bookkeeping for a config, computed from ladder arithmetic
// alone (no model evaluation); used to audit instrumentation.
long expected_denoiser_calls(const RunConfig& cfg, const NoiseSchedule& sched);

void save_record(const RunRecord& rec, const RunConfig& cfg, const std::filesystem::path& dir);

enum class AblationAxis { InjectionC, ArpOnOff, RestartOnOff };
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationRow {
    std::string setting;
    uint64_t seed = 0;
    double alignment = 0;  // struct_distance(output, source natural scene)
    double leakage = 0;    // -(dft_gap + pixel L2 to condition): high = leaky
    long denoiser_calls = 0;
    long client_calls = 0;
};

struct AblationReport {
    AblationAxis axis = AblationAxis::InjectionC;
    std::vector<AblationRow> rows;

    std::vector<double> column(const std::string& setting, double AblationRow::* metric) const;
};

// Paired runs over shared seeds. Grid semantics per axis: InjectionC → the
// normalized C values as strings; ArpOnOff / RestartOnOff → {"off","on"}
// (grid ignored).
AblationReport ablate(AblationAxis axis, const std::vector<std::string>& grid,
                      const SamplePair& pair, const DenoiserModel& model,
                      const NoiseSchedule& sched, const RunConfig& base,
                      const std::vector<uint64_t>& seeds, LlmClient* client = nullptr);

void write_ablation_csv(const AblationReport& report, const std::filesystem::path& path);

}  // namespace richctl
