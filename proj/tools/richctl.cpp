#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <sstream>

#include "richctl/analysis.hpp"
#include "richctl/runner.hpp"

using namespace richctl;

namespace {

std::vector<int> parse_int_csv(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

std::vector<std::string> parse_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

ConfigMap layered_config(const std::string& preset_name, const std::string& config_path,
                         const std::vector<std::string>& sets) {
    ConfigMap cfg = preset(preset_name);
    if (!config_path.empty()) merge_into(cfg, parse_config_file(config_path));
    apply_overrides(cfg, sets);
    return cfg;
}

std::unique_ptr<LlmClient> make_client() {
    if (const char* live = std::getenv("RICHCTL_LLM_LIVE"); live && std::string(live) == "1") {
        const char* host = std::getenv("RICHCTL_LLM_HOST");
        const char* key = std::getenv("RICHCTL_LLM_KEY");
        if (!host || !key) throw std::invalid_argument("live client needs RICHCTL_LLM_HOST/KEY");
        return std::make_unique<LiveLlmClient>(host, "/v1/chat/completions", key);
    }
    const char* dir = std::getenv("RICHCTL_ARP_FIXTURES");
    if (!dir) throw std::invalid_argument("set RICHCTL_ARP_FIXTURES (or RICHCTL_LLM_LIVE=1)");
    return std::make_unique<MockLlmClient>(dir);
}

int run(int argc, char** argv) {
    CLI::App app{"training-free spatial-control toolkit for diffusion image generation"};
    app.require_subcommand(1);

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "train the toy denoiser");
    std::string train_out = "weights.bin";
    int train_n = 64, train_size = 32, train_epochs = 40;
    uint64_t train_seed = 0;
    std::string dataset_dir;
    train_cmd->add_option("--out", train_out, "weights output path");
    train_cmd->add_option("--n", train_n, "number of scenes");
    train_cmd->add_option("--size", train_size, "image side");
    train_cmd->add_option("--epochs", train_epochs);
    train_cmd->add_option("--seed", train_seed);
    train_cmd->add_option("--save-dataset", dataset_dir, "also persist the dataset");

    // --- gen ---
    auto* gen_cmd = app.add_subcommand("gen", "controlled generation from a condition image");
    std::string gen_cond, gen_prompt, gen_weights, gen_preset = "paper-default";
    std::string gen_config, gen_out = "run";
    std::vector<std::string> gen_sets;
    uint64_t gen_seed = 0;
    gen_cmd->add_option("--cond", gen_cond, "condition image (PNM)")->required();
    gen_cmd->add_option("--prompt", gen_prompt)->required();
    gen_cmd->add_option("--weights", gen_weights)->required();
    gen_cmd->add_option("--preset", gen_preset);
    gen_cmd->add_option("--config", gen_config, "key=value config file");
    gen_cmd->add_option("--set", gen_sets, "config overrides key=value");
    gen_cmd->add_option("--seed", gen_seed);
    gen_cmd->add_option("--out", gen_out, "run record directory");

    // --- prep ---
    auto* prep_cmd = app.add_subcommand("prep", "preprocess a condition image");
    std::string prep_in, prep_out;
    std::vector<std::string> prep_sets;
    prep_cmd->add_option("--in", prep_in)->required();
    prep_cmd->add_option("--out", prep_out)->required();
    prep_cmd->add_option("--set", prep_sets, "prep.* overrides key=value");

    // --- analyze ---
    auto* an_cmd = app.add_subcommand("analyze", "feature domain-gap measurement");
    std::string an_weights, an_csv = "gap.csv", an_json = "gap_summary.json";
    std::string an_grid = "100,200,300,400,500,600,700,800,900,1000";
    int an_n = 20, an_size = 32;
    uint64_t an_seed = 7;
    an_cmd->add_option("--weights", an_weights)->required();
    an_cmd->add_option("--n", an_n, "scenes in the probe dataset");
    an_cmd->add_option("--size", an_size);
    an_cmd->add_option("--grid", an_grid, "comma-separated timesteps");
    an_cmd->add_option("--seed", an_seed);
    an_cmd->add_option("--out-csv", an_csv);
    an_cmd->add_option("--out-json", an_json);

    // --- ablate ---
    auto* ab_cmd = app.add_subcommand("ablate", "paired-run ablation over one axis");
    std::string ab_axis = "injection_C", ab_grid = "0.0,0.2,0.4,0.6,0.8";
    std::string ab_weights, ab_out = "ablation.csv", ab_preset = "paper-default";
    std::vector<std::string> ab_sets;
    int ab_seeds = 5, ab_scene = 0;
    ab_cmd->add_option("--axis", ab_axis, "injection_C | arp_on_off | restart_on_off");
    ab_cmd->add_option("--grid", ab_grid, "settings for injection_C");
    ab_cmd->add_option("--weights", ab_weights)->required();
    ab_cmd->add_option("--preset", ab_preset);
    ab_cmd->add_option("--set", ab_sets);
    ab_cmd->add_option("--seeds", ab_seeds, "number of paired seeds");
    ab_cmd->add_option("--scene", ab_scene, "probe scene index");
    ab_cmd->add_option("--out", ab_out);

    CLI11_PARSE(app, argc, argv);

    NoiseSchedule sched = NoiseSchedule::linear_vp();

    if (*train_cmd) {
        auto ds = generate_dataset(train_n, train_size, train_seed);
        if (!dataset_dir.empty()) save_dataset(ds, dataset_dir);
        DenoiserConfig dc;
        dc.img_size = train_size;
        DenoiserModel model(dc, mix_seed(train_seed, 1));
        TrainConfig tc;
        tc.epochs = train_epochs;
        tc.seed = train_seed;
        std::vector<double> losses;
        tc.loss_log = &losses;
        model.train(ds, sched, tc);
        model.save(train_out);
        for (size_t i = 0; i < losses.size(); ++i)
            std::cout << "epoch " << i << " loss " << losses[i] << "\n";
        std::cout << "saved " << train_out << "\n";
        return 0;
    }

    if (*gen_cmd) {
        ConfigMap cm = layered_config(gen_preset, gen_config, gen_sets);
        RunConfig cfg = RunConfig::from_map(cm);
        cfg.seed = gen_seed;
        DenoiserModel model = DenoiserModel::load(gen_weights);
        Image cond = read_pnm(gen_cond);
        std::unique_ptr<LlmClient> client;
        if (cfg.arp_enabled) client = make_client();
        RunRecord rec = generate(cond, gen_prompt, model, sched, cfg, client.get());
        save_record(rec, cfg, gen_out);
        std::cout << "prompt: " << rec.prompt << "\n"
                  << "enriched: " << rec.enriched_prompt << "\n"
                  << "denoiser calls: " << rec.denoiser_calls << " (cache " << rec.cache_hits
                  << " hits / " << rec.cache_misses << " misses)\n"
                  << "wrote " << gen_out << "/output.ppm\n";
        return 0;
    }

    if (*prep_cmd) {
        ConfigMap cm;
        apply_overrides(cm, prep_sets);
        PrepConfig pc;
        pc.w_min = get_double(cm, "prep.w_min", pc.w_min);
        pc.w_max = get_double(cm, "prep.w_max", pc.w_max);
        pc.kernel = get_int(cm, "prep.kernel", pc.kernel);
        pc.gamma = get_double(cm, "prep.gamma", pc.gamma);
        pc.blur_radius = get_double(cm, "prep.blur_radius", pc.blur_radius);
        PrepResult pr = preprocess(read_pnm(prep_in), pc);
        write_pnm(pr.image, prep_out);
        std::cout << "measured width " << pr.measured_width << ", morph "
                  << (pr.morph == MorphApplied::None
                          ? "none"
                          : pr.morph == MorphApplied::Dilate ? "dilate" : "erode")
                  << "\n";
        return 0;
    }

    if (*an_cmd) {
        DenoiserModel model = DenoiserModel::load(an_weights);
        auto ds = generate_dataset(an_n, an_size, an_seed);
        std::vector<int> grid = parse_int_csv(an_grid);
        GapCurveConfig gcfg;
        gcfg.seed = an_seed;
        GapCurve curve = gap_curves(ds, model, sched, grid, gcfg);
        write_gap_csv(curve, an_csv);
        write_gap_summary_json(curve, grid, an_json);
        std::cout << "wrote " << an_csv << " and " << an_json << "\n";
        return 0;
    }

    if (*ab_cmd) {
        DenoiserModel model = DenoiserModel::load(ab_weights);
        auto ds = generate_dataset(ab_scene + 1, model.config().img_size, 11);
        const SamplePair& pair = ds[size_t(ab_scene) * 3];  // edge condition of the scene
        ConfigMap cm = layered_config(ab_preset, "", ab_sets);
        RunConfig base = RunConfig::from_map(cm);
        AblationAxis axis = ablation_axis_from_string(ab_axis);
        std::vector<uint64_t> seeds;
        for (int i = 0; i < ab_seeds; ++i) seeds.push_back(uint64_t(100 + i));
        std::unique_ptr<LlmClient> client;
        if (axis == AblationAxis::ArpOnOff || base.arp_enabled) client = make_client();
        AblationReport rep = ablate(axis, parse_csv(ab_grid), pair, model, sched, base, seeds,
                                    client.get());
        write_ablation_csv(rep, ab_out);
        std::cout << "wrote " << ab_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
