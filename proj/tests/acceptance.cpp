#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>

#include "richctl/analysis.hpp"
#include "richctl/arp.hpp"
#include "richctl/condprep.hpp"
#include "richctl/runner.hpp"

using namespace richctl;
namespace fs = std::filesystem;

namespace {

const NoiseSchedule& sched() {
    static NoiseSchedule s = NoiseSchedule::linear_vp();
    return s;
}

// the "pretrained" 32x32 model every end-to-end criterion runs against
const DenoiserModel& model32() {
    static DenoiserModel model = [] {
        DenoiserConfig cfg;
        cfg.img_size = 32;
        DenoiserModel m(cfg, 2024);
        auto ds = generate_dataset(24, 32, 501);  // 72 pairs
        // the corpus covers condition renders as well as naturals so the
        // model's prior spans both domains, mirroring a broad pretrained prior
        std::vector<SamplePair> corpus = ds;
        for (const auto& p : ds) {
            SamplePair q = p;
            q.natural = p.condition;
            corpus.push_back(std::move(q));
        }
        TrainConfig tc;
        tc.epochs = 40;
        tc.seed = 7;
        std::vector<double> losses;
        tc.loss_log = &losses;
        m.train(corpus, sched(), tc);
        std::printf("[acceptance] trained 32x32 model: loss %.3f -> %.3f over %d epochs\n",
                    losses.front(), losses.back(), tc.epochs);
        return m;
    }();
    return model;
}

// held-out pairs, disjoint seed from the training set
const std::vector<SamplePair>& eval_pairs() {
    static std::vector<SamplePair> ds = generate_dataset(20, 32, 977);  // 60 pairs
    return ds;
}

bool images_equal(const Image& a, const Image& b) {
    if (a.data.size() != b.data.size()) return false;
    for (size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nn::Mat random_mat(int r, int c, uint64_t seed) {
    nn::Mat m(r, c);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

void report(int criterion, const char* name, bool ok, const std::string& detail) {
    std::printf("[acceptance] criterion %d (%s): %s%s%s\n", criterion, name,
                ok ? "PASS" : "FAIL", detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

}  // namespace

TEST_CASE("criterion 1: scheduler statistics") {
    bool ok = true;
    const int t = 600;
    const double ab = sched().alpha_bar[t];

    // forward-process moments over 10k seeds: standardize each sample by the
    // closed form, then the pooled mean must be 0 within 1% and the pooled
    // variance 1 within 3%
    Image x0(8, 8, 1, 0.f);
    Rng rng(3);
    for (auto& v : x0.data) v = rng.uniform();
    const size_t n = x0.data.size();
    const int trials = 10000;
    double acc = 0, acc2 = 0;
    for (int s = 0; s < trials; ++s) {
        Image xt = forward_diffuse(sched(), x0, t, uint64_t(s) + 1);
        for (size_t i = 0; i < n; ++i) {
            double z = (double(xt.data[i]) - std::sqrt(ab) * x0.data[i]) / std::sqrt(1.0 - ab);
            acc += z;
            acc2 += z * z;
        }
    }
    const double cnt = double(trials) * double(n);
    double mean_err = std::abs(acc / cnt);
    double var_err = std::abs(acc2 / cnt - mean_err * mean_err - 1.0);
    ok &= mean_err < 0.01;
    ok &= var_err < 0.03;

    // exact-noise DDIM inversion: eta=0 steps with the true epsilon recover x0
    Image eps = gaussian_image(8, 8, 1, 42);
    Image xt = forward_diffuse(sched(), x0, 1000, eps);
    auto ladder = sampling_ladder(sched().T, 50);
    Image x = xt;
    for (size_t i = 0; i + 1 < ladder.size(); ++i) {
        double abt = sched().alpha_bar[size_t(ladder[i])];
        Image true_eps = x;
        for (size_t j = 0; j < x.data.size(); ++j)
            true_eps.data[j] = float((double(x.data[j]) - std::sqrt(abt) * x0.data[j]) /
                                     std::sqrt(1.0 - abt));
        x = ddim_step(sched(), x, true_eps, ladder[i], ladder[i + 1], 0.0, 1);
    }
    double num = 0, den = 0;
    for (size_t j = 0; j < x.data.size(); ++j) {
        num += std::pow(double(x.data[j]) - x0.data[j], 2);
        den += double(x0.data[j]) * x0.data[j];
    }
    double rel = std::sqrt(num / den);
    ok &= rel <= 1e-5;

    report(1, "scheduler statistics", ok,
           fmt("mean err %.2e, var rel err %.4f, inversion rel err %.2e", mean_err, var_err,
               rel));
    CHECK(ok);
}

namespace {
const GapCurve& shared_gap_curve() {
    static GapCurve curve = [] {
        std::vector<int> grid;
        for (int t = 100; t <= 1000; t += 100) grid.push_back(t);
        GapCurveConfig cfg;
        cfg.seed = 11;
        return gap_curves(eval_pairs(), model32(), sched(), grid, cfg);
    }();
    return curve;
}
std::vector<int> gap_grid() {
    std::vector<int> g;
    for (int t = 100; t <= 1000; t += 100) g.push_back(t);
    return g;
}
}  // namespace

TEST_CASE("criterion 2: domain-gap vs structure trend") {
    auto grid = gap_grid();
    std::vector<double> ts(grid.begin(), grid.end());
    const GapCurve& curve = shared_gap_curve();
    double r_kl = spearman(ts, curve.mean_over_kinds(&GapPoint::kl, grid));
    double r_ss = spearman(ts, curve.mean_over_kinds(&GapPoint::selfsim_l2, grid));
    bool ok = r_kl <= -0.7 && r_ss >= 0.7;
    report(2, "domain-gap vs structure trend", ok,
           fmt("spearman(kl,t)=%.3f (need <= -0.7), spearman(selfsim,t)=%.3f (need >= 0.7), "
               "%zu pairs x 3 kinds x %zu timesteps",
               r_kl, r_ss, eval_pairs().size() / 3, grid.size()));
    CHECK(ok);
}

TEST_CASE("criterion 3: spectral trend and high-frequency gap") {
    auto grid = gap_grid();
    std::vector<double> ts(grid.begin(), grid.end());
    const GapCurve& curve = shared_gap_curve();
    double r_dft = spearman(ts, curve.mean_over_kinds(&GapPoint::dft_l2, grid));
    auto edge = curve.kind_curve(&GapPoint::hf_ratio_condition, ConditionKind::Edge, grid);
    auto mask = curve.kind_curve(&GapPoint::hf_ratio_condition, ConditionKind::Mask, grid);
    double gap_low = std::abs(edge.front() - mask.front());
    double gap_high = std::abs(edge.back() - mask.back());
    bool ok = r_dft <= -0.7 && gap_high < 0.25 * gap_low;
    report(3, "spectral trend and high-frequency gap", ok,
           fmt("spearman(dft,t)=%.3f (need <= -0.7), hf gap %.4f @t=%d -> %.4f @t=%d "
               "(need < 25%%)",
               r_dft, gap_low, grid.front(), gap_high, grid.back()));
    CHECK(ok);
}

TEST_CASE("criterion 4: appearance transfer") {
    bool ok = true;
    std::string why;

    // uniform attention == exact AdaIN with population statistics
    {
        const int n = 20, c = 5;
        nn::Mat f_out = random_mat(n, c, 4), f_app = random_mat(n, c, 5);
        nn::Mat U = nn::Mat::Constant(n, n, 1.f / n);
        nn::Mat out = transfer_with_attention(U, f_out, f_app);
        double worst = 0;
        for (int j = 0; j < c; ++j) {
            double mean = 0, sq = 0;
            for (int i = 0; i < n; ++i) {
                mean += f_app(i, j);
                sq += double(f_app(i, j)) * f_app(i, j);
            }
            mean /= n;
            double stdev = std::sqrt(std::max(sq / n - mean * mean, 0.0));
            for (int i = 0; i < n; ++i)
                worst = std::max(worst,
                                 std::abs(double(out(i, j)) - (stdev * f_out(i, j) + mean)));
        }
        ok &= worst <= 1e-5;
        why += fmt("adain err %.2e", worst);
    }

    // loop-based double-precision oracle on random 16x4 instances
    {
        const int n = 16, c = 4;
        double worst = 0;
        for (uint64_t seed : {10ull, 11ull, 12ull}) {
            nn::Mat f_out = random_mat(n, c, seed), f_app = random_mat(n, c, seed + 100);
            nn::Mat wq = random_mat(c, c, seed + 200), wk = random_mat(c, c, seed + 300);
            nn::Mat got = transfer(f_out, f_app, wq, wk, c);
            // recompute the whole pipeline in double straight from the definitions
            auto norm = [&](const nn::Mat& f) {
                std::vector<std::vector<double>> o(n, std::vector<double>(c));
                for (int j = 0; j < c; ++j) {
                    double mean = 0, sq = 0;
                    for (int i = 0; i < n; ++i) mean += f(i, j);
                    mean /= n;
                    for (int i = 0; i < n; ++i) sq += (f(i, j) - mean) * (f(i, j) - mean);
                    double inv = 1.0 / std::sqrt(sq / n + 1e-8);
                    for (int i = 0; i < n; ++i) o[i][j] = (f(i, j) - mean) * inv;
                }
                return o;
            };
            auto no = norm(f_out), na = norm(f_app);
            std::vector<std::vector<double>> A(n, std::vector<double>(n));
            for (int i = 0; i < n; ++i) {
                double mx = -1e300;
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int a = 0; a < c; ++a) {
                        double qa = 0, ka = 0;
                        for (int b = 0; b < c; ++b) {
                            qa += no[i][b] * wq(b, a);
                            ka += na[j][b] * wk(b, a);
                        }
                        s += qa * ka;
                    }
                    A[i][j] = s / std::sqrt(double(c));
                    mx = std::max(mx, A[i][j]);
                }
                double z = 0;
                for (int j = 0; j < n; ++j) {
                    A[i][j] = std::exp(A[i][j] - mx);
                    z += A[i][j];
                }
                for (int j = 0; j < n; ++j) A[i][j] /= z;
            }
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    double m = 0, e2 = 0;
                    for (int k = 0; k < n; ++k) {
                        m += A[i][k] * f_app(k, j);
                        e2 += A[i][k] * double(f_app(k, j)) * f_app(k, j);
                    }
                    double s = std::sqrt(std::max(e2 - m * m, 0.0));
                    worst = std::max(worst, std::abs(double(got(i, j)) -
                                                     (s * f_out(i, j) + m)));
                }
        }
        ok &= worst <= 1e-6;
        why += fmt(", oracle err %.2e", worst);
    }

    // row-stochasticity
    {
        nn::Mat A = appearance_attention(random_mat(10, 6, 30), random_mat(10, 6, 31),
                                         random_mat(6, 6, 32), random_mat(6, 6, 33), 6);
        float worst_row = 0;
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            worst_row = std::max(worst_row, std::abs(A.row(i).sum() - 1.f));
        ok &= worst_row < 1e-5f && A.minCoeff() >= 0.f;
        why += fmt(", row-sum err %.2e", double(worst_row));
    }

    report(4, "appearance transfer", ok, why);
    CHECK(ok);
}

TEST_CASE("criterion 5: injection schedules and call budget") {
    DenoiserConfig dcfg;
    dcfg.img_size = 16;
    DenoiserModel model(dcfg, 77);
    Image cond = gaussian_image(16, 16, 3, 3);
    auto p = PromptEmbedding::encode("p");
    auto ladder = sampling_ladder(sched().T, 50);
    bool ok = true;
    std::string why;

    // empty-layer config is bit-identical to uncontrolled sampling
    {
        InjectionConfig cfg;  // no layers
        StructureCache cache;
        Image a = gaussian_image(16, 16, 3, 8);
        Image b = a;
        a.t = b.t = sched().T;
        for (size_t i = 0; i + 1 < ladder.size(); ++i) {
            a = controlled_step(a, ladder[i], ladder[i + 1], cond, p, model, sched(), cfg,
                                cache, 1.0, 100 + uint64_t(i));
            TapBundle tb = model.denoise(b, ladder[i], p, {});
            b = ddim_step(sched(), b, tb.eps_pred, ladder[i], ladder[i + 1], 1.0,
                          100 + uint64_t(i));
        }
        ok &= images_equal(a, b);
        why += fmt("empty-layer bit-identity %s", images_equal(a, b) ? "yes" : "NO");
    }

    // structure-branch calls: 1 for the constant schedule, 50 for synchronous
    long structure_calls[2] = {0, 0};
    long total_calls[2] = {0, 0};
    int idx = 0;
    for (auto schedule : {InjectionSchedule::Constant, InjectionSchedule::Synchronous}) {
        InjectionConfig cfg;
        cfg.schedule = schedule;
        cfg.tau = 1.0;
        cfg.layers = {"d1"};
        StructureCache cache;
        cache.noise_seed = 7;
        Image x = gaussian_image(16, 16, 3, 9);
        x.t = sched().T;
        model.reset_call_count();
        for (size_t i = 0; i + 1 < ladder.size(); ++i)
            x = controlled_step(x, ladder[i], ladder[i + 1], cond, p, model, sched(), cfg,
                                cache, 1.0, 200 + uint64_t(i));
        total_calls[idx] = model.call_count();
        structure_calls[idx] = cache.misses;
        ++idx;
    }
    ok &= structure_calls[0] == 1 && structure_calls[1] == 50;
    ok &= total_calls[0] < total_calls[1];
    why += fmt(", structure calls %ld vs %ld, total %ld vs %ld", structure_calls[0],
               structure_calls[1], total_calls[0], total_calls[1]);

    report(5, "injection schedules and call budget", ok, why);
    CHECK(ok);
}

TEST_CASE("criterion 6: control efficacy on the trained model") {
    const DenoiserModel& model = model32();
    RunConfig ctrl = RunConfig::from_map(preset("paper-default"));
    ctrl.arp_enabled = false;  // no live client in the acceptance run
    RunConfig plain = RunConfig::from_map(preset("plain"));

    // paper-default beats uncontrolled sampling on structural alignment;
    // per seed, the distance is totalled over the five mask-condition scenes
    // of the held-out corpus so the comparison reflects the corpus, not one
    // scene's idiosyncrasy
    int wins = 0, trials = 0;
    for (int k = 0; k < 25; ++k) {
        double dc = 0, dp = 0;
        ctrl.seed = plain.seed = 9000 + uint64_t(k);
        for (int s = 0; s < 5; ++s) {
            const SamplePair& pair = eval_pairs()[size_t(3 * s + 2)];
            RunRecord rc = generate(pair.condition, pair.prompt, model, sched(), ctrl);
            RunRecord rp = generate(pair.condition, pair.prompt, model, sched(), plain);
            dc += struct_distance(rc.output, pair.natural);
            dp += struct_distance(rp.output, pair.natural);
        }
        wins += dc < dp;
        ++trials;
    }
    bool ok_align = wins >= int(std::ceil(0.8 * trials));

    // C-sweep ordering: clean condition features (high normalized C) leak the
    // condition's appearance; heavily-noised features (low C) lose structure.
    // Rows are totalled over three scenes per seed for the same reason.
    RunConfig base = ctrl;
    std::vector<uint64_t> seeds;
    for (uint64_t s = 0; s < 10; ++s) seeds.push_back(7100 + s);
    const std::vector<std::string> grid = {"0.0", "0.2", "0.4", "0.6", "0.8"};
    std::map<std::string, std::vector<double>> leak, align;
    for (const auto& g : grid) {
        leak[g].assign(seeds.size(), 0.0);
        align[g].assign(seeds.size(), 0.0);
    }
    for (size_t pi : {size_t(2), size_t(5), size_t(8)}) {  // masks of scenes 0..2
        AblationReport rep = ablate(AblationAxis::InjectionC, grid, eval_pairs()[pi], model,
                                    sched(), base, seeds);
        for (const auto& g : grid) {
            auto l = rep.column(g, &AblationRow::leakage);
            auto a = rep.column(g, &AblationRow::alignment);
            for (size_t i = 0; i < seeds.size(); ++i) {
                leak[g][i] += l[i];
                align[g][i] += a[i];
            }
        }
    }
    // endpoint reading of the U-shape: the clean extreme leaks the condition
    // hardest, the noisy extreme preserves its structure worst
    int order_ok = 0;
    for (size_t i = 0; i < seeds.size(); ++i)
        order_ok += (leak["0.8"][i] > leak["0.0"][i]) && (align["0.0"][i] > align["0.8"][i]);
    bool ok_sweep = order_ok >= int(std::ceil(0.7 * double(seeds.size())));

    bool ok = ok_align && ok_sweep;
    report(6, "control efficacy on the trained model", ok,
           fmt("alignment wins %d/%d (need >= 20), C-sweep ordering %d/%zu (need >= 7)", wins,
               trials, order_ok, seeds.size()));
    CHECK(ok);
}

TEST_CASE("criterion 7: restart refinement") {
    bool ok = true;
    std::string why;
    RestartConfig rcfg;  // N=3, S=5

    // bookkeeping: exactly N * S_steps backward steps
    {
        long calls = 0;
        Stepper counting = [&](const Image& xt, int, int t_prev, uint64_t) {
            ++calls;
            Image out = xt;
            out.t = t_prev;
            return out;
        };
        Image x = gaussian_image(8, 8, 3, 2);
        restart_refine(x, sched(), counting, rcfg, 5);
        ok &= calls == long(rcfg.N) * rcfg.S_steps;
        why += fmt("backward steps %ld (want %d)", calls, rcfg.N * rcfg.S_steps);
    }

    // oracle-denoiser fixed point
    {
        Image x0 = gaussian_image(8, 8, 3, 7);
        for (auto& v : x0.data) v = std::tanh(v);
        Stepper perfect = [&](const Image& xt, int t, int t_prev, uint64_t seed) {
            double ab = sched().alpha_bar[size_t(t)];
            Image eps = xt;
            for (size_t i = 0; i < eps.data.size(); ++i)
                eps.data[i] = float((double(xt.data[i]) - std::sqrt(ab) * x0.data[i]) /
                                    std::sqrt(1.0 - ab));
            return ddim_step(sched(), xt, eps, t, t_prev, 0.0, seed);
        };
        const int t_min = sched().nearest_timestep_for_sigma(rcfg.sigma_tmin);
        Image x_tmin = forward_diffuse(sched(), x0, t_min, 99);
        Image refined = restart_refine(x_tmin, sched(), perfect, rcfg, 17);
        double ab = sched().alpha_bar[size_t(t_min)];
        Image eps = refined;
        for (size_t i = 0; i < eps.data.size(); ++i)
            eps.data[i] = float((double(refined.data[i]) - std::sqrt(ab) * x0.data[i]) /
                                std::sqrt(1.0 - ab));
        Image x0_hat = estimate_clean(sched(), refined, eps, t_min);
        double err = 0;
        for (size_t i = 0; i < x0.data.size(); ++i)
            err += std::pow(double(x0_hat.data[i]) - x0.data[i], 2);
        err = std::sqrt(err);
        ok &= err <= 1e-4;
        why += fmt(", fixed-point err %.2e", err);
    }

    // seeded-artifact harness: restart repairs a corrupted patch
    {
        const DenoiserModel& model = model32();
        auto pemb = PromptEmbedding::encode(eval_pairs()[0].prompt);
        Stepper step = [&](const Image& xt, int t, int t_prev, uint64_t seed) {
            TapBundle tb = model.denoise(xt, t, pemb, {});
            return ddim_step(sched(), xt, tb.eps_pred, t, t_prev, 0.0, seed);
        };
        const int t_min = sched().nearest_timestep_for_sigma(rcfg.sigma_tmin);
        auto ladder = insert_timestep(sampling_ladder(sched().T, 50), t_min);
        size_t cut = 0;
        while (ladder[cut] != t_min) ++cut;

        auto run_tail = [&](Image x) {
            for (size_t i = cut; i + 1 < ladder.size(); ++i)
                x = step(x, ladder[i], ladder[i + 1], 600 + i);
            return from_latent(x);
        };
        auto patch_l2 = [](const Image& a, const Image& b) {
            double acc = 0;
            for (int y = 12; y < 16; ++y)
                for (int x = 12; x < 16; ++x)
                    for (int c = 0; c < 3; ++c)
                        acc += std::pow(double(a.at(y, x, c)) - b.at(y, x, c), 2);
            return std::sqrt(acc);
        };

        // each branch is compared against its own artifact-free run with shared
        // noise seeds, so the deltas isolate how each branch propagates the patch
        std::vector<double> improvements;
        int wins = 0;
        for (int k = 0; k < 25; ++k) {
            Image x = gaussian_image(32, 32, 3, 4000 + uint64_t(k));
            x.t = sched().T;
            for (size_t i = 0; i + 1 < ladder.size() && ladder[i] != t_min; ++i)
                x = step(x, ladder[i], ladder[i + 1], 500 + i);
            uint64_t rseed = mix_seed(4000 + uint64_t(k), 0xD00Dull);

            Image ref_plain = run_tail(x);
            Image ref_restart = run_tail(restart_refine(x, sched(), step, rcfg, rseed));

            Image corrupted = x;
            Rng crng(mix_seed(4000 + uint64_t(k), 0xBADull));
            for (int y = 12; y < 16; ++y)
                for (int cx = 12; cx < 16; ++cx)
                    for (int c = 0; c < 3; ++c)
                        corrupted.at(y, cx, c) += 3.f * crng.gaussian();

            Image out_plain = run_tail(corrupted);
            Image out_restart = run_tail(restart_refine(corrupted, sched(), step, rcfg, rseed));
            double gain = patch_l2(out_plain, ref_plain) - patch_l2(out_restart, ref_restart);
            improvements.push_back(gain);
            wins += gain > 0;
        }
        double med = median(improvements);
        ok &= med > 0 && wins >= 18;  // reduction on >= 70% of 25 seeds
        why += fmt(", artifact-repair median improvement %.4f, wins %d/25", med, wins);
    }

    report(7, "restart refinement", ok, why);
    CHECK(ok);
}

TEST_CASE("criterion 8: prompt enrichment fixtures and fallbacks") {
    bool ok = true;
    std::string why;
    fs::path fdir = fs::temp_directory_path() / "richctl_acceptance_fixtures";
    fs::remove_all(fdir);

    Image cond = gaussian_image(16, 16, 3, 88);
    const std::string prompt = "An image of a horse";
    const std::string bear_reply =
        R"({"a bear": {"visible part": "head", "shooting angle": "front shot"}})";
    SemanticDict cow = {{"cow", {"head", "side shot"}},
                       {"farmhouse", {"full-body", "front shot"}}};
    SemanticDict horse = {{"horse", {"head", "side shot"}},
                          {"farmhouse", {"full-body", "front shot"}}};
    const std::string sentence =
        "A side shot image of a horse's head. A farmhouse in the background.";

    // example 1: bear extraction
    {
        MockLlmClient::write_fixture(fdir, 1, build_stage_request(1, {}, ""), &cond, bear_reply);
        MockLlmClient client(fdir);
        SemanticDict d = stage1_extract(cond, client);
        bool pass = d.size() == 1 && d.count("a bear") == 1 &&
                    d.at("a bear") == SemanticEntry{"head", "front shot"};
        ok &= pass;
        why += fmt("bear %s", pass ? "ok" : "BAD");
    }
    // example 2: cow -> horse alignment
    {
        MockLlmClient::write_fixture(fdir, 2, build_stage_request(2, cow, prompt), nullptr,
                                     serialize_dict(horse));
        MockLlmClient client(fdir);
        bool pass = stage2_align(cow, prompt, client) == horse;
        ok &= pass;
        why += fmt(", cow->horse %s", pass ? "ok" : "BAD");
    }
    // example 3: horse/farmhouse sentence, byte-exact
    {
        MockLlmClient::write_fixture(fdir, 3, build_stage_request(3, horse, prompt), nullptr,
                                     sentence);
        MockLlmClient client(fdir);
        bool pass = stage3_rewrite(horse, prompt, client) == sentence;
        ok &= pass;
        why += fmt(", sentence %s", pass ? "byte-exact" : "BAD");
    }
    // fallbacks and totality
    {
        EchoLlmClient echo;
        bool echo_ok = enrich(cond, prompt, echo) == prompt;
        MockLlmClient empty(fdir / "nonexistent");
        ArpRecord rec;
        bool miss_ok = enrich(cond, prompt, empty, &rec) == prompt && rec.stage1_dict.empty();
        bool stage_fallbacks = stage2_align({}, prompt, empty).empty() &&
                               stage3_rewrite({}, prompt, empty) == prompt;
        ok &= echo_ok && miss_ok && stage_fallbacks;
        why += fmt(", fallbacks %s", (echo_ok && miss_ok && stage_fallbacks) ? "ok" : "BAD");
    }
    fs::remove_all(fdir);
    report(8, "prompt enrichment fixtures and fallbacks", ok, why);
    CHECK(ok);
}

TEST_CASE("criterion 9: condition preprocessing") {
    bool ok = true;
    std::string why;
    PrepConfig cfg;

    // stripe width oracle within +-1 px
    {
        Image stripe(64, 64, 1, 0.f);
        for (int y = 28; y < 37; ++y)  // 9 px wide
            for (int x = 0; x < 64; ++x) stripe.at(y, x, 0) = 1.f;
        double w = min_line_width(stripe);
        ok &= std::abs(w - 9.0) <= 1.0;
        why += fmt("stripe width %.1f (want 9 +- 1)", w);
    }

    // the dilation gate fires only inside [25, 50] px
    {
        auto stripe_w = [](int width) {
            Image img(128, 128, 1, 0.f);
            for (int y = 40; y < 40 + width; ++y)
                for (int x = 0; x < 128; ++x) img.at(y, x, 0) = 1.f;
            return img;
        };
        MorphApplied thin = preprocess(stripe_w(9), cfg).morph;
        MorphApplied mid = preprocess(stripe_w(30), cfg).morph;
        bool pass = thin == MorphApplied::None && mid == MorphApplied::Dilate;
        ok &= pass;
        why += fmt(", gate thin=%s mid=%s", thin == MorphApplied::None ? "closed" : "OPEN",
                   mid == MorphApplied::Dilate ? "dilate" : "WRONG");
    }

    // unsharp masking is a fixed point on constant images
    {
        Image flat(32, 32, 1, 0.7f);
        PrepResult pr = preprocess(flat, cfg);
        double worst = 0;
        for (float v : pr.image.data) worst = std::max(worst, std::abs(double(v) - 1.0));
        ok &= worst <= 1e-6;  // binarized constant -> all ones, blur identity
        why += fmt(", constant fixed-point err %.2e", worst);
    }

    report(9, "condition preprocessing", ok, why);
    CHECK(ok);
}

TEST_CASE("criterion 10: end-to-end determinism") {
    const DenoiserModel& model = model32();
    RunConfig cfg = RunConfig::from_map(preset("paper-default"));
    cfg.arp_enabled = false;
    cfg.seed = 31337;
    const SamplePair& pair = eval_pairs()[1];
    RunRecord a = generate(pair.condition, pair.prompt, model, sched(), cfg);
    RunRecord b = generate(pair.condition, pair.prompt, model, sched(), cfg);
    bool ok = images_equal(a.output, b.output) && a.denoiser_calls == b.denoiser_calls &&
              a.timestep_log == b.timestep_log;
    report(10, "end-to-end determinism", ok,
           fmt("outputs %s, %ld denoiser calls each",
               images_equal(a.output, b.output) ? "byte-identical" : "DIFFER",
               a.denoiser_calls));
    CHECK(ok);
}
