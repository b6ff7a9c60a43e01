#include "richctl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

namespace richctl {

PcaProjection pca_first_component(const std::vector<nn::Mat>& features) {
    if (features.empty()) throw std::invalid_argument("pca: no feature maps");
    const Eigen::Index f_dim = features[0].cols();
    Eigen::Index total = 0;
    for (const auto& m : features) {
        if (m.cols() != f_dim) throw std::invalid_argument("pca: inconsistent feature dim");
        total += m.rows();
    }
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(f_dim);
    for (const auto& m : features) mean += m.cast<double>().colwise().sum().transpose();
    mean /= double(total);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(f_dim, f_dim);
    for (const auto& m : features) {
        Eigen::MatrixXd c = m.cast<double>().rowwise() - mean.transpose();
        cov.noalias() += c.transpose() * c;
    }
    cov /= double(total);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd comp = es.eigenvectors().col(f_dim - 1);  // largest eigenvalue last
    Eigen::Index imax;
    comp.cwiseAbs().maxCoeff(&imax);
    if (comp[imax] < 0) comp = -comp;

    PcaProjection out;
    out.component = comp;
    for (const auto& m : features) {
        Eigen::MatrixXd c = m.cast<double>().rowwise() - mean.transpose();
        out.projections.push_back(c * comp);
    }
    return out;
}

namespace {
double sample_std(const std::vector<double>& s) {
    double mean = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
    double var = 0;
    for (double v : s) var += (v - mean) * (v - mean);
    return std::sqrt(var / double(s.size()));
}

std::vector<double> kde_on_grid(const std::vector<double>& samples, double lo, double hi,
                                int n_grid) {
    const double n = double(samples.size());
    double bw = sample_std(samples) * std::pow(n, -0.2);  // Scott's rule, 1-D
    bw = std::max(bw, 1e-9 * std::max(hi - lo, 1.0));     // guard degenerate samples
    std::vector<double> dens(size_t(n_grid), 0.0);
    const double inv2h2 = 0.5 / (bw * bw);
    for (int i = 0; i < n_grid; ++i) {
        double x = lo + (hi - lo) * double(i) / double(n_grid - 1);
        double acc = 0;
        for (double s : samples) {
            double d = x - s;
            acc += std::exp(-d * d * inv2h2);
        }
        dens[size_t(i)] = acc;
    }
    return dens;
}
}  // namespace

double kde_kl(const std::vector<double>& p_samples, const std::vector<double>& q_samples,
              int grid_points) {
    if (p_samples.empty() || q_samples.empty())
        throw std::invalid_argument("kde_kl: empty sample set");
    auto [pmin, pmax] = std::minmax_element(p_samples.begin(), p_samples.end());
    auto [qmin, qmax] = std::minmax_element(q_samples.begin(), q_samples.end());
    double lo = std::min(*pmin, *qmin), hi = std::max(*pmax, *qmax);
    if (hi <= lo) hi = lo + 1e-9;

    std::vector<double> p = kde_on_grid(p_samples, lo, hi, grid_points);
    std::vector<double> q = kde_on_grid(q_samples, lo, hi, grid_points);
    double ps = std::accumulate(p.begin(), p.end(), 0.0);
    double qs = std::accumulate(q.begin(), q.end(), 0.0);
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double pi = p[i] / ps;
        double qi = std::max(q[i] / qs, 1e-12);
        if (pi > 0) kl += pi * std::log(pi / qi);
    }
    return kl;
}

Eigen::MatrixXd self_similarity(const Eigen::MatrixXd& keys) {
    const Eigen::Index n = keys.rows();
    Eigen::VectorXd norms = keys.rowwise().norm();
    Eigen::MatrixXd gram = keys * keys.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double d = std::max(norms[i] * norms[j], 1e-12);
            gram(i, j) /= d;
        }
    return gram;
}

Eigen::MatrixXd patch_descriptors(const Image& img, int patch) {
    const int py = img.h / patch, px = img.w / patch;
    if (py < 1 || px < 1) throw std::invalid_argument("patch_descriptors: image too small");
    constexpr int kBins = 8;
    const int dim = kBins + img.c + 1;
    Eigen::MatrixXd desc = Eigen::MatrixXd::Zero(py * px, dim);
    for (int by = 0; by < py; ++by)
        for (int bx = 0; bx < px; ++bx) {
            Eigen::VectorXd d = Eigen::VectorXd::Zero(dim);
            double lum_sum = 0, lum_sq = 0;
            int count = 0;
            for (int y = by * patch; y < (by + 1) * patch; ++y)
                for (int x = bx * patch; x < (bx + 1) * patch; ++x) {
                    // central-difference luminance gradient, clamped borders
                    int ym = std::max(y - 1, 0), yp = std::min(y + 1, img.h - 1);
                    int xm = std::max(x - 1, 0), xp = std::min(x + 1, img.w - 1);
                    double gx = luminance(img, y, xp) - luminance(img, y, xm);
                    double gy = luminance(img, yp, x) - luminance(img, ym, x);
                    double mag = std::sqrt(gx * gx + gy * gy);
                    if (mag > 1e-9) {
                        double ang = std::atan2(gy, gx);  // [-pi, pi]
                        int bin = std::min(kBins - 1,
                                           int((ang + M_PI) / (2 * M_PI) * kBins));
                        d[bin] += mag;
                    }
                    for (int ch = 0; ch < img.c; ++ch) d[kBins + ch] += img.at(y, x, ch);
                    double lum = luminance(img, y, x);
                    lum_sum += lum;
                    lum_sq += lum * lum;
                    ++count;
                }
            for (int ch = 0; ch < img.c; ++ch) d[kBins + ch] /= double(count);
            double lm = lum_sum / count;
            d[dim - 1] = std::sqrt(std::max(lum_sq / count - lm * lm, 0.0));
            desc.row(by * px + bx) = d;
        }
    return desc;
}

double struct_distance(const Image& a, const Image& b, const DescriptorExtractor& extractor) {
    Eigen::MatrixXd sa = self_similarity(extractor(a));
    Eigen::MatrixXd sb = self_similarity(extractor(b));
    if (sa.rows() != sb.rows())
        throw std::invalid_argument("struct_distance: descriptor count mismatch");
    return (sa - sb).norm();
}

double struct_distance(const Image& a, const Image& b) {
    return struct_distance(a, b, [](const Image& i) { return patch_descriptors(i); });
}

namespace {
using Cplx = std::complex<double>;
// direct 1-D DFT; image sides are small enough that O(n^2) is fine
std::vector<Cplx> dft1d(const std::vector<Cplx>& in) {
    const size_t n = in.size();
    std::vector<Cplx> out(n);
    for (size_t k = 0; k < n; ++k) {
        Cplx acc = 0;
        for (size_t j = 0; j < n; ++j)
            acc += in[j] * std::polar(1.0, -2.0 * M_PI * double(k * j) / double(n));
        out[k] = acc;
    }
    return out;
}
}  // namespace

Eigen::MatrixXd dft_magnitude(const Image& img) {
    const int h = img.h, w = img.w;
    std::vector<std::vector<Cplx>> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) {
        std::vector<Cplx> row(static_cast<size_t>(w));
        for (int x = 0; x < w; ++x) row[size_t(x)] = luminance(img, y, x);
        rows[size_t(y)] = dft1d(row);
    }
    Eigen::MatrixXd mag(h, w);
    std::vector<Cplx> col(static_cast<size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[size_t(y)] = rows[size_t(y)][size_t(x)];
        auto out = dft1d(col);
        for (int y = 0; y < h; ++y) {
            // zero-frequency centered
            int cy = (y + h / 2) % h, cx = (x + w / 2) % w;
            mag(cy, cx) = std::abs(out[size_t(y)]);
        }
    }
    return mag;
}

double dft_gap(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("dft_gap: size mismatch");
    return (dft_magnitude(a) - dft_magnitude(b)).norm();
}

double hf_ratio(const Image& img) {
    Eigen::MatrixXd mag = dft_magnitude(img);
    const int h = img.h, w = img.w;
    const double radius = double(h) / 6.0;
    const double cy = double(h / 2), cx = double(w / 2);
    double total = 0, outside = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double e = mag(y, x) * mag(y, x);
            total += e;
            double dy = y - cy, dx = x - cx;
            if (std::sqrt(dy * dy + dx * dx) > radius) outside += e;
        }
    return total > 0 ? outside / total : 0.0;
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&v](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * double(i + j) + 1.0;  // tie-averaged rank
        for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("spearman: need matching sample sizes >= 2");
    auto rx = ranks(x), ry = ranks(y);
    const double n = double(x.size());
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double num = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    double den = std::sqrt(dx * dy);
    return den > 0 ? num / den : 0.0;
}

std::vector<double> GapCurve::mean_over_kinds(double GapPoint::* metric,
                                              const std::vector<int>& grid) const {
    std::vector<double> out;
    for (int t : grid) {
        double acc = 0;
        int n = 0;
        for (const auto& p : points)
            if (p.timestep == t) {
                acc += p.*metric;
                ++n;
            }
        out.push_back(n ? acc / n : 0.0);
    }
    return out;
}

std::vector<double> GapCurve::kind_curve(double GapPoint::* metric, ConditionKind kind,
                                         const std::vector<int>& grid) const {
    std::vector<double> out;
    for (int t : grid)
        for (const auto& p : points)
            if (p.timestep == t && p.kind == kind) out.push_back(p.*metric);
    return out;
}

GapCurve gap_curves(const std::vector<SamplePair>& dataset, const DenoiserModel& model,
                    const NoiseSchedule& sched, const std::vector<int>& timestep_grid,
                    const GapCurveConfig& cfg) {
    GapCurve curve;
    const std::set<std::string> taps = {cfg.tap_layer};
    const std::vector<ConditionKind> kinds = {ConditionKind::Edge, ConditionKind::Silhouette,
                                              ConditionKind::Mask};
    for (int t : timestep_grid) {
        for (ConditionKind kind : kinds) {
            std::vector<nn::Mat> cond_feats, nat_feats;
            double ss_acc = 0, dft_acc = 0, hf_nat = 0, hf_cond = 0;
            int n_pairs = 0;
            for (size_t i = 0; i < dataset.size(); ++i) {
                const auto& sp = dataset[i];
                if (sp.condition_kind != kind) continue;
                uint64_t s_nat = mix_seed(cfg.seed, 2 * i);
                uint64_t s_cond = mix_seed(cfg.seed, 2 * i + 1);
                Image nat_lat = to_latent(sp.natural);
                Image cond_lat = to_latent(sp.condition);
                PromptEmbedding pe = PromptEmbedding::encode(sp.prompt);
                Image nat_t = forward_diffuse(sched, nat_lat, t, s_nat);
                Image cond_t = forward_diffuse(sched, cond_lat, t, s_cond);
                TapBundle tb_nat = model.denoise(nat_t, t, pe, taps);
                TapBundle tb_cond = model.denoise(cond_t, t, pe, taps);
                nat_feats.push_back(tb_nat.features.at(cfg.tap_layer));
                cond_feats.push_back(tb_cond.features.at(cfg.tap_layer));

                Image nat_hat = from_latent(estimate_clean(sched, nat_t, tb_nat.eps_pred, t));
                Image cond_hat = from_latent(estimate_clean(sched, cond_t, tb_cond.eps_pred, t));
                ss_acc += struct_distance(sp.condition, cond_hat);
                dft_acc += dft_gap(nat_hat, cond_hat);
                hf_nat += hf_ratio(nat_hat);
                hf_cond += hf_ratio(cond_hat);
                ++n_pairs;
            }
            if (n_pairs == 0) continue;
            // combined PCA, then pooled per-domain projections
            std::vector<nn::Mat> all = cond_feats;
            all.insert(all.end(), nat_feats.begin(), nat_feats.end());
            PcaProjection proj = pca_first_component(all);
            std::vector<double> p_samples, q_samples;
            for (size_t i = 0; i < cond_feats.size(); ++i)
                for (Eigen::Index j = 0; j < proj.projections[i].size(); ++j)
                    p_samples.push_back(proj.projections[i][j]);
            for (size_t i = cond_feats.size(); i < all.size(); ++i)
                for (Eigen::Index j = 0; j < proj.projections[i].size(); ++j)
                    q_samples.push_back(proj.projections[i][j]);

            GapPoint pt;
            pt.timestep = t;
            pt.kind = kind;
            pt.kl = kde_kl(p_samples, q_samples);
            pt.selfsim_l2 = ss_acc / n_pairs;
            pt.dft_l2 = dft_acc / n_pairs;
            pt.hf_ratio_natural = hf_nat / n_pairs;
            pt.hf_ratio_condition = hf_cond / n_pairs;
            curve.points.push_back(pt);
        }
    }
    return curve;
}

void write_gap_csv(const GapCurve& curve, const std::filesystem::path& path) {
    std::ofstream f(path);
    f << "timestep,condition_kind,kl,selfsim_l2,dft_l2,hf_ratio_nat,hf_ratio_cond\n";
    for (const auto& p : curve.points)
        f << p.timestep << ',' << to_string(p.kind) << ',' << p.kl << ',' << p.selfsim_l2 << ','
          << p.dft_l2 << ',' << p.hf_ratio_natural << ',' << p.hf_ratio_condition << "\n";
}

void write_gap_summary_json(const GapCurve& curve, const std::vector<int>& grid,
                            const std::filesystem::path& path) {
    std::vector<double> ts(grid.begin(), grid.end());
    nlohmann::json j;
    j["timesteps"] = grid;
    j["spearman_kl_vs_t"] = spearman(ts, curve.mean_over_kinds(&GapPoint::kl, grid));
    j["spearman_selfsim_vs_t"] = spearman(ts, curve.mean_over_kinds(&GapPoint::selfsim_l2, grid));
    j["spearman_dft_vs_t"] = spearman(ts, curve.mean_over_kinds(&GapPoint::dft_l2, grid));
    auto edge_hf = curve.kind_curve(&GapPoint::hf_ratio_condition, ConditionKind::Edge, grid);
    auto mask_hf = curve.kind_curve(&GapPoint::hf_ratio_condition, ConditionKind::Mask, grid);
    if (!edge_hf.empty() && edge_hf.size() == mask_hf.size()) {
        j["hf_gap_low_t"] = std::abs(edge_hf.front() - mask_hf.front());
        j["hf_gap_high_t"] = std::abs(edge_hf.back() - mask_hf.back());
    }
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

}  // namespace richctl
