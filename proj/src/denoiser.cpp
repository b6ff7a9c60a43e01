#include "richctl/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "richctl/appearance.hpp"
#include "richctl/dataset.hpp"

namespace richctl {

namespace {

nn::Mat image_to_mat(const Image& img) {
    nn::Mat m(img.h * img.w, img.c);
    for (int i = 0; i < img.h * img.w; ++i)
        for (int ch = 0; ch < img.c; ++ch) m(i, ch) = img.data[size_t(i) * img.c + ch];
    return m;
}

Image mat_to_image(const nn::Mat& m, int h, int w, int t) {
    Image img(h, w, int(m.cols()), 0.f, t);
    for (int i = 0; i < h * w; ++i)
        for (int ch = 0; ch < m.cols(); ++ch) img.data[size_t(i) * m.cols() + ch] = m(i, ch);
    return img;
}

std::string token_lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

PromptEmbedding PromptEmbedding::encode(const std::string& prompt) {
    PromptEmbedding pe;
    pe.vector = nn::Vec::Zero(kDim);
    std::string token;
    auto flush = [&]() {
        if (token.empty()) return;
        uint64_t h = fnv1a(token_lower(token));
        int idx = int(h % uint64_t(kDim));
        float sign = ((h >> 32) & 1) ? 1.f : -1.f;
        pe.vector[idx] += sign;
        token.clear();
    };
    for (char c : prompt) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            token.push_back(c);
        else
            flush();
    }
    flush();
    float norm = pe.vector.norm();
    if (norm > 0.f) pe.vector /= norm;
    return pe;
}

nn::Vec time_embedding(double t_norm, int dim) {
    nn::Vec v(dim);
    const int half = dim / 2;
    const double pos = t_norm * 1000.0;
    for (int k = 0; k < half; ++k) {
        double freq = std::pow(10000.0, -double(k) / double(half));
        v[2 * k] = float(std::sin(pos * freq));
        v[2 * k + 1] = float(std::cos(pos * freq));
    }
    return v;
}

const std::vector<std::string>& DenoiserModel::layer_ids() {
    static const std::vector<std::string> ids = {"d0", "d1", "d2"};
    return ids;
}

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg.img_size < 16 || cfg.img_size % 4 != 0)
        throw std::invalid_argument("denoiser: img_size must be >= 16 and divisible by 4");
    const int b = cfg.base_width;
    nn::InitRng rng(init_seed);
    conv_e0_.init(cfg.channels, b, rng);
    conv_e1_.init(b, 2 * b, rng);
    conv_e2_.init(2 * b, 4 * b, rng);
    conv_m_.init(4 * b, 4 * b, rng);
    conv_d0_.init(4 * b, 4 * b, rng);
    conv_u1_.init(4 * b, 2 * b, rng);
    conv_d1_.init(2 * b, 2 * b, rng);
    conv_u2_.init(2 * b, b, rng);
    conv_d2_.init(b, b, rng);
    conv_out_.init(b, cfg.channels, rng, /*zero=*/true);  // eps_pred == 0 at init
    const int cdim = 16 + PromptEmbedding::kDim;
    cond_e0_.init(cdim, b);
    cond_e1_.init(cdim, 2 * b);
    cond_e2_.init(cdim, 4 * b);
    cond_m_.init(cdim, 4 * b);
    rng.fill_he(cond_e0_.w, cdim);
    rng.fill_he(cond_e1_.w, cdim);
    rng.fill_he(cond_e2_.w, cdim);
    rng.fill_he(cond_m_.w, cdim);
    attn_d0_.init(4 * b, rng);
    attn_d1_.init(2 * b, rng);
    attn_d2_.init(b, rng);
}

std::map<std::string, LayerInfo> DenoiserModel::layer_registry() const {
    const int s = cfg_.img_size, b = cfg_.base_width;
    return {{"d0", {s / 4, s / 4, 4 * b}},
            {"d1", {s / 2, s / 2, 2 * b}},
            {"d2", {s, s, b}}};
}

const nn::Attention& DenoiserModel::attention(const std::string& layer_id) const {
    if (layer_id == "d0") return attn_d0_;
    if (layer_id == "d1") return attn_d1_;
    if (layer_id == "d2") return attn_d2_;
    throw std::invalid_argument("unknown layer id: " + layer_id);
}

struct DenoiserModel::Activations {
    nn::Vec cond;
    nn::Mat pat_e0, pat_e1, pat_e2, pat_m, pat_d0, pat_u1, pat_d1, pat_u2, pat_d2, pat_out;
    nn::Mat c0b, a0, c1b, a1, c2b, cmb;
    nn::Mat y0, y1, y2;  // attention outputs (pre-SiLU)
    nn::Attention::Cache at0, at1, at2;
};

nn::Mat DenoiserModel::run_forward(const Image& x, int t, const PromptEmbedding& prompt,
                                   const InjectionOverrides* overrides, TapBundle* taps,
                                   const std::set<std::string>* taps_requested,
                                   Activations* acts) const {
    const int s = cfg_.img_size;
    if (x.h != s || x.w != s || x.c != cfg_.channels)
        throw std::invalid_argument("denoise: latent shape mismatch");
    if (t < 0 || t > cfg_.T) throw std::invalid_argument("denoise: timestep out of range");
    if (overrides) {
        auto reg = layer_registry();
        for (const auto& [id, ov] : *overrides) {
            auto it = reg.find(id);
            if (it == reg.end()) throw std::invalid_argument("override names unknown layer " + id);
            const int n = it->second.h * it->second.w, ch = it->second.ch;
            if (ov.f && (ov.f->rows() != n || ov.f->cols() != ch))
                throw std::invalid_argument("feature override shape mismatch at layer " + id);
            if (ov.A && (ov.A->rows() != n || ov.A->cols() != n))
                throw std::invalid_argument("attention override shape mismatch at layer " + id);
            if (ov.f_app && (ov.f_app->rows() != n || ov.f_app->cols() != ch))
                throw std::invalid_argument("appearance override shape mismatch at layer " + id);
        }
    }
    if (taps_requested) {
        for (const auto& id : *taps_requested)
            if (std::find(layer_ids().begin(), layer_ids().end(), id) == layer_ids().end())
                throw std::invalid_argument("tap request names unknown layer " + id);
    }
    call_count_.v.fetch_add(1, std::memory_order_relaxed);

    nn::Vec cond(16 + PromptEmbedding::kDim);
    cond << time_embedding(to_normalized(t, cfg_.T), 16), prompt.vector;
    auto bias = [&cond](const nn::Param& p) -> Eigen::RowVectorXf {
        return cond.transpose() * p.w;
    };

    const bool train_mode = acts != nullptr;
    Activations local;
    Activations& A = train_mode ? *acts : local;
    if (train_mode) A.cond = cond;
    nn::Mat* keep = nullptr;  // patch retention only in train mode

    nn::Mat xm = image_to_mat(x);
    // encoder
    keep = train_mode ? &A.pat_e0 : nullptr;
    nn::Mat c0 = conv_e0_.forward(xm, s, s, keep);
    c0.rowwise() += bias(cond_e0_);
    if (train_mode) A.c0b = c0;
    nn::Mat a0 = nn::silu_forward(c0);
    if (train_mode) A.a0 = a0;

    nn::Mat p1 = nn::avgpool2(a0, s, s);
    const int s2 = s / 2;
    keep = train_mode ? &A.pat_e1 : nullptr;
    nn::Mat c1 = conv_e1_.forward(p1, s2, s2, keep);
    c1.rowwise() += bias(cond_e1_);
    if (train_mode) A.c1b = c1;
    nn::Mat a1 = nn::silu_forward(c1);
    if (train_mode) A.a1 = a1;

    nn::Mat p2 = nn::avgpool2(a1, s2, s2);
    const int s4 = s / 4;
    keep = train_mode ? &A.pat_e2 : nullptr;
    nn::Mat c2 = conv_e2_.forward(p2, s4, s4, keep);
    c2.rowwise() += bias(cond_e2_);
    if (train_mode) A.c2b = c2;
    nn::Mat a2 = nn::silu_forward(c2);

    keep = train_mode ? &A.pat_m : nullptr;
    nn::Mat cm = conv_m_.forward(a2, s4, s4, keep);
    cm.rowwise() += bias(cond_m_);
    if (train_mode) A.cmb = cm;
    nn::Mat am = nn::silu_forward(cm);

    // decoder layer helper: conv-out feature -> overrides -> attention
    auto decoder_layer = [&](const std::string& id, nn::Mat f, const nn::Attention& attn,
                             nn::Attention::Cache* cache) -> nn::Mat {
        const LayerOverride* ov = nullptr;
        if (overrides) {
            auto it = overrides->find(id);
            if (it != overrides->end()) ov = &it->second;
        }
        if (ov && ov->f) f = *ov->f;
        // whiten before re-coloring so repeated application cannot compound scale
        if (ov && ov->f_app)
            f = transfer(spatial_norm(f), *ov->f_app, attn.wq.w, attn.wk.w, attn.ch);
        const bool want_tap = taps_requested && taps_requested->count(id) > 0;
        if (want_tap) taps->features[id] = f;
        nn::Attention::Cache tmp;
        nn::Attention::Cache* cc = cache ? cache : (want_tap ? &tmp : nullptr);
        nn::Mat y = attn.forward(f, ov && ov->A ? &*ov->A : nullptr, cc);
        if (want_tap) taps->attentions[id] = cc->A;
        return y;
    };

    keep = train_mode ? &A.pat_d0 : nullptr;
    nn::Mat f0 = conv_d0_.forward(am, s4, s4, keep);
    nn::Mat y0 = decoder_layer("d0", std::move(f0), attn_d0_, train_mode ? &A.at0 : nullptr);
    if (train_mode) A.y0 = y0;
    nn::Mat g0 = nn::silu_forward(y0);

    nn::Mat up0 = nn::upsample2(g0, s4, s4);
    keep = train_mode ? &A.pat_u1 : nullptr;
    nn::Mat u1 = conv_u1_.forward(up0, s2, s2, keep);
    u1 += a1;  // skip connection

    keep = train_mode ? &A.pat_d1 : nullptr;
    nn::Mat f1 = conv_d1_.forward(u1, s2, s2, keep);
    nn::Mat y1 = decoder_layer("d1", std::move(f1), attn_d1_, train_mode ? &A.at1 : nullptr);
    if (train_mode) A.y1 = y1;
    nn::Mat g1 = nn::silu_forward(y1);

    nn::Mat up1 = nn::upsample2(g1, s2, s2);
    keep = train_mode ? &A.pat_u2 : nullptr;
    nn::Mat u2 = conv_u2_.forward(up1, s, s, keep);
    u2 += a0;  // skip connection

    keep = train_mode ? &A.pat_d2 : nullptr;
    nn::Mat f2 = conv_d2_.forward(u2, s, s, keep);
    nn::Mat y2 = decoder_layer("d2", std::move(f2), attn_d2_, train_mode ? &A.at2 : nullptr);
    if (train_mode) A.y2 = y2;
    nn::Mat g2 = nn::silu_forward(y2);

    keep = train_mode ? &A.pat_out : nullptr;
    return conv_out_.forward(g2, s, s, keep);
}

TapBundle DenoiserModel::denoise(const Image& x, int t, const PromptEmbedding& prompt,
                                 const std::set<std::string>& taps_requested,
                                 const InjectionOverrides* overrides) const {
    TapBundle taps;
    nn::Mat eps = run_forward(x, t, prompt, overrides, &taps, &taps_requested, nullptr);
    taps.eps_pred = mat_to_image(eps, x.h, x.w, t);
    return taps;
}

void DenoiserModel::backward(Activations& A, const nn::Mat& deps) {
    const int s = cfg_.img_size, s2 = s / 2, s4 = s / 4;

    nn::Mat dg2;
    conv_out_.backward(A.pat_out, deps, s, s, &dg2);
    nn::Mat dy2 = nn::silu_backward(A.y2, dg2);
    nn::Mat df2 = attn_d2_.backward(A.at2, dy2);
    nn::Mat du2;
    conv_d2_.backward(A.pat_d2, df2, s, s, &du2);
    nn::Mat da0_skip = du2;  // skip into u2
    nn::Mat dup1;
    conv_u2_.backward(A.pat_u2, du2, s, s, &dup1);
    nn::Mat dg1 = nn::upsample2_backward(dup1, s2, s2);

    nn::Mat dy1 = nn::silu_backward(A.y1, dg1);
    nn::Mat df1 = attn_d1_.backward(A.at1, dy1);
    nn::Mat du1;
    conv_d1_.backward(A.pat_d1, df1, s2, s2, &du1);
    nn::Mat da1_skip = du1;
    nn::Mat dup0;
    conv_u1_.backward(A.pat_u1, du1, s2, s2, &dup0);
    nn::Mat dg0 = nn::upsample2_backward(dup0, s4, s4);

    nn::Mat dy0 = nn::silu_backward(A.y0, dg0);
    nn::Mat df0 = attn_d0_.backward(A.at0, dy0);
    nn::Mat dam;
    conv_d0_.backward(A.pat_d0, df0, s4, s4, &dam);

    nn::Mat dcm = nn::silu_backward(A.cmb, dam);
    cond_m_.g.noalias() += A.cond * dcm.colwise().sum();
    nn::Mat da2;
    conv_m_.backward(A.pat_m, dcm, s4, s4, &da2);

    nn::Mat dc2 = nn::silu_backward(A.c2b, da2);
    cond_e2_.g.noalias() += A.cond * dc2.colwise().sum();
    nn::Mat dp2;
    conv_e2_.backward(A.pat_e2, dc2, s4, s4, &dp2);
    nn::Mat da1 = nn::avgpool2_backward(dp2, s2, s2);
    da1 += da1_skip;

    nn::Mat dc1 = nn::silu_backward(A.c1b, da1);
    cond_e1_.g.noalias() += A.cond * dc1.colwise().sum();
    nn::Mat dp1;
    conv_e1_.backward(A.pat_e1, dc1, s2, s2, &dp1);
    nn::Mat da0 = nn::avgpool2_backward(dp1, s, s);
    da0 += da0_skip;

    nn::Mat dc0 = nn::silu_backward(A.c0b, da0);
    cond_e0_.g.noalias() += A.cond * dc0.colwise().sum();
    conv_e0_.backward(A.pat_e0, dc0, s, s, nullptr);
}

std::vector<nn::Param*> DenoiserModel::params() {
    return {&conv_e0_.w, &conv_e0_.b, &conv_e1_.w, &conv_e1_.b, &conv_e2_.w, &conv_e2_.b,
            &conv_m_.w,  &conv_m_.b,  &conv_d0_.w, &conv_d0_.b, &conv_u1_.w, &conv_u1_.b,
            &conv_d1_.w, &conv_d1_.b, &conv_u2_.w, &conv_u2_.b, &conv_d2_.w, &conv_d2_.b,
            &conv_out_.w, &conv_out_.b, &cond_e0_, &cond_e1_, &cond_e2_, &cond_m_,
            &attn_d0_.wq, &attn_d0_.wk, &attn_d0_.wv, &attn_d1_.wq, &attn_d1_.wk, &attn_d1_.wv,
            &attn_d2_.wq, &attn_d2_.wk, &attn_d2_.wv};
}

void DenoiserModel::train(const std::vector<SamplePair>& dataset, const NoiseSchedule& sched,
                          const TrainConfig& tc) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (sched.T != cfg_.T) throw std::invalid_argument("train: schedule T mismatch");

    // One training example per scene (natural image + prompt); condition kinds
    // share the same natural image.
    std::vector<std::pair<Image, PromptEmbedding>> examples;
    std::set<int> seen;
    for (const auto& sp : dataset) {
        if (!seen.insert(sp.scene_id).second) continue;
        examples.emplace_back(to_latent(sp.natural), PromptEmbedding::encode(sp.prompt));
    }

    Rng rng(mix_seed(tc.seed, 0x7261696eULL));
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    auto all = params();
    int adam_step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        // Fisher-Yates with our own stream for cross-platform determinism
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(rng.next_u64() % i)]);

        double epoch_loss = 0.0;
        long epoch_count = 0;
        for (size_t start = 0; start < order.size(); start += size_t(tc.batch_size)) {
            for (auto* p : all) p->zero_grad();
            size_t end = std::min(order.size(), start + size_t(tc.batch_size));
            double batch_loss = 0.0;
            for (size_t bi = start; bi < end; ++bi) {
                const auto& [x0, pe] = examples[order[bi]];
                int t = 1 + int(rng.next_u64() % uint64_t(sched.T));
                Image eps = gaussian_image(x0.h, x0.w, x0.c, rng.next_u64());
                Image xt = forward_diffuse(sched, x0, t, eps);
                Activations acts;
                nn::Mat pred = run_forward(xt, t, pe, nullptr, nullptr, nullptr, &acts);
                nn::Mat target = image_to_mat(eps);
                nn::Mat diff = pred - target;
                const float inv_n = 1.f / float(diff.size());
                batch_loss += double(diff.array().square().sum()) * inv_n;
                nn::Mat deps = (2.f * inv_n / float(end - start)) * diff;
                backward(acts, deps);
            }
            batch_loss /= double(end - start);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch));
            epoch_loss += batch_loss * double(end - start);
            epoch_count += long(end - start);
            ++adam_step;
            for (auto* p : all) nn::adam_update(*p, tc.adam, adam_step);
        }
        if (tc.loss_log) tc.loss_log->push_back(epoch_loss / double(epoch_count));
    }
}

namespace {
const std::vector<std::string>& param_names() {
    static const std::vector<std::string> names = {
        "conv_e0.w", "conv_e0.b", "conv_e1.w", "conv_e1.b", "conv_e2.w", "conv_e2.b",
        "conv_m.w",  "conv_m.b",  "conv_d0.w", "conv_d0.b", "conv_u1.w", "conv_u1.b",
        "conv_d1.w", "conv_d1.b", "conv_u2.w", "conv_u2.b", "conv_d2.w", "conv_d2.b",
        "conv_out.w", "conv_out.b", "cond_e0", "cond_e1", "cond_e2", "cond_m",
        "attn_d0.wq", "attn_d0.wk", "attn_d0.wv", "attn_d1.wq", "attn_d1.wk", "attn_d1.wv",
        "attn_d2.wq", "attn_d2.wk", "attn_d2.wv"};
    return names;
}
constexpr uint32_t kWeightsMagic = 0x52435731;  // "RCW1"
constexpr uint32_t kWeightsVersion = 1;
}  // namespace

void DenoiserModel::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save: cannot open " + path.string());
    auto put_u32 = [&f](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_i32 = [&put_u32](int32_t v) { put_u32(uint32_t(v)); };
    put_u32(kWeightsMagic);
    put_u32(kWeightsVersion);
    put_i32(cfg_.img_size);
    put_i32(cfg_.channels);
    put_i32(cfg_.base_width);
    put_i32(cfg_.T);
    auto all = const_cast<DenoiserModel*>(this)->params();
    const auto& names = param_names();
    put_u32(uint32_t(all.size()));
    for (size_t i = 0; i < all.size(); ++i) {
        put_u32(uint32_t(names[i].size()));
        f.write(names[i].data(), std::streamsize(names[i].size()));
        put_i32(int32_t(all[i]->w.rows()));
        put_i32(int32_t(all[i]->w.cols()));
        f.write(reinterpret_cast<const char*>(all[i]->w.data()),
                std::streamsize(sizeof(float)) * all[i]->w.size());
    }
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("load: cannot open " + path.string());
    auto get_u32 = [&f]() {
        uint32_t v;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    if (get_u32() != kWeightsMagic) throw std::invalid_argument("load: not a weights file");
    if (get_u32() != kWeightsVersion) throw std::invalid_argument("load: unsupported version");
    DenoiserConfig cfg;
    cfg.img_size = int(get_u32());
    cfg.channels = int(get_u32());
    cfg.base_width = int(get_u32());
    cfg.T = int(get_u32());
    DenoiserModel model(cfg);
    auto all = model.params();
    const auto& names = param_names();
    uint32_t count = get_u32();
    if (count != all.size()) throw std::invalid_argument("load: manifest size mismatch");
    for (size_t i = 0; i < all.size(); ++i) {
        uint32_t nlen = get_u32();
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        if (name != names[i]) throw std::invalid_argument("load: unexpected array " + name);
        int rows = int(get_u32()), cols = int(get_u32());
        if (rows != all[i]->w.rows() || cols != all[i]->w.cols())
            throw std::invalid_argument("load: shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(all[i]->w.data()),
               std::streamsize(sizeof(float)) * all[i]->w.size());
    }
    if (!f) throw std::invalid_argument("load: truncated weights file");
    return model;
}

}  // namespace richctl
