#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "richctl/image.hpp"
#include "richctl/nn.hpp"
#include "richctl/scheduler.hpp"

namespace richctl {

// Fixed-length bag-of-words embedding over hashed tokens; deterministic in the
// prompt string. Stand-in for a text encoder.
struct PromptEmbedding {
    static constexpr int kDim = 32;
    nn::Vec vector;

    static PromptEmbedding encode(const std::string& prompt);
};

// Captured intermediates from one denoiser call.
struct TapBundle {
    std::map<std::string, nn::Mat> features;    // layer id -> (HW) x c, pre-attention
    std::map<std::string, nn::Mat> attentions;  // layer id -> (HW) x (HW), post-softmax
    Image eps_pred;
};

// Per-layer replacement values applied inside the denoiser forward pass.
// `f` replaces the pre-attention feature; `A` replaces the post-softmax map;
// `f_app` routes the feature through attention-weighted appearance transfer
// (see appearance.hpp) after any structure replacement.
struct LayerOverride {
    std::optional<nn::Mat> f;
    std::optional<nn::Mat> A;
    std::optional<nn::Mat> f_app;
};
using InjectionOverrides = std::map<std::string, LayerOverride>;

struct LayerInfo {
    int h, w, ch;
};

struct DenoiserConfig {
    int img_size = 32;
    int channels = 3;
    int base_width = 32;  // widths are (base, 2*base, 4*base)
    int T = 1000;
};

struct SamplePair;  // dataset.hpp

struct TrainConfig {
    int epochs = 5;
    int batch_size = 8;
    nn::AdamConfig adam;
    uint64_t seed = 0;
    std::vector<double>* loss_log = nullptr;  // per-epoch mean loss, optional
};

// Encoder-decoder epsilon-prediction network with a self-attention block at
// each decoder resolution. Decoder conv-out features are the tap registry:
// ids "d0" (coarse), "d1", "d2" (full resolution).
class DenoiserModel {
public:
    explicit DenoiserModel(const DenoiserConfig& cfg, uint64_t init_seed = 1234);

    const DenoiserConfig& config() const { return cfg_; }
    std::map<std::string, LayerInfo> layer_registry() const;
    static const std::vector<std::string>& layer_ids();

    // Single forward pass. Latent x must match the configured shape.
    TapBundle denoise(const Image& x, int t, const PromptEmbedding& prompt,
                      const std::set<std::string>& taps_requested,
                      const InjectionOverrides* overrides = nullptr) const;

    // Epsilon-prediction training on the natural images of `dataset`.
    // Throws on non-finite loss. Deterministic given the seed.
    void train(const std::vector<SamplePair>& dataset, const NoiseSchedule& sched,
               const TrainConfig& tc);

    void save(const std::filesystem::path& path) const;
    static DenoiserModel load(const std::filesystem::path& path);

    long call_count() const { return call_count_.v.load(); }
    void reset_call_count() const { call_count_.v.store(0); }

    // Attention projections of a decoder layer, reused by appearance transfer.
    const nn::Attention& attention(const std::string& layer_id) const;

private:
    struct Activations;
    nn::Mat run_forward(const Image& x, int t, const PromptEmbedding& prompt,
                        const InjectionOverrides* overrides, TapBundle* taps,
                        const std::set<std::string>* taps_requested, Activations* acts) const;
    void backward(Activations& acts, const nn::Mat& deps);
    std::vector<nn::Param*> params();

    // movable wrapper so the model can be returned by value
    struct CallCounter {
        std::atomic<long> v{0};
        CallCounter() = default;
        CallCounter(const CallCounter& o) : v(o.v.load()) {}
        CallCounter& operator=(const CallCounter& o) {
            v.store(o.v.load());
            return *this;
        }
    };

    DenoiserConfig cfg_;
    nn::Conv3x3 conv_e0_, conv_e1_, conv_e2_, conv_m_;
    nn::Conv3x3 conv_d0_, conv_u1_, conv_d1_, conv_u2_, conv_d2_, conv_out_;
    nn::Param cond_e0_, cond_e1_, cond_e2_, cond_m_;  // (temb+pemb) -> channel bias
    nn::Attention attn_d0_, attn_d1_, attn_d2_;
    mutable CallCounter call_count_;
};

// Sinusoidal embedding of normalized time, dim values.
nn::Vec time_embedding(double t_norm, int dim = 16);

}  // namespace richctl
