#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace richctl {

// H x W x C real-valued array flowing through the diffusion process.
// `t` tags the diffusion timestep the data currently lives at (0 = clean).
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    int t = 0;
    std::vector<float> data;  // row-major, channel-interleaved: (y * w + x) * c + ch

    Image() = default;
    Image(int h_, int w_, int c_, float fill = 0.f, int t_ = 0)
        : h(h_), w(w_), c(c_), t(t_), data(size_t(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return data[(size_t(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return data[(size_t(y) * w + x) * c + ch]; }

    size_t size() const { return data.size(); }

    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

    bool finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Deterministic seed mixing (splitmix64); used to derive per-purpose seed streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}
    float gaussian() { return normal_(gen_); }
    float uniform() { return uniform_(gen_); }
    // uniform integer in [lo, hi]
    int uniform_int(int lo, int hi) {
        return lo + int(gen_() % uint64_t(hi - lo + 1));
    }
    uint64_t next_u64() { return gen_(); }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<float> normal_{0.f, 1.f};
    std::uniform_real_distribution<float> uniform_{0.f, 1.f};
};

// Standard-normal field with the given shape; both forward diffusion and the
// perturbation kernel draw through this helper so shared seeds are bit-equal.
inline Image gaussian_image(int h, int w, int c, uint64_t seed) {
    Image out(h, w, c);
    Rng rng(seed);
    for (auto& v : out.data) v = rng.gaussian();
    return out;
}

inline float luminance(const Image& img, int y, int x) {
    float s = 0.f;
    for (int ch = 0; ch < img.c; ++ch) s += img.at(y, x, ch);
    return s / float(img.c);
}

// Pixel space [0,1]  <->  latent space [-1,1].
Image to_latent(const Image& pixels);
Image from_latent(const Image& latent);

// Portable pixmap I/O (PPM for c==3, PGM for c==1), values clamped to [0,1].
void write_pnm(const Image& img, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

// FNV-1a over arbitrary bytes; used for fixture keys and pinned checksums.
uint64_t fnv1a(const void* bytes, size_t n, uint64_t seed = 14695981039346656037ULL);
uint64_t fnv1a(const std::string& s);
uint64_t fnv1a_file(const std::filesystem::path& path);

}  // namespace richctl
