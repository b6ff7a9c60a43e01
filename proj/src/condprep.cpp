#include "richctl/condprep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace richctl {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
// Large finite stand-in for "no background site"; real squared distances stay
// far below this for any practical image size.
constexpr double kFar = 1e15;

// Felzenszwalb-Huttenlocher 1-D squared distance transform (lower envelope of
// parabolas).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
          std::vector<double>& z) {
    const int n = int(f.size());
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[size_t(q)] + double(q) * q) -
                    (f[size_t(v[size_t(k)])] + double(v[size_t(k)]) * v[size_t(k)])) /
                   (2.0 * q - 2.0 * v[size_t(k)]);
        while (s <= z[size_t(k)]) {
            --k;
            s = ((f[size_t(q)] + double(q) * q) -
                 (f[size_t(v[size_t(k)])] + double(v[size_t(k)]) * v[size_t(k)])) /
                (2.0 * q - 2.0 * v[size_t(k)]);
        }
        ++k;
        v[size_t(k)] = q;
        z[size_t(k)] = s;
        z[size_t(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[size_t(k) + 1] < q) ++k;
        int vk = v[size_t(k)];
        d[size_t(q)] = double(q - vk) * (q - vk) + f[size_t(vk)];
    }
}

}  // namespace

void PrepConfig::validate() const {
    if (!(w_min > 0 && w_min < w_max)) throw std::invalid_argument("prep: need 0 < w_min < w_max");
    if (kernel < 1) throw std::invalid_argument("prep: kernel must be >= 1");
    if (blur_radius < 1) throw std::invalid_argument("prep: blur radius must be >= 1");
}

Image to_grayscale(const Image& img) {
    if (img.c == 1) return img;
    Image gray(img.h, img.w, 1, 0.f, img.t);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            float v0 = img.at(y, x, 0);
            for (int ch = 1; ch < img.c; ++ch)
                if (std::abs(img.at(y, x, ch) - v0) > 1e-3f)
                    throw std::invalid_argument("condprep: input is not grayscale-convertible");
            gray.at(y, x, 0) = v0;
        }
    return gray;
}

Image binarize(const Image& gray, double threshold_frac) {
    Image out = gray;
    float mx = *std::max_element(gray.data.begin(), gray.data.end());
    float thr = float(threshold_frac) * mx;
    for (auto& v : out.data) v = (mx > 0.f && v >= thr) ? 1.f : 0.f;
    return out;
}

std::vector<double> distance_transform(const Image& binary) {
    const int h = binary.h, w = binary.w;
    std::vector<double> d(size_t(h) * w);
    // column pass
    {
        std::vector<double> f(static_cast<size_t>(h)), out(static_cast<size_t>(h)),
            z(static_cast<size_t>(h) + 1);
        std::vector<int> v(static_cast<size_t>(h));
        for (int x = 0; x < w; ++x) {
            for (int y = 0; y < h; ++y) f[size_t(y)] = binary.at(y, x, 0) > 0.5f ? kFar : 0.0;
            dt1d(f, out, v, z);
            for (int y = 0; y < h; ++y) d[size_t(y) * w + x] = out[size_t(y)];
        }
    }
    // row pass
    {
        std::vector<double> f(static_cast<size_t>(w)), out(static_cast<size_t>(w)),
            z(static_cast<size_t>(w) + 1);
        std::vector<int> v(static_cast<size_t>(w));
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) f[size_t(x)] = d[size_t(y) * w + x];
            dt1d(f, out, v, z);
            for (int x = 0; x < w; ++x) {
                double sq = out[size_t(x)];
                d[size_t(y) * w + x] = sq >= kFar / 2 ? kInf : std::sqrt(sq);
            }
        }
    }
    return d;
}

double min_line_width(const Image& binary, double percentile) {
    const int h = binary.h, w = binary.w;
    std::vector<double> d = distance_transform(binary);
    std::vector<double> ridge_widths;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dv = d[size_t(y) * w + x];
            if (dv <= 0.0) continue;
            if (dv == kInf) continue;  // no background anywhere: width undefined
            bool ridge = true;
            for (int dy = -1; dy <= 1 && ridge; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (d[size_t(ny) * w + nx] > dv) {
                        ridge = false;
                        break;
                    }
                }
            if (ridge) ridge_widths.push_back(2.0 * dv - 1.0);
        }
    if (ridge_widths.empty()) return kInf;
    std::sort(ridge_widths.begin(), ridge_widths.end());
    if (percentile <= 0.0) return ridge_widths.front();
    size_t idx = size_t(std::min(percentile, 1.0) * double(ridge_widths.size() - 1));
    return ridge_widths[idx];
}

namespace {
Image morph_square(const Image& binary, int radius, bool dilate) {
    // separable: horizontal max/min then vertical, SE side 2*radius+1
    const int h = binary.h, w = binary.w;
    Image tmp(h, w, 1), out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float v = dilate ? 0.f : 1.f;
            for (int dx = -radius; dx <= radius; ++dx) {
                int nx = x + dx;
                float s = (nx < 0 || nx >= w) ? 0.f : binary.at(y, nx, 0);
                v = dilate ? std::max(v, s) : std::min(v, s);
            }
            tmp.at(y, x, 0) = v;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float v = dilate ? 0.f : 1.f;
            for (int dy = -radius; dy <= radius; ++dy) {
                int ny = y + dy;
                float s = (ny < 0 || ny >= h) ? 0.f : tmp.at(ny, x, 0);
                v = dilate ? std::max(v, s) : std::min(v, s);
            }
            out.at(y, x, 0) = v;
        }
    return out;
}
}  // namespace

Image dilate_square(const Image& binary, int radius) { return morph_square(binary, radius, true); }
Image erode_square(const Image& binary, int radius) { return morph_square(binary, radius, false); }

Image gaussian_blur(const Image& img, double radius) {
    const double sigma = radius / 2.0;
    const int reach = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<float> kern(size_t(2 * reach) + 1);
    double sum = 0.0;
    for (int i = -reach; i <= reach; ++i) {
        double v = std::exp(-0.5 * double(i) * i / (sigma * sigma));
        kern[size_t(i + reach)] = float(v);
        sum += v;
    }
    for (auto& v : kern) v = float(v / sum);

    const int h = img.h, w = img.w, c = img.c;
    Image tmp(h, w, c), out(h, w, c, 0.f, img.t);
    // replicate borders so constants are preserved exactly
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                float acc = 0.f;
                for (int i = -reach; i <= reach; ++i) {
                    int nx = std::clamp(x + i, 0, w - 1);
                    acc += kern[size_t(i + reach)] * img.at(y, nx, ch);
                }
                tmp.at(y, x, ch) = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                float acc = 0.f;
                for (int i = -reach; i <= reach; ++i) {
                    int ny = std::clamp(y + i, 0, h - 1);
                    acc += kern[size_t(i + reach)] * tmp.at(ny, x, ch);
                }
                out.at(y, x, ch) = acc;
            }
    return out;
}

PrepResult preprocess(const Image& cond, const PrepConfig& cfg) {
    cfg.validate();
    Image gray = to_grayscale(cond);
    Image bin = binarize(gray, cfg.binarize_threshold);

    PrepResult res;
    res.measured_width = min_line_width(bin, cfg.width_percentile);

    Image morphed = bin;
    if (res.measured_width >= cfg.w_min && res.measured_width <= cfg.w_max) {
        morphed = dilate_square(bin, cfg.kernel);
        res.morph = MorphApplied::Dilate;
    } else {
        Image inv = bin;
        for (auto& v : inv.data) v = 1.f - v;
        double w_inv = min_line_width(inv, cfg.width_percentile);
        if (w_inv >= cfg.w_min && w_inv <= cfg.w_max) {
            morphed = erode_square(bin, cfg.kernel);
            res.morph = MorphApplied::Erode;
        }
    }

    Image blurred = gaussian_blur(morphed, cfg.blur_radius);
    Image sharp(morphed.h, morphed.w, 1);
    const float g = float(cfg.gamma);
    for (size_t i = 0; i < sharp.data.size(); ++i)
        sharp.data[i] =
            std::clamp((1.f + g) * morphed.data[i] - g * blurred.data[i], 0.f, 1.f);

    // replicate back to the condition's channel count
    Image out(cond.h, cond.w, cond.c);
    for (int y = 0; y < cond.h; ++y)
        for (int x = 0; x < cond.w; ++x)
            for (int ch = 0; ch < cond.c; ++ch) out.at(y, x, ch) = sharp.at(y, x, 0);
    res.image = std::move(out);
    return res;
}

}  // namespace richctl
