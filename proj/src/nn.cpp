#include "richctl/nn.hpp"

#include <cmath>

namespace richctl::nn {

void adam_update(Param& p, const AdamConfig& cfg, int step) {
    const float b1 = cfg.beta1, b2 = cfg.beta2;
    const float bc1 = 1.f - std::pow(b1, float(step));
    const float bc2 = 1.f - std::pow(b2, float(step));
    p.adam_m = b1 * p.adam_m + (1.f - b1) * p.g;
    p.adam_v = b2 * p.adam_v.array().matrix() + (1.f - b2) * p.g.array().square().matrix();
    p.w.array() -=
        cfg.lr * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + cfg.eps);
}

Mat silu_forward(const Mat& x) {
    return x.array() / (1.f + (-x.array()).exp());
}

Mat silu_backward(const Mat& x, const Mat& dy) {
    auto sig = 1.f / (1.f + (-x.array()).exp());
    return (dy.array() * sig * (1.f + x.array() * (1.f - sig))).matrix();
}

float InitRng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    auto next = [this]() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return double(z >> 11) * 0x1.0p-53;  // [0,1)
    };
    double u1 = next(), u2 = next();
    u1 = std::max(u1, 1e-12);
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = float(r * std::sin(2.0 * M_PI * u2));
    have_spare_ = true;
    return float(r * std::cos(2.0 * M_PI * u2));
}

void InitRng::fill_he(Mat& m, int fan_in) {
    const float s = std::sqrt(2.f / float(fan_in));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = s * gaussian();
}

Mat im2col3x3(const Mat& x, int h, int w) {
    const int ch = int(x.cols());
    Mat patches = Mat::Zero(h * w, 9 * ch);
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            const int row = y * w + xx;
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, ++k) {
                    const int yy = y + dy, xs = xx + dx;
                    if (yy < 0 || yy >= h || xs < 0 || xs >= w) continue;
                    patches.block(row, k * ch, 1, ch) = x.row(yy * w + xs);
                }
            }
        }
    }
    return patches;
}

Mat col2im3x3(const Mat& dpatches, int h, int w, int ch) {
    Mat dx = Mat::Zero(h * w, ch);
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            const int row = y * w + xx;
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx_ = -1; dx_ <= 1; ++dx_, ++k) {
                    const int yy = y + dy, xs = xx + dx_;
                    if (yy < 0 || yy >= h || xs < 0 || xs >= w) continue;
                    dx.row(yy * w + xs) += dpatches.block(row, k * ch, 1, ch);
                }
            }
        }
    }
    return dx;
}

void Conv3x3::init(int in, int out, InitRng& rng, bool zero) {
    in_ch = in;
    out_ch = out;
    w.init(9 * in, out);
    b.init(1, out);
    if (!zero) rng.fill_he(w.w, 9 * in);
}

Mat Conv3x3::forward(const Mat& x, int h, int w_, Mat* patches) const {
    Mat p = im2col3x3(x, h, w_);
    Mat y = p * w.w;
    y.rowwise() += b.w.row(0);
    if (patches) *patches = std::move(p);
    return y;
}

void Conv3x3::backward(const Mat& patches, const Mat& dy, int h, int w_, Mat* dx) {
    w.g.noalias() += patches.transpose() * dy;
    b.g.row(0) += dy.colwise().sum();
    if (dx) {
        Mat dp = dy * w.w.transpose();
        *dx = col2im3x3(dp, h, w_, in_ch);
    }
}

Mat avgpool2(const Mat& x, int h, int w) {
    const int ch = int(x.cols());
    const int h2 = h / 2, w2 = w / 2;
    Mat y = Mat::Zero(h2 * w2, ch);
    for (int y0 = 0; y0 < h2; ++y0)
        for (int x0 = 0; x0 < w2; ++x0) {
            const int r = y0 * w2 + x0;
            y.row(r) = 0.25f * (x.row((2 * y0) * w + 2 * x0) + x.row((2 * y0) * w + 2 * x0 + 1) +
                                x.row((2 * y0 + 1) * w + 2 * x0) +
                                x.row((2 * y0 + 1) * w + 2 * x0 + 1));
        }
    return y;
}

Mat avgpool2_backward(const Mat& dy, int h, int w) {
    const int ch = int(dy.cols());
    const int h2 = h / 2, w2 = w / 2;
    Mat dx = Mat::Zero(h * w, ch);
    for (int y0 = 0; y0 < h2; ++y0)
        for (int x0 = 0; x0 < w2; ++x0) {
            const auto g = (0.25f * dy.row(y0 * w2 + x0)).eval();
            dx.row((2 * y0) * w + 2 * x0) = g;
            dx.row((2 * y0) * w + 2 * x0 + 1) = g;
            dx.row((2 * y0 + 1) * w + 2 * x0) = g;
            dx.row((2 * y0 + 1) * w + 2 * x0 + 1) = g;
        }
    return dx;
}

Mat upsample2(const Mat& x, int h, int w) {
    const int ch = int(x.cols());
    Mat y = Mat::Zero(4 * h * w, ch);
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            const auto r = x.row(y0 * w + x0);
            const int w2 = 2 * w;
            y.row((2 * y0) * w2 + 2 * x0) = r;
            y.row((2 * y0) * w2 + 2 * x0 + 1) = r;
            y.row((2 * y0 + 1) * w2 + 2 * x0) = r;
            y.row((2 * y0 + 1) * w2 + 2 * x0 + 1) = r;
        }
    return y;
}

Mat upsample2_backward(const Mat& dy, int h, int w) {
    // h, w are the *input* (coarse) dims
    const int ch = int(dy.cols());
    Mat dx = Mat::Zero(h * w, ch);
    const int w2 = 2 * w;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0)
            dx.row(y0 * w + x0) = dy.row((2 * y0) * w2 + 2 * x0) +
                                  dy.row((2 * y0) * w2 + 2 * x0 + 1) +
                                  dy.row((2 * y0 + 1) * w2 + 2 * x0) +
                                  dy.row((2 * y0 + 1) * w2 + 2 * x0 + 1);
    return dx;
}

Mat softmax_rows(const Mat& s) {
    Mat a = s;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        float mx = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - mx).exp();
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

void Attention::init(int ch_, InitRng& rng) {
    ch = ch_;
    wq.init(ch, ch);
    wk.init(ch, ch);
    wv.init(ch, ch);
    rng.fill_he(wq.w, ch);
    rng.fill_he(wk.w, ch);
    rng.fill_he(wv.w, ch);
}

Mat Attention::forward(const Mat& f, const Mat* a_override, Cache* cache) const {
    const float scale = 1.f / std::sqrt(float(ch));
    Mat A;
    if (a_override) {
        if (a_override->rows() != f.rows() || a_override->cols() != f.rows())
            throw std::invalid_argument("attention override shape mismatch");
        A = *a_override;
    } else {
        Mat q = f * wq.w;
        Mat k = f * wk.w;
        A = softmax_rows((q * k.transpose()) * scale);
    }
    Mat v = f * wv.w;
    Mat y = f + A * v;
    if (cache) {
        cache->f = f;
        cache->A = std::move(A);
        cache->v = std::move(v);
        cache->a_overridden = a_override != nullptr;
    } else {
        return y;
    }
    return y;
}

Mat Attention::backward(const Cache& cache, const Mat& dy) {
    const float scale = 1.f / std::sqrt(float(ch));
    const Mat& f = cache.f;
    const Mat& A = cache.A;

    Mat dv = A.transpose() * dy;
    wv.g.noalias() += f.transpose() * dv;
    Mat df = dy + dv * wv.w.transpose();

    Mat dA = dy * cache.v.transpose();
    // softmax backward per row: ds = (dA - (dA . A) 1) * A
    Mat ds(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        float dot = dA.row(i).dot(A.row(i));
        ds.row(i) = (dA.row(i).array() - dot) * A.row(i).array();
    }
    Mat q = f * wq.w;
    Mat k = f * wk.w;
    Mat dq = (ds * k) * scale;
    Mat dk = (ds.transpose() * q) * scale;
    wq.g.noalias() += f.transpose() * dq;
    wk.g.noalias() += f.transpose() * dk;
    df.noalias() += dq * wq.w.transpose();
    df.noalias() += dk * wk.w.transpose();
    return df;
}

}  // namespace richctl::nn
