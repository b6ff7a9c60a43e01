#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace richctl::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;

// Feature maps are (H*W) x C matrices, pixels in row-major order.

struct Param {
    Mat w;
    Mat g;       // gradient accumulator
    Mat adam_m;  // Adam first/second moments
    Mat adam_v;

    void init(int rows, int cols) {
        w = Mat::Zero(rows, cols);
        g = Mat::Zero(rows, cols);
        adam_m = Mat::Zero(rows, cols);
        adam_v = Mat::Zero(rows, cols);
    }
    void zero_grad() { g.setZero(); }
};

struct AdamConfig {
    float lr = 2e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

void adam_update(Param& p, const AdamConfig& cfg, int step);

inline float silu(float x) { return x / (1.f + std::exp(-x)); }
Mat silu_forward(const Mat& x);
Mat silu_backward(const Mat& x, const Mat& dy);

// 3x3 same-padding convolution over an (H*W) x Cin feature map.
struct Conv3x3 {
    int in_ch = 0, out_ch = 0;
    Param w;  // (9*in_ch) x out_ch
    Param b;  // 1 x out_ch

    void init(int in, int out, class InitRng& rng, bool zero = false);
    // patches (out-param, may be null) is retained for backward.
    Mat forward(const Mat& x, int h, int w_, Mat* patches) const;
    // Accumulates into w.g / b.g; writes dX if non-null.
    void backward(const Mat& patches, const Mat& dy, int h, int w_, Mat* dx);
};

Mat im2col3x3(const Mat& x, int h, int w);
Mat col2im3x3(const Mat& dpatches, int h, int w, int ch);

Mat avgpool2(const Mat& x, int h, int w);
Mat avgpool2_backward(const Mat& dy, int h, int w);
Mat upsample2(const Mat& x, int h, int w);
Mat upsample2_backward(const Mat& dy, int h, int w);

// Row-wise softmax, numerically stabilized.
Mat softmax_rows(const Mat& s);

// Self-attention block: y = f + A V with A = softmax(Q K^T / sqrt(d)),
// Q = f Wq, K = f Wk, V = f Wv, d = channel count.
struct Attention {
    int ch = 0;
    Param wq, wk, wv;

    void init(int ch_, class InitRng& rng);

    struct Cache {
        Mat f;  // block input (post feature-override)
        Mat A;  // post-softmax attention (post attention-override)
        Mat v;
        bool a_overridden = false;
    };

    // f_override replaces the input feature before QKV; a_override replaces A
    // post-softmax, pre-V-weighting.
    Mat forward(const Mat& f, const Mat* a_override, Cache* cache) const;
    Mat backward(const Cache& cache, const Mat& dy);
};

// Deterministic weight initialization stream.
class InitRng {
public:
    explicit InitRng(uint64_t seed) : state_(seed) {}
    // He-style normal fill with std = sqrt(2 / fan_in)
    void fill_he(Mat& m, int fan_in);

private:
    float gaussian();
    uint64_t state_;
    bool have_spare_ = false;
    float spare_ = 0.f;
};

}  // namespace richctl::nn
