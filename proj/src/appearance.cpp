#include "richctl/appearance.hpp"

#include <cmath>
#include <stdexcept>

namespace richctl {

namespace {

using DMat = Eigen::MatrixXd;

// Mean/variance and softmax chains are accumulated in double so the float
// results stay within rounding of the defining formulas.
DMat spatial_norm_d(const DMat& f) {
    const double n = double(f.rows());
    Eigen::RowVectorXd mean = f.colwise().sum() / n;
    DMat centered = f.rowwise() - mean;
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
    Eigen::RowVectorXd inv_std = (var.array() + 1e-8).sqrt().inverse();
    return centered.array().rowwise() * inv_std.array();
}

DMat softmax_rows_d(const DMat& z) {
    DMat out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::RowVectorXd row = z.row(i);
        DMat e = (row.array() - row.maxCoeff()).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

DMat attention_d(const DMat& f_out, const DMat& f_app, const DMat& wq, const DMat& wk, int d) {
    DMat q = spatial_norm_d(f_out) * wq;
    DMat k = spatial_norm_d(f_app) * wk;
    return softmax_rows_d((q * k.transpose()) / std::sqrt(double(d)));
}

DMat transfer_with_attention_d(const DMat& A, const DMat& f_out, const DMat& f_app) {
    DMat m = A * f_app;
    DMat ex2 = A * (f_app.array() * f_app.array()).matrix();
    // clamp at 0 before the sqrt; numerical negatives occur
    DMat s = (ex2.array() - m.array().square()).max(0.0).sqrt();
    return (s.array() * f_out.array()).matrix() + m;
}

}  // namespace

nn::Mat spatial_norm(const nn::Mat& f) {
    return spatial_norm_d(f.cast<double>()).cast<float>();
}

nn::Mat appearance_attention(const nn::Mat& f_out, const nn::Mat& f_app, const nn::Mat& wq,
                             const nn::Mat& wk, int d) {
    if (f_out.cols() != f_app.cols())
        throw std::invalid_argument("appearance: channel mismatch between branches");
    if (d <= 0) throw std::invalid_argument("appearance: d must be > 0");
    return attention_d(f_out.cast<double>(), f_app.cast<double>(), wq.cast<double>(),
                       wk.cast<double>(), d)
        .cast<float>();
}

nn::Mat transfer_with_attention(const nn::Mat& A, const nn::Mat& f_out, const nn::Mat& f_app) {
    return transfer_with_attention_d(A.cast<double>(), f_out.cast<double>(), f_app.cast<double>())
        .cast<float>();
}

nn::Mat transfer(const nn::Mat& f_out, const nn::Mat& f_app, const nn::Mat& wq,
                 const nn::Mat& wk, int d) {
    DMat fo = f_out.cast<double>(), fa = f_app.cast<double>();
    DMat A = attention_d(fo, fa, wq.cast<double>(), wk.cast<double>(), d);
    nn::Mat out = transfer_with_attention_d(A, fo, fa).cast<float>();
    if (!out.allFinite())
        throw std::runtime_error("appearance transfer produced non-finite values");
    return out;
}

}  // namespace richctl
