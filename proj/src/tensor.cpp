#include "metmap/tensor.hpp"

namespace metmap {

Mat softmax_rows(const Mat& scores) {
    Mat out(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double m = scores.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            double e = std::exp(scores(i, j) - m);
            out(i, j) = e;
            sum += e;
        }
        out.row(i) /= sum;
    }
    return out;
}

Mat softmax_rows_backward(const Mat& softmax_out, const Mat& grad_out) {
    Mat centered = grad_out;
    Eigen::VectorXd rowsum = grad_out.cwiseProduct(softmax_out).rowwise().sum();
    centered.colwise() -= rowsum;
    return softmax_out.cwiseProduct(centered);
}

}  // namespace metmap
