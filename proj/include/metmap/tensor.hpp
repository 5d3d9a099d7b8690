#pragma once

#include "metmap/common.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace metmap {

// Row-major so tensors serialize to the checkpoint format without copies.
// Biases are 1×d matrices to keep the parameter registry uniform.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat xavier_uniform(int rows, int cols, SplitMix64& rng) {
    double bound = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    }
    return m;
}

// Softmax over each row, numerically stable. Rows sum to 1.
Mat softmax_rows(const Mat& scores);

// Gradient of softmax rows: given A = softmax(S) and dL/dA, returns dL/dS.
Mat softmax_rows_backward(const Mat& softmax_out, const Mat& grad_out);

inline Mat sigmoid(const Mat& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

// Named view over a parameter set; shared by the optimizer, the checkpoint
// writer, and the finite-difference checker.
struct TensorRef {
    std::string name;
    Mat* tensor;
};

}  // namespace metmap
