#pragma once

// Internal network kernels shared by training, prediction and gradient checks.
// Parameters live in one flat array; every weight matrix is stored row-major
// (out x in) followed by its bias vector.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "handstate/model_state.hpp"
#include "handstate/types.hpp"

namespace handstate::detail {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

/// Training buffers. Eigen peels unaligned heads off vectorised loops, so the
/// summation order of a kernel over a Map depends on the buffer address; a
/// fixed alignment keeps repeated runs bit-identical.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Logistic and tanh on Eigen arrays, written over exp so that Eigen
/// vectorises them. Training and inference share these definitions.
template <typename A>
auto sigmoid(const A& z) {
  return (1.0 + (-z).exp()).inverse();
}
template <typename A>
auto tanh_of(const A& z) {
  return 2.0 * (1.0 + (-2.0 * z).exp()).inverse() - 1.0;
}

/// z-scored subset columns, one sample per column (d x N).
Mat design_matrix(std::span<const FeatureRow> rows, const Normalization& norm, FeatureSubset subset);
/// 2 x N target matrix.
Mat target_matrix(std::span<const TargetPair> y);

// ---------------------------------------------------------------------------
// MLP: sizes = [in, hidden..., 2]; tanh hidden units, identity output.

struct MlpShape {
  std::vector<std::size_t> sizes;
  static MlpShape of(const ModelSpec& spec);
  std::size_t layers() const noexcept { return sizes.size() - 1; }
};

Mat mlp_forward(const MlpShape& shape, std::span<const double> params, const Mat& x);

/// Mean squared error over N samples and 2 outputs; writes the gradient into
/// `grad` (same length as params) unless it is empty.
double mlp_loss_grad(const MlpShape& shape, std::span<const double> params, const Mat& x,
                     const Mat& y, std::span<double> grad);

// ---------------------------------------------------------------------------
// LSTM: stacked cells, gate order (input, forget, candidate, output), each
// layer's weights [W_x | W_h] of shape 4H x (in + H), then a 4H bias; a linear
// head 2 x H_top + 2 bias closes the stack.

struct LstmShape {
  std::size_t input = 0;
  std::vector<std::size_t> cells;
  static LstmShape of(const ModelSpec& spec);
};

struct SequenceRef {
  const Mat* x;  // d x T
  const Mat* y;  // 2 x T
};

/// Squared error averaged over every (timestep, output) of the batch with
/// full backpropagation through time; states start at zero per sequence.
double lstm_loss_grad(const LstmShape& shape, std::span<const double> params,
                      std::span<const SequenceRef> batch, std::span<double> grad);

// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg);
  /// One update with learning rate `lr`.
  void step(std::span<double> params, std::span<const double> grad, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Learning rate at update `step` of `total` under the configured schedule.
double scheduled_lr(const TrainConfig& cfg, long step, long total);

/// Rescales grad to the clip norm when its Euclidean norm exceeds it.
void clip_gradient(std::span<double> grad, double clip_norm);

bool all_finite(std::span<const double> v);

}  // namespace handstate::detail
