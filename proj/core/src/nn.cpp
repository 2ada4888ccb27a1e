#include "nn.hpp"

#include <cmath>
#include <numbers>

namespace handstate::detail {

Mat design_matrix(std::span<const FeatureRow> rows, const Normalization& norm, FeatureSubset subset) {
  const auto cols = subset_columns(subset);
  Mat x(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::size_t c = cols[j];
      x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) = (rows[n][c] - norm.mean[c]) / norm.std[c];
    }
  }
  return x;
}

Mat target_matrix(std::span<const TargetPair> y) {
  Mat out(2, static_cast<Eigen::Index>(y.size()));
  for (std::size_t n = 0; n < y.size(); ++n) {
    out(0, static_cast<Eigen::Index>(n)) = y[n].opening;
    out(1, static_cast<Eigen::Index>(n)) = y[n].compliance;
  }
  return out;
}

// ---------------------------------------------------------------------------

MlpShape MlpShape::of(const ModelSpec& spec) {
  MlpShape s;
  s.sizes.push_back(spec.input_dim());
  for (std::size_t h : spec.hidden) s.sizes.push_back(h);
  s.sizes.push_back(ModelSpec::output_dim());
  return s;
}

namespace {

struct LayerView {
  Eigen::Index out, in;
  std::size_t w_offset, b_offset;
};

std::vector<LayerView> mlp_views(const MlpShape& shape) {
  std::vector<LayerView> v;
  std::size_t off = 0;
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(shape.sizes[l]);
    const auto out = static_cast<Eigen::Index>(shape.sizes[l + 1]);
    v.push_back({out, in, off, off + static_cast<std::size_t>(out * in)});
    off += static_cast<std::size_t>(out * in + out);
  }
  return v;
}

}  // namespace

Mat mlp_forward(const MlpShape& shape, std::span<const double> params, const Mat& x) {
  const auto views = mlp_views(shape);
  Mat a = x;
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    ConstRowMap w(params.data() + v.w_offset, v.out, v.in);
    ConstVecMap b(params.data() + v.b_offset, v.out);
    Mat z = w * a;
    z.colwise() += b;
    if (l + 1 < views.size()) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double mlp_loss_grad(const MlpShape& shape, std::span<const double> params, const Mat& x,
                     const Mat& y, std::span<double> grad) {
  const auto views = mlp_views(shape);
  const double count = static_cast<double>(x.cols()) * 2.0;

  std::vector<Mat> acts;
  acts.reserve(views.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    ConstRowMap w(params.data() + v.w_offset, v.out, v.in);
    ConstVecMap b(params.data() + v.b_offset, v.out);
    Mat z = w * acts.back();
    z.colwise() += b;
    if (l + 1 < views.size()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  const Mat diff = acts.back() - y;
  const double loss = diff.squaredNorm() / count;
  if (grad.empty()) return loss;

  Mat delta = diff * (2.0 / count);
  for (std::size_t l = views.size(); l-- > 0;) {
    const auto& v = views[l];
    RowMap gw(grad.data() + v.w_offset, v.out, v.in);
    VecMap gb(grad.data() + v.b_offset, v.out);
    gw.noalias() = delta * acts[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      ConstRowMap w(params.data() + v.w_offset, v.out, v.in);
      Mat back = w.transpose() * delta;
      delta = (back.array() * (1.0 - acts[l].array().square())).matrix();
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------

LstmShape LstmShape::of(const ModelSpec& spec) {
  return {spec.input_dim(), spec.hidden};
}

namespace {

struct LstmLayerCache {
  Mat gates;   // 4H x TB, activated (i, f, g, o)
  Mat c;       // H x TB
  Mat tanh_c;  // H x TB
  Mat h;       // H x TB
};

// Buffers reused across calls on one thread; training calls this kernel
// thousands of times with identical shapes.
struct LstmWorkspace {
  Mat x_all, y_all, mask, y_hat, diff, d_h_all, dz, dh_next, dc_next;
  Vec rec, dh, dc;
  std::vector<LstmLayerCache> cache;
};

}  // namespace

double lstm_loss_grad(const LstmShape& shape, std::span<const double> params,
                      std::span<const SequenceRef> batch, std::span<double> grad) {
  thread_local LstmWorkspace ws;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(shape.input);
  Eigen::Index t_max = 0;
  double count = 0.0;
  for (const auto& s : batch) {
    t_max = std::max(t_max, s.x->cols());
    count += static_cast<double>(s.x->cols()) * 2.0;
  }
  const Eigen::Index TB = t_max * B;

  // Column t * B + b holds step t of sequence b; sequences are right-padded.
  Mat& x_all = ws.x_all;
  Mat& y_all = ws.y_all;
  Mat& mask = ws.mask;
  x_all.setZero(d, TB);
  y_all.setZero(2, TB);
  mask.setZero(1, TB);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& s = batch[static_cast<std::size_t>(b)];
    for (Eigen::Index t = 0; t < s.x->cols(); ++t) {
      x_all.col(t * B + b) = s.x->col(t);
      y_all.col(t * B + b) = s.y->col(t);
      mask(0, t * B + b) = 1.0;
    }
  }

  const std::size_t L = shape.cells.size();
  auto& cache = ws.cache;
  cache.resize(L);
  std::vector<std::size_t> offsets(L + 1);
  {
    std::size_t off = 0, in = shape.input;
    for (std::size_t l = 0; l < L; ++l) {
      offsets[l] = off;
      const std::size_t H = shape.cells[l];
      off += 4 * H * (in + H) + 4 * H;
      in = H;
    }
    offsets[L] = off;
  }

  const Mat* layer_in = &x_all;
  for (std::size_t l = 0; l < L; ++l) {
    const auto H = static_cast<Eigen::Index>(shape.cells[l]);
    const Eigen::Index in = layer_in->rows();
    ConstRowMap w(params.data() + offsets[l], 4 * H, in + H);
    ConstVecMap bias(params.data() + offsets[l] + static_cast<std::size_t>(4 * H * (in + H)), 4 * H);
    auto& cc = cache[l];
    cc.gates.resize(4 * H, TB);
    cc.gates.noalias() = w.leftCols(in) * (*layer_in);
    cc.gates.colwise() += bias;
    cc.c.resize(H, TB);
    cc.tanh_c.resize(H, TB);
    cc.h.resize(H, TB);
    const auto wh = w.rightCols(H);
    Vec& rec = ws.rec;
    rec.resize(4 * H);
    for (Eigen::Index t = 0; t < t_max; ++t) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index col = t * B + b;
        if (t > 0) {
          rec.noalias() = wh * cc.h.col(col - B);
          cc.gates.col(col) += rec;
        }
        auto zc = cc.gates.col(col).array();
        zc.head(2 * H) = sigmoid(zc.head(2 * H));
        zc.segment(2 * H, H) = tanh_of(zc.segment(2 * H, H));
        zc.tail(H) = sigmoid(zc.tail(H));
        auto c_new = cc.c.col(col).array();
        if (t > 0) {
          c_new = zc.segment(H, H) * cc.c.col(col - B).array() + zc.head(H) * zc.segment(2 * H, H);
        } else {
          c_new = zc.head(H) * zc.segment(2 * H, H);
        }
        cc.tanh_c.col(col).array() = tanh_of(c_new);
        cc.h.col(col).array() = zc.tail(H) * cc.tanh_c.col(col).array();
      }
    }
    layer_in = &cc.h;
  }

  const auto H_top = static_cast<Eigen::Index>(shape.cells.back());
  ConstRowMap w_out(params.data() + offsets[L], 2, H_top);
  ConstVecMap b_out(params.data() + offsets[L] + static_cast<std::size_t>(2 * H_top), 2);
  Mat& y_hat = ws.y_hat;
  y_hat.noalias() = w_out * cache.back().h;
  y_hat.colwise() += b_out;
  Mat& diff = ws.diff;
  diff = (y_hat - y_all).array().rowwise() * mask.row(0).array();
  const double loss = diff.squaredNorm() / count;
  if (grad.empty()) return loss;

  diff *= 2.0 / count;  // d loss / d y_hat
  {
    RowMap gw(grad.data() + offsets[L], 2, H_top);
    VecMap gb(grad.data() + offsets[L] + static_cast<std::size_t>(2 * H_top), 2);
    gw.noalias() = diff * cache.back().h.transpose();
    gb = diff.rowwise().sum();
  }
  Mat& d_h_all = ws.d_h_all;
  d_h_all.noalias() = w_out.transpose() * diff;

  for (std::size_t l = L; l-- > 0;) {
    const auto H = static_cast<Eigen::Index>(shape.cells[l]);
    const Mat& in_mat = l == 0 ? x_all : cache[l - 1].h;
    const Eigen::Index in = in_mat.rows();
    ConstRowMap w(params.data() + offsets[l], 4 * H, in + H);
    const auto wh = w.rightCols(H);
    const auto& cc = cache[l];

    Mat& dz = ws.dz;
    dz.resize(4 * H, TB);
    Mat& dh_next = ws.dh_next;
    Mat& dc_next = ws.dc_next;
    dh_next.setZero(H, B);
    dc_next.setZero(H, B);
    Vec& dh = ws.dh;
    Vec& dc = ws.dc;
    dh.resize(H);
    dc.resize(H);
    for (Eigen::Index t = t_max; t-- > 0;) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index col = t * B + b;
        const auto g = cc.gates.col(col).array();
        const auto i_g = g.head(H);
        const auto f_g = g.segment(H, H);
        const auto g_g = g.segment(2 * H, H);
        const auto o_g = g.tail(H);
        const auto tc = cc.tanh_c.col(col).array();
        dh.array() = d_h_all.col(col).array() + dh_next.col(b).array();
        dc.array() = dh.array() * o_g * (1.0 - tc.square()) + dc_next.col(b).array();
        auto dzc = dz.col(col).array();
        dzc.head(H) = dc.array() * g_g * i_g * (1.0 - i_g);
        if (t > 0) {
          dzc.segment(H, H) = dc.array() * cc.c.col(col - B).array() * f_g * (1.0 - f_g);
        } else {
          dzc.segment(H, H).setZero();
        }
        dzc.segment(2 * H, H) = dc.array() * i_g * (1.0 - g_g.square());
        dzc.tail(H) = dh.array() * tc * o_g * (1.0 - o_g);
        dc_next.col(b).array() = dc.array() * f_g;
        dh_next.col(b).noalias() = wh.transpose() * dz.col(col);
      }
    }

    RowMap gw(grad.data() + offsets[l], 4 * H, in + H);
    VecMap gb(grad.data() + offsets[l] + static_cast<std::size_t>(4 * H * (in + H)), 4 * H);
    gw.leftCols(in).noalias() = dz * in_mat.transpose();
    if (t_max > 1) {
      gw.rightCols(H).noalias() = dz.rightCols(TB - B) * cc.h.leftCols(TB - B).transpose();
    } else {
      gw.rightCols(H).setZero();
    }
    gb = dz.rowwise().sum();
    if (l > 0) d_h_all.noalias() = w.leftCols(in).transpose() * dz;
  }
  return loss;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, const TrainConfig& cfg)
    : m_(n, 0.0), v_(n, 0.0), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

double scheduled_lr(const TrainConfig& cfg, long step, long total) {
  if (cfg.schedule == LrSchedule::Constant || total <= 1) return cfg.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void clip_gradient(std::span<double> grad, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double ss = 0.0;
  for (double g : grad) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (double& g : grad) g *= s;
  }
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace handstate::detail
