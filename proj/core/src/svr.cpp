#include "svr.hpp"

#include <cmath>
#include <limits>
#include <list>

#include <fmt/format.h>

namespace handstate {

namespace detail {

namespace {

constexpr double kTau = 1e-12;
constexpr std::size_t kCacheBytes = std::size_t{512} << 20;

// LRU cache of RBF kernel rows over the N training samples.
class KernelCache {
 public:
  KernelCache(const Mat& x, double gamma) : x_(x), gamma_(gamma), rows_(static_cast<std::size_t>(x.cols())) {
    sq_ = x.colwise().squaredNorm().transpose();
    const std::size_t row_bytes = static_cast<std::size_t>(x.cols()) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, kCacheBytes / std::max<std::size_t>(1, row_bytes));
  }

  const std::vector<double>& row(std::size_t i) {
    Slot& s = rows_[i];
    if (!s.data.empty()) {
      lru_.splice(lru_.begin(), lru_, s.pos);
      return s.data;
    }
    if (lru_.size() >= capacity_) {
      const std::size_t victim = lru_.back();
      lru_.pop_back();
      rows_[victim].data = {};
    }
    const auto n = x_.cols();
    s.data.resize(static_cast<std::size_t>(n));
    const Vec dots = x_.transpose() * x_.col(static_cast<Eigen::Index>(i));
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d2 = std::max(0.0, sq_(static_cast<Eigen::Index>(i)) + sq_(j) - 2.0 * dots(j));
      s.data[static_cast<std::size_t>(j)] = std::exp(-gamma_ * d2);
    }
    lru_.push_front(i);
    s.pos = lru_.begin();
    return s.data;
  }

 private:
  struct Slot {
    std::vector<double> data;
    std::list<std::size_t>::iterator pos;
  };
  const Mat& x_;
  double gamma_;
  Vec sq_;
  std::vector<Slot> rows_;
  std::list<std::size_t> lru_;
  std::size_t capacity_ = 0;
};

}  // namespace

double scale_gamma(const Mat& x) {
  if (x.size() == 0) return 1.0;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  if (!(var > 0.0)) return 1.0;
  return 1.0 / (static_cast<double>(x.rows()) * var);
}

// Variables 0..n-1 are alpha (sign +1), n..2n-1 alpha* (sign -1). Minimises
// 1/2 a'Qa + p'a subject to y'a = 0, 0 <= a <= C, where Q_ij = s_i s_j K.
SvrDual solve_svr(const Mat& x, std::span<const double> target, const SvrParams& p) {
  const std::size_t n = static_cast<std::size_t>(x.cols());
  const std::size_t l = 2 * n;
  if (n == 0) throw ValidationError("svr needs at least one sample");
  KernelCache cache(x, p.gamma);

  std::vector<double> alpha(l, 0.0), grad(l), sign(l);
  for (std::size_t i = 0; i < n; ++i) {
    sign[i] = 1.0;
    sign[i + n] = -1.0;
    grad[i] = p.epsilon - target[i];
    grad[i + n] = p.epsilon + target[i];
  }
  const double C = p.c;
  auto upper = [&](std::size_t i) { return alpha[i] >= C; };
  auto lower = [&](std::size_t i) { return alpha[i] <= 0.0; };
  // Q_ij for j in [0, l) from the base kernel row of i.
  auto q = [&](std::size_t i, const std::vector<double>& krow, std::size_t j) {
    return sign[i] * sign[j] * krow[j % n];
  };

  std::int64_t iter = 0;
  for (;;) {
    // Second-order working-set selection.
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t gi = -1, gj = -1;
    for (std::size_t t = 0; t < l; ++t) {
      if (sign[t] > 0) {
        if (!upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          gi = static_cast<std::ptrdiff_t>(t);
        }
      } else if (!lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        gi = static_cast<std::ptrdiff_t>(t);
      }
    }
    if (gi < 0) break;
    const auto i = static_cast<std::size_t>(gi);
    const std::vector<double>& ki = cache.row(i % n);
    double obj_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < l; ++j) {
      if (sign[j] > 0) {
        if (lower(j)) continue;
        const double diff = gmax + grad[j];
        gmax2 = std::max(gmax2, grad[j]);
        if (diff > 0.0) {
          double quad = 2.0 - 2.0 * sign[i] * q(i, ki, j);
          if (quad <= 0.0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= obj_min) {
            gj = static_cast<std::ptrdiff_t>(j);
            obj_min = obj;
          }
        }
      } else {
        if (upper(j)) continue;
        const double diff = gmax - grad[j];
        gmax2 = std::max(gmax2, -grad[j]);
        if (diff > 0.0) {
          double quad = 2.0 + 2.0 * sign[i] * q(i, ki, j);
          if (quad <= 0.0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= obj_min) {
            gj = static_cast<std::ptrdiff_t>(j);
            obj_min = obj;
          }
        }
      }
    }
    if (gmax + gmax2 < p.tolerance || gj < 0) break;
    if (++iter > p.max_iterations) {
      throw TrainingError(fmt::format("svr did not converge within {} iterations (KKT gap {:.3g})",
                                      p.max_iterations, gmax + gmax2));
    }

    const auto j = static_cast<std::size_t>(gj);
    // Copy: fetching row j may evict row i.
    const std::vector<double> row_i = ki;
    const std::vector<double>& row_j = cache.row(j % n);
    const double qij = q(i, row_i, j);
    const double old_i = alpha[i], old_j = alpha[j];
    if (sign[i] != sign[j]) {
      double quad = 2.0 + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = 2.0 - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (std::size_t k = 0; k < l; ++k) {
      grad[k] += q(i, row_i, k) * di + q(j, row_j, k) * dj;
    }
  }

  // Bias from free variables, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < l; ++t) {
    const double yg = sign[t] * grad[t];
    if (upper(t)) {
      if (sign[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (sign[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  SvrDual out;
  out.alpha.assign(alpha.begin(), alpha.begin() + static_cast<std::ptrdiff_t>(n));
  out.alpha_star.assign(alpha.begin() + static_cast<std::ptrdiff_t>(n), alpha.end());
  out.bias = -rho;
  out.iterations = iter;
  return out;
}

double SvrTerm::eval(const Vec& x, double gamma) const {
  if (coef.size() == 0) return bias;
  const Vec dots = support.transpose() * x;
  const double xsq = x.squaredNorm();
  double s = bias;
  for (Eigen::Index k = 0; k < coef.size(); ++k) {
    const double d2 = std::max(0.0, support_sq(k) + xsq - 2.0 * dots(k));
    s += coef(k) * std::exp(-gamma * d2);
  }
  return s;
}

std::array<SvrTerm, 2> unpack_svr(const ModelState& m) {
  const auto d = static_cast<Eigen::Index>(m.spec.input_dim());
  std::array<SvrTerm, 2> terms;
  std::size_t off = 0;
  for (std::size_t t = 0; t < 2; ++t) {
    const auto ns = static_cast<Eigen::Index>(m.spec.svr.support[t]);
    SvrTerm& term = terms[t];
    term.bias = m.params[off++];
    term.coef = ConstVecMap(m.params.data() + off, ns);
    off += static_cast<std::size_t>(ns);
    term.support = ConstRowMap(m.params.data() + off, ns, d).transpose();
    off += static_cast<std::size_t>(ns * d);
    term.support_sq = term.support.colwise().squaredNorm().transpose();
  }
  return terms;
}

}  // namespace detail

SvrDual solve_epsilon_svr(std::span<const std::vector<double>> x, std::span<const double> y,
                          const SvrParams& p) {
  if (x.size() != y.size()) throw ValidationError("svr rows and targets differ in length");
  if (x.empty()) throw ValidationError("svr needs at least one sample");
  const std::size_t d = x.front().size();
  detail::Mat m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(x.size()));
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (x[n].size() != d) throw ValidationError("svr rows differ in length");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) = x[n][j];
  }
  return detail::solve_svr(m, y, p);
}

ModelState train_svr(const TrainingRows& train, FeatureSubset subset, const TrainConfig& cfg,
                     SvrParams params) {
  cfg.validate();
  if (train.size() == 0) throw ValidationError("svr training needs labelled samples");
  for (const auto& r : train.x) {
    if (!detail::all_finite(r)) throw ValidationError("non-finite feature value in training data");
  }
  ModelState m;
  m.spec.kind = Architecture::Svr;
  m.spec.subset = subset;
  m.spec.train = cfg;
  m.seed = cfg.seed;
  m.norm = Normalization::fit(train.x);
  const detail::Mat x = detail::design_matrix(train.x, m.norm, subset);
  params.gamma = detail::scale_gamma(x);

  const auto d = static_cast<std::size_t>(x.rows());
  m.params.clear();
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<double> y(train.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = t == 0 ? train.y[i].opening : train.y[i].compliance;
    const SvrDual dual = detail::solve_svr(x, y, params);
    std::vector<std::size_t> sv;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (dual.alpha[i] - dual.alpha_star[i] != 0.0) sv.push_back(i);
    }
    params.support[t] = sv.size();
    m.params.push_back(dual.bias);
    for (std::size_t i : sv) m.params.push_back(dual.alpha[i] - dual.alpha_star[i]);
    for (std::size_t i : sv) {
      for (std::size_t j = 0; j < d; ++j) {
        m.params.push_back(x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
      }
    }
  }
  m.spec.svr = params;
  m.validate();
  return m;
}

}  // namespace handstate
