#include "handstate/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "handstate/rng.hpp"
#include "nn.hpp"
#include "svr.hpp"

namespace handstate {

using detail::ConstRowMap;
using detail::ConstVecMap;
using detail::Mat;
using detail::RowMat;
using detail::Vec;

TrainingRows TrainingRows::from(std::span<const AlignedSequence> seqs) {
  TrainingRows rows;
  for (const auto& s : seqs) {
    for (const auto& a : s.samples) {
      if (!a.y) continue;
      rows.x.push_back(a.f);
      rows.y.push_back(*a.y);
    }
  }
  return rows;
}

namespace {

void require_finite(const TrainingRows& train) {
  for (const auto& r : train.x) {
    if (!detail::all_finite(r)) throw ValidationError("non-finite feature value in training data");
  }
  for (const auto& y : train.y) {
    if (!std::isfinite(y.opening) || !std::isfinite(y.compliance)) {
      throw ValidationError("non-finite target value in training data");
    }
  }
}

void require_rows(const TrainingRows& train, std::string_view what) {
  if (train.x.size() != train.y.size()) throw ValidationError("feature and target counts differ");
  if (train.size() == 0) throw ValidationError(fmt::format("{} training needs labelled samples", what));
}

std::size_t resolve_batch(int requested, std::size_t fallback, std::size_t available) {
  const std::size_t b = requested > 0 ? static_cast<std::size_t>(requested) : fallback;
  return std::clamp<std::size_t>(b, 1, std::max<std::size_t>(1, available));
}

}  // namespace

ModelState train_dummy(const TrainingRows& train, FeatureSubset subset) {
  require_rows(train, "dummy");
  ModelState m;
  m.spec.kind = Architecture::Dummy;
  m.spec.subset = subset;
  m.norm = Normalization::fit(train.x);
  double so = 0.0, sc = 0.0;
  for (const auto& y : train.y) {
    so += y.opening;
    sc += y.compliance;
  }
  const double n = static_cast<double>(train.size());
  m.params = {so / n, sc / n};
  m.validate();
  return m;
}

ModelState train_linear(const TrainingRows& train, FeatureSubset subset, const TrainConfig& cfg) {
  require_rows(train, "linear");
  require_finite(train);
  ModelState m;
  m.spec.kind = Architecture::Linear;
  m.spec.subset = subset;
  m.spec.train = cfg;
  m.seed = cfg.seed;
  m.norm = Normalization::fit(train.x);

  const Mat x = detail::design_matrix(train.x, m.norm, subset);
  const Mat y = detail::target_matrix(train.y);
  const Eigen::Index d = x.rows();
  Mat a(d + 1, x.cols());
  a.topRows(d) = x;
  a.row(d).setOnes();
  Mat gram = a * a.transpose();
  gram.diagonal().array() += kRidge;
  const Mat rhs = a * y.transpose();  // (d+1) x 2
  const Mat sol = gram.ldlt().solve(rhs);
  if (!detail::all_finite({sol.data(), static_cast<std::size_t>(sol.size())})) {
    throw TrainingError("least-squares solution is not finite");
  }

  m.params.resize(m.spec.param_count());
  for (Eigen::Index t = 0; t < 2; ++t) {
    for (Eigen::Index j = 0; j < d; ++j) m.params[static_cast<std::size_t>(t * d + j)] = sol(j, t);
    m.params[static_cast<std::size_t>(2 * d + t)] = sol(d, t);
  }
  m.validate();
  return m;
}

ModelState init_network(ModelSpec spec, const Normalization& norm, std::uint64_t seed) {
  ModelState m;
  m.spec = std::move(spec);
  m.norm = norm;
  m.seed = seed;
  m.params.assign(m.spec.param_count(), 0.0);
  Rng rng(seed);
  std::size_t off = 0;
  auto fill_uniform = [&](std::size_t count, double limit) {
    for (std::size_t k = 0; k < count; ++k) m.params[off++] = rng.uniform(-limit, limit);
  };

  if (m.spec.kind == Architecture::Mlp || m.spec.kind == Architecture::Linear) {
    const auto shape = detail::MlpShape::of(m.spec);
    for (std::size_t l = 0; l < shape.layers(); ++l) {
      const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
      fill_uniform(in * out, std::sqrt(6.0 / static_cast<double>(in + out)));
      off += out;
    }
  } else if (m.spec.kind == Architecture::Lstm) {
    if (m.spec.hidden.empty()) throw ValidationError("lstm spec needs at least one cell");
    std::size_t in = m.spec.input_dim();
    for (std::size_t h : m.spec.hidden) {
      // Row-major 4H x (in + H): each gate block is H contiguous rows.
      fill_uniform(4 * h * (in + h), std::sqrt(6.0 / static_cast<double>(in + 2 * h)));
      for (std::size_t j = 0; j < h; ++j) m.params[off + h + j] = 1.0;  // forget gate
      off += 4 * h;
      in = h;
    }
    fill_uniform(2 * in, std::sqrt(6.0 / static_cast<double>(in + 2)));
    off += 2;
  } else {
    throw ValidationError(fmt::format("{} is not a network architecture", to_string(m.spec.kind)));
  }
  return m;
}

ModelState train_mlp(const TrainingRows& train, FeatureSubset subset, const TrainConfig& cfg,
                     std::vector<std::size_t> hidden, TrainingLog* log) {
  cfg.validate();
  require_rows(train, "mlp");
  require_finite(train);
  ModelSpec spec;
  spec.kind = Architecture::Mlp;
  spec.subset = subset;
  spec.hidden = std::move(hidden);
  spec.train = cfg;
  ModelState m = init_network(spec, Normalization::fit(train.x), cfg.seed);

  const auto shape = detail::MlpShape::of(m.spec);
  const Mat x = detail::design_matrix(train.x, m.norm, subset);
  const Mat y = detail::target_matrix(train.y);
  const std::size_t n = train.size();
  const std::size_t batch = resolve_batch(cfg.batch, kDefaultMlpBatch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const long total = static_cast<long>(steps_per_epoch) * cfg.epochs;

  detail::Adam adam(m.params.size(), cfg);
  detail::AlignedVector params(m.params.begin(), m.params.end());
  detail::AlignedVector grad(m.params.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, {0x6d6c70ULL}));
  Mat xb, yb;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      double loss;
      if (count == n) {
        loss = detail::mlp_loss_grad(shape, params, x, y, grad);
      } else {
        xb.resize(x.rows(), static_cast<Eigen::Index>(count));
        yb.resize(2, static_cast<Eigen::Index>(count));
        for (std::size_t k = 0; k < count; ++k) {
          xb.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(order[start + k]));
          yb.col(static_cast<Eigen::Index>(k)) = y.col(static_cast<Eigen::Index>(order[start + k]));
        }
        loss = detail::mlp_loss_grad(shape, params, xb, yb, grad);
      }
      if (!std::isfinite(loss) || !detail::all_finite(grad)) {
        throw TrainingError(fmt::format("mlp training diverged at epoch {}", epoch + 1));
      }
      detail::clip_gradient(grad, cfg.clip_norm);
      adam.step(params, grad, detail::scheduled_lr(cfg, step++, total));
      epoch_loss += loss * static_cast<double>(count);
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  m.params.assign(params.begin(), params.end());
  if (!detail::all_finite(m.params)) throw TrainingError("mlp parameters became non-finite");
  m.validate();
  return m;
}

ModelState train_lstm(std::span<const AlignedSequence> train, FeatureSubset subset,
                      const TrainConfig& cfg, std::vector<std::size_t> cells, TrainingLog* log) {
  cfg.validate();
  std::vector<const AlignedSequence*> usable;
  std::vector<FeatureRow> all_rows;
  for (const auto& s : train) {
    if (!s.labelled()) {
      if (log) log->warnings.push_back(fmt::format("skipping unlabelled sequence '{}'", s.id));
      continue;
    }
    for (const auto& a : s.samples) {
      if (!detail::all_finite(a.f)) {
        throw ValidationError(fmt::format("non-finite feature value in sequence '{}'", s.id));
      }
      all_rows.push_back(a.f);
    }
    usable.push_back(&s);
  }
  if (usable.empty()) throw ValidationError("lstm training needs at least one labelled sequence");

  ModelSpec spec;
  spec.kind = Architecture::Lstm;
  spec.subset = subset;
  spec.hidden = std::move(cells);
  spec.train = cfg;
  ModelState m = init_network(spec, Normalization::fit(all_rows), cfg.seed);

  const auto shape = detail::LstmShape::of(m.spec);
  std::vector<Mat> xs, ys;
  xs.reserve(usable.size());
  ys.reserve(usable.size());
  for (const auto* s : usable) {
    const auto rows = s->features();
    xs.push_back(detail::design_matrix(rows, m.norm, subset));
    ys.push_back(detail::target_matrix(s->targets()));
  }

  const std::size_t n = usable.size();
  const std::size_t batch = resolve_batch(cfg.batch, kDefaultLstmBatch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const long total = static_cast<long>(steps_per_epoch) * cfg.epochs;
  detail::Adam adam(m.params.size(), cfg);
  detail::AlignedVector params(m.params.begin(), m.params.end());
  detail::AlignedVector grad(m.params.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, {0x6c73746dULL}));
  std::vector<detail::SequenceRef> refs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    double epoch_weight = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      refs.clear();
      double weight = 0.0;
      for (std::size_t k = start; k < std::min(n, start + batch); ++k) {
        refs.push_back({&xs[order[k]], &ys[order[k]]});
        weight += static_cast<double>(xs[order[k]].cols());
      }
      const double loss = detail::lstm_loss_grad(shape, params, refs, grad);
      if (!std::isfinite(loss) || !detail::all_finite(grad)) {
        throw TrainingError(fmt::format("lstm training diverged at epoch {}", epoch + 1));
      }
      detail::clip_gradient(grad, cfg.clip_norm);
      adam.step(params, grad, detail::scheduled_lr(cfg, step++, total));
      epoch_loss += loss * weight;
      epoch_weight += weight;
    }
    if (log) log->epoch_loss.push_back(epoch_loss / epoch_weight);
  }
  m.params.assign(params.begin(), params.end());
  if (!detail::all_finite(m.params)) throw TrainingError("lstm parameters became non-finite");
  m.validate();
  return m;
}

ModelState train_model(Architecture arch, std::span<const AlignedSequence> train,
                       FeatureSubset subset, const TrainConfig& cfg, TrainingLog* log) {
  switch (arch) {
    case Architecture::Dummy: return train_dummy(TrainingRows::from(train), subset);
    case Architecture::Linear: return train_linear(TrainingRows::from(train), subset, cfg);
    case Architecture::Mlp: return train_mlp(TrainingRows::from(train), subset, cfg, {100, 100}, log);
    case Architecture::Svr: return train_svr(TrainingRows::from(train), subset, cfg);
    case Architecture::Lstm: return train_lstm(train, subset, cfg, {32, 32}, log);
  }
  throw ValidationError("unknown architecture");
}

// ---------------------------------------------------------------------------
// Inference

struct Predictor::Impl {
  Architecture kind;
  FeatureSubset subset;
  Normalization norm;
  std::array<double, 2> constant{};

  // Dense layers (linear / mlp / lstm head).
  std::vector<RowMat> w;
  std::vector<Vec> b;

  // LSTM cells.
  std::vector<RowMat> cell_w;  // 4H x (in + H)
  std::vector<Vec> cell_b;
  std::vector<Vec> h, c;
  Vec gates;

  std::array<detail::SvrTerm, 2> svr;
  double gamma = 0.0;

  Vec input(const FeatureRow& row) const {
    const auto cols = subset_columns(subset);
    Vec x(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      x(static_cast<Eigen::Index>(j)) = (row[cols[j]] - norm.mean[cols[j]]) / norm.std[cols[j]];
    }
    return x;
  }

  void reset() {
    for (auto& v : h) v.setZero();
    for (auto& v : c) v.setZero();
  }

  std::array<double, 2> step(const FeatureRow& row) {
    switch (kind) {
      case Architecture::Dummy: return constant;
      case Architecture::Linear:
      case Architecture::Mlp: {
        Vec a = input(row);
        for (std::size_t l = 0; l < w.size(); ++l) {
          Vec z = w[l] * a + b[l];
          a = (l + 1 < w.size()) ? Vec(z.array().tanh()) : z;
        }
        return {a(0), a(1)};
      }
      case Architecture::Svr: {
        const Vec x = input(row);
        return {svr[0].eval(x, gamma), svr[1].eval(x, gamma)};
      }
      case Architecture::Lstm: {
        Vec x = input(row);
        for (std::size_t l = 0; l < cell_w.size(); ++l) {
          const auto H = h[l].size();
          const auto in = x.size();
          gates.noalias() = cell_w[l].leftCols(in) * x;
          gates.noalias() += cell_w[l].rightCols(H) * h[l];
          gates += cell_b[l];
          auto z = gates.array();
          z.head(2 * H) = detail::sigmoid(z.head(2 * H));
          z.segment(2 * H, H) = detail::tanh_of(z.segment(2 * H, H));
          z.tail(H) = detail::sigmoid(z.tail(H));
          c[l].array() = z.segment(H, H) * c[l].array() + z.head(H) * z.segment(2 * H, H);
          h[l].array() = z.tail(H) * detail::tanh_of(c[l].array());
          x = h[l];
        }
        const Vec y = w[0] * x + b[0];
        return {y(0), y(1)};
      }
    }
    return constant;
  }
};

Predictor::Predictor(const ModelState& model) : impl_(std::make_unique<Impl>()) {
  model.validate();
  Impl& p = *impl_;
  p.kind = model.spec.kind;
  p.subset = model.spec.subset;
  p.norm = model.norm;
  const double* data = model.params.data();
  switch (p.kind) {
    case Architecture::Dummy:
      p.constant = {model.params[0], model.params[1]};
      break;
    case Architecture::Linear:
    case Architecture::Mlp: {
      ModelSpec spec = model.spec;
      if (p.kind == Architecture::Linear) spec.hidden.clear();
      const auto shape = detail::MlpShape::of(spec);
      std::size_t off = 0;
      for (std::size_t l = 0; l < shape.layers(); ++l) {
        const auto in = static_cast<Eigen::Index>(shape.sizes[l]);
        const auto out = static_cast<Eigen::Index>(shape.sizes[l + 1]);
        p.w.emplace_back(ConstRowMap(data + off, out, in));
        off += static_cast<std::size_t>(in * out);
        p.b.emplace_back(ConstVecMap(data + off, out));
        off += static_cast<std::size_t>(out);
      }
      break;
    }
    case Architecture::Svr:
      p.svr = detail::unpack_svr(model);
      p.gamma = model.spec.svr.gamma;
      break;
    case Architecture::Lstm: {
      std::size_t off = 0;
      auto in = static_cast<Eigen::Index>(model.spec.input_dim());
      for (std::size_t hsz : model.spec.hidden) {
        const auto H = static_cast<Eigen::Index>(hsz);
        p.cell_w.emplace_back(ConstRowMap(data + off, 4 * H, in + H));
        off += static_cast<std::size_t>(4 * H * (in + H));
        p.cell_b.emplace_back(ConstVecMap(data + off, 4 * H));
        off += static_cast<std::size_t>(4 * H);
        p.h.push_back(Vec::Zero(H));
        p.c.push_back(Vec::Zero(H));
        in = H;
      }
      p.w.emplace_back(ConstRowMap(data + off, 2, in));
      off += static_cast<std::size_t>(2 * in);
      p.b.emplace_back(ConstVecMap(data + off, 2));
      break;
    }
  }
}

Predictor::~Predictor() = default;
Predictor::Predictor(Predictor&&) noexcept = default;
Predictor& Predictor::operator=(Predictor&&) noexcept = default;
Predictor::Predictor(const Predictor& other) : impl_(std::make_unique<Impl>(*other.impl_)) {}
Predictor& Predictor::operator=(const Predictor& other) {
  if (this != &other) impl_ = std::make_unique<Impl>(*other.impl_);
  return *this;
}

std::array<double, 2> Predictor::step_raw(const FeatureRow& row) { return impl_->step(row); }

TargetPair Predictor::step(const FeatureRow& row) {
  const auto raw = impl_->step(row);
  return TargetPair::clamped(raw[0], raw[1]);
}

std::vector<TargetPair> Predictor::run(std::span<const FeatureRow> rows) {
  std::vector<TargetPair> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(step(r));
  return out;
}

void Predictor::reset() { impl_->reset(); }

std::vector<std::array<double, 2>> predict_raw(const ModelState& model, std::span<const FeatureRow> rows,
                                               bool stateful) {
  Predictor p(model);
  std::vector<std::array<double, 2>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (!stateful) p.reset();
    out.push_back(p.step_raw(r));
  }
  return out;
}

std::vector<TargetPair> predict(const ModelState& model, std::span<const FeatureRow> rows, bool stateful) {
  std::vector<TargetPair> out;
  out.reserve(rows.size());
  for (const auto& r : predict_raw(model, rows, stateful)) out.push_back(TargetPair::clamped(r[0], r[1]));
  return out;
}

// ---------------------------------------------------------------------------
// Objective and gradient checks

double network_loss(const ModelState& model, std::span<const AlignedSequence> data,
                    std::vector<double>* grad) {
  if (grad) grad->assign(model.params.size(), 0.0);
  std::span<double> g = grad ? std::span<double>(*grad) : std::span<double>();
  switch (model.spec.kind) {
    case Architecture::Linear:
    case Architecture::Mlp: {
      ModelSpec spec = model.spec;
      if (spec.kind == Architecture::Linear) spec.hidden.clear();
      const TrainingRows rows = TrainingRows::from(data);
      require_rows(rows, "loss");
      const Mat x = detail::design_matrix(rows.x, model.norm, spec.subset);
      const Mat y = detail::target_matrix(rows.y);
      return detail::mlp_loss_grad(detail::MlpShape::of(spec), model.params, x, y, g);
    }
    case Architecture::Lstm: {
      std::vector<Mat> xs, ys;
      for (const auto& s : data) {
        xs.push_back(detail::design_matrix(s.features(), model.norm, model.spec.subset));
        ys.push_back(detail::target_matrix(s.targets()));
      }
      std::vector<detail::SequenceRef> refs;
      for (std::size_t k = 0; k < xs.size(); ++k) refs.push_back({&xs[k], &ys[k]});
      return detail::lstm_loss_grad(detail::LstmShape::of(model.spec), model.params, refs, g);
    }
    default:
      throw ValidationError(fmt::format("{} has no differentiable objective", to_string(model.spec.kind)));
  }
}

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

GradientCheckReport gradient_check(const ModelState& model, std::span<const AlignedSequence> data,
                                   double step) {
  std::vector<double> analytic;
  network_loss(model, data, &analytic);
  ModelState probe = model;
  GradientCheckReport report;
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    const double saved = probe.params[i];
    auto loss_at = [&](double offset) {
      probe.params[i] = saved + offset;
      return network_loss(probe, data, nullptr);
    };
    const double near = loss_at(step) - loss_at(-step);
    const double far = loss_at(2.0 * step) - loss_at(-2.0 * step);
    probe.params[i] = saved;
    const double numeric = (8.0 * near - far) / (12.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (err > report.max_relative_error || report.checked == 0) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  return report;
}

GradientCheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x67636bULL}));
  const bool recurrent = spec.kind == Architecture::Lstm;
  const std::size_t steps = recurrent ? 20 : 30;
  AlignedSequence seq;
  seq.id = "gradient-check";
  for (std::size_t t = 0; t < steps; ++t) {
    AlignedSample s;
    s.t = static_cast<double>(t) / kExoRate;
    for (double& v : s.f) v = rng.normal();
    s.y = TargetPair{rng.uniform(0.0, kMaxOpening), rng.uniform(-1.0, 1.0)};
    seq.samples.push_back(s);
  }
  const ModelState model = init_network(spec, Normalization::identity(), seed);
  return gradient_check(model, std::span<const AlignedSequence>(&seq, 1));
}

}  // namespace handstate
