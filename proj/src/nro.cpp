#include "rgeom/nro.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "rgeom/autodiff.hpp"
#include "rgeom/error.hpp"
#include "rgeom/rng.hpp"

namespace rgeom {

namespace {

constexpr std::array<std::pair<Arch, const char*>, 5> kArchNames{{
    {Arch::Linear, "linear"},
    {Arch::Mlp, "mlp"},
    {Arch::DeepONet, "deeponet"},
    {Arch::Turbo, "turbo"},
    {Arch::SpectralKan, "spectral_kan"},
}};

std::size_t mlp_width(const OperatorSpec& s) { return s.mlp_width ? s.mlp_width : 2 * s.hidden_dim; }
std::size_t turbo_width(const OperatorSpec& s) { return s.turbo_width ? s.turbo_width : 2 * s.hidden_dim; }
std::size_t kan_input_dim(const OperatorSpec& s) { return s.kan_velocity ? 2 * s.hidden_dim : s.hidden_dim; }
std::size_t kan_modes(const OperatorSpec& s) { return std::min(s.kan_modes, kan_input_dim(s)); }

using ShapeList = std::vector<std::tuple<std::string, std::size_t, std::size_t, bool>>;

/// Declared parameter order per architecture: trainable tensors first, then
/// buffers, with target_mean always last.
ShapeList parameter_layout(const OperatorSpec& s) {
  const std::size_t d = s.hidden_dim;
  ShapeList out;
  auto affine = [&](const std::string& prefix, std::size_t in, std::size_t outd) {
    out.emplace_back(prefix + ".W", outd, in, true);
    out.emplace_back(prefix + ".b", 1, outd, true);
  };
  switch (s.arch) {
    case Arch::Linear:
      affine("linear", d, d);
      break;
    case Arch::Mlp: {
      const auto w = mlp_width(s);
      affine("l1", d, w);
      affine("l2", w, w);
      affine("l3", w, d);
      break;
    }
    case Arch::DeepONet:
      affine("branch.l1", d, s.deeponet_width);
      affine("branch.l2", s.deeponet_width, s.deeponet_rank);
      out.emplace_back("trunk", d, s.deeponet_rank, true);
      out.emplace_back("bias", 1, d, true);
      break;
    case Arch::Turbo: {
      const auto w = turbo_width(s);
      affine("l1", 2 * d, w);
      affine("l2", w, w);
      affine("l3", w, d);
      break;
    }
    case Arch::SpectralKan: {
      const auto m = kan_modes(s);
      out.emplace_back("kan.knots", m, s.kan_knots, true);
      out.emplace_back("kan.B", d, m, true);
      out.emplace_back("basis.mean", 1, kan_input_dim(s), false);
      out.emplace_back("basis.proj", m, kan_input_dim(s), false);
      break;
    }
  }
  out.emplace_back("target_mean", 1, d, false);
  return out;
}

void validate_spec(const OperatorSpec& s) {
  if (s.hidden_dim == 0) throw UsageError("operator spec: hidden_dim must be positive");
  if (s.arch == Arch::DeepONet && (s.deeponet_width == 0 || s.deeponet_rank == 0)) {
    throw UsageError("operator spec: deeponet width and rank must be positive");
  }
  if (s.arch == Arch::SpectralKan && (s.kan_knots < 2 || s.kan_modes == 0 || !(s.kan_range > 0.0))) {
    throw UsageError("operator spec: spectral_kan needs >= 2 knots, >= 1 mode and a positive range");
  }
}

std::vector<Parameter> init_parameters(const OperatorSpec& spec, std::uint64_t seed) {
  std::vector<Parameter> params;
  const auto layout = parameter_layout(spec);
  std::size_t fan_in = spec.hidden_dim;
  for (std::size_t p = 0; p < layout.size(); ++p) {
    const auto& [name, rows, cols, trainable] = layout[p];
    Rng rng(derive_seed(seed, 0x1417, p));
    MatrixF v(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const bool is_weight = name.ends_with(".W");
    const bool is_bias = name.ends_with(".b");
    if (is_weight) fan_in = cols;
    if (is_weight || is_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    } else if (name == "trunk" || name == "kan.B") {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(0.02 * rng.normal());
    } else if (name == "kan.knots") {
      // Start every univariate function at the identity.
      const double lo = -spec.kan_range;
      const double h = 2.0 * spec.kan_range / static_cast<double>(cols - 1);
      for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<float>(lo + h * static_cast<double>(c));
    } else if (name == "basis.proj") {
      v.setIdentity();
    } else {
      v.setZero();
    }
    params.push_back({name, std::move(v), trainable});
  }
  return params;
}

template <typename S>
ad::Var affine(ad::Tape<S>& t, ad::Var x, ad::Var w, ad::Var b) {
  return t.add_row(t.matmul_t(x, w), b);
}

/// Spectral coordinates (x - mean) proj^T, computed off-tape since the basis
/// is a fitted buffer.
template <typename S>
ad::Mat<S> spectral_coords(const OperatorSpec& spec, const ad::Mat<S>& h0, const ad::Mat<S>* h1,
                           const ad::Mat<S>& mean, const ad::Mat<S>& proj) {
  ad::Mat<S> x;
  if (spec.kan_velocity) {
    x.resize(h0.rows(), 2 * h0.cols());
    x << h0, (*h1 - h0);
  } else {
    x = h0;
  }
  x.rowwise() -= mean.row(0);
  return x * proj.transpose();
}

/// Records the forward pass. `p` holds tape vars for every parameter in
/// declared order; `values` their matrices (for off-tape buffers).
template <typename S>
ad::Var forward_graph(ad::Tape<S>& t, const OperatorSpec& spec, std::span<const ad::Var> p,
                      std::span<const ad::Mat<S>> values, ad::Var h0, std::optional<ad::Var> h1) {
  switch (spec.arch) {
    case Arch::Linear:
      return affine(t, h0, p[0], p[1]);
    case Arch::Mlp: {
      auto a = t.gelu(affine(t, h0, p[0], p[1]));
      a = t.gelu(affine(t, a, p[2], p[3]));
      return affine(t, a, p[4], p[5]);
    }
    case Arch::DeepONet: {
      auto b = t.gelu(affine(t, h0, p[0], p[1]));
      b = affine(t, b, p[2], p[3]);
      return t.add_row(t.matmul_t(b, p[4]), p[5]);
    }
    case Arch::Turbo: {
      const auto x = t.concat_cols(h0, t.sub(*h1, h0));
      auto a = t.gelu(affine(t, x, p[0], p[1]));
      a = t.gelu(affine(t, a, p[2], p[3]));
      return t.add(h0, affine(t, a, p[4], p[5]));
    }
    case Arch::SpectralKan: {
      const ad::Mat<S>* h1v = h1 ? &t.value(*h1) : nullptr;
      const auto z = t.input(spectral_coords<S>(spec, t.value(h0), h1v, values[2], values[3]));
      const auto phi = t.piecewise_linear(z, p[0], static_cast<S>(-spec.kan_range), static_cast<S>(spec.kan_range));
      return t.add(h0, t.matmul_t(phi, p[1]));
    }
  }
  throw UsageError("unhandled architecture");
}

double mse_of(const MatrixF& pred, const MatrixF& target) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

std::optional<double> improvement(double baseline, double model) {
  if (baseline > 0.0) return (baseline - model) / baseline;
  if (model == 0.0) return 0.0;
  return std::nullopt;
}

}  // namespace

std::string to_string(Arch arch) {
  for (const auto& [a, n] : kArchNames)
    if (a == arch) return n;
  return "unknown";
}

Arch arch_from_string(const std::string& name) {
  std::string key = name;
  std::replace(key.begin(), key.end(), '-', '_');
  for (const auto& [a, n] : kArchNames)
    if (key == n) return a;
  throw UsageError("unknown architecture '" + name + "'");
}

bool OperatorSpec::needs_velocity() const { return arch == Arch::Turbo || (arch == Arch::SpectralKan && kan_velocity); }

OperatorModel::OperatorModel(OperatorSpec spec, std::vector<Parameter> params, std::uint64_t init_seed)
    : spec_(std::move(spec)), params_(std::move(params)), init_seed_(init_seed) {}

Parameter& OperatorModel::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw UsageError("no parameter named " + name);
}

const Parameter& OperatorModel::parameter(const std::string& name) const {
  return const_cast<OperatorModel*>(this)->parameter(name);
}

std::size_t OperatorModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  return n;
}

VectorF OperatorModel::target_mean() const { return parameter("target_mean").value.row(0).transpose(); }

void OperatorModel::set_target_mean(const VectorF& mean) {
  if (static_cast<std::size_t>(mean.size()) != spec_.hidden_dim) throw UsageError("target mean has wrong size");
  parameter("target_mean").value.row(0) = mean.transpose();
}

MatrixF OperatorModel::forward(const MatrixF& h0, const MatrixF* h1) const {
  if (static_cast<std::size_t>(h0.cols()) != spec_.hidden_dim) {
    throw UsageError("forward: input width " + std::to_string(h0.cols()) + " != hidden_dim " +
                     std::to_string(spec_.hidden_dim));
  }
  if (spec_.needs_velocity()) {
    if (h1 == nullptr) throw UsageError("forward: " + to_string(spec_.arch) + " requires h1");
    if (h1->rows() != h0.rows() || h1->cols() != h0.cols()) throw UsageError("forward: h1 shape mismatch");
  }
  ad::Tape<float> tape;
  std::vector<ad::Var> vars;
  std::vector<MatrixF> values;
  for (const auto& p : params_) {
    vars.push_back(tape.input(p.value));
    values.push_back(p.value);
  }
  const auto x0 = tape.input(h0);
  std::optional<ad::Var> x1;
  if (h1 != nullptr && spec_.needs_velocity()) x1 = tape.input(*h1);
  const auto out = forward_graph<float>(tape, spec_, vars, values, x0, x1);
  return tape.value(out);
}

void OperatorModel::fit_spectral_basis(const MatrixF& h0, const MatrixF* h1) {
  if (spec_.arch != Arch::SpectralKan) return;
  if (h0.rows() < 2) throw UsageError("spectral basis: need at least 2 training rows");
  MatrixD x;
  if (spec_.kan_velocity) {
    if (h1 == nullptr) throw UsageError("spectral basis: velocity features need h1");
    x.resize(h0.rows(), 2 * h0.cols());
    x << h0.cast<double>(), (*h1 - h0).cast<double>();
  } else {
    x = h0.cast<double>();
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("spectral basis: eigendecomposition failed");
  const auto m = static_cast<Eigen::Index>(kan_modes(spec_));
  const auto n = cov.rows();
  const double top = std::max(solver.eigenvalues()[n - 1], 0.0);
  MatrixF proj = MatrixF::Zero(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double lambda = solver.eigenvalues()[n - 1 - i];
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    if (lambda > 1e-12 * top && lambda > 0.0) proj.row(i) = (v / std::sqrt(lambda)).transpose().cast<float>();
  }
  parameter("basis.mean").value.row(0) = mean.cast<float>();
  parameter("basis.proj").value = proj;
}

OperatorModel build_operator(const OperatorSpec& spec, std::uint64_t init_seed) {
  validate_spec(spec);
  return OperatorModel(spec, init_parameters(spec, init_seed), init_seed);
}

EndpointData endpoint_data(const TrajectorySet& set, std::span<const Index> indices) {
  return {start_states(set, indices), first_step_states(set, indices), end_states(set, indices)};
}

EndpointData subset(const EndpointData& data, std::span<const Index> rows) {
  EndpointData out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.h0.resize(n, data.h0.cols());
  out.h1.resize(n, data.h1.cols());
  out.hT.resize(n, data.hT.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    out.h0.row(r) = data.h0.row(i);
    out.h1.row(r) = data.h1.row(i);
    out.hT.row(r) = data.hT.row(i);
  }
  return out;
}

Split split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw UsageError("split fractions must sum to 1");
  }
  for (const double f : fractions)
    if (f < 0.0) throw UsageError("split fractions must be non-negative");
  if (n < 10) throw UsageError("split_dataset: need at least 10 samples");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  // The small epsilon keeps e.g. 0.7 * 100 from flooring to 69.
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n) + 1e-9));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
               perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return s;
}

double cosine_lr(const TrainConfig& config, std::size_t epoch) {
  const double e = static_cast<double>(epoch);
  const double total = static_cast<double>(std::max<std::size_t>(config.epochs, 1));
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * e / total));
}

EvalMetrics evaluate_predictions(const MatrixF& predictions, const EndpointData& test,
                                 const VectorF& train_target_mean) {
  if (test.size() == 0) throw UsageError("evaluate: empty test set");
  if (predictions.rows() != test.hT.rows() || predictions.cols() != test.hT.cols()) {
    throw UsageError("evaluate: prediction shape mismatch");
  }
  EvalMetrics m;
  m.n = test.size();
  m.mse = mse_of(predictions, test.hT);
  m.identity_mse = mse_of(test.h0, test.hT);
  MatrixF mean_pred = train_target_mean.transpose().replicate(test.hT.rows(), 1);
  m.mean_mse = mse_of(mean_pred, test.hT);
  if (m.mean_mse > 0.0) m.relative_mse = m.mse / m.mean_mse;
  m.improvement_vs_identity = improvement(m.identity_mse, m.mse);
  m.improvement_vs_mean = improvement(m.mean_mse, m.mse);

  double cos_sum = 0.0;
  std::size_t used = 0;
  for (Eigen::Index i = 0; i < test.hT.rows(); ++i) {
    const Eigen::VectorXd y = test.hT.row(i).cast<double>();
    const Eigen::VectorXd p = predictions.row(i).cast<double>();
    if (y.norm() == 0.0) {
      ++m.cosine_skipped;
      continue;
    }
    const double pn = p.norm();
    cos_sum += pn > 0.0 ? p.dot(y) / (pn * y.norm()) : 0.0;
    ++used;
  }
  m.mean_cosine = used ? cos_sum / static_cast<double>(used) : 0.0;
  return m;
}

EvalMetrics evaluate(const OperatorModel& model, const EndpointData& test) {
  const MatrixF pred = model.forward(test.h0, model.spec().needs_velocity() ? &test.h1 : nullptr);
  return evaluate_predictions(pred, test, model.target_mean());
}

TrainResult train(const OperatorSpec& spec, const EndpointData& data, const TrainConfig& config,
                  std::optional<std::uint64_t> init_seed) {
  const auto started = std::chrono::steady_clock::now();
  if (static_cast<std::size_t>(data.h0.cols()) != spec.hidden_dim) {
    throw UsageError("train: data width does not match hidden_dim");
  }
  if (config.batch_size == 0 || config.epochs == 0) throw UsageError("train: batch size and epochs must be positive");

  TrainResult result;
  result.split = split_dataset(data.size(), config.split, config.seed);
  const auto& split = result.split;
  if (split.train.empty() || split.val.empty() || split.test.empty()) {
    throw UsageError("train: every split must hold at least one sample");
  }
  const EndpointData train_set = subset(data, split.train);
  const EndpointData val_set = subset(data, split.val);
  const EndpointData test_set = subset(data, split.test);

  const std::uint64_t seed = init_seed.value_or(config.seed);
  OperatorModel model = build_operator(spec, seed);
  model.fit_spectral_basis(train_set.h0, &train_set.h1);
  model.set_target_mean(train_set.hT.colwise().mean().transpose());

  auto& params = model.parameters();
  std::vector<MatrixF> m1, m2;
  for (const auto& p : params) {
    m1.push_back(MatrixF::Zero(p.value.rows(), p.value.cols()));
    m2.push_back(MatrixF::Zero(p.value.rows(), p.value.cols()));
  }
  const bool velocity = spec.needs_velocity();

  TrainReport& report = result.report;
  report.spec = spec;
  report.config = config;
  report.init_seed = seed;
  report.n_train = split.train.size();
  report.n_val = split.val.size();
  report.n_test = split.test.size();
  report.parameter_count = model.parameter_count();

  std::vector<Parameter> best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  const std::size_t n_train = train_set.size();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config, epoch);
    Rng shuffle(derive_seed(config.seed, 0x5348, epoch));
    const auto order = shuffle.permutation(n_train);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      const std::span<const Index> rows(order.data() + start, stop - start);
      const EndpointData batch = subset(train_set, rows);

      ad::Tape<float> tape;
      std::vector<ad::Var> vars;
      std::vector<MatrixF> values;
      for (const auto& p : params) {
        vars.push_back(tape.input(p.value));
        values.push_back(p.value);
      }
      const auto x0 = tape.input(batch.h0);
      std::optional<ad::Var> x1;
      if (velocity) x1 = tape.input(batch.h1);
      const auto target = tape.input(batch.hT);
      const auto pred = forward_graph<float>(tape, spec, vars, values, x0, x1);
      const auto loss = tape.mse(pred, target);
      const double loss_value = tape.value(loss)(0, 0);
      if (!std::isfinite(loss_value)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start) + " (lr " + std::to_string(lr) + ")");
      }
      loss_sum += loss_value * static_cast<double>(stop - start);
      tape.backward(loss);

      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const auto b1 = static_cast<float>(config.beta1);
      const auto b2 = static_cast<float>(config.beta2);
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable) continue;
        const MatrixF& g = tape.grad(vars[p]);
        m1[p] = b1 * m1[p] + (1.0f - b1) * g;
        m2[p] = b2 * m2[p] + (1.0f - b2) * g.cwiseProduct(g);
        auto& w = params[p].value;
        w *= static_cast<float>(1.0 - lr * config.weight_decay);
        const auto step_size = static_cast<float>(lr / bc1);
        const auto denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
        w.array() -= step_size * m1[p].array() /
                     (m2[p].array().sqrt() * denom_scale + static_cast<float>(config.eps));
      }
    }

    const MatrixF val_pred = model.forward(val_set.h0, velocity ? &val_set.h1 : nullptr);
    const double val_mse = mse_of(val_pred, val_set.hT);
    if (!std::isfinite(val_mse)) {
      throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    report.epochs.push_back({epoch, lr, loss_sum / static_cast<double>(n_train), val_mse});
    if (val_mse < best_val) {
      best_val = val_mse;
      best = params;
      report.best_epoch = epoch;
    }
  }

  params = best;
  report.best_val_mse = best_val;
  report.test = evaluate(model, test_set);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.model = std::move(model);
  return result;
}

GradCheckResult grad_check(const OperatorSpec& spec, std::size_t n_probes, double eps, std::uint64_t seed) {
  validate_spec(spec);
  constexpr Eigen::Index kBatch = 5;
  const auto d = static_cast<Eigen::Index>(spec.hidden_dim);
  Rng rng(derive_seed(seed, 0x6c6b));

  auto random = [&](Eigen::Index r, Eigen::Index c, double scale) {
    MatrixD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
  };
  const MatrixD h0 = random(kBatch, d, 1.0);
  const MatrixD h1 = h0 + random(kBatch, d, 1.0);
  const MatrixD target = random(kBatch, d, 1.0);

  OperatorModel model = build_operator(spec, seed);
  if (spec.arch == Arch::SpectralKan) {
    const MatrixD fit0 = random(64, d, 1.0);
    const MatrixD fit1 = fit0 + random(64, d, 1.0);
    const MatrixF f0 = fit0.cast<float>(), f1 = fit1.cast<float>();
    model.fit_spectral_basis(f0, &f1);
  }
  std::vector<MatrixD> values;
  std::vector<bool> trainable;
  for (const auto& p : model.parameters()) {
    MatrixD v = p.value.cast<double>();
    if (p.trainable) v += random(v.rows(), v.cols(), 0.1);
    values.push_back(std::move(v));
    trainable.push_back(p.trainable);
  }
  const bool velocity = spec.needs_velocity();

  // Loss and its tape for the given parameter values and input.
  auto run = [&](const std::vector<MatrixD>& vals, const MatrixD& x0, ad::Tape<double>& tape,
                 std::vector<ad::Var>& vars, ad::Var& in0) {
    vars.clear();
    for (const auto& v : vals) vars.push_back(tape.input(v));
    in0 = tape.input(x0);
    std::optional<ad::Var> in1;
    if (velocity) in1 = tape.input(h1);
    const auto pred = forward_graph<double>(tape, spec, vars, vals, in0, in1);
    return tape.mse(pred, tape.input(target));
  };

  ad::Tape<double> tape;
  std::vector<ad::Var> vars;
  ad::Var in0;
  const auto loss = run(values, h0, tape, vars, in0);
  tape.backward(loss);

  auto loss_at = [&](const std::vector<MatrixD>& vals, const MatrixD& x0) {
    ad::Tape<double> t;
    std::vector<ad::Var> v;
    ad::Var i0;
    return t.value(run(vals, x0, t, v, i0))(0, 0);
  };

  // Candidate tensors: trainable parameters, plus the input where the map is smooth in it.
  std::vector<int> candidates;
  for (std::size_t p = 0; p < values.size(); ++p)
    if (trainable[p]) candidates.push_back(static_cast<int>(p));
  const bool probe_input = spec.arch != Arch::SpectralKan;
  if (probe_input) candidates.push_back(-1);

  GradCheckResult result;
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    const int which = candidates[rng.below(candidates.size())];
    double analytic = 0.0;
    double numeric = 0.0;
    if (which >= 0) {
      auto& v = values[static_cast<std::size_t>(which)];
      const auto e = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(v.size())));
      analytic = tape.grad(vars[static_cast<std::size_t>(which)]).data()[e];
      const double saved = v.data()[e];
      v.data()[e] = saved + eps;
      const double up = loss_at(values, h0);
      v.data()[e] = saved - eps;
      const double down = loss_at(values, h0);
      v.data()[e] = saved;
      numeric = (up - down) / (2.0 * eps);
    } else {
      const auto e = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(h0.size())));
      analytic = tape.grad(in0).data()[e];
      MatrixD x = h0;
      x.data()[e] += eps;
      const double up = loss_at(values, x);
      x.data()[e] -= 2.0 * eps;
      const double down = loss_at(values, x);
      numeric = (up - down) / (2.0 * eps);
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.probes;
  }
  return result;
}

// ---- serialisation ----------------------------------------------------------

void to_json(nlohmann::json& j, const OperatorSpec& s) {
  j = nlohmann::json{{"arch", to_string(s.arch)},
                     {"hidden_dim", s.hidden_dim},
                     {"mlp_width", mlp_width(s)},
                     {"deeponet_width", s.deeponet_width},
                     {"deeponet_rank", s.deeponet_rank},
                     {"turbo_width", turbo_width(s)},
                     {"kan_modes", s.kan_modes},
                     {"kan_knots", s.kan_knots},
                     {"kan_range", s.kan_range},
                     {"kan_velocity", s.kan_velocity}};
}

void from_json(const nlohmann::json& j, OperatorSpec& s) {
  s = OperatorSpec{};
  s.arch = arch_from_string(j.at("arch").get<std::string>());
  j.at("hidden_dim").get_to(s.hidden_dim);
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("mlp_width", s.mlp_width);
  read("deeponet_width", s.deeponet_width);
  read("deeponet_rank", s.deeponet_rank);
  read("turbo_width", s.turbo_width);
  read("kan_modes", s.kan_modes);
  read("kan_knots", s.kan_knots);
  read("kan_range", s.kan_range);
  read("kan_velocity", s.kan_velocity);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"optimizer", "adamw"},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"schedule", "cosine"},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"split", c.split},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("lr", c.lr);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("eps", c.eps);
  read("weight_decay", c.weight_decay);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("split", c.split);
  read("seed", c.seed);
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> opt_read(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace

void to_json(nlohmann::json& j, const EvalMetrics& m) {
  j = nlohmann::json{{"n", m.n},
                     {"mse", m.mse},
                     {"mean_cosine", m.mean_cosine},
                     {"cosine_skipped", m.cosine_skipped},
                     {"identity_mse", m.identity_mse},
                     {"mean_mse", m.mean_mse},
                     {"relative_mse", opt(m.relative_mse)},
                     {"improvement_vs_identity", opt(m.improvement_vs_identity)},
                     {"improvement_vs_mean", opt(m.improvement_vs_mean)}};
}

void from_json(const nlohmann::json& j, EvalMetrics& m) {
  j.at("n").get_to(m.n);
  j.at("mse").get_to(m.mse);
  j.at("mean_cosine").get_to(m.mean_cosine);
  j.at("cosine_skipped").get_to(m.cosine_skipped);
  j.at("identity_mse").get_to(m.identity_mse);
  j.at("mean_mse").get_to(m.mean_mse);
  m.relative_mse = opt_read(j, "relative_mse");
  m.improvement_vs_identity = opt_read(j, "improvement_vs_identity");
  m.improvement_vs_mean = opt_read(j, "improvement_vs_mean");
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
  }
  j = nlohmann::json{{"spec", r.spec},
                     {"config", r.config},
                     {"init_seed", r.init_seed},
                     {"split_sizes", {r.n_train, r.n_val, r.n_test}},
                     {"parameter_count", r.parameter_count},
                     {"epochs", std::move(epochs)},
                     {"best_epoch", r.best_epoch},
                     {"best_val_mse", r.best_val_mse},
                     {"test", r.test}};
}

namespace detail {

namespace {
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
}  // namespace

void write_blob_file(const std::filesystem::path& path, const char (&magic)[8], const nlohmann::json& header,
                     std::span<const MatrixF* const> blobs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  const std::string text = header.dump();
  out.write(magic, 8);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const MatrixF* m : blobs) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      std::uint32_t bits = 0;
      const float f = m->data()[i];
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  if (!out) throw UsageError("short write to " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path, const char (&magic)[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw FormatError("bad magic in " + path.string());
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + static_cast<std::size_t>(i)]) << (8 * i);
  if (16 + len > bytes.size()) throw FormatError("truncated header in " + path.string());
  BlobFile out;
  try {
    out.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad header JSON in " + path.string() + ": " + e.what());
  }
  const std::size_t rest = bytes.size() - 16 - len;
  if (rest % 4 != 0) throw FormatError("payload of " + path.string() + " is not a whole number of floats");
  out.payload.resize(rest / 4);
  for (std::size_t i = 0; i < out.payload.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[16 + len + 4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    std::memcpy(&out.payload[i], &bits, 4);
  }
  return out;
}

}  // namespace detail

void save_operator(const std::filesystem::path& path, const OperatorModel& model, const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = "rgeom-operator";
  header["version"] = 1;
  header["spec"] = model.spec();
  header["init_seed"] = model.init_seed();
  header["parameter_count"] = model.parameter_count();
  nlohmann::json table = nlohmann::json::array();
  std::vector<const MatrixF*> blobs;
  for (const auto& p : model.parameters()) {
    table.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"trainable", p.trainable}});
    blobs.push_back(&p.value);
  }
  header["parameters"] = std::move(table);
  header["extra"] = extra;
  detail::write_blob_file(path, kOperatorMagic, header, blobs);
}

LoadedOperator load_operator(const std::filesystem::path& path) {
  auto file = detail::read_blob_file(path, kOperatorMagic);
  LoadedOperator out;
  out.header = std::move(file.header);
  try {
    const auto spec = out.header.at("spec").get<OperatorSpec>();
    const auto seed = out.header.at("init_seed").get<std::uint64_t>();
    auto params = init_parameters(spec, seed);
    const auto& table = out.header.at("parameters");
    if (table.size() != params.size()) throw FormatError("parameter table does not match architecture");
    std::size_t offset = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto& entry = table[p];
      if (entry.at("name").get<std::string>() != params[p].name ||
          entry.at("shape")[0].get<Eigen::Index>() != params[p].value.rows() ||
          entry.at("shape")[1].get<Eigen::Index>() != params[p].value.cols()) {
        throw FormatError("parameter " + std::to_string(p) + " does not match the declared layout");
      }
      const auto count = static_cast<std::size_t>(params[p].value.size());
      if (offset + count > file.payload.size()) throw FormatError("parameter blob is truncated");
      std::copy_n(file.payload.begin() + static_cast<std::ptrdiff_t>(offset), count, params[p].value.data());
      offset += count;
    }
    if (offset != file.payload.size()) throw FormatError("parameter blob has trailing data");
    out.model = OperatorModel(spec, std::move(params), seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed operator header: " + std::string(e.what()));
  }
  return out;
}

}  // namespace rgeom
