#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgeom/traj_store.hpp"
#include "rgeom/types.hpp"

namespace rgeom {

/// Endpoint operator architectures.
enum class Arch { Linear, Mlp, DeepONet, Turbo, SpectralKan };

std::string to_string(Arch arch);
/// Accepts both "spectral-kan" and "spectral_kan".
Arch arch_from_string(const std::string& name);

struct OperatorSpec {
  Arch arch = Arch::Linear;
  std::size_t hidden_dim = 0;
  std::size_t mlp_width = 0;  // 0 means 2d
  std::size_t deeponet_width = 512;
  std::size_t deeponet_rank = 128;
  std::size_t turbo_width = 0;  // 0 means 2d
  std::size_t kan_modes = 64;
  std::size_t kan_knots = 16;
  double kan_range = 4.0;
  bool kan_velocity = false;  // spectral coordinates of concat(h0, h1 - h0)

  /// True when forward() needs h1.
  bool needs_velocity() const;
};

struct Parameter {
  std::string name;
  MatrixF value;
  bool trainable = true;
};

/// A built or trained endpoint map h0 -> hT. Parameters are kept in a fixed
/// declared order per architecture (see README); non-trainable entries are
/// fitted buffers (spectral basis) and the training-target mean.
class OperatorModel {
 public:
  OperatorModel() = default;
  OperatorModel(OperatorSpec spec, std::vector<Parameter> params, std::uint64_t init_seed);

  const OperatorSpec& spec() const { return spec_; }
  std::uint64_t init_seed() const { return init_seed_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  /// Number of trainable scalars.
  std::size_t parameter_count() const;

  /// Predicted terminal states for each row of h0. `h1` is required when
  /// spec().needs_velocity().
  MatrixF forward(const MatrixF& h0, const MatrixF* h1 = nullptr) const;

  /// Mean of the training targets, used by the mean-predictor baseline.
  VectorF target_mean() const;
  void set_target_mean(const VectorF& mean);

  /// Fits the spectral basis (PCA mean, whitened top modes) of a spectral_kan
  /// model to training inputs. No-op for other architectures.
  void fit_spectral_basis(const MatrixF& h0, const MatrixF* h1 = nullptr);

 private:
  OperatorSpec spec_;
  std::vector<Parameter> params_;
  std::uint64_t init_seed_ = 0;
};

OperatorModel build_operator(const OperatorSpec& spec, std::uint64_t init_seed);

// ---- data -------------------------------------------------------------------

/// Row-aligned (h0, h1, hT) triples.
struct EndpointData {
  MatrixF h0, h1, hT;
  std::size_t size() const { return static_cast<std::size_t>(h0.rows()); }
};

/// Triples from every selected sample (each needs T >= 1).
EndpointData endpoint_data(const TrajectorySet& set, std::span<const Index> indices);
EndpointData subset(const EndpointData& data, std::span<const Index> rows);

struct Split {
  IndexList train, val, test;
};

/// Seeded permutation, then contiguous slices. Train and validation counts
/// are floored; the remainder goes to test.
Split split_dataset(std::size_t n, std::array<double, 3> fractions = {0.70, 0.15, 0.15},
                    std::uint64_t seed = 42);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::array<double, 3> split{0.70, 0.15, 0.15};
  std::uint64_t seed = 42;
};

/// Cosine annealing to zero over `epochs`, evaluated per epoch.
double cosine_lr(const TrainConfig& config, std::size_t epoch);

struct EvalMetrics {
  std::size_t n = 0;
  double mse = 0.0;  // per element
  double mean_cosine = 0.0;
  std::size_t cosine_skipped = 0;  // zero-norm targets
  double identity_mse = 0.0;
  double mean_mse = 0.0;
  std::optional<double> relative_mse;  // mse / mean_mse
  std::optional<double> improvement_vs_identity;
  std::optional<double> improvement_vs_mean;
};

/// Metrics of arbitrary predictions against `test`; the mean baseline uses
/// `train_target_mean`. An improvement over a zero-MSE baseline is 0 when the
/// predictions are also exact and undefined otherwise.
EvalMetrics evaluate_predictions(const MatrixF& predictions, const EndpointData& test,
                                 const VectorF& train_target_mean);
EvalMetrics evaluate(const OperatorModel& model, const EndpointData& test);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainReport {
  OperatorSpec spec;
  TrainConfig config;
  std::uint64_t init_seed = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::size_t parameter_count = 0;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  EvalMetrics test;
  double wall_clock_seconds = 0.0;  // not serialised
};

struct TrainResult {
  OperatorModel model;
  TrainReport report;
  Split split;
};

/// Full protocol: split, AdamW with cosine annealing, MSE loss, best
/// validation checkpoint, test metrics. Throws NumericalError on a non-finite
/// loss.
TrainResult train(const OperatorSpec& spec, const EndpointData& data, const TrainConfig& config,
                  std::optional<std::uint64_t> init_seed = std::nullopt);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

/// Analytic gradients of the MSE loss against central finite differences in
/// double precision, at `n_probes` random coordinates of parameters (and of
/// the input h0 for architectures without piecewise-linear units).
GradCheckResult grad_check(const OperatorSpec& spec, std::size_t n_probes, double eps, std::uint64_t seed = 0);

// ---- checkpoints ------------------------------------------------------------

inline constexpr char kOperatorMagic[8] = {'R', 'G', 'O', 'P', 'E', 'R', '0', '1'};

/// Writes magic, u64 LE header length, JSON header (spec, seeds, parameter
/// table, `extra`), then every parameter as LE float32 in declared order.
void save_operator(const std::filesystem::path& path, const OperatorModel& model,
                   const nlohmann::json& extra = nlohmann::json::object());

struct LoadedOperator {
  OperatorModel model;
  nlohmann::json header;
};
LoadedOperator load_operator(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const OperatorSpec& s);
void from_json(const nlohmann::json& j, OperatorSpec& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalMetrics& m);
void from_json(const nlohmann::json& j, EvalMetrics& m);
void to_json(nlohmann::json& j, const TrainReport& r);

// Shared with the probe module.
namespace detail {
void write_blob_file(const std::filesystem::path& path, const char (&magic)[8], const nlohmann::json& header,
                     std::span<const MatrixF* const> blobs);
struct BlobFile {
  nlohmann::json header;
  std::vector<float> payload;
};
BlobFile read_blob_file(const std::filesystem::path& path, const char (&magic)[8]);
}  // namespace detail

}  // namespace rgeom
