#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgeom/nro.hpp"
#include "rgeom/traj_store.hpp"
#include "rgeom/types.hpp"

namespace rgeom {

// ---- answer targets ---------------------------------------------------------

struct AnswerTarget {
  Index sample = 0;
  std::int64_t token = 0;
};

struct AnswerTargets {
  std::vector<AnswerTarget> targets;
  std::vector<Diagnostic> excluded;
};

/// True for text that is empty or consists solely of Unicode whitespace
/// (UTF-8). Malformed UTF-8 counts as non-whitespace.
bool is_whitespace_text(std::string_view utf8);

/// One label per sample that has a delimiter and a following
/// non-whitespace answer token; everything else is excluded with a reason.
AnswerTargets build_answer_targets(const TrajectorySet& set);

/// Terminal states of the labelled samples, in target order.
MatrixF target_states(const TrajectorySet& set, const AnswerTargets& targets);
std::vector<std::int64_t> target_labels(const AnswerTargets& targets);

// ---- probe ------------------------------------------------------------------

/// Affine map d -> |class_vocab| followed by a softmax over the observed
/// answer vocabulary.
struct ProbeModel {
  std::vector<std::int64_t> class_vocab;  // sorted, deduplicated, nonempty
  MatrixF weight;                         // C x d
  MatrixF bias;                           // 1 x C
  std::int64_t majority_label = 0;        // from the training split; ties -> lowest id
  TrainConfig config;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::optional<std::string> warning;

  std::size_t hidden_dim() const { return static_cast<std::size_t>(weight.cols()); }
  MatrixF logits(const MatrixF& states) const;
  /// Argmax class per row (lowest index on ties), mapped to token ids.
  std::vector<std::int64_t> predict(const MatrixF& states) const;
};

struct ProbeEval {
  std::size_t n = 0;
  double accuracy = 0.0;
  double majority_baseline = 0.0;  // accuracy of always answering the training majority label
  double lift = 0.0;               // accuracy - majority_baseline
};

struct ProbeTrainResult {
  ProbeModel model;
  Split split;
  ProbeEval test;
};

/// Probe defaults: the operator protocol with a learning rate suited to a
/// convex single-layer problem.
TrainConfig default_probe_config();

/// Multinomial logistic regression with cross-entropy, AdamW and cosine
/// schedule on the 70/15/15 split; the checkpoint with the best validation
/// accuracy (ties: lower validation loss) is kept. Single-class data yields a
/// constant predictor with a warning.
ProbeTrainResult train_probe(const MatrixF& states, std::span<const std::int64_t> labels,
                             const TrainConfig& config = default_probe_config());

ProbeEval eval_probe(const ProbeModel& probe, const MatrixF& states, std::span<const std::int64_t> labels);

inline constexpr char kProbeMagic[8] = {'R', 'G', 'P', 'R', 'O', 'B', 'E', '1'};

void save_probe(const std::filesystem::path& path, const ProbeModel& probe,
                const nlohmann::json& extra = nlohmann::json::object());
ProbeModel load_probe(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ProbeEval& e);

// ---- frozen unembedding -----------------------------------------------------

/// argmax_v (U state)_v with ties broken by the lowest token id.
Index frozen_unembed_decode(const MatrixF& unembedding, const VectorF& state);

inline constexpr char kUnembeddingMagic[8] = {'R', 'G', 'U', 'N', 'E', 'M', 'B', '1'};

/// Magic, u32 LE V, u32 LE d, then V x d LE float32 row-major.
void write_unembedding(const std::filesystem::path& path, const MatrixF& unembedding);
MatrixF read_unembedding(const std::filesystem::path& path);

}  // namespace rgeom
