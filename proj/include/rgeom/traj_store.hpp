#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgeom/types.hpp"

namespace rgeom {

/// Experimental condition tags. `extra` carries free-form provenance, e.g.
/// the generator spec for synthetic sets.
struct Condition {
  std::string domain;
  std::string model;
  std::string scale;
  nlohmann::json extra;  // null or object

  bool operator==(const Condition&) const = default;
};

struct DelimiterSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;

  bool operator==(const DelimiterSpan&) const = default;
};

/// Per-sample metadata. Token indices in `delimiter_span` are relative to the
/// generated region, so 0 <= start < end <= gen_len.
struct SampleMeta {
  std::string id;
  std::int64_t prompt_len = 1;
  std::int64_t gen_len = 0;
  std::uint64_t row_offset = 0;
  std::optional<DelimiterSpan> delimiter_span;
  std::optional<std::int64_t> answer_token;
  std::optional<std::string> answer_text;
  std::optional<std::string> correct_label;

  std::size_t n_states() const { return static_cast<std::size_t>(gen_len) + 1; }

  bool operator==(const SampleMeta&) const = default;
};

/// A sample as handed to the writer: metadata plus its (T+1) x d state
/// matrix. `meta.gen_len` and `meta.row_offset` are filled in by the writer.
struct TrajectoryRecord {
  SampleMeta meta;
  MatrixF states;
};

inline constexpr char kPayloadMagic[8] = {'R', 'G', 'T', 'R', 'A', 'J', '0', '1'};
inline constexpr std::size_t kPayloadHeaderBytes = 8 + 4 + 8;
inline constexpr int kManifestVersion = 1;
inline constexpr const char* kPayloadFile = "trajectories.bin";
inline constexpr const char* kManifestFile = "manifest.json";

namespace detail {
class PayloadStorage;
}

/// An immutable collection of variable-length trajectories sharing one hidden
/// dimension. Backed either by a read-only memory map of `trajectories.bin` or
/// by an owned buffer holding the same little-endian binary16 bytes, so both
/// paths decode identically. Safe for concurrent readers.
class TrajectorySet {
 public:
  /// Maps an on-disk set. Cost is proportional to the manifest, not the payload.
  static TrajectorySet open(const std::filesystem::path& dir);

  /// Builds an in-memory set with the same half-precision rounding the writer
  /// applies. Offsets are assigned in record order.
  static TrajectorySet from_records(Condition condition, std::span<const TrajectoryRecord> records,
                                    std::size_t hidden_dim = 0);

  const Condition& condition() const { return condition_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t total_rows() const { return total_rows_; }
  const std::vector<SampleMeta>& samples() const { return samples_; }
  const SampleMeta& meta(std::size_t i) const { return samples_.at(i); }

  /// Decoded (T_i + 1) x d states of sample i.
  MatrixF trajectory(std::size_t i) const;

  /// State h_t of sample i.
  VectorF state(std::size_t i, std::size_t t) const;

  /// Raw little-endian binary16 payload (total_rows x d values).
  std::span<const std::byte> payload_bytes() const;

 private:
  TrajectorySet() = default;
  void decode_row(std::uint64_t row, float* out) const;

  Condition condition_;
  std::size_t hidden_dim_ = 0;
  std::size_t total_rows_ = 0;
  std::vector<SampleMeta> samples_;
  std::shared_ptr<const detail::PayloadStorage> payload_;
};

/// Writes `manifest.json` and `trajectories.bin` into `dir` (created if
/// missing). `hidden_dim` may be 0 to infer it from the records; an empty
/// record list with no explicit dimension is written with d = 1.
void write_set(const Condition& condition, std::span<const TrajectoryRecord> records,
               const std::filesystem::path& dir, std::size_t hidden_dim = 0);

/// Indices of samples with at least `min_states` states, in original order.
IndexList filter_valid(const TrajectorySet& set, std::size_t min_states);

/// h0 rows of the selected samples (N x d).
MatrixF start_states(const TrajectorySet& set, std::span<const Index> indices);
/// h_T rows of the selected samples.
MatrixF end_states(const TrajectorySet& set, std::span<const Index> indices);
/// h_1 rows of the selected samples (first generated state).
MatrixF first_step_states(const TrajectorySet& set, std::span<const Index> indices);
/// h_T - h0 per selected sample.
MatrixF displacements(const TrajectorySet& set, std::span<const Index> indices);

/// All indices 0..size-1.
IndexList all_indices(const TrajectorySet& set);

// binary16 codec (round-to-nearest-even), exposed for tests and the unembedding reader.
std::uint16_t float_to_half_bits(float value);
float half_bits_to_float(std::uint16_t bits);

void to_json(nlohmann::json& j, const Condition& c);
void from_json(const nlohmann::json& j, Condition& c);
void to_json(nlohmann::json& j, const SampleMeta& m);
void from_json(const nlohmann::json& j, SampleMeta& m);

}  // namespace rgeom
