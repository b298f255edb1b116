#include "rgeom/traj_store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rgeom/error.hpp"

namespace rgeom {

namespace detail {

/// Read-only view of payload bytes, either mapped from disk or owned.
class PayloadStorage {
 public:
  explicit PayloadStorage(std::vector<std::byte> owned) : owned_(std::move(owned)) {
    data_ = owned_.data();
    size_ = owned_.size();
  }

  PayloadStorage(const std::filesystem::path& file) {
    fd_ = ::open(file.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw FormatError("cannot open payload " + file.string());
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw FormatError("cannot stat payload " + file.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw FormatError("cannot map payload " + file.string());
      }
      mapped_ = p;
      data_ = static_cast<const std::byte*>(p);
    }
  }

  PayloadStorage(const PayloadStorage&) = delete;
  PayloadStorage& operator=(const PayloadStorage&) = delete;

  ~PayloadStorage() {
    if (mapped_ != nullptr) ::munmap(mapped_, size_);
    if (fd_ >= 0) ::close(fd_);
  }

  std::span<const std::byte> bytes() const { return {data_, size_}; }

 private:
  std::vector<std::byte> owned_;
  void* mapped_ = nullptr;
  int fd_ = -1;
  const std::byte* data_ = nullptr;
  std::size_t size_ = 0;
};

}  // namespace detail

namespace {

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const std::byte* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  }
  return static_cast<T>(v);
}

std::string sample_label(const SampleMeta& m, std::size_t i) {
  return m.id.empty() ? "#" + std::to_string(i) : m.id;
}

void validate_meta(const SampleMeta& m, std::size_t i) {
  if (m.prompt_len < 1) {
    throw UsageError("sample " + sample_label(m, i) + ": prompt_len must be >= 1");
  }
  if (m.gen_len < 0) throw UsageError("sample " + sample_label(m, i) + ": negative gen_len");
  if (m.delimiter_span) {
    const auto& s = *m.delimiter_span;
    if (!(0 <= s.start && s.start < s.end && s.end <= m.gen_len)) {
      throw UsageError("sample " + sample_label(m, i) + ": delimiter_span outside generated region");
    }
  }
  if (m.answer_token && !m.delimiter_span) {
    throw UsageError("sample " + sample_label(m, i) + ": answer_token without delimiter_span");
  }
}

/// Encodes records into (metadata with offsets, payload bytes including header).
std::pair<std::vector<SampleMeta>, std::vector<std::byte>> encode(
    std::span<const TrajectoryRecord> records, std::size_t& hidden_dim) {
  if (hidden_dim == 0) hidden_dim = records.empty() ? 1 : static_cast<std::size_t>(records[0].states.cols());
  std::uint64_t total_rows = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.states.rows() < 1) {
      throw UsageError("sample " + sample_label(r.meta, i) + ": trajectory has no states");
    }
    if (static_cast<std::size_t>(r.states.cols()) != hidden_dim) {
      throw UsageError("sample " + sample_label(r.meta, i) + ": dimension mismatch (" +
                       std::to_string(r.states.cols()) + " vs " + std::to_string(hidden_dim) + ")");
    }
    total_rows += static_cast<std::uint64_t>(r.states.rows());
  }

  std::vector<SampleMeta> metas;
  metas.reserve(records.size());
  std::vector<std::byte> bytes;
  bytes.reserve(kPayloadHeaderBytes + total_rows * hidden_dim * 2);
  for (char c : kPayloadMagic) bytes.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(hidden_dim));
  put_le<std::uint64_t>(bytes, total_rows);

  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    SampleMeta m = r.meta;
    m.gen_len = static_cast<std::int64_t>(r.states.rows()) - 1;
    m.row_offset = offset;
    validate_meta(m, i);
    for (Eigen::Index t = 0; t < r.states.rows(); ++t) {
      for (Eigen::Index c = 0; c < r.states.cols(); ++c) {
        const float v = r.states(t, c);
        if (!std::isfinite(v)) {
          throw UsageError("sample " + sample_label(m, i) + ": non-finite value in row " + std::to_string(t));
        }
        const std::uint16_t h = float_to_half_bits(v);
        if ((h & 0x7c00u) == 0x7c00u) {
          throw UsageError("sample " + sample_label(m, i) + ": value " + std::to_string(v) +
                           " exceeds half-precision range");
        }
        put_le<std::uint16_t>(bytes, h);
      }
    }
    offset += static_cast<std::uint64_t>(r.states.rows());
    metas.push_back(std::move(m));
  }
  return {std::move(metas), std::move(bytes)};
}

}  // namespace

std::uint16_t float_to_half_bits(float value) {
  return Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(value));
}

float half_bits_to_float(std::uint16_t bits) {
  return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits));
}

void to_json(nlohmann::json& j, const Condition& c) {
  j = nlohmann::json{{"domain", c.domain}, {"model", c.model}, {"scale", c.scale}};
  if (!c.extra.is_null()) j["extra"] = c.extra;
}

void from_json(const nlohmann::json& j, Condition& c) {
  j.at("domain").get_to(c.domain);
  j.at("model").get_to(c.model);
  j.at("scale").get_to(c.scale);
  c.extra = j.contains("extra") ? j.at("extra") : nlohmann::json();
}

namespace {
template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}
}  // namespace

void to_json(nlohmann::json& j, const SampleMeta& m) {
  j = nlohmann::json{{"id", m.id},
                     {"prompt_len", m.prompt_len},
                     {"gen_len", m.gen_len},
                     {"row_offset", m.row_offset},
                     {"answer_token", opt_json(m.answer_token)},
                     {"answer_text", opt_json(m.answer_text)},
                     {"correct_label", opt_json(m.correct_label)}};
  j["delimiter_span"] = m.delimiter_span
                            ? nlohmann::json::array({m.delimiter_span->start, m.delimiter_span->end})
                            : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SampleMeta& m) {
  j.at("id").get_to(m.id);
  j.at("prompt_len").get_to(m.prompt_len);
  j.at("gen_len").get_to(m.gen_len);
  j.at("row_offset").get_to(m.row_offset);
  m.delimiter_span.reset();
  if (j.contains("delimiter_span") && !j.at("delimiter_span").is_null()) {
    const auto& s = j.at("delimiter_span");
    if (!s.is_array() || s.size() != 2) throw FormatError("delimiter_span must be a 2-array or null");
    m.delimiter_span = DelimiterSpan{s[0].get<std::int64_t>(), s[1].get<std::int64_t>()};
  }
  m.answer_token = opt_get<std::int64_t>(j, "answer_token");
  m.answer_text = opt_get<std::string>(j, "answer_text");
  m.correct_label = opt_get<std::string>(j, "correct_label");
}

void write_set(const Condition& condition, std::span<const TrajectoryRecord> records,
               const std::filesystem::path& dir, std::size_t hidden_dim) {
  auto [metas, bytes] = encode(records, hidden_dim);

  nlohmann::json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["condition"] = condition;
  manifest["hidden_dim"] = hidden_dim;
  manifest["n_samples"] = metas.size();
  manifest["dtype"] = "f16";
  manifest["samples"] = metas;

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create " + dir.string() + ": " + ec.message());

  {
    std::ofstream out(dir / kPayloadFile, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + (dir / kPayloadFile).string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("short write to " + (dir / kPayloadFile).string());
  }
  {
    std::ofstream out(dir / kManifestFile, std::ios::trunc);
    if (!out) throw UsageError("cannot write " + (dir / kManifestFile).string());
    out << manifest.dump(1) << '\n';
    if (!out) throw UsageError("short write to " + (dir / kManifestFile).string());
  }
}

TrajectorySet TrajectorySet::open(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  const auto payload_path = dir / kPayloadFile;
  if (!std::filesystem::exists(manifest_path)) throw FormatError("missing " + manifest_path.string());
  if (!std::filesystem::exists(payload_path)) throw FormatError("missing " + payload_path.string());

  nlohmann::json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }

  TrajectorySet set;
  try {
    if (manifest.at("format_version").get<int>() != kManifestVersion) {
      throw FormatError("unsupported manifest format_version " + manifest.at("format_version").dump());
    }
    if (manifest.at("dtype").get<std::string>() != "f16") throw FormatError("unsupported dtype");
    set.condition_ = manifest.at("condition").get<Condition>();
    set.hidden_dim_ = manifest.at("hidden_dim").get<std::size_t>();
    set.samples_ = manifest.at("samples").get<std::vector<SampleMeta>>();
    if (manifest.at("n_samples").get<std::size_t>() != set.samples_.size()) {
      throw FormatError("n_samples does not match the samples array");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
  if (set.hidden_dim_ == 0) throw FormatError("hidden_dim must be positive");

  set.payload_ = std::make_shared<const detail::PayloadStorage>(payload_path);
  const auto bytes = set.payload_->bytes();
  if (bytes.size() < kPayloadHeaderBytes ||
      std::memcmp(bytes.data(), kPayloadMagic, sizeof(kPayloadMagic)) != 0) {
    throw FormatError("bad payload magic in " + payload_path.string());
  }
  const auto header_dim = get_le<std::uint32_t>(bytes.data() + 8);
  const auto header_rows = get_le<std::uint64_t>(bytes.data() + 12);
  if (header_dim != set.hidden_dim_) {
    throw FormatError("payload hidden_dim " + std::to_string(header_dim) + " != manifest " +
                      std::to_string(set.hidden_dim_));
  }
  const std::size_t row_bytes = set.hidden_dim_ * 2;
  const std::size_t body = bytes.size() - kPayloadHeaderBytes;
  if (body % row_bytes != 0) {
    throw FormatError("payload size is not a whole number of " + std::to_string(set.hidden_dim_) +
                      "-wide rows");
  }
  const std::uint64_t present_rows = body / row_bytes;
  if (present_rows != header_rows) {
    throw FormatError("row-count mismatch: header declares " + std::to_string(header_rows) +
                      " rows, payload holds " + std::to_string(present_rows));
  }

  std::uint64_t expected_rows = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  spans.reserve(set.samples_.size());
  for (std::size_t i = 0; i < set.samples_.size(); ++i) {
    const auto& m = set.samples_[i];
    try {
      validate_meta(m, i);
    } catch (const UsageError& e) {
      throw FormatError(e.what());
    }
    expected_rows += m.n_states();
    if (m.row_offset + m.n_states() > header_rows) {
      throw FormatError("sample " + sample_label(m, i) + " extends past the payload");
    }
    spans.emplace_back(m.row_offset, m.row_offset + m.n_states());
  }
  if (expected_rows != header_rows) {
    throw FormatError("row-count mismatch: manifest implies " + std::to_string(expected_rows) +
                      " rows, payload declares " + std::to_string(header_rows));
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) throw FormatError("overlapping trajectory offsets");
  }
  set.total_rows_ = header_rows;
  return set;
}

TrajectorySet TrajectorySet::from_records(Condition condition, std::span<const TrajectoryRecord> records,
                                          std::size_t hidden_dim) {
  auto [metas, bytes] = encode(records, hidden_dim);
  TrajectorySet set;
  set.condition_ = std::move(condition);
  set.hidden_dim_ = hidden_dim;
  set.samples_ = std::move(metas);
  set.total_rows_ = (bytes.size() - kPayloadHeaderBytes) / (hidden_dim * 2);
  set.payload_ = std::make_shared<const detail::PayloadStorage>(std::move(bytes));
  return set;
}

std::span<const std::byte> TrajectorySet::payload_bytes() const {
  return payload_->bytes().subspan(kPayloadHeaderBytes);
}

void TrajectorySet::decode_row(std::uint64_t row, float* out) const {
  const std::byte* p = payload_->bytes().data() + kPayloadHeaderBytes + row * hidden_dim_ * 2;
  for (std::size_t c = 0; c < hidden_dim_; ++c) {
    out[c] = half_bits_to_float(get_le<std::uint16_t>(p + 2 * c));
  }
}

MatrixF TrajectorySet::trajectory(std::size_t i) const {
  const auto& m = meta(i);
  MatrixF out(static_cast<Eigen::Index>(m.n_states()), static_cast<Eigen::Index>(hidden_dim_));
  for (std::size_t t = 0; t < m.n_states(); ++t) decode_row(m.row_offset + t, out.row(t).data());
  return out;
}

VectorF TrajectorySet::state(std::size_t i, std::size_t t) const {
  const auto& m = meta(i);
  if (t >= m.n_states()) throw UsageError("state index out of range for sample " + m.id);
  VectorF out(static_cast<Eigen::Index>(hidden_dim_));
  decode_row(m.row_offset + t, out.data());
  return out;
}

IndexList filter_valid(const TrajectorySet& set, std::size_t min_states) {
  if (min_states < 2) throw UsageError("filter_valid: min_states must be >= 2");
  IndexList out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.meta(i).n_states() >= min_states) out.push_back(i);
  }
  return out;
}

IndexList all_indices(const TrajectorySet& set) {
  IndexList out(set.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

namespace {
enum class Which { Start, First, End };

MatrixF gather(const TrajectorySet& set, std::span<const Index> indices, Which which) {
  MatrixF out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(set.hidden_dim()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    if (i >= set.size()) throw UsageError("sample index " + std::to_string(i) + " out of range");
    const auto& m = set.meta(i);
    if (m.gen_len < 1) {
      throw UsageError("sample " + sample_label(m, i) + " has T = 0 (no generated states)");
    }
    std::size_t t = 0;
    if (which == Which::First) t = 1;
    if (which == Which::End) t = static_cast<std::size_t>(m.gen_len);
    out.row(static_cast<Eigen::Index>(r)) = set.state(i, t).transpose();
  }
  return out;
}
}  // namespace

MatrixF start_states(const TrajectorySet& set, std::span<const Index> indices) {
  return gather(set, indices, Which::Start);
}

MatrixF first_step_states(const TrajectorySet& set, std::span<const Index> indices) {
  return gather(set, indices, Which::First);
}

MatrixF end_states(const TrajectorySet& set, std::span<const Index> indices) {
  return gather(set, indices, Which::End);
}

MatrixF displacements(const TrajectorySet& set, std::span<const Index> indices) {
  return end_states(set, indices) - start_states(set, indices);
}

}  // namespace rgeom
