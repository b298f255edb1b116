#include "rgeom/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "rgeom/autodiff.hpp"
#include "rgeom/error.hpp"
#include "rgeom/rng.hpp"

namespace rgeom {

namespace {

bool is_unicode_space(char32_t c) {
  if (c >= 0x09 && c <= 0x0D) return true;
  switch (c) {
    case 0x20:
    case 0x85:
    case 0xA0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

std::size_t argmax_row(const MatrixF& m, Eigen::Index row) {
  std::size_t best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c) {
    if (m(row, c) > m(row, static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(c);
  }
  return best;
}

MatrixF gather_rows(const MatrixF& m, std::span<const Index> rows) {
  MatrixF out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

std::int64_t majority_of(std::span<const std::int64_t> labels) {
  std::map<std::int64_t, std::size_t> counts;
  for (const auto l : labels) ++counts[l];
  std::int64_t best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {  // map order makes ties resolve to the lowest id
      best = label;
      best_count = count;
    }
  }
  return best;
}

}  // namespace

bool is_whitespace_text(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!is_unicode_space(cp)) return false;
    i += len;
  }
  return true;
}

AnswerTargets build_answer_targets(const TrajectorySet& set) {
  AnswerTargets out;
  for (Index i = 0; i < set.size(); ++i) {
    const auto& m = set.meta(i);
    if (!m.delimiter_span) {
      out.excluded.push_back({m.id, "no delimiter"});
    } else if (!m.answer_token) {
      out.excluded.push_back({m.id, "no answer token"});
    } else if (m.answer_text && is_whitespace_text(*m.answer_text)) {
      out.excluded.push_back({m.id, "whitespace answer token"});
    } else {
      out.targets.push_back({i, *m.answer_token});
    }
  }
  return out;
}

MatrixF target_states(const TrajectorySet& set, const AnswerTargets& targets) {
  IndexList idx;
  for (const auto& t : targets.targets) idx.push_back(t.sample);
  return end_states(set, idx);
}

std::vector<std::int64_t> target_labels(const AnswerTargets& targets) {
  std::vector<std::int64_t> out;
  for (const auto& t : targets.targets) out.push_back(t.token);
  return out;
}

MatrixF ProbeModel::logits(const MatrixF& states) const {
  if (static_cast<std::size_t>(states.cols()) != hidden_dim()) {
    throw UsageError("probe: state width " + std::to_string(states.cols()) + " != " + std::to_string(hidden_dim()));
  }
  MatrixF z = states * weight.transpose();
  z.rowwise() += bias.row(0);
  return z;
}

std::vector<std::int64_t> ProbeModel::predict(const MatrixF& states) const {
  const MatrixF z = logits(states);
  std::vector<std::int64_t> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) out[static_cast<std::size_t>(r)] = class_vocab[argmax_row(z, r)];
  return out;
}

TrainConfig default_probe_config() {
  TrainConfig c;
  c.lr = 1e-2;
  return c;
}

ProbeEval eval_probe(const ProbeModel& probe, const MatrixF& states, std::span<const std::int64_t> labels) {
  if (labels.empty()) throw UsageError("eval_probe: empty evaluation set");
  if (static_cast<std::size_t>(states.rows()) != labels.size()) throw UsageError("eval_probe: state/label count mismatch");
  const auto pred = probe.predict(states);
  std::size_t hit = 0;
  std::size_t majority = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hit += pred[i] == labels[i];
    majority += labels[i] == probe.majority_label;
  }
  ProbeEval e;
  e.n = labels.size();
  e.accuracy = static_cast<double>(hit) / static_cast<double>(e.n);
  e.majority_baseline = static_cast<double>(majority) / static_cast<double>(e.n);
  e.lift = e.accuracy - e.majority_baseline;
  return e;
}

ProbeTrainResult train_probe(const MatrixF& states, std::span<const std::int64_t> labels, const TrainConfig& config) {
  if (static_cast<std::size_t>(states.rows()) != labels.size()) throw UsageError("train_probe: state/label count mismatch");
  if (states.cols() == 0) throw UsageError("train_probe: zero-width states");
  if (config.batch_size == 0 || config.epochs == 0) throw UsageError("train_probe: batch size and epochs must be positive");

  ProbeTrainResult result;
  result.split = split_dataset(labels.size(), config.split, config.seed);
  const auto& split = result.split;
  if (split.train.empty() || split.val.empty() || split.test.empty()) {
    throw UsageError("train_probe: every split must hold at least one sample");
  }
  auto pick = [&](const IndexList& idx) {
    std::vector<std::int64_t> out;
    for (const auto i : idx) out.push_back(labels[i]);
    return out;
  };
  const MatrixF x_train = gather_rows(states, split.train);
  const MatrixF x_val = gather_rows(states, split.val);
  const MatrixF x_test = gather_rows(states, split.test);
  const auto y_train = pick(split.train);
  const auto y_val = pick(split.val);
  const auto y_test = pick(split.test);

  ProbeModel& probe = result.model;
  probe.config = config;
  probe.class_vocab.assign(labels.begin(), labels.end());
  std::sort(probe.class_vocab.begin(), probe.class_vocab.end());
  probe.class_vocab.erase(std::unique(probe.class_vocab.begin(), probe.class_vocab.end()), probe.class_vocab.end());
  probe.majority_label = majority_of(y_train);

  const auto n_classes = static_cast<Eigen::Index>(probe.class_vocab.size());
  const Eigen::Index d = states.cols();
  probe.weight = MatrixF::Zero(n_classes, d);
  probe.bias = MatrixF::Zero(1, n_classes);

  if (n_classes < 2) {
    probe.warning = "single-class data: probe is a constant predictor";
    probe.best_val_accuracy = 1.0;
    result.test = eval_probe(probe, x_test, y_test);
    return result;
  }

  auto class_index = [&](std::int64_t token) {
    return static_cast<int>(std::lower_bound(probe.class_vocab.begin(), probe.class_vocab.end(), token) -
                            probe.class_vocab.begin());
  };
  std::vector<int> cls_train, cls_val;
  for (const auto y : y_train) cls_train.push_back(class_index(y));
  for (const auto y : y_val) cls_val.push_back(class_index(y));

  Rng init(derive_seed(config.seed, 0x9b0b));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < probe.weight.size(); ++i) probe.weight.data()[i] = static_cast<float>(init.uniform(-bound, bound));

  std::array<MatrixF*, 2> params{&probe.weight, &probe.bias};
  std::array<MatrixF, 2> m1{MatrixF::Zero(n_classes, d), MatrixF::Zero(1, n_classes)};
  std::array<MatrixF, 2> m2 = m1;

  auto val_scores = [&]() {
    ad::Tape<float> t;
    const auto z = t.add_row(t.matmul_t(t.input(x_val), t.input(probe.weight)), t.input(probe.bias));
    const double loss = t.value(t.softmax_cross_entropy(z, cls_val))(0, 0);
    std::size_t hit = 0;
    for (Eigen::Index r = 0; r < x_val.rows(); ++r) hit += static_cast<int>(argmax_row(t.value(z), r)) == cls_val[static_cast<std::size_t>(r)];
    return std::pair{static_cast<double>(hit) / static_cast<double>(x_val.rows()), loss};
  };

  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  MatrixF best_w = probe.weight, best_b = probe.bias;
  const std::size_t n_train = split.train.size();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config, epoch);
    Rng shuffle(derive_seed(config.seed, 0x5348, epoch));
    const auto order = shuffle.permutation(n_train);
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      const std::span<const Index> rows(order.data() + start, stop - start);
      std::vector<int> yb;
      for (const auto r : rows) yb.push_back(cls_train[r]);

      ad::Tape<float> tape;
      const auto w = tape.input(probe.weight);
      const auto b = tape.input(probe.bias);
      const auto z = tape.add_row(tape.matmul_t(tape.input(gather_rows(x_train, rows)), w), b);
      const auto loss = tape.softmax_cross_entropy(z, yb);
      if (!std::isfinite(tape.value(loss)(0, 0))) {
        throw NumericalError("train_probe: non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);

      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const auto b1 = static_cast<float>(config.beta1);
      const auto b2 = static_cast<float>(config.beta2);
      const std::array<ad::Var, 2> vars{w, b};
      for (std::size_t p = 0; p < 2; ++p) {
        const MatrixF& g = tape.grad(vars[p]);
        m1[p] = b1 * m1[p] + (1.0f - b1) * g;
        m2[p] = b2 * m2[p] + (1.0f - b2) * g.cwiseProduct(g);
        *params[p] *= static_cast<float>(1.0 - lr * config.weight_decay);
        params[p]->array() -= static_cast<float>(lr / bc1) * m1[p].array() /
                              (m2[p].array().sqrt() * static_cast<float>(1.0 / std::sqrt(bc2)) +
                               static_cast<float>(config.eps));
      }
    }
    const auto [acc, loss] = val_scores();
    if (!std::isfinite(loss)) throw NumericalError("train_probe: non-finite validation loss at epoch " + std::to_string(epoch));
    if (acc > best_acc || (acc == best_acc && loss < best_loss)) {
      best_acc = acc;
      best_loss = loss;
      best_w = probe.weight;
      best_b = probe.bias;
      probe.best_epoch = epoch;
    }
  }
  probe.weight = best_w;
  probe.bias = best_b;
  probe.best_val_accuracy = best_acc;
  result.test = eval_probe(probe, x_test, y_test);
  return result;
}

void to_json(nlohmann::json& j, const ProbeEval& e) {
  j = nlohmann::json{{"n", e.n}, {"accuracy", e.accuracy}, {"majority_baseline", e.majority_baseline}, {"lift", e.lift}};
}

void save_probe(const std::filesystem::path& path, const ProbeModel& probe, const nlohmann::json& extra) {
  nlohmann::json header;
  header["format"] = "rgeom-probe";
  header["version"] = 1;
  header["class_vocab"] = probe.class_vocab;
  header["hidden_dim"] = probe.hidden_dim();
  header["majority_label"] = probe.majority_label;
  header["config"] = probe.config;
  header["best_epoch"] = probe.best_epoch;
  header["best_val_accuracy"] = probe.best_val_accuracy;
  header["warning"] = probe.warning ? nlohmann::json(*probe.warning) : nlohmann::json(nullptr);
  header["parameters"] = nlohmann::json::array({{{"name", "weight"}, {"shape", {probe.weight.rows(), probe.weight.cols()}}},
                                                {{"name", "bias"}, {"shape", {1, probe.bias.cols()}}}});
  header["extra"] = extra;
  const std::array<const MatrixF*, 2> blobs{&probe.weight, &probe.bias};
  detail::write_blob_file(path, kProbeMagic, header, blobs);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  auto file = detail::read_blob_file(path, kProbeMagic);
  ProbeModel p;
  try {
    const auto& h = file.header;
    h.at("class_vocab").get_to(p.class_vocab);
    const auto d = h.at("hidden_dim").get<Eigen::Index>();
    h.at("majority_label").get_to(p.majority_label);
    h.at("config").get_to(p.config);
    h.at("best_epoch").get_to(p.best_epoch);
    h.at("best_val_accuracy").get_to(p.best_val_accuracy);
    if (!h.at("warning").is_null()) p.warning = h.at("warning").get<std::string>();
    if (p.class_vocab.empty() || !std::is_sorted(p.class_vocab.begin(), p.class_vocab.end())) {
      throw FormatError("probe class vocabulary must be nonempty and sorted");
    }
    const auto c = static_cast<Eigen::Index>(p.class_vocab.size());
    if (file.payload.size() != static_cast<std::size_t>(c * d + c)) throw FormatError("probe parameter blob has the wrong size");
    p.weight = Eigen::Map<const MatrixF>(file.payload.data(), c, d);
    p.bias = Eigen::Map<const MatrixF>(file.payload.data() + c * d, 1, c);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed probe header: " + std::string(e.what()));
  }
  return p;
}

Index frozen_unembed_decode(const MatrixF& unembedding, const VectorF& state) {
  if (unembedding.rows() == 0) throw UsageError("frozen_unembed_decode: empty unembedding");
  if (unembedding.cols() != state.size()) {
    throw UsageError("frozen_unembed_decode: unembedding width " + std::to_string(unembedding.cols()) +
                     " != state dimension " + std::to_string(state.size()));
  }
  const Eigen::VectorXd s = state.cast<double>();
  Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index v = 0; v < unembedding.rows(); ++v) {
    const double score = unembedding.row(v).cast<double>().dot(s);
    if (score > best_score) {
      best_score = score;
      best = static_cast<Index>(v);
    }
  }
  return best;
}

void write_unembedding(const std::filesystem::path& path, const MatrixF& u) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(kUnembeddingMagic, 8);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<std::uint32_t>(u.rows()));
  put_u32(static_cast<std::uint32_t>(u.cols()));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, u.data() + i, 4);
    put_u32(bits);
  }
  if (!out) throw UsageError("short write to " + path.string());
}

MatrixF read_unembedding(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kUnembeddingMagic, 8) != 0) {
    throw FormatError("bad unembedding magic in " + path.string());
  }
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  };
  const std::uint64_t rows = u32(8), cols = u32(12);
  if (bytes.size() - 16 != rows * cols * 4) {
    throw FormatError("unembedding body holds " + std::to_string(bytes.size() - 16) + " bytes, header implies " +
                      std::to_string(rows * cols * 4));
  }
  MatrixF u(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const std::uint32_t bits = u32(16 + 4 * static_cast<std::size_t>(i));
    std::memcpy(u.data() + i, &bits, 4);
  }
  return u;
}

}  // namespace rgeom
