#include "anyssr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace anyssr {

namespace {

constexpr std::string_view kMagic = "ANYSSRCK";
constexpr std::string_view kTrailer = "CKPTEND!";
// Sanity bound on any single count read from disk.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

using Kind = CheckpointError::Kind;

class Writer {
public:
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
    }
  }
  const std::vector<char>& data() const { return out_; }

private:
  void little(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  std::vector<char> out_;
};

class Reader {
public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(little(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::uint64_t count(const char* what) {
    const std::uint64_t n = u64();
    if (n > kMaxCount) throw CheckpointError(Kind::kShapeMismatch, std::string("checkpoint: implausible ") + what);
    return n;
  }

  Matrix matrix(const char* name, Index rows, Index cols) {
    const std::uint64_t r = u64();
    const std::uint64_t c = u64();
    if (r != static_cast<std::uint64_t>(rows) || c != static_cast<std::uint64_t>(cols)) {
      std::ostringstream msg;
      msg << "checkpoint: matrix " << name << " has shape " << r << "x" << c << ", expected " << rows << "x"
          << cols;
      throw CheckpointError(Kind::kShapeMismatch, msg.str());
    }
    need(static_cast<std::size_t>(r * c * 8));
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) m(i, j) = f64();
    }
    return m;
  }

  bool at_end() const { return pos_ == data_.size(); }

private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(Kind::kShapeMismatch, "checkpoint: file truncated (payload shorter than its shape fields)");
    }
  }
  std::uint64_t little(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(k)])) << (8 * k);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::vector<char> data_;
  std::size_t pos_ = 0;
};

void expect_shape(bool ok, const std::string& what) {
  if (!ok) throw CheckpointError(Kind::kShapeMismatch, "checkpoint: " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const ContinualRun& run) {
  const RlsState& s = run.state;
  Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(0);
  w.u64(static_cast<std::uint64_t>(s.dim()));
  w.u64(static_cast<std::uint64_t>(s.task_count()));
  w.f64(s.lambda());
  w.u64(config.encoder.seed);
  w.u64(config.pipeline.seed);
  w.u64(config.stream_seed);
  w.u64(config.adapter.seed);
  const std::string json = config_to_json(config);
  w.u64(json.size());
  w.bytes(json);

  w.matrix(s.autocorrelation_inverse());
  w.matrix(s.cross_correlation());
  w.matrix(s.weights());

  w.u64(run.column_tasks.size());
  for (TaskId t : run.column_tasks) w.i32(t);
  w.u64(run.phase_tasks.size());
  w.u64(static_cast<std::uint64_t>(run.phases_done));
  for (TaskId t : run.phase_tasks) w.i32(t);

  const Index k = run.accuracy.size();
  w.u64(static_cast<std::uint64_t>(k));
  for (Index i = 0; i < k; ++i) {
    for (Index t = 0; t < k; ++t) {
      const auto v = run.accuracy.at(i, t);
      w.u8(v ? 1 : 0);
      w.f64(v.value_or(0.0));
    }
  }
  w.u64(run.routing.per_task.size());
  for (const auto& phase : run.routing.per_task) {
    w.u64(phase.size());
    for (double v : phase) w.f64(v);
  }

  w.u64(run.bank.size());
  for (const auto& adapter : run.bank.adapters()) {
    w.i32(adapter.task());
    w.u64(static_cast<std::uint64_t>(adapter.rank()));
    w.u64(static_cast<std::uint64_t>(adapter.first_layer()));
    w.u64(static_cast<std::uint64_t>(adapter.layer_count()));
    for (const auto& layer : adapter.layers()) {
      for (const auto& f : layer) {
        w.matrix(f.b);
        w.matrix(f.a);
      }
    }
  }
  w.bytes(kTrailer);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "checkpoint: cannot write " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError(Kind::kIo, "checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(Kind::kIo, "checkpoint: cannot move into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "checkpoint: cannot open " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  try {
    if (r.bytes(kMagic.size()) != kMagic) throw CheckpointError(Kind::kCorruptHeader, "checkpoint: bad magic");
  } catch (const CheckpointError&) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint: bad or missing magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                      " is not supported (expected " +
                                                      std::to_string(kCheckpointVersion) + ")");
  }
  if (r.u32() != 0) throw CheckpointError(Kind::kCorruptHeader, "checkpoint: reserved header field is non-zero");
  const std::uint64_t dim = r.u64();
  const std::uint64_t tasks = r.u64();
  const double lambda = r.f64();
  if (dim < 1 || dim > kMaxCount || tasks > kMaxCount || !(lambda > 0.0)) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint: implausible header dimensions");
  }
  const std::uint64_t seeds[4] = {r.u64(), r.u64(), r.u64(), r.u64()};
  const std::uint64_t json_size = r.count("config size");
  RunConfig config;
  try {
    config = parse_config(std::string(r.bytes(static_cast<std::size_t>(json_size))));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::kCorruptHeader, std::string("checkpoint: embedded config invalid: ") + e.what());
  }
  if (seeds[0] != config.encoder.seed || seeds[1] != config.pipeline.seed || seeds[2] != config.stream_seed ||
      seeds[3] != config.adapter.seed) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint: header seeds disagree with embedded config");
  }
  if (static_cast<std::uint64_t>(config.pipeline.expanded_dim) != dim) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: header dim disagrees with config expanded_dim");
  }

  const auto e = static_cast<Index>(dim);
  const auto k = static_cast<Index>(tasks);
  Matrix rm = r.matrix("R", e, e);
  Matrix qm = r.matrix("Q", e, k);
  Matrix wm = r.matrix("W", e, k);

  const std::uint64_t columns = r.count("column count");
  expect_shape(columns == tasks, "column map size disagrees with task count");
  std::vector<TaskId> column_tasks;
  for (std::uint64_t i = 0; i < columns; ++i) column_tasks.push_back(r.i32());

  const std::uint64_t phases = r.count("phase count");
  const std::uint64_t phases_done = r.u64();
  expect_shape(phases == static_cast<std::uint64_t>(config.stream.tasks) && phases_done <= phases,
               "phase fields disagree with config");
  std::vector<TaskId> phase_tasks;
  for (std::uint64_t i = 0; i < phases; ++i) phase_tasks.push_back(r.i32());

  const std::uint64_t acc_size = r.count("accuracy size");
  expect_shape(acc_size == phases, "accuracy matrix size disagrees with phase count");
  AccuracyMatrix accuracy(static_cast<Index>(acc_size));
  for (Index i = 0; i < static_cast<Index>(acc_size); ++i) {
    for (Index t = 0; t < static_cast<Index>(acc_size); ++t) {
      const std::uint8_t present = r.u8();
      const double value = r.f64();
      if (present) {
        expect_shape(t >= i && value >= 0.0 && value <= 1.0, "accuracy cell out of range");
        accuracy.set(i, t, value);
      }
    }
  }
  RoutingAccuracyTrace routing;
  const std::uint64_t trace_phases = r.count("trace length");
  expect_shape(trace_phases == phases_done, "routing trace length disagrees with progress");
  for (std::uint64_t p = 0; p < trace_phases; ++p) {
    const std::uint64_t n = r.count("trace entry");
    expect_shape(n == p + 1, "routing trace entry has wrong length");
    std::vector<double> row;
    for (std::uint64_t i = 0; i < n; ++i) row.push_back(r.f64());
    routing.push_phase(std::move(row));
  }

  AdapterBank bank;
  const std::uint64_t adapters = r.count("adapter count");
  expect_shape(adapters == phases_done, "adapter count disagrees with progress");
  const EncoderConfig& enc = config.encoder;
  for (std::uint64_t a = 0; a < adapters; ++a) {
    const TaskId task = r.i32();
    const std::uint64_t rank = r.u64();
    const std::uint64_t first = r.u64();
    const std::uint64_t layers = r.u64();
    expect_shape(rank >= 1 && rank <= kMaxCount && first == static_cast<std::uint64_t>(enc.split_layer) &&
                     layers == static_cast<std::uint64_t>(enc.adapted_layers()),
                 "adapter layout disagrees with encoder config");
    const auto rk = static_cast<Index>(rank);
    std::vector<LowRankAdapter::LayerFactors> factors;
    for (std::uint64_t l = 0; l < layers; ++l) {
      LowRankAdapter::LayerFactors lf;
      lf[0].b = r.matrix("B_in", enc.hidden, rk);
      lf[0].a = r.matrix("A_in", rk, enc.ffn_hidden);
      lf[1].b = r.matrix("B_out", enc.ffn_hidden, rk);
      lf[1].a = r.matrix("A_out", rk, enc.hidden);
      factors.push_back(std::move(lf));
    }
    try {
      bank.add(LowRankAdapter(task, rk, enc.split_layer, std::move(factors)));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(Kind::kShapeMismatch, std::string("checkpoint: ") + e.what());
    }
  }
  if (r.bytes(kTrailer.size()) != kTrailer || !r.at_end()) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: missing trailer or trailing bytes");
  }

  const double scale = std::max(1.0, wm.size() ? wm.cwiseAbs().maxCoeff() : 0.0);
  std::optional<RlsState> state;
  try {
    state = RlsState::from_parts(std::move(rm), std::move(qm), std::move(wm), lambda, 1e-8 * scale);
  } catch (const std::invalid_argument& ex) {
    throw CheckpointError(Kind::kShapeMismatch, std::string("checkpoint: inconsistent router state: ") + ex.what());
  }
  ContinualRun run{
      .phase_tasks = std::move(phase_tasks),
      .phases_done = static_cast<Index>(phases_done),
      .state = std::move(*state),
      .bank = std::move(bank),
      .column_tasks = std::move(column_tasks),
      .accuracy = std::move(accuracy),
      .routing = std::move(routing),
      .retained_training = {},
  };
  return Checkpoint{std::move(config), std::move(run)};
}

}  // namespace anyssr

namespace anyssr {

namespace {

nlohmann::json examples_json(const std::vector<TrainingExample>& examples) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& ex : examples) out.push_back({{"prompt", ex.prompt}, {"answer", ex.answer}});
  return out;
}

std::vector<TrainingExample> examples_from(const nlohmann::json& j) {
  std::vector<TrainingExample> out;
  for (const auto& e : j) out.push_back({e.at("prompt").get<Prompt>(), e.at("answer").get<std::vector<Token>>()});
  return out;
}

}  // namespace

void save_stream(const std::filesystem::path& path, const TaskStream& stream) {
  using nlohmann::json;
  const StreamSpec& s = stream.spec;
  json doc = {{"format", "anyssr-stream"},
              {"version", 1},
              {"vocab", stream.vocab},
              {"seed", stream.seed},
              {"spec",
               {{"tasks", s.tasks},
                {"samples_per_task", s.samples_per_task},
                {"context_len", s.context_len},
                {"separation", s.separation},
                {"train_fraction", s.train_fraction},
                {"router_fraction", s.router_fraction},
                {"query_tokens", s.query_tokens},
                {"answer_tokens", s.answer_tokens},
                {"common_tokens", s.common_tokens}}},
              {"generic", stream.generic}};
  json tasks = json::array();
  for (const auto& t : stream.tasks) {
    tasks.push_back({{"id", t.id},
                     {"answer_rule", t.answer_rule},
                     {"train", examples_json(t.train)},
                     {"router_fit", examples_json(t.router_fit)},
                     {"eval", examples_json(t.eval)}});
  }
  doc["tasks"] = std::move(tasks);
  const std::string text = doc.dump() + "\n";
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "stream: cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

TaskStream load_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(Kind::kIo, "stream: cannot open " + path.string());
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.at("format") != "anyssr-stream") throw CheckpointError(Kind::kCorruptHeader, "stream: wrong format tag");
    if (doc.at("version") != 1) throw CheckpointError(Kind::kVersionMismatch, "stream: unsupported version");
    TaskStream stream;
    stream.vocab = doc.at("vocab").get<Index>();
    stream.seed = doc.at("seed").get<std::uint64_t>();
    const auto& s = doc.at("spec");
    stream.spec.tasks = s.at("tasks");
    stream.spec.samples_per_task = s.at("samples_per_task");
    stream.spec.context_len = s.at("context_len");
    stream.spec.separation = s.at("separation");
    stream.spec.train_fraction = s.at("train_fraction");
    stream.spec.router_fraction = s.at("router_fraction");
    stream.spec.query_tokens = s.at("query_tokens");
    stream.spec.answer_tokens = s.at("answer_tokens");
    stream.spec.common_tokens = s.at("common_tokens");
    stream.generic = doc.at("generic").get<std::vector<Prompt>>();
    for (const auto& t : doc.at("tasks")) {
      TaskData task;
      task.id = t.at("id");
      task.answer_rule = t.at("answer_rule").get<std::vector<Index>>();
      task.train = examples_from(t.at("train"));
      task.router_fit = examples_from(t.at("router_fit"));
      task.eval = examples_from(t.at("eval"));
      stream.tasks.push_back(std::move(task));
    }
    if (static_cast<Index>(stream.tasks.size()) != stream.spec.tasks) {
      throw CheckpointError(Kind::kShapeMismatch, "stream: task count disagrees with spec");
    }
    for (std::size_t i = 0; i < stream.tasks.size(); ++i) {
      if (stream.tasks[i].id != static_cast<TaskId>(i)) {
        throw CheckpointError(Kind::kShapeMismatch, "stream: task ids must be 0..k-1 in order");
      }
    }
    return stream;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kCorruptHeader, std::string("stream: malformed file: ") + e.what());
  }
}

}  // namespace anyssr
