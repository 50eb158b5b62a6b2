#include "anyssr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace anyssr {

using nlohmann::json;

namespace {

void reject_unknown(const json& section, const std::string& name, const std::set<std::string>& allowed) {
  if (!section.is_object()) throw std::invalid_argument("config: section '" + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (!allowed.contains(key)) throw std::invalid_argument("config: unknown key '" + name + "." + key + "'");
  }
}

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

std::vector<TaskId> OrderSpec::resolve(Index tasks) const {
  if (which == 0) {
    validate_order(custom, tasks);
    return custom;
  }
  return order_permutation(which, tasks);
}

void RunConfig::validate() const {
  encoder.validate();
  stream.validate(encoder.vocab);
  if (pipeline.expanded_dim < 1) throw std::invalid_argument("config: expanded_dim must be >= 1");
  if (!(pipeline.lambda > 0.0)) throw std::invalid_argument("config: lambda must be positive");
  if (router.chunk_rows < 1) throw std::invalid_argument("config: chunk_size must be >= 1");
  if (adapter.rank < 1 || adapter.epochs < 0 || adapter.batch_size < 1 || !(adapter.learning_rate > 0.0)) {
    throw std::invalid_argument("config: invalid adapter hyperparameters");
  }
  if (baselines.bp_hidden < 1 || baselines.bp_epochs < 0 || !(baselines.bp_learning_rate > 0.0)) {
    throw std::invalid_argument("config: invalid baseline settings");
  }
  order.resolve(stream.tasks);
}

void RunConfig::reseed(std::uint64_t master) {
  encoder.seed = master;
  pipeline.seed = master + 1;
  stream_seed = master + 2;
  adapter.seed = master + 3;
  baselines.bp_seed = master + 4;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.encoder == b.encoder && a.pipeline == b.pipeline && a.stream == b.stream &&
         a.stream_seed == b.stream_seed && a.order == b.order && a.adapter.rank == b.adapter.rank &&
         a.adapter.learning_rate == b.adapter.learning_rate && a.adapter.epochs == b.adapter.epochs &&
         a.adapter.batch_size == b.adapter.batch_size && a.adapter.seed == b.adapter.seed &&
         a.router == b.router && a.baselines == b.baselines;
}

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  reject_unknown(doc, "<root>", {"encoder", "pipeline", "stream", "adapter", "router", "baselines"});
  RunConfig c;
  if (doc.contains("encoder")) {
    const json& s = doc["encoder"];
    reject_unknown(s, "encoder", {"hidden", "ffn_hidden", "total_layers", "split_layer", "vocab", "seed"});
    read(s, "hidden", c.encoder.hidden);
    read(s, "ffn_hidden", c.encoder.ffn_hidden);
    read(s, "total_layers", c.encoder.total_layers);
    read(s, "split_layer", c.encoder.split_layer);
    read(s, "vocab", c.encoder.vocab);
    read(s, "seed", c.encoder.seed);
  }
  if (doc.contains("pipeline")) {
    const json& s = doc["pipeline"];
    reject_unknown(s, "pipeline", {"expanded_dim", "lambda", "scale_mode", "seed"});
    read(s, "expanded_dim", c.pipeline.expanded_dim);
    read(s, "lambda", c.pipeline.lambda);
    std::string mode(to_string(c.pipeline.scale_mode));
    read(s, "scale_mode", mode);
    c.pipeline.scale_mode = parse_scale_mode(mode);
    read(s, "seed", c.pipeline.seed);
  }
  if (doc.contains("stream")) {
    const json& s = doc["stream"];
    reject_unknown(s, "stream",
                   {"tasks", "samples_per_task", "context_len", "separation", "train_fraction", "router_fraction",
                    "query_tokens", "answer_tokens", "common_tokens", "seed", "order"});
    read(s, "tasks", c.stream.tasks);
    read(s, "samples_per_task", c.stream.samples_per_task);
    read(s, "context_len", c.stream.context_len);
    read(s, "separation", c.stream.separation);
    read(s, "train_fraction", c.stream.train_fraction);
    read(s, "router_fraction", c.stream.router_fraction);
    read(s, "query_tokens", c.stream.query_tokens);
    read(s, "answer_tokens", c.stream.answer_tokens);
    read(s, "common_tokens", c.stream.common_tokens);
    read(s, "seed", c.stream_seed);
    if (s.contains("order")) {
      const json& o = s["order"];
      if (o.is_array()) {
        c.order.which = 0;
        c.order.custom = o.get<std::vector<TaskId>>();
      } else if (o.is_number_integer()) {
        c.order.which = o.get<int>();
      } else if (o.is_string()) {
        const auto text = o.get<std::string>();
        if (text == "1" || text == "order1") {
          c.order.which = 1;
        } else if (text == "2" || text == "order2") {
          c.order.which = 2;
        } else {
          throw std::invalid_argument("config: unknown order '" + text + "'");
        }
      } else {
        throw std::invalid_argument("config: order must be 1, 2 or an array of task ids");
      }
    }
  }
  if (doc.contains("adapter")) {
    const json& s = doc["adapter"];
    reject_unknown(s, "adapter", {"rank", "learning_rate", "epochs", "batch_size", "seed"});
    read(s, "rank", c.adapter.rank);
    read(s, "learning_rate", c.adapter.learning_rate);
    read(s, "epochs", c.adapter.epochs);
    read(s, "batch_size", c.adapter.batch_size);
    read(s, "seed", c.adapter.seed);
  }
  if (doc.contains("router")) {
    const json& s = doc["router"];
    reject_unknown(s, "router", {"chunk_size", "generalist_route", "reroute_per_token"});
    read(s, "chunk_size", c.router.chunk_rows);
    read(s, "generalist_route", c.router.generalist_route);
    read(s, "reroute_per_token", c.router.reroute_per_token);
  }
  if (doc.contains("baselines")) {
    const json& s = doc["baselines"];
    reject_unknown(s, "baselines", {"bp_hidden", "bp_learning_rate", "bp_epochs", "bp_seed"});
    read(s, "bp_hidden", c.baselines.bp_hidden);
    read(s, "bp_learning_rate", c.baselines.bp_learning_rate);
    read(s, "bp_epochs", c.baselines.bp_epochs);
    read(s, "bp_seed", c.baselines.bp_seed);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_json(const RunConfig& c) {
  json order;
  if (c.order.which == 0) {
    order = c.order.custom;
  } else {
    order = c.order.which;
  }
  json doc = {
      {"encoder",
       {{"hidden", c.encoder.hidden},
        {"ffn_hidden", c.encoder.ffn_hidden},
        {"total_layers", c.encoder.total_layers},
        {"split_layer", c.encoder.split_layer},
        {"vocab", c.encoder.vocab},
        {"seed", c.encoder.seed}}},
      {"pipeline",
       {{"expanded_dim", c.pipeline.expanded_dim},
        {"lambda", c.pipeline.lambda},
        {"scale_mode", std::string(to_string(c.pipeline.scale_mode))},
        {"seed", c.pipeline.seed}}},
      {"stream",
       {{"tasks", c.stream.tasks},
        {"samples_per_task", c.stream.samples_per_task},
        {"context_len", c.stream.context_len},
        {"separation", c.stream.separation},
        {"train_fraction", c.stream.train_fraction},
        {"router_fraction", c.stream.router_fraction},
        {"query_tokens", c.stream.query_tokens},
        {"answer_tokens", c.stream.answer_tokens},
        {"common_tokens", c.stream.common_tokens},
        {"seed", c.stream_seed},
        {"order", order}}},
      {"adapter",
       {{"rank", c.adapter.rank},
        {"learning_rate", c.adapter.learning_rate},
        {"epochs", c.adapter.epochs},
        {"batch_size", c.adapter.batch_size},
        {"seed", c.adapter.seed}}},
      {"router",
       {{"chunk_size", c.router.chunk_rows},
        {"generalist_route", c.router.generalist_route},
        {"reroute_per_token", c.router.reroute_per_token}}},
      {"baselines",
       {{"bp_hidden", c.baselines.bp_hidden},
        {"bp_learning_rate", c.baselines.bp_learning_rate},
        {"bp_epochs", c.baselines.bp_epochs},
        {"bp_seed", c.baselines.bp_seed}}},
  };
  return doc.dump(2);
}

}  // namespace anyssr
