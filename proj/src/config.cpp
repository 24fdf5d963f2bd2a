#include "spwc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "spwc/errors.hpp"

namespace spwc {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// A json value plus the field path used in diagnostics.
class Node {
 public:
  Node(const json& value, std::string path) : value_(value), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw UsageError((path_.empty() ? std::string("config") : path_) + ": " + what);
  }

  const json& raw() const { return value_; }
  const std::string& path() const { return path_; }

  void require_object(std::initializer_list<const char*> keys) const {
    if (!value_.is_object()) fail("expected an object");
    for (const auto& [key, _] : value_.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) {
        std::string list;
        for (const char* k : keys) list += (list.empty() ? "" : ", ") + std::string(k);
        Node(value_[key], child_path(key)).fail("unknown key (expected one of: " + list + ")");
      }
    }
  }

  bool has(const char* key) const { return value_.contains(key); }
  Node at(const char* key) const { return Node(value_.at(key), child_path(key)); }

  double number() const {
    if (!value_.is_number()) fail("expected a number");
    return value_.get<double>();
  }
  double positive() const {
    const double x = number();
    if (!(x > 0.0)) fail("must be > 0");
    return x;
  }
  std::uint64_t unsigned_integer() const {
    if (!value_.is_number_unsigned() && !(value_.is_number_integer() && value_.get<std::int64_t>() >= 0)) {
      fail("expected a nonnegative integer");
    }
    return value_.get<std::uint64_t>();
  }
  std::size_t count() const {
    const std::uint64_t n = unsigned_integer();
    if (n == 0) fail("must be >= 1");
    return static_cast<std::size_t>(n);
  }
  std::string string() const {
    if (!value_.is_string()) fail("expected a string");
    return value_.get<std::string>();
  }
  /// A scalar is accepted as a one-element list.
  template <typename F>
  auto list(F&& element) const {
    using T = decltype(element(std::declval<const Node&>()));
    std::vector<T> out;
    if (value_.is_array()) {
      if (value_.empty()) fail("list must not be empty");
      for (std::size_t i = 0; i < value_.size(); ++i) {
        out.push_back(element(Node(value_[i], path_ + "[" + std::to_string(i) + "]")));
      }
    } else {
      out.push_back(element(*this));
    }
    return out;
  }

 private:
  std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& value_;
  std::string path_;
};

fs::path resolve_file(const Node& node, const fs::path& data_dir) {
  fs::path p = node.string();
  if (p.empty()) return p;
  if (p.is_relative()) p = data_dir / p;
  return p;
}

// Standard MNIST file name in `dir`, gzipped or not.
fs::path default_file(const fs::path& dir, const char* stem) {
  const fs::path plain = dir / stem;
  const fs::path gz = dir / (std::string(stem) + ".gz");
  if (fs::exists(gz) && !fs::exists(plain)) return gz;
  return plain;
}

void parse_stream(const Node& node, const fs::path& base_dir, ExperimentConfig& config) {
  node.require_object({"kind", "tasks", "seed", "sizes", "eval_subset", "data_dir", "train_images",
                       "train_labels", "test_images", "test_labels", "classes_per_task",
                       "synthetic"});
  StreamSpec& s = config.stream;
  if (node.has("kind")) {
    try {
      s.kind = parse_stream_kind(node.at("kind").string());
    } catch (const UsageError& e) {
      node.at("kind").fail(e.what());
    }
  }
  if (node.has("tasks")) s.tasks = node.at("tasks").count();
  if (node.has("seed")) s.seed = node.at("seed").unsigned_integer();
  if (node.has("sizes")) {
    const Node sizes = node.at("sizes");
    sizes.require_object({"train", "valid", "test"});
    if (sizes.has("train")) s.sizes.train = sizes.at("train").count();
    if (sizes.has("valid")) s.sizes.valid = sizes.at("valid").unsigned_integer();
    if (sizes.has("test")) s.sizes.test = sizes.at("test").count();
  }
  if (node.has("eval_subset")) s.eval_subset_size = node.at("eval_subset").count();
  if (node.has("classes_per_task")) s.classes_per_task = node.at("classes_per_task").count();
  if (node.has("synthetic")) {
    const Node syn = node.at("synthetic");
    syn.require_object({"classes", "dim", "variance", "separation"});
    if (syn.has("classes")) s.synthetic.classes = syn.at("classes").count();
    if (syn.has("dim")) s.synthetic.dim = syn.at("dim").count();
    if (syn.has("variance")) s.synthetic.variance = syn.at("variance").positive();
    if (syn.has("separation")) s.synthetic.separation = syn.at("separation").number();
  }
  if (s.kind == StreamKind::synthetic) {
    for (const char* key : {"data_dir", "train_images", "train_labels", "test_images", "test_labels"}) {
      if (node.has(key)) node.at(key).fail("not used by synthetic streams");
    }
    config.data_dir.clear();
    return;
  }

  if (node.has("data_dir")) {
    config.data_dir = node.at("data_dir").string();
  } else if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') {
    config.data_dir = env;
  } else {
    config.data_dir = base_dir;
  }
  if (config.data_dir.is_relative()) config.data_dir = base_dir / config.data_dir;
  config.data_dir = config.data_dir.lexically_normal();

  const fs::path& dir = config.data_dir;
  s.train_images = node.has("train_images") ? resolve_file(node.at("train_images"), dir)
                                            : default_file(dir, "train-images-idx3-ubyte");
  s.train_labels = node.has("train_labels") ? resolve_file(node.at("train_labels"), dir)
                                            : default_file(dir, "train-labels-idx1-ubyte");
  s.test_images = node.has("test_images") ? resolve_file(node.at("test_images"), dir)
                                          : default_file(dir, "t10k-images-idx3-ubyte");
  s.test_labels = node.has("test_labels") ? resolve_file(node.at("test_labels"), dir)
                                          : default_file(dir, "t10k-labels-idx1-ubyte");
  if (s.train_images.empty() || s.train_labels.empty()) node.fail("train_images and train_labels are required");
  if (s.test_images.empty() != s.test_labels.empty()) {
    node.fail("test_images and test_labels must be given together (or both empty)");
  }
  const auto check_exists = [&](const fs::path& p, const char* key) {
    if (!p.empty() && !fs::exists(p)) {
      Node(node.raw(), node.path().empty() ? key : node.path() + "." + key)
          .fail("file not found: " + p.string() + " (set stream.data_dir or " + kDataDirEnv + ")");
    }
  };
  check_exists(s.train_images, "train_images");
  check_exists(s.train_labels, "train_labels");
  check_exists(s.test_images, "test_images");
  check_exists(s.test_labels, "test_labels");
}

MethodGrid parse_method(const Node& node) {
  node.require_object({"name", "tag", "lambda", "gamma", "mu", "regularizer", "online_decay"});
  if (!node.has("tag")) node.fail("missing key 'tag'");
  MethodGrid m;
  try {
    m.tag = parse_method_tag(node.at("tag").string());
  } catch (const UsageError& e) {
    node.at("tag").fail(e.what());
  }
  m.name = node.has("name") ? node.at("name").string() : to_string(m.tag);
  if (m.name.empty() || m.name.find_first_of(",\"\n\r") != std::string::npos) {
    node.fail("name must be nonempty and free of commas, quotes and newlines");
  }

  const bool ewc_family =
      m.tag == MethodTag::ewc || m.tag == MethodTag::online_ewc || m.tag == MethodTag::sp_ewc;
  const bool mas_family = m.tag == MethodTag::mas || m.tag == MethodTag::sp_mas;
  const bool self_paced = m.tag == MethodTag::sp_ewc || m.tag == MethodTag::sp_mas;
  const auto nonnegative = [](const Node& n) {
    const double x = n.number();
    if (!(x >= 0.0)) n.fail("must be >= 0");
    return x;
  };
  if (node.has("lambda") && !ewc_family) node.at("lambda").fail("only EWC-family methods take lambda");
  if (node.has("gamma") && !mas_family) node.at("gamma").fail("only MAS-family methods take gamma");
  if (ewc_family) {
    if (!node.has("lambda")) node.fail("missing key 'lambda'");
    m.strengths = node.at("lambda").list(nonnegative);
  } else if (mas_family) {
    if (!node.has("gamma")) node.fail("missing key 'gamma'");
    m.strengths = node.at("gamma").list(nonnegative);
  } else {
    m.strengths = {0.0};
  }

  if (!self_paced) {
    for (const char* key : {"mu", "regularizer"}) {
      if (node.has(key)) node.at(key).fail("only sp_ewc and sp_mas take this key");
    }
  } else {
    m.mu = node.has("mu") ? node.at("mu").list([](const Node& n) {
      try {
        return parse_mu_policy(n.string());
      } catch (const UsageError& e) {
        n.fail(e.what());
      }
    })
                          : std::vector<MuPolicy>{MuPolicy::topk(0)};
    if (node.has("regularizer")) {
      try {
        m.regularizer = parse_regularizer(node.at("regularizer").string());
      } catch (const UsageError& e) {
        node.at("regularizer").fail(e.what());
      }
    }
  }
  if (node.has("online_decay")) {
    if (m.tag != MethodTag::online_ewc) node.at("online_decay").fail("only online_ewc takes this key");
    m.online_decay = node.at("online_decay").number();
    if (!(m.online_decay >= 0.0 && m.online_decay <= 1.0)) node.at("online_decay").fail("must lie in [0,1]");
  }
  return m;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json document;
  try {
    document = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  // A manifest carries the resolved config under "config".
  if (document.is_object() && document.contains("config") && document.contains("artifact_version")) {
    json inner = document["config"];
    document = std::move(inner);
  }
  const Node root(document, "");
  root.require_object({"stream", "model", "training", "methods", "seeds", "output"});

  ExperimentConfig config;
  if (!root.has("stream")) root.fail("missing key 'stream'");
  parse_stream(root.at("stream"), base_dir, config);

  if (root.has("model")) {
    const Node model = root.at("model");
    model.require_object({"hidden"});
    if (model.has("hidden")) {
      const Node hidden = model.at("hidden");
      if (!hidden.raw().is_array()) hidden.fail("expected an array of layer widths");
      config.hidden.clear();
      for (std::size_t i = 0; i < hidden.raw().size(); ++i) {
        config.hidden.push_back(Node(hidden.raw()[i], hidden.path() + "[" + std::to_string(i) + "]").count());
      }
    }
  }

  if (root.has("training")) {
    const Node t = root.at("training");
    t.require_object({"epochs", "batch_size", "lr", "momentum", "importance_samples"});
    if (t.has("epochs")) config.training.epochs = t.at("epochs").count();
    if (t.has("batch_size")) config.training.batch_size = t.at("batch_size").count();
    if (t.has("lr")) config.lrs = t.at("lr").list([](const Node& n) { return n.positive(); });
    if (t.has("momentum")) {
      config.training.momentum = t.at("momentum").number();
      if (!(config.training.momentum >= 0.0 && config.training.momentum < 1.0)) {
        t.at("momentum").fail("must lie in [0,1)");
      }
    }
    if (t.has("importance_samples")) config.training.importance_samples = t.at("importance_samples").count();
  }

  if (!root.has("methods")) root.fail("missing key 'methods'");
  {
    const Node methods = root.at("methods");
    if (!methods.raw().is_array() || methods.raw().empty()) methods.fail("expected a nonempty array");
    for (std::size_t i = 0; i < methods.raw().size(); ++i) {
      const Node entry(methods.raw()[i], "methods[" + std::to_string(i) + "]");
      config.methods.push_back(parse_method(entry));
      for (std::size_t j = 0; j < i; ++j) {
        if (config.methods[j].name == config.methods[i].name) {
          entry.fail("duplicate method name '" + config.methods[i].name + "'");
        }
      }
    }
  }

  if (root.has("seeds")) {
    config.seeds = root.at("seeds").list([](const Node& n) { return n.unsigned_integer(); });
  }
  if (root.has("output")) {
    config.output = root.at("output").string();
    if (config.output.empty()) root.at("output").fail("must not be empty");
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  fs::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(text.str(), fs::absolute(base));
}

std::string config_to_json(const ExperimentConfig& config) {
  json stream = {
      {"kind", to_string(config.stream.kind)},
      {"tasks", config.stream.tasks},
      {"seed", config.stream.seed},
      {"sizes",
       {{"train", config.stream.sizes.train},
        {"valid", config.stream.sizes.valid},
        {"test", config.stream.sizes.test}}},
      {"eval_subset", config.stream.eval_subset_size},
      {"classes_per_task", config.stream.classes_per_task},
      {"synthetic",
       {{"classes", config.stream.synthetic.classes},
        {"dim", config.stream.synthetic.dim},
        {"variance", config.stream.synthetic.variance},
        {"separation", config.stream.synthetic.separation}}},
  };
  if (config.stream.kind != StreamKind::synthetic) {
    const auto absolute = [](const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); };
    stream["data_dir"] = absolute(config.data_dir);
    stream["train_images"] = absolute(config.stream.train_images);
    stream["train_labels"] = absolute(config.stream.train_labels);
    stream["test_images"] = absolute(config.stream.test_images);
    stream["test_labels"] = absolute(config.stream.test_labels);
  }
  json methods = json::array();
  for (const MethodGrid& m : config.methods) {
    json entry = {{"name", m.name}, {"tag", to_string(m.tag)}};
    const PenaltyFamily family = family_of(m.tag);
    if (m.tag == MethodTag::ewc || m.tag == MethodTag::online_ewc || m.tag == MethodTag::sp_ewc) {
      entry["lambda"] = m.strengths;
    } else if (family == PenaltyFamily::mas) {
      entry["gamma"] = m.strengths;
    }
    if (m.tag == MethodTag::sp_ewc || m.tag == MethodTag::sp_mas) {
      json mu = json::array();
      for (const MuPolicy& p : m.mu) mu.push_back(to_string(p));
      entry["mu"] = mu;
      entry["regularizer"] = to_string(m.regularizer);
    }
    if (m.tag == MethodTag::online_ewc) entry["online_decay"] = m.online_decay;
    methods.push_back(entry);
  }
  const json document = {
      {"stream", stream},
      {"model", {{"hidden", config.hidden}}},
      {"training",
       {{"epochs", config.training.epochs},
        {"batch_size", config.training.batch_size},
        {"lr", config.lrs},
        {"momentum", config.training.momentum},
        {"importance_samples", config.training.importance_samples}}},
      {"methods", methods},
      {"seeds", config.seeds},
      {"output", config.output.string()},
  };
  return document.dump(2);
}

std::vector<RunSpec> expand_grid(const ExperimentConfig& config) {
  std::vector<RunSpec> runs;
  for (const MethodGrid& grid : config.methods) {
    const bool self_paced = grid.tag == MethodTag::sp_ewc || grid.tag == MethodTag::sp_mas;
    const std::vector<MuPolicy> mus = self_paced ? grid.mu : std::vector<MuPolicy>{MuPolicy{}};
    for (double lr : config.lrs) {
      for (double strength : grid.strengths) {
        for (const MuPolicy& mu : mus) {
          for (std::uint64_t seed : config.seeds) {
            RunSpec run;
            run.index = runs.size();
            run.name = grid.name;
            run.method.tag = grid.tag;
            if (family_of(grid.tag) == PenaltyFamily::mas) {
              run.method.gamma = strength;
            } else {
              run.method.lambda = strength;
            }
            run.method.online_decay = grid.online_decay;
            if (self_paced) run.method.sp = SelfPacedSettings{grid.regularizer, mu};
            run.method.validate();
            run.lr = lr;
            run.seed = seed;
            runs.push_back(std::move(run));
          }
        }
      }
    }
  }
  return runs;
}

}  // namespace spwc
