#include "herdkit/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace herdkit {

// ---------------------------------------------------------------------------
// enum <-> string
// ---------------------------------------------------------------------------

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::mse: return "mse";
    case LossKind::cosine: return "cosine";
    case LossKind::salient: return "salient";
  }
  throw std::logic_error("to_string: unhandled LossKind");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  throw std::logic_error("to_string: unhandled OptimizerKind");
}

std::string to_string(ArchId arch) {
  switch (arch) {
    case ArchId::simple_cnn: return "simple_cnn";
  }
  throw std::logic_error("to_string: unhandled ArchId");
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "mse") return LossKind::mse;
  if (name == "cosine") return LossKind::cosine;
  if (name == "salient") return LossKind::salient;
  throw std::invalid_argument("unknown loss_kind '" + name + "' (expected mse, cosine or salient)");
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer_kind '" + name +
                              "' (expected sgd, adam or adamw)");
}

ArchId arch_id_from_string(const std::string& name) {
  if (name == "simple_cnn") return ArchId::simple_cnn;
  throw std::invalid_argument("unknown arch_id '" + name + "' (expected simple_cnn)");
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

void ProbeConfig::validate() const {
  if (knn_k < 1) throw std::invalid_argument("knn_k must be >= 1");
  if (probe_epochs < 1) throw std::invalid_argument("probe_epochs must be >= 1");
  if (!(probe_lr > 0.0)) throw std::invalid_argument("probe_lr must be positive");
  if (probe_batch_size < 1) throw std::invalid_argument("probe_batch_size must be >= 1");
  if (mlp_hidden < 1) throw std::invalid_argument("mlp_hidden must be >= 1");
  if (fit_subset < 0) throw std::invalid_argument("fit_subset must be >= 0 (0 = full split)");
  if (test_subset < 0) throw std::invalid_argument("test_subset must be >= 0 (0 = full split)");
}

void ExperimentConfig::validate() const {
  if (num_peers < 2) throw std::invalid_argument("num_peers must be >= 2");
  if (num_teachers < 1) throw std::invalid_argument("num_teachers must be >= 1");
  if (num_teachers + 1 > num_peers) {
    throw std::invalid_argument("num_teachers + 1 must not exceed num_peers "
                                "(student and teachers are distinct peers)");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (eval_every_batches < 0) {
    throw std::invalid_argument("eval_every_batches must be >= 0 (0 = disabled)");
  }
  if (dataset_dir.empty()) throw std::invalid_argument("dataset_dir is required");
  if (output_dir.empty()) throw std::invalid_argument("output_dir must not be empty");
  if (train_subset_size < 0) {
    throw std::invalid_argument("train_subset_size must be >= 0 (0 = full split)");
  }
  probe_config.validate();
}

// ---------------------------------------------------------------------------
// flat key = value parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips optional surrounding quotes from a string value.
std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

[[noreturn]] void fail(const std::string& context, const std::string& msg) {
  throw std::runtime_error("config: " + context + ": " + msg);
}

long long parse_int(const std::string& value, const std::string& key, const std::string& ctx) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    fail(ctx, "expected integer for '" + key + "', got '" + value + "'");
  }
  return out;
}

uint64_t parse_u64(const std::string& value, const std::string& key, const std::string& ctx) {
  uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    fail(ctx, "expected unsigned 64-bit integer for '" + key + "', got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& value, const std::string& key, const std::string& ctx) {
  try {
    size_t pos = 0;
    double out = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    fail(ctx, "expected real number for '" + key + "', got '" + value + "'");
  }
}

// Routes one key/value pair into the config. `ctx` describes where the pair
// came from ("line 3", "override 1") for error messages.
void set_field(ExperimentConfig& cfg, const std::string& key, const std::string& raw,
               const std::string& ctx) {
  const std::string value = unquote(raw);
  try {
    if (key == "num_peers") cfg.num_peers = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "num_teachers") cfg.num_teachers = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "loss_kind") cfg.loss_kind = loss_kind_from_string(value);
    else if (key == "optimizer_kind") cfg.optimizer_kind = optimizer_kind_from_string(value);
    else if (key == "learning_rate") cfg.learning_rate = parse_real(value, key, ctx);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "arch_id") cfg.arch_id = arch_id_from_string(value);
    else if (key == "master_seed") cfg.master_seed = parse_u64(value, key, ctx);
    else if (key == "eval_every_batches")
      cfg.eval_every_batches = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "dataset_dir") cfg.dataset_dir = value;
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "train_subset_size")
      cfg.train_subset_size = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "knn_k") cfg.probe_config.knn_k = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "probe_epochs")
      cfg.probe_config.probe_epochs = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "probe_lr") cfg.probe_config.probe_lr = parse_real(value, key, ctx);
    else if (key == "probe_batch_size")
      cfg.probe_config.probe_batch_size = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "mlp_hidden")
      cfg.probe_config.mlp_hidden = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "fit_subset")
      cfg.probe_config.fit_subset = static_cast<int>(parse_int(value, key, ctx));
    else if (key == "test_subset")
      cfg.probe_config.test_subset = static_cast<int>(parse_int(value, key, ctx));
    else fail(ctx, "unknown key '" + key + "'");
  } catch (const std::invalid_argument& e) {
    // Enum parse failures carry their own message; attach the location.
    fail(ctx, e.what());
  }
}

}  // namespace

ExperimentConfig load_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = "line " + std::to_string(line_no);
    // Strip comments (a '#' outside quotes begins one).
    bool in_quote = false;
    char quote_ch = 0;
    for (size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (in_quote) {
        if (c == quote_ch) in_quote = false;
      } else if (c == '"' || c == '\'') {
        in_quote = true;
        quote_ch = c;
      } else if (c == '#') {
        line.resize(i);
        break;
      }
    }
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) fail(ctx, "expected 'key = value', got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) fail(ctx, "missing key before '='");
    if (value.empty()) fail(ctx, "missing value for '" + key + "'");
    if (!seen.insert(key).second) fail(ctx, "duplicate key '" + key + "'");
    set_field(cfg, key, value, ctx);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_config(buf.str());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  for (size_t i = 0; i < overrides.size(); ++i) {
    const std::string ctx = "override " + std::to_string(i + 1);
    const std::string& item = overrides[i];
    const size_t eq = item.find('=');
    if (eq == std::string::npos) fail(ctx, "expected key=value, got '" + item + "'");
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    if (key.empty() || value.empty()) fail(ctx, "expected key=value, got '" + item + "'");
    set_field(cfg, key, value, ctx);
  }
  cfg.validate();
}

std::string serialize(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "num_peers = " << cfg.num_peers << "\n";
  out << "num_teachers = " << cfg.num_teachers << "\n";
  out << "loss_kind = \"" << to_string(cfg.loss_kind) << "\"\n";
  out << "optimizer_kind = \"" << to_string(cfg.optimizer_kind) << "\"\n";
  out << "learning_rate = " << cfg.learning_rate << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "arch_id = \"" << to_string(cfg.arch_id) << "\"\n";
  out << "master_seed = " << cfg.master_seed << "\n";
  out << "eval_every_batches = " << cfg.eval_every_batches << "\n";
  out << "dataset_dir = \"" << cfg.dataset_dir << "\"\n";
  out << "output_dir = \"" << cfg.output_dir << "\"\n";
  out << "train_subset_size = " << cfg.train_subset_size << "\n";
  out << "knn_k = " << cfg.probe_config.knn_k << "\n";
  out << "probe_epochs = " << cfg.probe_config.probe_epochs << "\n";
  out << "probe_lr = " << cfg.probe_config.probe_lr << "\n";
  out << "probe_batch_size = " << cfg.probe_config.probe_batch_size << "\n";
  out << "mlp_hidden = " << cfg.probe_config.mlp_hidden << "\n";
  out << "fit_subset = " << cfg.probe_config.fit_subset << "\n";
  out << "test_subset = " << cfg.probe_config.test_subset << "\n";
  return out.str();
}

}  // namespace herdkit
