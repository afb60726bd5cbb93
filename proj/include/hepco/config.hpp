#pragma once

// Experiment configuration: flat key/value file with [sections], parsed
// with Boost.PropertyTree's INI reader, plus validation that names the
// offending field.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "hepco/encoder.hpp"
#include "hepco/seeding.hpp"

namespace hepco::config {

enum class Method { hepco, fedavg_prompt, fedprox_prompt, fedavg_ft, centralized_prompt };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::hepco: return "hepco";
    case Method::fedavg_prompt: return "fedavg-prompt";
    case Method::fedprox_prompt: return "fedprox-prompt";
    case Method::fedavg_ft: return "fedavg-ft";
    case Method::centralized_prompt: return "centralized-prompt";
  }
  return "?";
}

inline bool parse_method(const std::string& s, Method& out) {
  for (Method m : {Method::hepco, Method::fedavg_prompt, Method::fedprox_prompt, Method::fedavg_ft,
                   Method::centralized_prompt}) {
    if (s == to_string(m)) {
      out = m;
      return true;
    }
  }
  return false;
}

struct Ablation {
  bool no_prev_server = false;
  bool no_kl = false;
  bool no_mse = false;
  bool no_prompt_distill = false;
  bool no_classifier_distill = false;

  bool any() const { return no_prev_server || no_kl || no_mse || no_prompt_distill || no_classifier_distill; }
  bool distillation_off() const { return no_prompt_distill && no_classifier_distill; }
};

struct ExperimentConfig {
  // [data]
  std::string source = "synthetic";  // synthetic | file
  std::string embedding_path;
  encoder::SyntheticSpec synthetic{};
  double test_fraction = 0.2;

  // [federation]
  std::size_t tasks = 5;
  std::size_t rounds = 5;
  std::size_t clients = 5;
  double split_ratio = 0.1;
  double category_ratio = 0.6;
  double imbalance_ratio = 1.0;
  bool weighted_average = false;

  // [model]
  Method method = Method::hepco;
  std::size_t pool = 8;
  std::size_t prompt_length = 4;
  double attention_jitter = 0.1;

  // [client]
  std::size_t client_epochs = 10;
  double client_lr = 1e-3;
  double ft_lr = 5e-5;
  std::size_t client_batch = 64;
  double prox_mu = 0.01;
  std::string loss_mask = "seen";  // seen | current

  // [generator]
  std::size_t gen_epochs = 100;
  double gen_lr = 1e-4;
  std::size_t gen_batch = 64;
  double lambda_kl = 1.0;
  double lambda_mse = 0.1;
  std::size_t embed_dim = 64;
  std::size_t noise_dim = 64;
  std::vector<std::size_t> gen_hidden{256, 1024};

  // [distill]
  std::size_t distill_epochs = 200;
  double distill_lr = 1e-4;
  std::size_t distill_batch = 64;
  double replay_ratio = 0.5;

  // [ablation]
  Ablation ablation{};

  // [run]
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::size_t parallelism = 0;  // 0: one worker per client

  std::size_t workers() const { return parallelism == 0 ? clients : parallelism; }
};

struct FieldError {
  std::string field;
  std::string message;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<FieldError> errors)
      : std::runtime_error(format(errors)), errors_(std::move(errors)) {}
  ConfigError(std::string field, std::string message)
      : ConfigError(std::vector<FieldError>{{std::move(field), std::move(message)}}) {}
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  static std::string format(const std::vector<FieldError>& errs) {
    std::string s = "invalid configuration:";
    for (const auto& e : errs) s += "\n  " + e.field + ": " + e.message;
    return s;
  }
  std::vector<FieldError> errors_;
};

inline std::vector<FieldError> validate(const ExperimentConfig& c) {
  std::vector<FieldError> e;
  auto unit = [&](const char* f, double v) {
    if (!(v > 0.0 && v <= 1.0)) e.push_back({f, "must be in (0, 1]"});
  };
  auto pos = [&](const char* f, std::size_t v) {
    if (v < 1) e.push_back({f, "must be >= 1"});
  };
  auto positive = [&](const char* f, double v) {
    if (!(v > 0.0)) e.push_back({f, "must be > 0"});
  };
  if (c.source != "synthetic" && c.source != "file") e.push_back({"data.source", "must be synthetic or file"});
  if (c.source == "file" && c.embedding_path.empty()) e.push_back({"data.embedding_path", "required for file source"});
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0)) e.push_back({"data.test_fraction", "must be in [0, 1)"});
  if (c.source == "synthetic") {
    if (c.synthetic.dim < 2) e.push_back({"data.dim", "must be >= 2"});
    pos("data.tokens", c.synthetic.tokens);
    pos("data.classes", c.synthetic.n_classes);
    if (c.synthetic.samples_per_class < 2) e.push_back({"data.samples_per_class", "must be >= 2"});
    positive("data.center_scale", c.synthetic.center_scale);
    if (c.synthetic.noise_scale < 0.0) e.push_back({"data.noise_scale", "must be >= 0"});
    if (c.tasks >= 1 && c.synthetic.n_classes % c.tasks != 0)
      e.push_back({"federation.tasks", "must divide data.classes"});
  }
  pos("federation.tasks", c.tasks);
  pos("federation.rounds", c.rounds);
  pos("federation.clients", c.clients);
  unit("federation.split_ratio", c.split_ratio);
  unit("federation.category_ratio", c.category_ratio);
  unit("federation.imbalance_ratio", c.imbalance_ratio);
  if (c.prompt_length % 2 != 0) e.push_back({"model.prompt_length", "must be even"});
  if (c.attention_jitter < 0.0) e.push_back({"model.attention_jitter", "must be >= 0"});
  pos("client.epochs", c.client_epochs);
  pos("client.batch_size", c.client_batch);
  if (c.client_lr < 0.0) e.push_back({"client.lr", "must be >= 0"});
  if (c.ft_lr < 0.0) e.push_back({"client.ft_lr", "must be >= 0"});
  if (c.prox_mu < 0.0) e.push_back({"client.prox_mu", "must be >= 0"});
  if (c.loss_mask != "seen" && c.loss_mask != "current") e.push_back({"client.loss_mask", "must be seen or current"});
  pos("generator.epochs", c.gen_epochs);
  pos("generator.batch_size", c.gen_batch);
  if (c.gen_lr < 0.0) e.push_back({"generator.lr", "must be >= 0"});
  if (c.lambda_kl < 0.0) e.push_back({"generator.lambda_kl", "must be >= 0"});
  if (c.lambda_mse < 0.0) e.push_back({"generator.lambda_mse", "must be >= 0"});
  pos("generator.embed_dim", c.embed_dim);
  pos("generator.noise_dim", c.noise_dim);
  for (auto h : c.gen_hidden)
    if (h == 0) e.push_back({"generator.hidden", "widths must be >= 1"});
  pos("distill.epochs", c.distill_epochs);
  pos("distill.batch_size", c.distill_batch);
  if (c.distill_lr < 0.0) e.push_back({"distill.lr", "must be >= 0"});
  if (!(c.replay_ratio >= 0.0 && c.replay_ratio <= 1.0)) e.push_back({"distill.replay_ratio", "must be in [0, 1]"});
  if (c.ablation.any() && c.method != Method::hepco)
    e.push_back({"ablation", std::string("ablation flags are only valid with method=hepco, not ") + to_string(c.method)});
  return e;
}

inline void validate_or_throw(const ExperimentConfig& c) {
  auto errs = validate(c);
  if (!errs.empty()) throw ConfigError(std::move(errs));
}

namespace detail {

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    const auto v = std::stoull(item, &pos);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

/// Reads known keys; unknown keys are reported as field errors so typos
/// are not silently ignored.
inline ExperimentConfig from_ptree(const boost::property_tree::ptree& pt) {
  ExperimentConfig c;
  std::vector<FieldError> errs;
  std::set<std::string> known;

  auto get = [&](const std::string& key, auto& target) {
    known.insert(key);
    using T = std::decay_t<decltype(target)>;
    const auto node = pt.get_child_optional(boost::property_tree::ptree::path_type(key, '.'));
    if (!node) return;
    const std::string raw = node->data();
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        target = raw;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (raw == "true" || raw == "1" || raw == "yes") target = true;
        else if (raw == "false" || raw == "0" || raw == "no") target = false;
        else throw std::invalid_argument("not a boolean");
      } else if constexpr (std::is_same_v<T, double>) {
        std::size_t pos = 0;
        target = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        target = detail::parse_size_list(raw);
      } else {
        std::size_t pos = 0;
        if (!raw.empty() && raw.front() == '-') throw std::invalid_argument("negative");
        target = static_cast<T>(std::stoull(raw, &pos));
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
      }
    } catch (const std::exception& ex) {
      errs.push_back({key, "cannot parse '" + raw + "' (" + ex.what() + ")"});
    }
  };

  get("data.source", c.source);
  get("data.embedding_path", c.embedding_path);
  get("data.classes", c.synthetic.n_classes);
  get("data.samples_per_class", c.synthetic.samples_per_class);
  get("data.dim", c.synthetic.dim);
  get("data.tokens", c.synthetic.tokens);
  get("data.center_scale", c.synthetic.center_scale);
  get("data.noise_scale", c.synthetic.noise_scale);
  get("data.test_fraction", c.test_fraction);

  get("federation.tasks", c.tasks);
  get("federation.rounds", c.rounds);
  get("federation.clients", c.clients);
  get("federation.split_ratio", c.split_ratio);
  get("federation.category_ratio", c.category_ratio);
  get("federation.imbalance_ratio", c.imbalance_ratio);
  get("federation.weighted_average", c.weighted_average);

  std::string method = to_string(c.method);
  get("model.method", method);
  if (!parse_method(method, c.method)) errs.push_back({"model.method", "unknown method '" + method + "'"});
  get("model.pool", c.pool);
  get("model.prompt_length", c.prompt_length);
  get("model.attention_jitter", c.attention_jitter);

  get("client.epochs", c.client_epochs);
  get("client.lr", c.client_lr);
  get("client.ft_lr", c.ft_lr);
  get("client.batch_size", c.client_batch);
  get("client.prox_mu", c.prox_mu);
  get("client.loss_mask", c.loss_mask);

  get("generator.epochs", c.gen_epochs);
  get("generator.lr", c.gen_lr);
  get("generator.batch_size", c.gen_batch);
  get("generator.lambda_kl", c.lambda_kl);
  get("generator.lambda_mse", c.lambda_mse);
  get("generator.embed_dim", c.embed_dim);
  get("generator.noise_dim", c.noise_dim);
  get("generator.hidden", c.gen_hidden);

  get("distill.epochs", c.distill_epochs);
  get("distill.lr", c.distill_lr);
  get("distill.batch_size", c.distill_batch);
  get("distill.replay_ratio", c.replay_ratio);

  get("ablation.no_prev_server", c.ablation.no_prev_server);
  get("ablation.no_kl", c.ablation.no_kl);
  get("ablation.no_mse", c.ablation.no_mse);
  get("ablation.no_prompt_distill", c.ablation.no_prompt_distill);
  get("ablation.no_classifier_distill", c.ablation.no_classifier_distill);

  get("run.seed", c.seed);
  get("run.out_dir", c.out_dir);
  get("run.parallelism", c.parallelism);

  for (const auto& [section, body] : pt) {
    if (body.empty()) {
      errs.push_back({section, "key outside of a section"});
      continue;
    }
    for (const auto& [key, _] : body)
      if (!known.count(section + "." + key)) errs.push_back({section + "." + key, "unknown key"});
  }
  if (!errs.empty()) throw ConfigError(std::move(errs));
  return c;
}

inline ExperimentConfig parse_config(std::istream& is) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& ex) {
    throw ConfigError("<file>", ex.message() + " at line " + std::to_string(ex.line()));
  }
  return from_ptree(pt);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  return parse_config(in);
}

/// Canonical text of every setting that influences results. Output
/// location and worker count are excluded: they never change outcomes.
inline std::string canonical(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "data.source=" << c.source << "\ndata.embedding_path=" << c.embedding_path
     << "\ndata.classes=" << c.synthetic.n_classes << "\ndata.samples_per_class=" << c.synthetic.samples_per_class
     << "\ndata.dim=" << c.synthetic.dim << "\ndata.tokens=" << c.synthetic.tokens
     << "\ndata.center_scale=" << c.synthetic.center_scale << "\ndata.noise_scale=" << c.synthetic.noise_scale
     << "\ndata.test_fraction=" << c.test_fraction << "\nfederation.tasks=" << c.tasks
     << "\nfederation.rounds=" << c.rounds << "\nfederation.clients=" << c.clients
     << "\nfederation.split_ratio=" << c.split_ratio << "\nfederation.category_ratio=" << c.category_ratio
     << "\nfederation.imbalance_ratio=" << c.imbalance_ratio << "\nfederation.weighted_average=" << c.weighted_average
     << "\nmodel.method=" << to_string(c.method) << "\nmodel.pool=" << c.pool
     << "\nmodel.prompt_length=" << c.prompt_length << "\nmodel.attention_jitter=" << c.attention_jitter
     << "\nclient.epochs=" << c.client_epochs << "\nclient.lr=" << c.client_lr << "\nclient.ft_lr=" << c.ft_lr
     << "\nclient.batch_size=" << c.client_batch << "\nclient.prox_mu=" << c.prox_mu
     << "\nclient.loss_mask=" << c.loss_mask
     << "\ngenerator.epochs=" << c.gen_epochs << "\ngenerator.lr=" << c.gen_lr
     << "\ngenerator.batch_size=" << c.gen_batch << "\ngenerator.lambda_kl=" << c.lambda_kl
     << "\ngenerator.lambda_mse=" << c.lambda_mse << "\ngenerator.embed_dim=" << c.embed_dim
     << "\ngenerator.noise_dim=" << c.noise_dim << "\ngenerator.hidden=" << detail::join(c.gen_hidden)
     << "\ndistill.epochs=" << c.distill_epochs << "\ndistill.lr=" << c.distill_lr
     << "\ndistill.batch_size=" << c.distill_batch << "\ndistill.replay_ratio=" << c.replay_ratio
     << "\nablation.no_prev_server=" << c.ablation.no_prev_server << "\nablation.no_kl=" << c.ablation.no_kl
     << "\nablation.no_mse=" << c.ablation.no_mse << "\nablation.no_prompt_distill=" << c.ablation.no_prompt_distill
     << "\nablation.no_classifier_distill=" << c.ablation.no_classifier_distill << "\nrun.seed=" << c.seed << "\n";
  return os.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical(c));
  return os.str();
}

}  // namespace hepco::config
