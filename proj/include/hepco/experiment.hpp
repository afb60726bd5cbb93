#pragma once

// Experiment driver: the task/round loop for every method, ablation
// variants, and the summary artifacts. This is the only layer that talks to
// the filesystem or emits progress.

#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hepco/baselines.hpp"
#include "hepco/client.hpp"
#include "hepco/config.hpp"
#include "hepco/encoder.hpp"
#include "hepco/generator.hpp"
#include "hepco/metrics.hpp"
#include "hepco/prompt_model.hpp"
#include "hepco/seeding.hpp"
#include "hepco/server.hpp"
#include "hepco/taskstream.hpp"

namespace hepco::experiment {

using config::ExperimentConfig;
using config::Method;

struct RoundRecord {
  std::size_t task = 0;
  std::size_t round = 0;
  std::vector<double> accuracies;  // tasks 1..task
  std::size_t clamped = 0;         // partition clamp events this round
};

struct ExperimentResult {
  metrics::AccuracyMatrix matrix;
  double average_accuracy = 0.0;
  double forgetting = 0.0;
  double comm_ratio_pct = 0.0;
  std::size_t rounds_executed = 0;
  std::vector<RoundRecord> rounds;
  std::vector<model::PromptState> checkpoints;  // one per task boundary
  model::PromptState final_state;
  std::string config_hash;
  std::uint64_t seed = 0;
};

using Logger = std::function<void(const std::string&)>;

/// Synthetic data draws its seed from the master seed, so every method run
/// under the same master seed sees the same benchmark.
inline encoder::Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.source == "file") return encoder::load_embeddings(cfg.embedding_path);
  auto spec = cfg.synthetic;
  spec.seed = SeedStreams(cfg.seed).seed("data");
  return encoder::synth_generate(spec);
}

inline std::vector<client::Example> make_examples(const encoder::Dataset& ds, const taskstream::TaskStream& ts,
                                                  std::span<const std::size_t> indices) {
  std::vector<client::Example> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back({&ds.samples[i], ts.class_of_label[ds.samples[i].label]});
  return out;
}

/// Runs fn(i) for i in [0, n) with at most `workers` in flight and returns
/// results in index order.
template <class F>
auto ordered_parallel_map(std::size_t n, std::size_t workers, F&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out;
  out.reserve(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
    return out;
  }
  for (std::size_t start = 0; start < n; start += workers) {
    std::vector<std::future<R>> wave;
    for (std::size_t i = start; i < std::min(n, start + workers); ++i)
      wave.push_back(std::async(std::launch::async, fn, i));
    for (auto& f : wave) out.push_back(f.get());
  }
  return out;
}

namespace detail {

inline ExperimentConfig effective(ExperimentConfig cfg) {
  if (cfg.method == Method::centralized_prompt) {
    cfg.clients = 1;
    cfg.rounds = 1;
    cfg.split_ratio = 1.0;
    cfg.category_ratio = 1.0;
    cfg.imbalance_ratio = 1.0;
  }
  return cfg;
}

inline generator::GeneratorShape generator_shape(const ExperimentConfig& cfg, std::size_t n_classes, std::size_t dim) {
  generator::GeneratorShape s;
  s.n_labels = n_classes;
  s.embed_dim = cfg.embed_dim;
  s.noise_dim = cfg.noise_dim;
  s.hidden = cfg.gen_hidden;
  s.out_dim = dim;
  return s;
}

}  // namespace detail

/// Full task/round loop. Deterministic in (config, seed) regardless of the
/// number of client workers.
inline ExperimentResult run_experiment(const ExperimentConfig& input, const Logger& log = {}) {
  config::validate_or_throw(input);
  const ExperimentConfig cfg = detail::effective(input);
  const SeedStreams seeds(cfg.seed);
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  const encoder::Dataset ds = load_dataset(cfg);
  if (ds.n_classes % cfg.tasks != 0) throw config::ConfigError("federation.tasks", "must divide the class count");
  const auto ts = taskstream::build_task_sequence(ds, cfg.tasks, seeds.seed("tasks"), cfg.test_fraction);

  Rng attn_rng = seeds.rng("attention");
  const model::Attention attn = model::init_attention(ds.dim, attn_rng, cfg.attention_jitter);
  const model::PromptShape shape{cfg.pool, cfg.prompt_length, ds.dim, ds.n_classes};
  Rng init_rng = seeds.rng("init");
  server::ServerState srv(model::init_prompt_state(shape, init_rng));

  const bool full_ft = cfg.method == Method::fedavg_ft;
  baselines::FullModel ft_model;
  if (full_ft) ft_model = baselines::make_full_model(attn, srv.current);

  const bool hepco = cfg.method == Method::hepco;
  const auto& abl = cfg.ablation;
  const bool distill_on = hepco && !abl.distillation_off();

  taskstream::HeterogeneityConfig het{cfg.split_ratio, cfg.category_ratio, cfg.imbalance_ratio,
                                      cfg.clients,     cfg.rounds,         0};

  ExperimentResult res;
  res.seed = cfg.seed;
  res.config_hash = config::config_hash(input);
  std::vector<std::vector<client::Example>> test_sets;

  for (std::size_t t = 0; t < ts.tasks.size(); ++t) {
    const auto& task = ts.tasks[t];
    const std::size_t active = ts.classes_seen_through(t);
    test_sets.push_back(make_examples(ds, ts, task.test));
    het.seed = seeds.seed(stream_name("partition", t));
    const SeedStreams task_seeds = seeds.child(stream_name("task", t));

    for (std::size_t r = 0; r < cfg.rounds; ++r) {
      const auto assignments = taskstream::assign_round(task, ds.n_classes, het, r, het.seed);
      const SeedStreams round_seeds = task_seeds.child(stream_name("round", r));
      std::vector<std::vector<client::Example>> data;
      std::size_t clamps = 0;
      for (const auto& a : assignments) {
        data.push_back(make_examples(ds, ts, a.indices));
        clamps += a.clamps.size();
      }

      client::LocalTrainConfig lc;
      lc.epochs = cfg.client_epochs;
      lc.batch_size = cfg.client_batch;
      lc.active_classes = active;
      lc.first_live_class = cfg.loss_mask == "current" ? task.first_class : 0;
      lc.prox_mu = cfg.prox_mu;
      lc.lr = full_ft ? cfg.ft_lr : cfg.client_lr;
      lc.mode = cfg.method == Method::fedprox_prompt ? client::TrainMode::fedprox
                : full_ft                            ? client::TrainMode::full_ft
                                                     : client::TrainMode::prompt;

      std::vector<client::ClientReport> reports;
      if (full_ft) {
        std::vector<std::uint64_t> cs;
        for (std::size_t c = 0; c < data.size(); ++c) cs.push_back(round_seeds.seed(stream_name("client", c)));
        auto ft = baselines::fedavg_ft_round(ft_model, data, lc, cs);
        ft_model = std::move(ft.model);
        reports = std::move(ft.reports);
        srv.current = ft_model.head;
      } else {
        const model::PromptState global = srv.current;
        reports = ordered_parallel_map(data.size(), cfg.workers(), [&](std::size_t c) {
          auto rep = client::train_local(global, attn, data[c], lc, round_seeds.seed(stream_name("client", c)));
          rep.client = c;
          return rep;
        });
        model::PromptState w_avg = server::average_weights(reports, cfg.weighted_average);

        if (distill_on) {
          std::vector<model::PromptState> teachers;
          for (const auto& rep : reports) teachers.push_back(rep.state);
          std::vector<std::vector<std::size_t>> counts;
          for (const auto& rep : reports) counts.push_back(rep.counts);
          const auto dist_cur = generator::build_distribution(counts);

          generator::GeneratorTrainConfig gc;
          gc.lambda_kl = abl.no_kl ? 0.0 : cfg.lambda_kl;
          gc.lambda_mse = abl.no_mse ? 0.0 : cfg.lambda_mse;
          gc.epochs = cfg.gen_epochs;
          gc.batch_size = cfg.gen_batch;
          gc.lr = cfg.gen_lr;
          gc.active_classes = active;

          const auto gshape = detail::generator_shape(cfg, ds.n_classes, ds.dim);
          const bool use_prev = t > 0 && !abl.no_prev_server && srv.previous.has_value();

          auto train_cur = [&] {
            Rng gi = round_seeds.rng("generator_init");
            return generator::train_generator(generator::init_generator(gshape, gi), teachers, w_avg, dist_cur, gc,
                                              round_seeds.seed("generator"));
          };
          std::optional<generator::LabelDistribution> dist_prev;
          if (use_prev) dist_prev = server::previous_task_distribution(srv);
          auto train_prev = [&] {
            Rng gi = round_seeds.rng("prev_generator_init");
            return generator::train_previous_task_generator(generator::init_generator(gshape, gi), *srv.previous,
                                                            w_avg, *dist_prev, gc, t,
                                                            round_seeds.seed("prev_generator"));
          };

          generator::LatentGenerator gen_cur;
          std::optional<generator::LatentGenerator> gen_prev;
          if (use_prev && cfg.workers() > 1) {
            auto fut = std::async(std::launch::async, train_prev);
            gen_cur = train_cur();
            gen_prev = fut.get();
          } else {
            gen_cur = train_cur();
            if (use_prev) gen_prev = train_prev();
          }

          server::DistillConfig dc;
          dc.epochs = cfg.distill_epochs;
          dc.lr = cfg.distill_lr;
          dc.batch_size = cfg.distill_batch;
          dc.replay_ratio = use_prev ? cfg.replay_ratio : 0.0;
          dc.prompt_distill = !abl.no_prompt_distill;
          dc.classifier_distill = !abl.no_classifier_distill;
          dc.active_classes = active;
          dc.first_current_class = task.first_class;

          server::DistillTeachers dt{teachers, &dist_cur, use_prev ? &*srv.previous : nullptr};
          server::LatentSources src{&gen_cur, &dist_cur, gen_prev ? &*gen_prev : nullptr,
                                    dist_prev ? &*dist_prev : nullptr};
          w_avg = server::distill(w_avg, dt, src, dc, t, round_seeds.seed("distill"));
        }
        srv.current = std::move(w_avg);
      }
      server::record_round(srv, reports);
      ++res.rounds_executed;

      const auto& eval_attn = full_ft ? ft_model.attention : attn;
      RoundRecord rec{t, r, metrics::evaluate(srv.current, eval_attn, test_sets, active), clamps};
      std::ostringstream msg;
      msg << "task " << t + 1 << "/" << ts.tasks.size() << " round " << r + 1 << "/" << cfg.rounds
          << " acc_so_far=" << std::fixed << std::setprecision(4)
          << std::accumulate(rec.accuracies.begin(), rec.accuracies.end(), 0.0) /
                 static_cast<double>(rec.accuracies.size());
      if (clamps) msg << " (clamped " << clamps << " class targets)";
      say(msg.str());
      res.rounds.push_back(std::move(rec));
    }
    srv = server::end_of_task(std::move(srv), cfg.rounds);
    res.checkpoints.push_back(srv.current);
    res.matrix.push_row(res.rounds.back().accuracies);
  }

  res.final_state = srv.current;
  res.average_accuracy = metrics::average_accuracy(res.matrix);
  res.forgetting = metrics::forgetting(res.matrix);
  const std::size_t payload = full_ft ? ft_model.parameter_count() : srv.current.parameter_count();
  const std::size_t reference = attn.parameter_count() + ds.dim * ds.n_classes + ds.n_classes;
  res.comm_ratio_pct = metrics::communication_ratio(payload, reference);
  return res;
}

/// Sequential training of one prompt model on pooled task data: the
/// federated loop with one client, one round, κ = γ = β = 1 and no
/// distillation.
inline metrics::AccuracyMatrix centralized_prompt_train(ExperimentConfig cfg, const Logger& log = {}) {
  cfg.method = Method::centralized_prompt;
  cfg.ablation = {};
  return run_experiment(cfg, log).matrix;
}

// ---------------------------------------------------------------------------
// Artifacts.

inline nlohmann::ordered_json summary_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["A_N"] = r.average_accuracy;
  j["F_N"] = r.forgetting;
  j["comm_ratio_pct"] = r.comm_ratio_pct;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["accuracy_matrix"] = r.matrix.rows;
  return j;
}

inline std::string summary_text(const ExperimentResult& r) { return summary_json(r).dump(2) + "\n"; }

inline std::string metrics_csv(const ExperimentResult& r) {
  std::string s = metrics::csv_header(r.matrix.tasks()) + "\n";
  for (const auto& rec : r.rounds) s += metrics::csv_row(rec.task, rec.round, rec.accuracies, r.matrix.tasks()) + "\n";
  return s;
}

/// Writes summary.json, metrics.csv and one checkpoint per task.
inline void write_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "summary.json");
    os << summary_text(r);
  }
  {
    std::ofstream os(dir / "metrics.csv");
    os << metrics_csv(r);
  }
  for (std::size_t t = 0; t < r.checkpoints.size(); ++t) {
    std::ofstream os(dir / ("checkpoint_task" + std::to_string(t + 1) + ".hpst"), std::ios::binary);
    model::write_state(os, r.checkpoints[t]);
  }
  if (!std::filesystem::exists(dir / "summary.json")) throw std::runtime_error("failed to write outputs to " + dir.string());
}

// ---------------------------------------------------------------------------
// Ablations.

struct AblationRow {
  std::string variant;
  double average_accuracy = 0.0;
  double forgetting = 0.0;
};

inline std::vector<std::pair<std::string, config::Ablation>> ablation_variants() {
  std::vector<std::pair<std::string, config::Ablation>> v;
  v.push_back({"full", {}});
  config::Ablation a;
  a.no_prev_server = true;
  v.push_back({"no_prev_server", a});
  a = {};
  a.no_kl = true;
  v.push_back({"no_kl", a});
  a = {};
  a.no_mse = true;
  v.push_back({"no_mse", a});
  a = {};
  a.no_prompt_distill = true;
  v.push_back({"no_prompt_distill", a});
  a = {};
  a.no_classifier_distill = true;
  v.push_back({"no_classifier_distill", a});
  return v;
}

/// Full method plus each single ablation flag under one shared seed.
inline std::vector<AblationRow> ablation_suite(ExperimentConfig cfg, const Logger& log = {}) {
  if (cfg.method != Method::hepco) throw config::ConfigError("model.method", "ablation suite requires hepco");
  std::vector<AblationRow> rows;
  for (const auto& [name, flags] : ablation_variants()) {
    cfg.ablation = flags;
    if (log) log("ablation variant " + name);
    const auto r = run_experiment(cfg, log);
    rows.push_back({name, r.average_accuracy, r.forgetting});
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,A_N,F_N\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) os << r.variant << ',' << r.average_accuracy << ',' << r.forgetting << '\n';
  return os.str();
}

}  // namespace hepco::experiment
