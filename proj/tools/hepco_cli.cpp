#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hepco/hepco.hpp"

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kFormat = 3, kRuntime = 4 };

std::string output_dir(const std::string& cli_value, const std::string& config_value) {
  if (const char* env = std::getenv("HEPCO_OUT_DIR"); env && *env) return env;
  return cli_value.empty() ? config_value : cli_value;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out) {
  auto cfg = hepco::config::load_config(path);
  if (seed) cfg.seed = *seed;
  const auto result = hepco::experiment::run_experiment(cfg, log_line);
  const std::string dir = output_dir(out, cfg.out_dir);
  hepco::experiment::write_outputs(result, dir);
  std::cout << hepco::experiment::summary_text(result);
  std::cerr << "wrote " << dir << '\n';
  return kOk;
}

int cmd_ablate(const std::string& path, const std::string& out) {
  const auto cfg = hepco::config::load_config(path);
  const auto rows = hepco::experiment::ablation_suite(cfg, log_line);
  const std::string table = hepco::experiment::ablation_table(rows);
  const std::string dir = output_dir(out, cfg.out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream(std::filesystem::path(dir) / "ablations.csv") << table;
  std::cout << table;
  return kOk;
}

int cmd_gen_synth(const std::string& spec_path, const std::string& out) {
  const auto cfg = hepco::config::load_config(spec_path);
  const auto ds = hepco::experiment::load_dataset(cfg);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + out + " for writing");
  hepco::encoder::write_embeddings(os, ds);
  if (!os) throw std::runtime_error("write failed: " + out);
  std::cout << "wrote " << ds.samples.size() << " samples, " << ds.n_classes << " classes, T=" << ds.tokens
            << ", D=" << ds.dim << " to " << out << '\n';
  return kOk;
}

int cmd_inspect(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  const auto s = hepco::model::read_state(is);
  const auto& sh = s.shape;
  std::cout << "pool M=" << sh.pool << " prompt length L_p=" << sh.length << " dim D=" << sh.dim
            << " classes=" << sh.n_classes << '\n'
            << "keys " << s.keys.rows << "x" << s.keys.cols << " (" << s.keys.data.size() << ")\n"
            << "prompts " << s.prompts.rows << "x" << s.prompts.cols << " (" << s.prompts.data.size() << ")\n"
            << "classifier " << s.weights.rows << "x" << s.weights.cols << " + bias " << s.bias.size() << '\n'
            << "total parameters " << s.parameter_count() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated class-incremental prompt learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path, synth_out, ckpt;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--out", out_dir, "output directory (HEPCO_OUT_DIR overrides)");

  auto* ablate = app.add_subcommand("ablate", "full method plus each ablation under one seed");
  ablate->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", out_dir, "output directory (HEPCO_OUT_DIR overrides)");

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic embedding file");
  gen->add_option("--spec", spec_path, "config file with a [data] section")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", synth_out, "embedding file")->required();

  auto* inspect = app.add_subcommand("inspect", "print a checkpoint's shape and parameter counts");
  inspect->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out_dir);
    if (*ablate) return cmd_ablate(config_path, out_dir);
    if (*gen) return cmd_gen_synth(spec_path, synth_out);
    if (*inspect) return cmd_inspect(ckpt);
  } catch (const hepco::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const hepco::encoder::EmbeddingFormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const hepco::model::StateFormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
