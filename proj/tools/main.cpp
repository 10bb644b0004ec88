// ihead: inactive attention head toolkit.
//
//   ihead <simulate|score|calibrate|intervene|compare|report> --config run.json
//         [--out DIR] [--seed N] [--jobs N]
//
// Exit codes: 0 success, 2 configuration error, 3 data/format error.

#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kDataError = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace ihead::cli;
  CLI::App app{"Detect and ablate inactive attention heads"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides overrides;
  int jobs = 1;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  auto* out_opt = app.add_option("--out", overrides.output_dir, "Output directory (overrides output_dir)");
  auto* seed_opt = app.add_option("--seed", seed, "Override model and corpus seeds");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  (void)out_opt;

  using Command = std::vector<std::string> (*)(const RunConfig&, const RunOptions&);
  const std::vector<std::tuple<std::string, std::string, Command>> table = {
      {"simulate", "Build the reference model and write traces", cmd_simulate},
      {"score", "Score every head of every trace", cmd_score},
      {"calibrate", "Derive threshold policies over the quantile grid", cmd_calibrate},
      {"intervene", "Zero flagged heads and build performance curves", cmd_intervene},
      {"compare", "Mask agreement, score distances and attention PCA", cmd_compare},
      {"report", "Summarize an EvalRecord CSV", cmd_report},
  };
  Command selected = nullptr;
  for (const auto& [name, help, fn] : table) {
    app.add_subcommand(name, help)->fallthrough()->callback([&selected, f = fn] { selected = f; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  if (*seed_opt) overrides.seed = seed;

  try {
    const RunConfig cfg = load_run_config(config_path, overrides);
    for (const auto& f : selected(cfg, RunOptions{jobs})) std::cout << (cfg.out() / f).string() << '\n';
    return 0;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ihead::data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
