#include <CLI11.hpp>
#include <Eigen/Core>
#include <iostream>
#include <optional>
#include <string>

#include "mrextrap/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Latent-space linear extrapolation of synthetic brain-like phantoms"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int threads = 1;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--threads", threads, "worker threads for linear algebra")->check(CLI::PositiveNumber);

  std::vector<std::string> stages = mrextrap::pipeline_stages();
  stages.push_back("all");
  for (const auto& s : stages) app.add_subcommand(s, s == "all" ? "run every stage in order" : "run the " + s + " stage");
  app.fallthrough();

  CLI11_PARSE(app, argc, argv);

  mrextrap::Logger log;
  try {
    mrextrap::RunConfig config = config_path.empty() ? mrextrap::RunConfig{} : mrextrap::load_run_config(config_path);
    if (seed) config.apply_seed(*seed);
    if (!out_dir.empty()) config.output_dir = out_dir;
    Eigen::setNbThreads(threads);
    mrextrap::Pipeline pipeline(config, config.output_dir, log);
    pipeline.run(app.get_subcommands().front()->get_name());
  } catch (const mrextrap::Error& e) {
    log.log(mrextrap::LogLevel::error, std::string(mrextrap::to_string(e.code())) + ": " + e.what());
    return 2;
  } catch (const std::exception& e) {
    log.log(mrextrap::LogLevel::error, e.what());
    return 1;
  }
  return 0;
}
