#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "pipeline.hpp"
#include "wss/error.hpp"

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly supervised tumor segmentation with superpixel-generating networks"};
  app.require_subcommand(1);
  std::string config_path, out, seed;
  bool force = false, allow_stale = false, quiet = false, print_defaults = false;
  int threads = 1;
  app.add_option("--config", config_path, "flat key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", out, "run directory (dataset directory for synth); overrides `out`");
  app.add_option("--seed", seed, "global seed; overrides `seed`");
  app.add_flag("--force", force, "re-run a stage even when up to date; overwrite a non-empty synth directory");
  app.add_option("--threads", threads, "worker threads for linear algebra (1 keeps runs bit-reproducible)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--allow-stale", allow_stale, "continue when upstream artifacts no longer match their manifests");
  app.add_flag("-q,--quiet", quiet, "suppress progress lines");
  app.add_flag("--print-defaults", print_defaults, "print every configuration key with its default and exit");
  app.fallthrough();

  app.add_subcommand("synth", "generate a synthetic multi-modal dataset (volumes, masks, manifest)");
  for (const auto& stage : wss::cli::stage_names()) app.add_subcommand(stage, "run pipeline stage " + stage);

  if (argc >= 2 && std::string(argv[1]) == "--print-defaults") {
    std::cout << wss::cli::RunConfig::documented_defaults();
    return kOk;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (print_defaults) {
    std::cout << wss::cli::RunConfig::documented_defaults();
    return kOk;
  }

  try {
    wss::cli::Options options;
    if (!config_path.empty()) options.config = wss::cli::RunConfig::load(config_path);
    if (!out.empty()) options.config.set("out", out);
    if (!seed.empty()) options.config.set("seed", seed);
    options.run_dir = options.config.str("out");
    options.force = force;
    options.allow_stale = allow_stale;
    options.threads = threads;
    options.log = quiet ? nullptr : &std::cerr;
    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "synth") {
      wss::cli::cmd_synth(options, options.run_dir);
    } else {
      wss::cli::run_stage(options, command);
    }
    return kOk;
  } catch (const wss::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const wss::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kRuntime;
  }
}
