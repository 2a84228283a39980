#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace wss::cli {

struct Options {
  RunConfig config;
  std::filesystem::path run_dir;
  bool force = false;
  bool allow_stale = false;
  int threads = 1;
  /// Progress lines; null silences them.
  std::ostream* log = nullptr;
};

/// Stage commands in pipeline order.
const std::vector<std::string>& stage_names();

/// Writes synthetic volumes, masks and manifest.tsv into `out`. A non-empty `out` needs `force`.
void cmd_synth(const Options& options, const std::filesystem::path& out);

/// Runs one stage. Returns false when the stage was already up to date and was skipped.
bool run_stage(const Options& options, const std::string& stage);

}  // namespace wss::cli
