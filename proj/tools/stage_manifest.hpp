#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wss::cli {

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_text(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

/// Build-time `git describe` of the toolkit.
const char* git_describe();

/// `<run>/<stage>/manifest.json`: what a stage consumed and produced. Paths are relative to
/// the run directory, or absolute for external inputs.
struct StageManifest {
  std::string stage;
  std::string git_describe;
  std::string config_hash;
  std::string config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;

  std::string to_json() const;
  static StageManifest from_json(const std::string& text, const std::string& origin);
};

std::filesystem::path manifest_path(const std::filesystem::path& run_dir, const std::string& stage);
std::optional<StageManifest> read_stage_manifest(const std::filesystem::path& run_dir, const std::string& stage);
void write_stage_manifest(const std::filesystem::path& run_dir, const StageManifest& manifest);

}  // namespace wss::cli
