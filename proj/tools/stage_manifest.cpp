#include "stage_manifest.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "wss/binary_io.hpp"
#include "wss/error.hpp"

#ifndef WSS_GIT_DESCRIBE
#define WSS_GIT_DESCRIBE "unknown"
#endif

namespace wss::cli {

namespace {

std::string hex(const unsigned char* digest, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = digits[digest[i] >> 4];
    out[2 * i + 1] = digits[digest[i] & 0xF];
  }
  return out;
}

struct Digest {
  EVP_MD_CTX* ctx;
  Digest() : ctx(EVP_MD_CTX_new()) {
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx); }
  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx, data, size) != 1) throw Error("sha256: update failed");
  }
  std::string finish() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx, md, &len) != 1) throw Error("sha256: final failed");
    return hex(md, len);
  }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Digest d;
  d.update(data, size);
  return d.finish();
}

std::string sha256_text(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  Digest d;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.finish();
}

const char* git_describe() { return WSS_GIT_DESCRIBE; }

std::string StageManifest::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["git_describe"] = git_describe;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

StageManifest StageManifest::from_json(const std::string& text, const std::string& origin) {
  try {
    const auto j = nlohmann::json::parse(text);
    StageManifest m;
    m.stage = j.at("stage").get<std::string>();
    m.git_describe = j.at("git_describe").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": malformed stage manifest (" + e.what() + ")");
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& run_dir, const std::string& stage) {
  return run_dir / stage / "manifest.json";
}

std::optional<StageManifest> read_stage_manifest(const std::filesystem::path& run_dir, const std::string& stage) {
  const auto p = manifest_path(run_dir, stage);
  if (!std::filesystem::exists(p)) return std::nullopt;
  return StageManifest::from_json(read_text(p), p.string());
}

void write_stage_manifest(const std::filesystem::path& run_dir, const StageManifest& manifest) {
  write_text(manifest_path(run_dir, manifest.stage), manifest.to_json());
}

}  // namespace wss::cli
