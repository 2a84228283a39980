#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "wss/binary_io.hpp"
#include "wss/error.hpp"

namespace wss::cli {

namespace {

struct KeySpec {
  const char* key;
  const char* value;
  const char* help;
};

// Defaults are the reference training setup; desk-scale runs override them in configs/desk.conf.
const KeySpec kKeys[] = {
    {"seed", "0", "global seed; every stage derives its own stream from it"},
    {"out", "runs/default", "run directory (overridden by --out)"},
    {"data.source", "synth", "synth | volumes | brats"},
    {"data.dir", "", "dataset directory; empty with data.source = synth generates into <out>/data"},
    {"data.manifest", "", "id list with optional cohort column; default <data.dir>/manifest.tsv"},
    {"synth.count", "369", "synthetic volumes"},
    {"synth.extent", "128", "synthetic in-plane extent"},
    {"synth.depth", "155", "synthetic axial extent"},
    {"synth.tumor_probability", "0.5", "fraction of synthetic volumes carrying a lesion"},
    {"split.train", "0.8", "train fraction (ignored when the manifest assigns cohorts)"},
    {"split.val", "0.1", "validation fraction"},
    {"split.test", "0.1", "test fraction"},
    {"slice.trim", "30", "axial slices dropped at each end"},
    {"slice.patch", "128", "in-plane patch size"},
    {"adam.beta1", "0.9", "Adam first-moment decay"},
    {"adam.beta2", "0.999", "Adam second-moment decay"},
    {"adam.eps", "1e-8", "Adam epsilon"},
    {"gate.widths", "16,32,64,64", "classifier block widths"},
    {"gate.convs_per_block", "1", "conv-BN-ReLU layers per classifier block"},
    {"gate.upsample", "2", "classifier input upsampling factor"},
    {"gate.epochs", "100", "classifier epochs"},
    {"gate.batch", "32", "classifier batch size"},
    {"gate.lr", "5e-4", "classifier learning rate"},
    {"gate.weight_decay", "0.1", "classifier weight decay"},
    {"gate.plateau_threshold", "1e-4", "minimum validation-loss improvement"},
    {"gate.plateau_patience", "1", "non-improving epochs before the rate drops 10x"},
    {"rise.masks", "4000", "RISE masks"},
    {"rise.grid", "7", "RISE grid cells per side"},
    {"rise.p", "0.5", "RISE keep probability"},
    {"rise.batch", "128", "masked images per classifier call"},
    {"seeds.fraction", "0.2", "fraction of pixels in each seed set"},
    {"spix.superpixels", "64", "superpixel count N_S"},
    {"spix.m", "0.01875", "compactness weight m"},
    {"spix.alpha", "50", "seed-loss weight"},
    {"spix.loss_form", "reconstruction", "reconstruction | printed"},
    {"spix.epochs", "100", "superpixel training epochs"},
    {"spix.batch", "32", "superpixel batch size"},
    {"spix.lr", "5e-4", "superpixel learning rate"},
    {"spix.weight_decay", "0.1", "superpixel weight decay"},
    {"spix.halve_every", "25", "epochs between learning-rate halvings"},
    {"spix.gen_widths", "16,32,64", "generator widths per level"},
    {"spix.clu_widths", "16,32,64", "clusterer widths per residual stage"},
    {"ablation.enabled", "true", "also train the direct-output ablation network"},
    {"ablation.widths", "16,32,64", "ablation trunk widths"},
    {"infer.chunk", "32", "slices per inference batch"},
    {"infer.seed_baseline", "true", "also extract RISE seeds on gated test slices to score them as segmentations"},
    {"eval.step", "0.1", "threshold search step"},
    {"eval.threshold", "auto", "auto (validation search) or a fixed value in [0,1]"},
    {"bench.images", "60", "slices timed per pipeline (cycled when the test cohort is smaller)"},
    {"bench.warmup", "10", "untimed warmup runs"},
    {"felz.scale", "100", "Felzenszwalb scale for 8-bit intensities"},
    {"felz.sigma", "0.8", "Felzenszwalb smoothing"},
    {"felz.min_size", "20", "Felzenszwalb minimum segment size"},
    {"report.examples", "8", "test slices rendered as panels"},
};

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.key] = k.value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(origin + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file " + path.string() + " does not exist");
  return parse(read_text(path), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

long long RunConfig::integer(const std::string& key) const {
  const std::string& v = get(key);
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ValidationError(key + " = '" + v + "' is not an integer");
  return out;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  throw ValidationError(key + " = '" + v + "' is not a number");
}

bool RunConfig::flag(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError(key + " = '" + get(key) + "' is not a boolean");
}

std::vector<long long> RunConfig::integers(const std::string& key) const {
  std::vector<long long> out;
  std::stringstream ss(get(key));
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    long long v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
      throw ValidationError(key + " = '" + get(key) + "' is not a comma-separated integer list");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(key + " is empty");
  return out;
}

std::string RunConfig::canonical(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, v] : values_) {
    const bool wanted = prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
                          return k == p || k.rfind(p + ".", 0) == 0;
                        });
    if (wanted) out += k + " = " + v + "\n";
  }
  return out;
}

std::string RunConfig::documented_defaults() {
  std::string out;
  for (const auto& k : kKeys) out += std::string("# ") + k.help + "\n" + k.key + " = " + k.value + "\n";
  return out;
}

}  // namespace wss::cli
