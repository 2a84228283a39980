#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <json.hpp>

#include "stage_manifest.hpp"
#include "wss/bench/felzenszwalb.hpp"
#include "wss/bench/timing.hpp"
#include "wss/binary_io.hpp"
#include "wss/classifier/train.hpp"
#include "wss/dataio/cohort.hpp"
#include "wss/dataio/io.hpp"
#include "wss/dataio/nifti.hpp"
#include "wss/dataio/preprocess.hpp"
#include "wss/dataio/synth.hpp"
#include "wss/error.hpp"
#include "wss/evalseg/evaluate.hpp"
#include "wss/png.hpp"
#include "wss/saliency/rise.hpp"
#include "wss/saliency/seeds.hpp"
#include "wss/superpix/train.hpp"

namespace wss::cli {

namespace fs = std::filesystem;

namespace {

// Stream tags under the global seed.
enum : std::uint64_t {
  kTagSplit = 1,
  kTagSlices = 2,
  kTagGateModel = 3,
  kTagGateTrain = 4,
  kTagRise = 5,
  kTagSpixModel = 6,
  kTagSpixTrain = 7,
  kTagAblationModel = 8,
  kTagAblationTrain = 9,
};

struct StageDef {
  std::string name;
  std::string dir;
  std::vector<std::string> prefixes;
};

const std::vector<StageDef>& stage_defs() {
  static const std::vector<StageDef> defs{
      {"prep", "prep", {"seed", "data", "synth", "split", "slice"}},
      {"train-gate", "gate", {"seed", "gate", "adam"}},
      {"seeds", "seeds", {"seed", "rise", "seeds"}},
      {"train-spix", "spix", {"seed", "spix", "ablation", "adam"}},
      {"infer", "infer", {"seed", "infer", "rise", "seeds"}},
      {"eval", "eval", {"eval"}},
      {"bench", "bench", {"seed", "bench", "felz"}},
      {"report", "report", {"report"}},
  };
  return defs;
}

const StageDef& stage_def(const std::string& name) {
  for (const auto& d : stage_defs()) {
    if (d.name == name) return d;
  }
  throw ValidationError("unknown stage '" + name + "'");
}

/// Stage that writes a run-relative path, or null for external inputs.
const StageDef* owner_of(const std::string& rel) {
  if (fs::path(rel).is_absolute()) return nullptr;
  std::string head = rel.substr(0, rel.find('/'));
  if (head == "ablation") head = "spix";
  for (const auto& d : stage_defs()) {
    if (d.dir == head) return &d;
  }
  return nullptr;
}

std::string config_hash(const Options& o, const StageDef& d) { return sha256_text(o.config.canonical(d.prefixes)); }

class Logger {
 public:
  Logger(const Options& o, std::string stage) : out_(o.log), stage_(std::move(stage)) {}
  template <typename... A>
  void operator()(const char* fmt, A... args) const {
    if (out_ == nullptr) return;
    std::string line = fmt;
    if constexpr (sizeof...(A) > 0) {
      char buf[512];
      std::snprintf(buf, sizeof buf, fmt, args...);
      line = buf;
    }
    *out_ << "[" << stage_ << "] " << line << "\n";
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::string stage_;
};

std::uint64_t global_seed(const Options& o) { return static_cast<std::uint64_t>(o.config.integer("seed")); }

std::vector<Index> index_list(const RunConfig& c, const std::string& key) {
  std::vector<Index> out;
  for (long long v : c.integers(key)) {
    if (v <= 0) throw ValidationError(key + " entries must be positive");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

long long positive(const RunConfig& c, const std::string& key) {
  const long long v = c.integer(key);
  if (v <= 0) throw ValidationError(key + " must be positive");
  return v;
}

AdamConfig adam_config(const RunConfig& c, const std::string& group) {
  AdamConfig a;
  a.learning_rate = c.real(group + ".lr");
  a.weight_decay = c.real(group + ".weight_decay");
  a.beta1 = c.real("adam.beta1");
  a.beta2 = c.real("adam.beta2");
  a.epsilon = c.real("adam.eps");
  if (!(a.learning_rate > 0) || a.weight_decay < 0 || !(a.beta1 >= 0 && a.beta1 < 1) || !(a.beta2 >= 0 && a.beta2 < 1) ||
      !(a.epsilon > 0)) {
    throw ValidationError("invalid optimizer settings for " + group);
  }
  return a;
}

ClassifierConfig gate_arch(const RunConfig& c) {
  ClassifierConfig g;
  g.widths = index_list(c, "gate.widths");
  g.convs_per_block = static_cast<int>(positive(c, "gate.convs_per_block"));
  g.upsample = static_cast<int>(positive(c, "gate.upsample"));
  return g;
}

SpixelArch spix_arch(const RunConfig& c) {
  SpixelArch a;
  a.superpixels = static_cast<Index>(positive(c, "spix.superpixels"));
  a.generator_widths = index_list(c, "spix.gen_widths");
  a.clusterer_widths = index_list(c, "spix.clu_widths");
  return a;
}

SpixelLossConfig loss_config(const RunConfig& c) {
  SpixelLossConfig l;
  l.m = c.real("spix.m");
  l.alpha = c.real("spix.alpha");
  const std::string form = c.str("spix.loss_form");
  if (form == "reconstruction") l.form = SpixelLossForm::Reconstruction;
  else if (form == "printed") l.form = SpixelLossForm::Printed;
  else throw ValidationError("spix.loss_form must be reconstruction or printed");
  l.validate();
  return l;
}

MaskBankConfig rise_config(const Options& o) {
  MaskBankConfig r;
  r.count = static_cast<std::size_t>(positive(o.config, "rise.masks"));
  r.grid = static_cast<int>(positive(o.config, "rise.grid"));
  r.keep_probability = o.config.real("rise.p");
  r.seed = derive_seed(global_seed(o), kTagRise);
  return r;
}

SynthConfig synth_config(const Options& o) {
  SynthConfig s;
  s.count = static_cast<std::size_t>(positive(o.config, "synth.count"));
  s.extent = static_cast<Index>(positive(o.config, "synth.extent"));
  s.depth = static_cast<Index>(o.config.integer("synth.depth"));
  s.tumor_probability = o.config.real("synth.tumor_probability");
  s.seed = global_seed(o);
  return s;
}

// ---------------------------------------------------------------- small artifact formats

std::string slices_path(Cohort c) { return std::string("prep/") + cohort_name(c) + ".slc"; }

struct GateProbs {
  std::map<std::string, double> prob;

  double at(const std::string& id) const {
    auto it = prob.find(id);
    if (it == prob.end()) throw ValidationError("gate/probs.tsv has no entry for " + id + "; re-run train-gate");
    return it->second;
  }
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

GateProbs read_gate_probs(const fs::path& path) {
  GateProbs g;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, cohort, p;
    std::getline(ls, id, '\t');
    std::getline(ls, cohort, '\t');
    std::getline(ls, p, '\t');
    g.prob[id] = std::stod(p);
  }
  return g;
}

struct InferIndex {
  std::vector<std::string> ids;
  std::vector<double> gate;
  std::vector<long long> effective;
};

InferIndex read_infer_index(const fs::path& path) {
  InferIndex idx;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, g, e;
    std::getline(ls, id, '\t');
    std::getline(ls, g, '\t');
    std::getline(ls, e, '\t');
    idx.ids.push_back(id);
    idx.gate.push_back(std::stod(g));
    idx.effective.push_back(std::stoll(e));
  }
  return idx;
}

void write_heat_stack(const fs::path& path, const std::vector<Eigen::ArrayXd>& heat) {
  ByteWriter w;
  for (const auto& h : heat) {
    for (Index i = 0; i < h.size(); ++i) w.f32(static_cast<float>(h[i]));
  }
  write_file(path, w.bytes);
}

std::vector<Eigen::ArrayXd> read_heat_stack(const fs::path& path, std::size_t count, Index pixels) {
  const auto bytes = read_file(path);
  if (bytes.size() != count * static_cast<std::size_t>(pixels) * 4) {
    throw ValidationError(path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(count * static_cast<std::size_t>(pixels) * 4));
  }
  ByteReader r(bytes, path.string());
  std::vector<Eigen::ArrayXd> out(count, Eigen::ArrayXd(pixels));
  for (auto& h : out) {
    for (Index i = 0; i < pixels; ++i) h[i] = r.f32();
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

/// Outputs listed by an upstream manifest under `prefix`, in manifest (sorted) order.
std::vector<std::string> upstream_outputs(const Options& o, const std::string& stage_dir, const std::string& prefix) {
  std::vector<std::string> out;
  if (auto m = read_stage_manifest(o.run_dir, stage_dir)) {
    for (const auto& [rel, _] : m->outputs) {
      if (rel.rfind(prefix, 0) == 0) out.push_back(rel);
    }
  }
  return out;
}

// ---------------------------------------------------------------- data sources

struct DataSource {
  fs::path dir;
  fs::path manifest;
  std::string kind;
};

DataSource data_source(const Options& o) {
  DataSource d;
  d.kind = o.config.str("data.source");
  if (d.kind != "synth" && d.kind != "volumes" && d.kind != "brats") {
    throw ValidationError("data.source must be synth, volumes or brats");
  }
  const std::string dir = o.config.str("data.dir");
  if (dir.empty()) {
    if (d.kind != "synth") throw ValidationError("data.dir is required for data.source = " + d.kind);
    return d;
  }
  d.dir = fs::absolute(dir);
  const std::string man = o.config.str("data.manifest");
  d.manifest = man.empty() ? d.dir / "manifest.tsv" : fs::absolute(man);
  return d;
}

std::vector<std::string> prep_inputs(const Options& o) {
  const DataSource d = data_source(o);
  if (d.dir.empty()) return {};
  std::vector<std::string> out{d.manifest.string()};
  if (!fs::exists(d.manifest)) return out;
  for (const auto& e : read_manifest(d.manifest)) {
    if (d.kind == "brats") {
      for (const char* suffix : {"_t1", "_t1ce", "_t2", "_flair"}) {
        fs::path p = d.dir / (e.id + suffix + ".nii.gz");
        if (!fs::exists(p)) p = d.dir / (e.id + suffix + ".nii");
        out.push_back(p.string());
      }
      for (const char* ext : {"_seg.nii.gz", "_seg.nii"}) {
        if (fs::exists(d.dir / (e.id + ext))) out.push_back((d.dir / (e.id + ext)).string());
      }
    } else {
      out.push_back((d.dir / (e.id + ".vol")).string());
      if (fs::exists(d.dir / (e.id + ".msk"))) out.push_back((d.dir / (e.id + ".msk")).string());
    }
  }
  return out;
}

void generate_synth(const Options& o, const fs::path& out, const Logger& log) {
  const SynthConfig cfg = synth_config(o);
  log("generating %zu synthetic volumes (%lldx%lld in-plane) into %s", cfg.count, static_cast<long long>(cfg.extent),
      static_cast<long long>(cfg.extent), out.string().c_str());
  std::vector<ManifestEntry> entries;
  for (const Volume& v : synth_generate(cfg)) {
    write_volume(out, v);
    entries.push_back({v.id, std::nullopt});
  }
  write_manifest(out / "manifest.tsv", entries);
}

// ---------------------------------------------------------------- stages

using Outputs = std::vector<std::string>;

Outputs stage_prep(const Options& o, const Logger& log) {
  DataSource d = data_source(o);
  if (d.dir.empty()) {
    d.dir = o.run_dir / "data";
    d.manifest = d.dir / "manifest.tsv";
    fs::remove_all(d.dir);
    generate_synth(o, d.dir, log);
  }
  const auto entries = read_manifest(d.manifest);
  std::vector<std::string> ids;
  bool all_assigned = !entries.empty();
  for (const auto& e : entries) {
    ids.push_back(e.id);
    all_assigned = all_assigned && e.cohort.has_value();
  }
  const CohortSplit split = all_assigned
                                ? split_from_manifest(entries)
                                : split_cohorts(ids, {o.config.real("split.train"), o.config.real("split.val"),
                                                      o.config.real("split.test")},
                                                derive_seed(global_seed(o), kTagSplit));
  SliceOptions opt;
  opt.trim = static_cast<int>(o.config.integer("slice.trim"));
  opt.patch = static_cast<Index>(positive(o.config, "slice.patch"));
  if (opt.trim < 0) throw ValidationError("slice.trim must be non-negative");

  std::map<Cohort, std::vector<SliceSample>> slices;
  std::vector<std::string> warnings;
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const std::string& id = sorted[i];
    const Volume raw = d.kind == "brats" ? import_brats_case(d.dir, id) : read_volume(d.dir, id);
    const Cohort c = *split.cohort_of(id);
    opt.mode = c == Cohort::Train ? CropMode::Random : CropMode::Center;
    Rng rng(derive_seed(derive_seed(global_seed(o), kTagSlices), i));
    auto s = volume_to_slices(preprocess_volume(raw, &warnings), opt, rng);
    auto& dst = slices[c];
    dst.insert(dst.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    if ((i + 1) % 50 == 0 || i + 1 == sorted.size()) log("preprocessed %zu/%zu volumes", i + 1, sorted.size());
  }
  Outputs out;
  for (Cohort c : {Cohort::Train, Cohort::Validation, Cohort::Test}) {
    const auto& s = slices[c];
    std::size_t pos = 0;
    for (const auto& x : s) pos += static_cast<std::size_t>(x.label);
    log("%s: %zu volumes, %zu slices, %zu with tumor", cohort_name(c), split.ids(c).size(), s.size(), pos);
    write_slices(o.run_dir / slices_path(c), s);
    out.push_back(slices_path(c));
  }
  std::vector<ManifestEntry> assigned;
  for (const auto& id : sorted) assigned.push_back({id, split.cohort_of(id)});
  write_manifest(o.run_dir / "prep/split.tsv", assigned);
  std::string w;
  for (const auto& x : warnings) w += x + "\n";
  write_text(o.run_dir / "prep/warnings.txt", w);
  out.push_back("prep/split.tsv");
  out.push_back("prep/warnings.txt");
  return out;
}

Outputs stage_train_gate(const Options& o, const Logger& log) {
  const auto train = read_slices(o.run_dir / slices_path(Cohort::Train));
  const auto val = read_slices(o.run_dir / slices_path(Cohort::Validation));
  if (train.empty() || val.empty()) throw ValidationError("train-gate needs non-empty train and validation cohorts");
  GateClassifier<float> model(gate_arch(o.config), derive_seed(global_seed(o), kTagGateModel));
  ClassifierTrainConfig cfg;
  cfg.epochs = static_cast<int>(positive(o.config, "gate.epochs"));
  cfg.batch_size = static_cast<std::size_t>(positive(o.config, "gate.batch"));
  cfg.adam = adam_config(o.config, "gate");
  cfg.plateau_threshold = o.config.real("gate.plateau_threshold");
  cfg.plateau_patience = static_cast<int>(positive(o.config, "gate.plateau_patience"));
  cfg.seed = derive_seed(global_seed(o), kTagGateTrain);
  log("training on %zu slices, validating on %zu", train.size(), val.size());
  const auto result = train_classifier(model, train, val, cfg, [&](const EpochLog& e) {
    log("epoch %d/%d train %.5f val %.5f acc %.4f lr %.2e", e.epoch, cfg.epochs, e.train_loss, e.val_loss, e.val_acc, e.lr);
  });
  log("best epoch %d (val loss %.5f)", result.best_epoch, result.best_val_loss);
  write_checkpoint(o.run_dir / "gate/model.ckpt", model.to_checkpoint());
  write_text(o.run_dir / "gate/log.csv", training_log_csv(result.log));

  std::string probs = "id\tcohort\tprob\n";
  for (Cohort c : {Cohort::Train, Cohort::Validation, Cohort::Test}) {
    const auto slices = c == Cohort::Train ? train : c == Cohort::Validation ? val : read_slices(o.run_dir / slices_path(c));
    const auto p = classify(model, slices);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
      probs += slices[i].id() + "\t" + cohort_name(c) + "\t" + fmt17(p[i]) + "\n";
      correct += (p[i] >= 0.5) == (slices[i].label == 1);
    }
    log("%s gate accuracy %.4f over %zu slices", cohort_name(c),
        slices.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(slices.size()), slices.size());
  }
  write_text(o.run_dir / "gate/probs.tsv", probs);
  return {"gate/model.ckpt", "gate/log.csv", "gate/probs.tsv"};
}

/// RISE seed maps for the slices whose gate probability passes 0.5.
template <typename Fn>
void rise_seeds(const Options& o, const std::vector<SliceSample>& slices, const GateProbs& probs, const Logger& log,
                Fn emit) {
  if (slices.empty()) return;
  auto model = GateClassifier<float>::from_checkpoint(read_checkpoint(o.run_dir / "gate/model.ckpt"));
  const MaskBank bank = build_mask_bank(rise_config(o), slices.front().size, slices.front().size);
  const auto batch = static_cast<std::size_t>(positive(o.config, "rise.batch"));
  const double fraction = o.config.real("seeds.fraction");
  std::size_t gated = 0;
  for (const auto& s : slices) gated += probs.at(s.id()) >= 0.5;
  std::size_t done = 0;
  for (const auto& s : slices) {
    if (probs.at(s.id()) < 0.5) continue;
    const Eigen::ArrayXd heat = rise_heatmap(model, s, bank, batch);
    std::optional<SeedMap> seeds;
    try {
      seeds = extract_seeds(heat, s.size, s.size, fraction);
    } catch (const ValidationError& e) {
      log("skipping %s: %s", s.id().c_str(), e.what());
    }
    emit(s, heat, seeds);
    if (++done % 100 == 0 || done == gated) log("RISE %zu/%zu gated slices", done, gated);
  }
}

Outputs stage_seeds(const Options& o, const Logger& log) {
  const auto train = read_slices(o.run_dir / slices_path(Cohort::Train));
  const GateProbs probs = read_gate_probs(o.run_dir / "gate/probs.tsv");
  Outputs out;
  std::string index = "id\n", skipped = "id\n";
  rise_seeds(o, train, probs, log, [&](const SliceSample& s, const Eigen::ArrayXd& heat, const std::optional<SeedMap>& seeds) {
    const std::string rise = "seeds/rise/" + s.id() + ".f32";
    write_heatmap_f32(o.run_dir / rise, heat);
    out.push_back(rise);
    if (!seeds) {
      skipped += s.id() + "\n";
      return;
    }
    const std::string map = "seeds/maps/" + s.id() + ".seed";
    write_seed_map(o.run_dir / map, *seeds);
    out.push_back(map);
    index += s.id() + "\n";
  });
  if (index == "id\n") throw ValidationError("seeds: the gate accepted no training slice; nothing to seed");
  write_text(o.run_dir / "seeds/index.tsv", index);
  write_text(o.run_dir / "seeds/skipped.tsv", skipped);
  out.push_back("seeds/index.tsv");
  out.push_back("seeds/skipped.tsv");
  return out;
}

std::vector<std::string> train_spix_inputs(const Options& o) {
  std::vector<std::string> in{slices_path(Cohort::Train), "seeds/index.tsv"};
  for (const auto& rel : upstream_outputs(o, "seeds", "seeds/maps/")) in.push_back(rel);
  return in;
}

void write_loss_trace(const fs::path& path, const std::vector<double>& steps) {
  std::string s = "step,loss\n";
  for (std::size_t i = 0; i < steps.size(); ++i) s += std::to_string(i + 1) + "," + fmt17(steps[i]) + "\n";
  write_text(path, s);
}

Outputs stage_train_spix(const Options& o, const Logger& log) {
  const auto train = read_slices(o.run_dir / slices_path(Cohort::Train));
  std::map<std::string, const SliceSample*> by_id;
  for (const auto& s : train) by_id[s.id()] = &s;
  std::vector<SliceSample> images;
  std::vector<SeedMap> seeds;
  for (const auto& line : read_lines(o.run_dir / "seeds/index.tsv")) {
    if (line == "id") continue;
    auto it = by_id.find(line);
    if (it == by_id.end()) throw ValidationError("seeds/index.tsv names " + line + ", which is not a training slice");
    images.push_back(*it->second);
    seeds.push_back(read_seed_map(o.run_dir / ("seeds/maps/" + line + ".seed")));
  }
  SpixelTrainConfig cfg;
  cfg.epochs = static_cast<int>(positive(o.config, "spix.epochs"));
  cfg.batch_size = static_cast<std::size_t>(positive(o.config, "spix.batch"));
  cfg.adam = adam_config(o.config, "spix");
  cfg.halve_every = static_cast<int>(positive(o.config, "spix.halve_every"));
  cfg.loss = loss_config(o.config);
  cfg.seed = derive_seed(global_seed(o), kTagSpixTrain);

  Outputs out;
  SpixelModel<float> model(spix_arch(o.config), derive_seed(global_seed(o), kTagSpixModel));
  log("training generator + clusterer on %zu seeded slices, N_S = %lld", images.size(),
      static_cast<long long>(model.arch().superpixels));
  const auto result = train_superpixel(
      model, images, seeds, cfg,
      [&](const SpixelEpochLog& e) {
        log("epoch %d/%d loss %.4f spixel %.4f seed %.4f lr %.2e", e.epoch, cfg.epochs, e.loss, e.spixel, e.seed, e.lr);
      },
      [&](int epoch, const Checkpoint& c) {
        char name[64];
        std::snprintf(name, sizeof name, "spix/epoch_%03d.ckpt", epoch);
        write_checkpoint(o.run_dir / name, c);
        out.push_back(name);
      });
  write_checkpoint(o.run_dir / "spix/model.ckpt", model.to_checkpoint());
  write_text(o.run_dir / "spix/log.csv", spixel_log_csv(result.log));
  write_loss_trace(o.run_dir / "spix/steps.csv", result.step_losses);
  out.insert(out.end(), {"spix/model.ckpt", "spix/log.csv", "spix/steps.csv"});

  if (o.config.flag("ablation.enabled")) {
    AblationModel<float> abl(4, index_list(o.config, "ablation.widths"), derive_seed(global_seed(o), kTagAblationModel));
    SpixelTrainConfig acfg = cfg;
    acfg.seed = derive_seed(global_seed(o), kTagAblationTrain);
    log("training ablation network");
    const auto ar = train_ablation(abl, images, seeds, acfg, [&](const SpixelEpochLog& e) {
      log("ablation epoch %d/%d loss %.4f lr %.2e", e.epoch, acfg.epochs, e.loss, e.lr);
    });
    write_checkpoint(o.run_dir / "ablation/model.ckpt", abl.to_checkpoint());
    write_text(o.run_dir / "ablation/log.csv", spixel_log_csv(ar.log));
    write_loss_trace(o.run_dir / "ablation/steps.csv", ar.step_losses);
    out.insert(out.end(), {"ablation/model.ckpt", "ablation/log.csv", "ablation/steps.csv"});
  }
  return out;
}

std::vector<std::string> infer_inputs(const Options& o) {
  std::vector<std::string> in{slices_path(Cohort::Validation), slices_path(Cohort::Test), "gate/probs.tsv",
                              "gate/model.ckpt", "spix/model.ckpt"};
  if (auto m = read_stage_manifest(o.run_dir, "spix"); m && m->outputs.count("ablation/model.ckpt")) {
    in.push_back("ablation/model.ckpt");
  }
  return in;
}

Outputs stage_infer(const Options& o, const Logger& log) {
  const GateProbs probs = read_gate_probs(o.run_dir / "gate/probs.tsv");
  auto model = SpixelModel<float>::from_checkpoint(read_checkpoint(o.run_dir / "spix/model.ckpt"));
  std::optional<AblationModel<float>> abl;
  if (fs::exists(o.run_dir / "ablation/model.ckpt") && upstream_outputs(o, "spix", "ablation/model.ckpt").size() == 1) {
    abl = AblationModel<float>::from_checkpoint(read_checkpoint(o.run_dir / "ablation/model.ckpt"));
  }
  const auto chunk = static_cast<std::size_t>(positive(o.config, "infer.chunk"));
  Outputs out;
  for (Cohort c : {Cohort::Validation, Cohort::Test}) {
    const auto slices = read_slices(o.run_dir / slices_path(c));
    const std::string name = cohort_name(c);
    const HeatmapSet set = spixel_heatmaps(model, slices, chunk);
    std::string index = "id\tgate_prob\teffective_superpixels\n";
    for (std::size_t i = 0; i < slices.size(); ++i) {
      index += slices[i].id() + "\t" + fmt17(probs.at(slices[i].id())) + "\t" + std::to_string(set.effective[i]) + "\n";
    }
    write_text(o.run_dir / ("infer/" + name + "_index.tsv"), index);
    write_heat_stack(o.run_dir / ("infer/" + name + "_heat.f32"), set.heat);
    out.push_back("infer/" + name + "_index.tsv");
    out.push_back("infer/" + name + "_heat.f32");
    if (abl) {
      write_heat_stack(o.run_dir / ("infer/" + name + "_ablation.f32"), ablation_heatmaps(*abl, slices, chunk).heat);
      out.push_back("infer/" + name + "_ablation.f32");
    }
    log("%s: %zu heat maps", name.c_str(), slices.size());
    if (c == Cohort::Test && o.config.flag("infer.seed_baseline")) {
      rise_seeds(o, slices, probs, log, [&](const SliceSample& s, const Eigen::ArrayXd&, const std::optional<SeedMap>& seeds) {
        if (!seeds) return;
        const std::string rel = "infer/test_seeds/" + s.id() + ".seed";
        write_seed_map(o.run_dir / rel, *seeds);
        out.push_back(rel);
      });
    }
  }
  return out;
}

std::vector<std::string> eval_inputs(const Options& o) {
  std::vector<std::string> in{slices_path(Cohort::Validation), slices_path(Cohort::Test), "infer/val_index.tsv",
                              "infer/val_heat.f32", "infer/test_index.tsv", "infer/test_heat.f32"};
  if (auto m = read_stage_manifest(o.run_dir, "infer")) {
    for (const auto& [rel, _] : m->outputs) {
      if (rel.find("_ablation.f32") != std::string::npos || rel.rfind("infer/test_seeds/", 0) == 0) in.push_back(rel);
    }
  }
  return in;
}

struct CohortHeat {
  std::vector<SliceSample> slices;
  InferIndex index;
  std::vector<Eigen::ArrayXd> heat;
};

CohortHeat load_cohort_heat(const Options& o, Cohort c, const std::string& suffix = "_heat.f32") {
  CohortHeat h;
  const std::string name = cohort_name(c);
  h.slices = read_slices(o.run_dir / slices_path(c));
  h.index = read_infer_index(o.run_dir / ("infer/" + name + "_index.tsv"));
  if (h.index.ids.size() != h.slices.size()) throw ValidationError("infer/" + name + "_index.tsv does not match " + slices_path(c));
  for (std::size_t i = 0; i < h.slices.size(); ++i) {
    if (h.index.ids[i] != h.slices[i].id()) throw ValidationError("infer/" + name + "_index.tsv is out of order");
  }
  const Index P = h.slices.empty() ? 0 : h.slices.front().pixels();
  h.heat = read_heat_stack(o.run_dir / ("infer/" + name + suffix), h.slices.size(), P);
  return h;
}

struct MethodResult {
  double threshold = 0;
  ThresholdSearch search;
  std::vector<EvalRecord> records;
};

MethodResult evaluate_method(const Options& o, const CohortHeat& val, const CohortHeat& test) {
  MethodResult r;
  const std::string t = o.config.str("eval.threshold");
  std::vector<BinaryMask> truths;
  for (const auto& s : val.slices) truths.push_back(truth_mask(s));
  r.search = threshold_search(val.heat, truths, o.config.real("eval.step"), val.index.gate);
  r.threshold = t == "auto" ? r.search.best : o.config.real("eval.threshold");
  for (const CohortHeat* h : {&val, &test}) {
    const auto rec = evaluate_cohort(CohortInputs{&h->slices, h->index.gate, h->heat},
                                     h == &val ? Cohort::Validation : Cohort::Test, r.threshold);
    r.records.insert(r.records.end(), rec.begin(), rec.end());
  }
  return r;
}

nlohmann::json headline(const std::vector<EvalRecord>& records) {
  std::vector<double> d, h, hm;
  for (const auto& r : records) {
    if (r.cohort != Cohort::Test) continue;
    d.push_back(r.dice);
    h.push_back(r.hd95);
    if (!r.hd95_sentinel) hm.push_back(r.hd95);
  }
  auto mean = [](const std::vector<double>& v) -> nlohmann::json {
    if (v.empty()) return nullptr;
    return describe(v).mean;
  };
  return {{"test_dice_mean", mean(d)},
          {"test_hd95_mean", mean(h)},
          {"test_hd95_mean_excluding_sentinel", mean(hm)},
          {"test_images", d.size()},
          {"test_hd95_sentinel_count", h.size() - hm.size()}};
}

double num(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

std::string cell(const nlohmann::json& j, const char* fmt) {
  if (j.is_null()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, j.get<double>());
  return buf;
}

Outputs stage_eval(const Options& o, const Logger& log) {
  const CohortHeat val = load_cohort_heat(o, Cohort::Validation), test = load_cohort_heat(o, Cohort::Test);
  Outputs out;
  nlohmann::json comparison;

  const MethodResult proposed = evaluate_method(o, val, test);
  SummaryExtras extras;
  extras.method = "superpixel";
  extras.threshold = proposed.threshold;
  for (const auto& r : proposed.records) {
    const auto& idx = r.cohort == Cohort::Validation ? val.index : test.index;
    const auto pos = std::find(idx.ids.begin(), idx.ids.end(), r.image_id) - idx.ids.begin();
    extras.effective_superpixels.push_back(idx.effective[static_cast<std::size_t>(pos)]);
  }
  write_text(o.run_dir / "eval/metrics.csv", metrics_csv(proposed.records));
  write_text(o.run_dir / "eval/summary.json", summary_json(proposed.records, extras));
  nlohmann::json curve;
  curve["candidates"] = proposed.search.candidates;
  curve["validation_mean_dice"] = proposed.search.mean_dice;
  curve["best"] = proposed.search.best;
  curve["used"] = proposed.threshold;
  write_text(o.run_dir / "eval/threshold.json", curve.dump(2) + "\n");
  out.insert(out.end(), {"eval/metrics.csv", "eval/summary.json", "eval/threshold.json"});
  comparison["superpixel"] = headline(proposed.records);
  comparison["superpixel"]["threshold"] = proposed.threshold;
  log("superpixel: threshold %.2f, test Dice %.4f, HD95 %.3f", proposed.threshold,
      num(comparison["superpixel"]["test_dice_mean"]), num(comparison["superpixel"]["test_hd95_mean"]));

  if (fs::exists(o.run_dir / "infer/val_ablation.f32") && !upstream_outputs(o, "infer", "infer/val_ablation.f32").empty()) {
    const MethodResult abl = evaluate_method(o, load_cohort_heat(o, Cohort::Validation, "_ablation.f32"),
                                             load_cohort_heat(o, Cohort::Test, "_ablation.f32"));
    SummaryExtras ex;
    ex.method = "ablation";
    ex.threshold = abl.threshold;
    write_text(o.run_dir / "eval/metrics_ablation.csv", metrics_csv(abl.records));
    write_text(o.run_dir / "eval/summary_ablation.json", summary_json(abl.records, ex));
    out.insert(out.end(), {"eval/metrics_ablation.csv", "eval/summary_ablation.json"});
    comparison["ablation"] = headline(abl.records);
    comparison["ablation"]["threshold"] = abl.threshold;
    log("ablation: threshold %.2f, test Dice %.4f", abl.threshold, num(comparison["ablation"]["test_dice_mean"]));
  }

  const auto seed_files = upstream_outputs(o, "infer", "infer/test_seeds/");
  if (!seed_files.empty() || o.config.flag("infer.seed_baseline")) {
    std::vector<Eigen::ArrayXd> heat;
    for (const auto& s : test.slices) {
      const fs::path p = o.run_dir / ("infer/test_seeds/" + s.id() + ".seed");
      heat.push_back(fs::exists(p) ? read_seed_map(p).positive.cast<double>().eval() : Eigen::ArrayXd::Zero(s.pixels()).eval());
    }
    const auto rec = evaluate_cohort(CohortInputs{&test.slices, test.index.gate, heat}, Cohort::Test, 0.5);
    SummaryExtras ex;
    ex.method = "positive_seeds";
    write_text(o.run_dir / "eval/metrics_seeds.csv", metrics_csv(rec));
    write_text(o.run_dir / "eval/summary_seeds.json", summary_json(rec, ex));
    out.insert(out.end(), {"eval/metrics_seeds.csv", "eval/summary_seeds.json"});
    comparison["positive_seeds"] = headline(rec);
    log("positive-seed baseline: test Dice %.4f", num(comparison["positive_seeds"]["test_dice_mean"]));
  }
  write_text(o.run_dir / "eval/comparison.json", comparison.dump(2) + "\n");
  out.push_back("eval/comparison.json");
  return out;
}

Outputs stage_bench(const Options& o, const Logger& log) {
  const auto test = read_slices(o.run_dir / slices_path(Cohort::Test));
  if (test.empty()) throw ValidationError("bench needs test slices");
  const auto count = static_cast<std::size_t>(positive(o.config, "bench.images"));
  const auto warmup = static_cast<std::size_t>(o.config.integer("bench.warmup"));
  std::vector<SliceSample> slices;
  for (std::size_t i = 0; i < count; ++i) slices.push_back(test[i % test.size()]);
  auto model = SpixelModel<float>::from_checkpoint(read_checkpoint(o.run_dir / "spix/model.ckpt"));
  log("timing %zu slices per pipeline (%zu warmup)", count, warmup);
  const std::vector<TimingReport> reports{
      time_spixel_pipeline(model, slices, warmup),
      time_felzenszwalb_pipeline(slices, warmup, o.config.real("felz.scale"), o.config.real("felz.sigma"),
                                 static_cast<Index>(o.config.integer("felz.min_size")))};
  for (const auto& r : reports) log("%s: mean %.3f ms, median %.3f ms, p95 %.3f ms", r.method.c_str(), r.mean_ms, r.median_ms, r.p95_ms);
  write_text(o.run_dir / "bench/timing.json", timing_json(reports));
  write_text(o.run_dir / "bench/timing.txt", timing_table(reports));
  write_text(o.run_dir / "bench/samples.csv", timing_samples_csv(reports));
  return {"bench/timing.json", "bench/timing.txt", "bench/samples.csv"};
}

// ---------------------------------------------------------------- report panels

struct Canvas {
  int width, height;
  std::vector<std::uint8_t> rgb;
  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), 255) {}
  void put(int x, int y, const std::array<double, 3>& c) {
    auto* p = &rgb[static_cast<std::size_t>((y * width + x) * 3)];
    for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[static_cast<std::size_t>(k)], 0.0, 1.0) * 255));
  }
};

/// FLAIR | superpixel boundaries | output segmentation | truth, side by side.
void write_panel(const fs::path& path, const SliceSample& s, const std::vector<int>& labels, const BinaryMask& pred,
                 const BinaryMask& truth) {
  const int n = static_cast<int>(s.size), gap = 4;
  Canvas canvas(4 * n + 3 * gap, n);
  const Index P = s.pixels();
  auto flair = [&](Index p) { return static_cast<double>(s.image[kFlairChannel * P + p]); };
  auto blend = [](double g, const std::array<double, 3>& c, double a) {
    return std::array<double, 3>{(1 - a) * g + a * c[0], (1 - a) * g + a * c[1], (1 - a) * g + a * c[2]};
  };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Index p = y * n + x;
      const double g = flair(p);
      canvas.put(x, y, {g, g, g});
      const bool edge = (x + 1 < n && labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(p + 1)]) ||
                        (y + 1 < n && labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(p + n)]);
      canvas.put(n + gap + x, y, edge ? std::array<double, 3>{1.0, 0.85, 0.0} : std::array<double, 3>{g, g, g});
      canvas.put(2 * (n + gap) + x, y, pred.pixels[p] ? blend(g, {0.1, 0.9, 0.2}, 0.6) : std::array<double, 3>{g, g, g});
      canvas.put(3 * (n + gap) + x, y, truth.pixels[p] ? blend(g, {0.9, 0.1, 0.1}, 0.6) : std::array<double, 3>{g, g, g});
    }
  }
  write_png_rgb(path, canvas.width, canvas.height, canvas.rgb);
}

Outputs stage_report(const Options& o, const Logger& log) {
  const CohortHeat test = load_cohort_heat(o, Cohort::Test);
  const auto comparison = nlohmann::json::parse(read_text(o.run_dir / "eval/comparison.json"));
  const double threshold = comparison["superpixel"]["threshold"].get<double>();
  auto model = SpixelModel<float>::from_checkpoint(read_checkpoint(o.run_dir / "spix/model.ckpt"));
  const auto wanted = static_cast<std::size_t>(o.config.integer("report.examples"));

  std::vector<std::size_t> cancerous;
  for (std::size_t i = 0; i < test.slices.size(); ++i) {
    if (test.slices[i].label == 1) cancerous.push_back(i);
  }
  std::vector<std::size_t> picks;
  for (std::size_t k = 0; k < std::min(wanted, cancerous.size()); ++k) {
    picks.push_back(cancerous[k * cancerous.size() / std::min(wanted, cancerous.size())]);
  }
  Outputs out;
  std::string md = "# Run report\n\n";
  md += "Panels: FLAIR | superpixel boundaries (argmax association) | output segmentation | truth.\n";
  md += "RISE seed overlays in seeds/: green positive, magenta negative.\n\n";
  md += "| method | threshold | test Dice | test HD95 | test HD95 (measured only) |\n|---|---|---|---|---|\n";
  for (const auto& [method, v] : comparison.items()) {
    md += "| " + method + " | " + (v.contains("threshold") ? fmt17(v["threshold"].get<double>()) : "seed mask") + " | " +
          cell(v["test_dice_mean"], "%.4f") + " | " + cell(v["test_hd95_mean"], "%.3f") + " | " +
          cell(v["test_hd95_mean_excluding_sentinel"], "%.3f") + " |\n";
  }
  const auto summary = nlohmann::json::parse(read_text(o.run_dir / "eval/summary.json"));
  if (summary["cohorts"].contains("test") && summary["cohorts"]["test"].contains("effective_superpixels")) {
    const auto& e = summary["cohorts"]["test"]["effective_superpixels"];
    char line[200];
    std::snprintf(line, sizeof line, "\nEffective superpixels per test slice: mean %.2f, min %lld, max %lld of %lld.\n",
                  e["mean"].get<double>(), e["min"].get<long long>(), e["max"].get<long long>(),
                  static_cast<long long>(model.arch().superpixels));
    md += line;
  }
  if (fs::exists(o.run_dir / "bench/timing.txt")) {
    md += "\n## Inference time\n\n```\n" + read_text(o.run_dir / "bench/timing.txt") + "```\n";
  }
  md += "\n## Examples\n\n";
  NoGradGuard no_grad;
  for (std::size_t i : picks) {
    const SliceSample& s = test.slices[i];
    const auto res = model.forward(stack_images<float>(test.slices, {i}), false);
    const Index Ns = model.arch().superpixels, P = s.pixels();
    std::vector<int> labels(static_cast<std::size_t>(P));
    for (Index p = 0; p < P; ++p) {
      Index best = 0;
      for (Index k = 1; k < Ns; ++k) {
        if (res.Q.value()[k * P + p] > res.Q.value()[best * P + p]) best = k;
      }
      labels[static_cast<std::size_t>(p)] = static_cast<int>(best);
    }
    const BinaryMask pred = segment(test.index.gate[i], test.heat[i], s.size, s.size, threshold);
    const BinaryMask truth = truth_mask(s);
    const std::string panel = "report/panels/" + s.id() + ".png";
    write_panel(o.run_dir / panel, s, labels, pred, truth);
    write_heatmap_png16(o.run_dir / ("report/heat/" + s.id() + ".png"), test.heat[i], s.size, s.size);
    write_heatmap_f32(o.run_dir / ("report/heat/" + s.id() + ".f32"), test.heat[i]);
    out.insert(out.end(), {panel, "report/heat/" + s.id() + ".png", "report/heat/" + s.id() + ".f32"});
    const fs::path seed_file = o.run_dir / ("infer/test_seeds/" + s.id() + ".seed");
    if (fs::exists(seed_file)) {
      const std::string overlay = "report/seeds/" + s.id() + ".png";
      write_seed_overlay(o.run_dir / overlay, s, read_seed_map(seed_file));
      out.push_back(overlay);
    }
    char line[256];
    std::snprintf(line, sizeof line, "![%s](panels/%s.png) Dice %.3f, HD95 %.2f, gate %.3f\n\n", s.id().c_str(),
                  s.id().c_str(), dice(pred, truth), hd95(pred, truth), test.index.gate[i]);
    md += line;
  }
  write_text(o.run_dir / "report/report.md", md);
  out.push_back("report/report.md");
  log("%zu example panels", picks.size());
  return out;
}

// ---------------------------------------------------------------- orchestration

std::vector<std::string> stage_inputs(const Options& o, const std::string& stage) {
  if (stage == "prep") return prep_inputs(o);
  if (stage == "train-gate") return {slices_path(Cohort::Train), slices_path(Cohort::Validation), slices_path(Cohort::Test)};
  if (stage == "seeds") return {slices_path(Cohort::Train), "gate/model.ckpt", "gate/probs.tsv"};
  if (stage == "train-spix") return train_spix_inputs(o);
  if (stage == "infer") return infer_inputs(o);
  if (stage == "eval") return eval_inputs(o);
  if (stage == "bench") return {slices_path(Cohort::Test), "spix/model.ckpt"};
  if (stage == "report") {
    std::vector<std::string> in{slices_path(Cohort::Test), "infer/test_index.tsv", "infer/test_heat.f32",
                                "eval/comparison.json", "eval/summary.json", "spix/model.ckpt"};
    if (read_stage_manifest(o.run_dir, "bench")) in.push_back("bench/timing.txt");
    for (const auto& rel : upstream_outputs(o, "infer", "infer/test_seeds/")) in.push_back(rel);
    return in;
  }
  throw ValidationError("unknown stage '" + stage + "'");
}

Outputs stage_body(const Options& o, const std::string& stage, const Logger& log) {
  if (stage == "prep") return stage_prep(o, log);
  if (stage == "train-gate") return stage_train_gate(o, log);
  if (stage == "seeds") return stage_seeds(o, log);
  if (stage == "train-spix") return stage_train_spix(o, log);
  if (stage == "infer") return stage_infer(o, log);
  if (stage == "eval") return stage_eval(o, log);
  if (stage == "bench") return stage_bench(o, log);
  return stage_report(o, log);
}

fs::path resolve(const Options& o, const std::string& rel) {
  const fs::path p(rel);
  return p.is_absolute() ? p : o.run_dir / p;
}

/// Hashes every input after checking presence and freshness against the producing stage.
std::map<std::string, std::string> verify_inputs(const Options& o, const StageDef& def, const std::vector<std::string>& inputs) {
  std::vector<std::string> missing;
  std::set<std::string> producers;
  for (const auto& rel : inputs) {
    if (!fs::exists(resolve(o, rel))) {
      missing.push_back(rel);
      if (const StageDef* d = owner_of(rel)) producers.insert(d->name);
    }
  }
  if (!missing.empty()) {
    std::string msg = "stage " + def.name + " cannot run; missing inputs:";
    for (const auto& m : missing) msg += "\n  " + m;
    if (!producers.empty()) {
      msg += "\nrun";
      for (const auto& d : stage_defs()) {
        if (producers.count(d.name)) msg += " `wss " + d.name + "`";
      }
      msg += " first";
    }
    throw ValidationError(msg);
  }
  std::map<std::string, std::string> hashes;
  std::vector<std::string> stale;
  std::map<std::string, std::optional<StageManifest>> upstream;
  for (const auto& rel : inputs) {
    const std::string h = sha256_file(resolve(o, rel));
    hashes[rel] = h;
    const StageDef* d = owner_of(rel);
    if (d == nullptr) continue;
    if (!upstream.count(d->dir)) {
      upstream[d->dir] = read_stage_manifest(o.run_dir, d->dir);
      if (upstream[d->dir] && upstream[d->dir]->config_hash != config_hash(o, *d)) {
        stale.push_back("configuration for stage " + d->name + " changed since it ran");
      }
    }
    const auto& m = upstream[d->dir];
    if (!m) {
      stale.push_back(rel + " has no manifest from stage " + d->name);
    } else if (auto it = m->outputs.find(rel); it == m->outputs.end() || it->second != h) {
      stale.push_back(rel + " differs from what stage " + d->name + " recorded");
    }
  }
  if (!stale.empty()) {
    std::string msg = "stage " + def.name + " has stale inputs:";
    for (const auto& s : stale) msg += "\n  " + s;
    if (o.allow_stale) {
      if (o.log) *o.log << "[" << def.name << "] warning: " << msg << "\n(continuing because of --allow-stale)\n";
    } else {
      throw StaleArtifactError(msg + "\nre-run the upstream stage(s) or pass --allow-stale");
    }
  }
  return hashes;
}

bool up_to_date(const Options& o, const StageDef& def, const std::string& cfg_hash,
                const std::map<std::string, std::string>& inputs) {
  const auto m = read_stage_manifest(o.run_dir, def.dir);
  if (!m || m->config_hash != cfg_hash || m->inputs != inputs) return false;
  for (const auto& [rel, h] : m->outputs) {
    if (!fs::exists(resolve(o, rel)) || sha256_file(resolve(o, rel)) != h) return false;
  }
  return true;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& d : stage_defs()) n.push_back(d.name);
    return n;
  }();
  return names;
}

void cmd_synth(const Options& options, const fs::path& out) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!options.force) throw ValidationError("output directory " + out.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(out);
  }
  generate_synth(options, out, Logger(options, "synth"));
}

bool run_stage(const Options& options, const std::string& stage) {
  const StageDef& def = stage_def(stage);
  const Logger log(options, stage);
  Eigen::setNbThreads(options.threads);
  const std::string cfg_hash = config_hash(options, def);
  const auto inputs = verify_inputs(options, def, stage_inputs(options, stage));
  if (!options.force && up_to_date(options, def, cfg_hash, inputs)) {
    log("up to date; skipping (use --force to re-run)");
    return false;
  }
  fs::remove_all(options.run_dir / def.dir);
  if (stage == "train-spix") fs::remove_all(options.run_dir / "ablation");
  const auto t0 = std::chrono::steady_clock::now();
  const Outputs outputs = stage_body(options, stage, log);
  StageManifest m;
  m.stage = def.dir;
  m.git_describe = git_describe();
  m.config_hash = cfg_hash;
  m.config = options.config.canonical(def.prefixes);
  m.inputs = inputs;
  for (const auto& rel : outputs) m.outputs[rel] = sha256_file(resolve(options, rel));
  write_stage_manifest(options.run_dir, m);
  log("done in %.1f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return true;
}

}  // namespace wss::cli
