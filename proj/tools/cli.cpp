#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ccdn/data.hpp"
#include "ccdn/metrics.hpp"
#include "ccdn/model_check.hpp"

namespace ccdn::cli {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_train_key(const std::string& k) { return k.starts_with("train.") || k.starts_with("loss."); }

void require_file(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_regular_file(*p)) throw UsageError(std::string(flag) + ": no such file " + p->string());
}

const fs::path& require_out(const RunConfig& rc) {
  if (!rc.out) throw UsageError("--out is required");
  return *rc.out;
}

// Writes through "<path>.partial" and renames on success.
template <typename Fn>
void write_atomically(const fs::path& path, Fn&& body) {
  fs::path partial = path;
  partial += ".partial";
  {
    std::ofstream f(partial, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot create " + partial.string());
    body(f);
    if (!f) throw std::runtime_error("write failed for " + partial.string());
  }
  fs::rename(partial, path);
}

void write_wav_atomically(const fs::path& path, const dsp::Waveform& w, std::ostream& out) {
  data::WavWriteResult r;
  const auto bytes = data::encode_wav(w, &r);
  write_atomically(path, [&](std::ostream& f) {
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  });
  if (r.clipped) out << "warning: " << r.clipped << " samples clipped in " << path.string() << '\n';
}

data::Manifest load_manifest(const RunConfig& rc) {
  require_file(rc.manifest, "--manifest");
  try {
    return data::Manifest::load(*rc.manifest);
  } catch (const std::invalid_argument& e) {
    throw UsageError(rc.manifest->string() + ": " + e.what());
  }
}

std::unique_ptr<blocks::Ccdn> load_model(const RunConfig& rc) {
  require_file(rc.checkpoint, "--checkpoint");
  auto state = trainer::load_checkpoint(*rc.checkpoint);
  return std::move(state.model);
}

// ---- commands ------------------------------------------------------------

struct TrainFlags {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> steps;
};

int cmd_train(const RunConfig& rc, const TrainFlags& flags, std::ostream& out) {
  const fs::path& dir = require_out(rc);
  const auto manifest = load_manifest(rc);
  const auto entries = manifest.split(data::Split::train);
  if (entries.empty()) throw UsageError("manifest has no train entries");

  trainer::TrainState state;
  if (rc.checkpoint) {
    if (rc.config || rc.scale || rc.seed) {
      throw UsageError("--checkpoint resumes a run; --config, --scale and --seed conflict with it");
    }
    require_file(rc.checkpoint, "--checkpoint");
    state = trainer::load_checkpoint(*rc.checkpoint);
  } else {
    const Settings s = resolve(rc);
    state = trainer::TrainState::fresh(s.model, s.train);
  }
  if (flags.epochs) state.config.epochs = *flags.epochs;
  if (flags.steps) state.config.steps_per_epoch = *flags.steps;

  std::vector<trainer::Example> examples;
  for (const auto& e : entries) examples.push_back(trainer::load_example(e));

  fs::create_directories(dir);
  const fs::path marker = dir / "TRAINING.partial";
  { std::ofstream(marker) << "training in progress or interrupted\n"; }
  trainer::TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t epoch, const fs::path& p) {
    out << "epoch " << epoch << " checkpoint " << p.string() << '\n';
  };
  const auto rows = trainer::train(state, examples, dir, hooks);
  fs::remove(marker);
  if (!rows.empty()) {
    out << "steps " << rows.size() << ", final loss " << rows.back().loss << ", final SI-SDR "
        << rows.back().si_sdr << " dB\n";
  }
  return kOk;
}

int cmd_enhance(const RunConfig& rc, const std::string& in_wav, const std::string& out_wav,
                std::ostream& out) {
  fs::path target;
  if (!out_wav.empty()) {
    target = out_wav;
  } else {
    target = require_out(rc) / (fs::path(in_wav).stem().string() + "_enhanced.wav");
  }
  if (!fs::is_regular_file(in_wav)) throw UsageError("input: no such file " + in_wav);
  if (fs::exists(target) && fs::equivalent(target, in_wav)) {
    throw UsageError("refusing to overwrite the input file " + in_wav);
  }
  auto model = load_model(rc);
  const auto noisy = data::read_wav(in_wav);
  if (noisy.size() < model->config().stft.fft_size) {
    throw UsageError("input is shorter than one STFT frame");
  }
  const auto enhanced = model->enhance(noisy);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  write_wav_atomically(target, enhanced, out);
  out << "wrote " << target.string() << " (" << enhanced.size() << " samples)\n";
  return kOk;
}

int cmd_evaluate(const RunConfig& rc, const std::string& split,
                 const std::optional<fs::path>& enhanced_dir, std::ostream& out) {
  const fs::path& dir = require_out(rc);
  if (rc.checkpoint && enhanced_dir) {
    throw UsageError("--checkpoint and --enhanced-dir are mutually exclusive");
  }
  if (!rc.checkpoint && !enhanced_dir) {
    throw UsageError("one of --checkpoint or --enhanced-dir is required");
  }
  if (enhanced_dir && !fs::is_directory(*enhanced_dir)) {
    throw UsageError("--enhanced-dir: no such directory " + enhanced_dir->string());
  }
  data::Split which;
  try {
    which = data::split_from_string(split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto manifest = load_manifest(rc);
  const auto entries = manifest.split(which);
  if (entries.empty()) throw UsageError("manifest has no " + split + " entries");
  std::unique_ptr<blocks::Ccdn> model;
  if (rc.checkpoint) model = load_model(rc);

  fs::create_directories(dir);
  if (model) fs::create_directories(dir / "enhanced");
  std::vector<metrics::EvalTriple> triples;
  for (const auto& e : entries) {
    const auto ex = trainer::load_example(e);
    metrics::EvalTriple t{ex.id, e.snr_db, ex.clean, ex.noisy, {}};
    if (model) {
      t.enhanced = model->enhance(ex.noisy);
      write_wav_atomically(dir / "enhanced" / (ex.id + ".wav"), t.enhanced, out);
    } else {
      const fs::path p = *enhanced_dir / (ex.id + ".wav");
      if (!fs::is_regular_file(p)) throw UsageError("missing enhanced file " + p.string());
      t.enhanced = data::read_wav(p);
      if (t.enhanced.size() != ex.clean.size()) {
        throw std::runtime_error(p.string() + ": length " + std::to_string(t.enhanced.size()) +
                                 " differs from the reference " + std::to_string(ex.clean.size()));
      }
    }
    triples.push_back(std::move(t));
  }
  const auto report = metrics::evaluate(triples);
  write_atomically(dir / "report.txt", [&](std::ostream& f) { metrics::write_text(report, f); });
  write_atomically(dir / "report.csv", [&](std::ostream& f) { metrics::write_csv(report, f); });
  metrics::write_text(report, out);
  return kOk;
}

int cmd_gradcheck(const RunConfig& rc, std::size_t frames, std::ostream& out) {
  if (frames == 0 || frames > 4) throw UsageError("--frames must lie in [1, 4]");
  Settings s = resolve(rc);
  blocks::ModelGradCheckConfig cfg;
  cfg.model = blocks::gradcheck_config(s.model.scale, s.model.seed);
  cfg.frames = frames;
  cfg.seed = s.model.seed;
  cfg.loss = s.train.loss;
  const auto report = blocks::model_gradcheck(cfg);

  auto entries = report.entries;
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.result.max_rel_error > b.result.max_rel_error;
  });
  out << "checked " << entries.size() << " tensors (" << blocks::to_string(s.model.scale)
      << " topology, channels <= 8, " << frames << " frames, eps " << cfg.eps << ")\n";
  out << "largest relative errors:\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(8, entries.size()); ++i) {
    const auto& e = entries[i];
    char line[256];
    std::snprintf(line, sizeof line, "  %-44s %.3e  analytic %+.6e  numeric %+.6e\n",
                  e.target.c_str(), e.result.max_rel_error, e.result.analytic_at_worst,
                  e.result.numeric_at_worst);
    out << line;
  }
  char line[128];
  std::snprintf(line, sizeof line, "max relative error %.3e (%s)\n", report.max_rel_error,
                report.worst.c_str());
  out << line;
  const bool ok = report.max_rel_error < 1e-4;
  out << (ok ? "PASS" : "FAIL") << " (threshold 1e-4)\n";
  return ok ? kOk : kFailure;
}

int cmd_info(const RunConfig& rc, std::size_t frames, std::ostream& out) {
  const Settings s = resolve(rc);
  out << "scale " << blocks::to_string(s.model.scale) << ", feb/mb/comeb channels "
      << s.model.feb.channels << '/' << s.model.mb.channels << '/' << s.model.comeb.channels
      << '\n';
  out << "parameters " << blocks::param_count(s.model) << '\n';
  out << "\nshapes for " << frames << " frames\n";
  out << std::left << std::setw(8) << "block" << std::setw(36) << "layer" << std::setw(20)
      << "output" << std::right << std::setw(12) << "params" << '\n';
  for (const auto& r : blocks::shape_table(s.model, frames)) {
    out << std::left << std::setw(8) << r.block << std::setw(36) << r.layer << std::setw(20)
        << shape_str(r.output) << std::right << std::setw(12) << r.params << '\n';
  }
  return kOk;
}

int cmd_make_corpus(const RunConfig& rc, data::CorpusSpec spec, std::ostream& out) {
  const fs::path& dir = require_out(rc);
  if (rc.seed) spec.seed = *rc.seed;
  const auto manifest = data::make_corpus(dir, spec);
  out << "wrote " << manifest.string() << '\n';
  return kOk;
}

}  // namespace

std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return kv;
}

std::map<std::string, std::string> read_kv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("--config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str(), path.string());
}

Settings resolve(const RunConfig& rc) {
  std::map<std::string, std::string> model_kv, train_kv;
  if (rc.config) {
    for (auto& [k, v] : read_kv_file(*rc.config)) (is_train_key(k) ? train_kv : model_kv)[k] = v;
  }
  if (rc.scale) model_kv["scale"] = *rc.scale;
  Settings s;
  try {
    s.model.apply(model_kv);
    s.train.apply(train_kv);
    if (rc.seed) {
      s.model.seed = *rc.seed;
      s.train.seed = *rc.seed;
    }
    s.model.validate();
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parallel mask and complex-spectrum speech enhancement", "ccdn"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config, manifest, checkpoint, outdir, scale;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub, bool with_manifest, bool with_checkpoint, bool with_out) {
    sub->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "seed for initialization, crops and data order");
    sub->add_option("--scale", scale, "model preset")->check(CLI::IsMember({"toy", "desk", "paper"}));
    if (with_manifest) sub->add_option("--manifest", manifest, "dataset manifest");
    if (with_checkpoint) sub->add_option("--checkpoint", checkpoint, "checkpoint file");
    if (with_out) sub->add_option("--out", outdir, "output directory");
  };

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train on the manifest's train split");
  common(train, true, true, true);
  train->add_option("--epochs", train_flags.epochs, "override train.epochs");
  train->add_option("--steps", train_flags.steps, "override train.steps_per_epoch");

  std::string in_wav, out_wav;
  auto* enhance = app.add_subcommand("enhance", "enhance one WAV file");
  common(enhance, false, true, true);
  enhance->add_option("input", in_wav, "noisy 16 kHz mono PCM16 WAV")->required();
  enhance->add_option("output", out_wav, "output WAV (default: <out>/<input>_enhanced.wav)");

  std::string split = "test";
  std::string enhanced_dir;
  auto* evaluate = app.add_subcommand("evaluate", "SI-SDR and ESTOI over a manifest split");
  common(evaluate, true, true, true);
  evaluate->add_option("--split", split, "train, val or test")->capture_default_str();
  evaluate->add_option("--enhanced-dir", enhanced_dir,
                       "score existing <id>.wav files instead of running a checkpoint");

  std::size_t frames_gc = 4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  common(gradcheck, false, false, false);
  gradcheck->add_option("--frames", frames_gc, "STFT frames of the probe input (1-4)")
      ->capture_default_str();

  std::size_t frames_info = 124;
  auto* info = app.add_subcommand("info", "parameter count and layer shape table");
  common(info, false, false, false);
  info->add_option("--frames", frames_info, "frames for the shape table")->capture_default_str();

  data::CorpusSpec corpus;
  auto* make = app.add_subcommand("make-corpus", "write a synthetic corpus and manifest");
  common(make, false, false, true);
  make->add_option("--train", corpus.train, "training utterances")->capture_default_str();
  make->add_option("--val", corpus.val, "validation utterances")->capture_default_str();
  make->add_option("--test", corpus.test, "test utterances")->capture_default_str();
  make->add_option("--seconds", corpus.seconds, "utterance length")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  auto* sub = app.get_subcommands().front();
  rc.command = sub->get_name();
  auto given = [&](const char* flag) {
    auto* opt = sub->get_option_no_throw(flag);
    return opt && opt->count() > 0;
  };
  if (given("--config")) rc.config = config;
  if (given("--manifest")) rc.manifest = manifest;
  if (given("--checkpoint")) rc.checkpoint = checkpoint;
  if (given("--out")) rc.out = outdir;
  if (given("--seed")) rc.seed = seed;
  if (given("--scale")) rc.scale = scale;

  try {
    if (sub == train) return cmd_train(rc, train_flags, out);
    if (sub == enhance) return cmd_enhance(rc, in_wav, out_wav, out);
    if (sub == evaluate) {
      std::optional<fs::path> dir;
      if (given("--enhanced-dir")) dir = enhanced_dir;
      return cmd_evaluate(rc, split, dir, out);
    }
    if (sub == gradcheck) return cmd_gradcheck(rc, frames_gc, out);
    if (sub == info) return cmd_info(rc, frames_info, out);
    if (sub == make) return cmd_make_corpus(rc, corpus, out);
  } catch (const UsageError& e) {
    err << "ccdn " << rc.command << ": " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "ccdn " << rc.command << ": " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace ccdn::cli
