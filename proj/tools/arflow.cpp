// Copyright 2026 The arflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// arflow command-line front end.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "arflow/analysis.hpp"
#include "arflow/audio.hpp"
#include "arflow/corpus.hpp"
#include "arflow/inference.hpp"
#include "arflow/mel.hpp"
#include "arflow/model.hpp"
#include "arflow/tensor_io.hpp"
#include "arflow/training.hpp"
#include "arflow/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace arflow {
namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// Options whose values are paths get resolved to absolute paths in the run record.
const std::set<std::string> kPathOptions = {"manifest", "out",    "config",   "init",   "checkpoint",
                                            "evidence", "source", "reference", "cache", "input",
                                            "mixture-checkpoint", "durations", "f0", "assignments"};

json option_value(const CLI::Option* opt, const std::string& name) {
  if (opt->get_expected_max() == 0) return opt->count() > 0;
  std::vector<std::string> values = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
  if (values.empty()) {
    const auto d = opt->get_default_str();
    if (d.empty()) return nullptr;
    values = {d};
  }
  if (kPathOptions.count(name)) {
    for (auto& v : values) v = absolute(v);
  }
  auto scalar = [](const std::string& v) -> json {
    const auto parsed = json::parse(v, nullptr, false);
    return parsed.is_discarded() || parsed.is_object() || parsed.is_array() ? json(v) : parsed;
  };
  if (opt->get_expected_max() == 1 && values.size() == 1) return scalar(values.front());
  json arr = json::array();
  for (const auto& v : values) arr.push_back(scalar(v));
  return arr;
}

json resolved_options(const CLI::App* app) {
  json j = json::object();
  for (const auto* opt : app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto name = opt->get_lnames().front();
    if (name == "help") continue;
    j[name] = option_value(opt, name);
  }
  return j;
}

/// Writes the fully resolved settings of a run next to its outputs.
void write_run_record(const fs::path& where, const std::string& command, const CLI::App* app, std::uint64_t seed,
                      json extra = json::object()) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["options"] = resolved_options(app);
  for (auto& [k, v] : extra.items()) j[k] = v;
  fs::path path = where;
  if (fs::is_directory(where)) {
    path = where / "run_config.json";
  } else {
    path += ".run.json";
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FlowModel<float> load_model(const std::string& path) {
  const auto info = read_checkpoint_info(path);
  if (info.vocabulary != Vocabulary().symbols()) {
    throw std::runtime_error(path + ": checkpoint vocabulary differs from this build's symbol set");
  }
  return load_checkpoint<float>(path);
}

TokenSequence tokens_for(const FlowModel<float>& model, const std::string& text, std::int64_t speaker) {
  const auto& cfg = model.config();
  if (speaker < 0 || speaker >= cfg.n_speakers) {
    throw UsageError("--speaker must be in [0, " + std::to_string(cfg.n_speakers) + ")");
  }
  auto tokens = tokenize(text, Vocabulary(), {}, speaker);
  if (tokens.size() == 0) throw UsageError("--text produced no tokens");
  return tokens;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
  return out;
}

MelSpectrogram load_mel_file(const std::string& path, double hop_seconds) {
  const auto t = load_tensor_file<double>(path);
  if (t.rank() != 2) throw std::runtime_error(path + ": expected a frames x channels tensor");
  MelSpectrogram m;
  m.frames = t.dim(0);
  m.channels = t.dim(1);
  m.values = t.values();
  m.hop_seconds = hop_seconds;
  return m;
}

/// Expands directories to the files inside them with the given extension.
std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs, const std::set<std::string>& exts) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && exts.count(e.path().extension().string())) found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  if (out.empty()) throw UsageError("no input files");
  return out;
}

std::string stem_of(const std::string& path) {
  auto s = fs::path(path).filename().string();
  return s.substr(0, s.find('.'));
}

/// Validator whose failure message states the constraint.
CLI::Validator at_least(double lo, bool strict) {
  const std::string rule = std::string(strict ? "must be > " : "must be >= ") + CLI::detail::to_string(lo);
  return CLI::Validator(
      [=](std::string& v) -> std::string {
        double x = 0.0;
        if (!CLI::detail::lexical_cast(v, x) || !std::isfinite(x) || (strict ? x <= lo : x < lo)) return rule;
        return {};
      },
      rule.substr(5));
}

// Shared sampling flags.
struct SamplingFlags {
  double sigma2 = 0.5;
  std::int64_t frames = 0;
  bool gate = false;
  std::uint64_t seed = 0;
  double gate_threshold = 0.5;
  std::int64_t max_frames = 2000;

  void add(CLI::App* app) {
    app->add_option("--sigma2", sigma2, "latent variance")->check(at_least(0.0, false));
    auto* f = app->add_option("--frames", frames, "fixed frame count")->check(CLI::PositiveNumber);
    app->add_flag("--gate", gate, "open-ended, stopped by the gate")->excludes(f);
    app->add_option("--seed", seed, "sampling seed");
    app->add_option("--gate-threshold", gate_threshold)->check(CLI::Range(0.0, 1.0));
    app->add_option("--max-frames", max_frames)->check(CLI::PositiveNumber);
  }
  SamplingSpec spec() const {
    SamplingSpec s;
    s.sigma2 = sigma2;
    s.frames = gate ? 0 : frames;
    s.seed = seed;
    s.gate_threshold = gate_threshold;
    s.max_frames = max_frames;
    try {
      s.validate();
    } catch (const InferenceError& e) {
      throw UsageError(e.what());
    }
    return s;
  }
};

struct OutputFlags {
  std::string out;
  std::string stem = "sample";
  int griffin_lim = 0;

  void add(CLI::App* app, bool with_stem = true) {
    app->add_option("--out", out, "output directory")->required();
    if (with_stem) app->add_option("--stem", stem, "output file stem");
    app->add_option("--griffin-lim", griffin_lim, "Griffin-Lim iterations for a .wav (0: none)")
        ->check(CLI::NonNegativeNumber);
  }
};

void report_synthesis(const Synthesis& s, const fs::path& dir, const std::string& stem) {
  std::cout << (dir / stem).string() << ".mel: " << s.frames() << " frames"
            << (s.provenance.gate_fired ? " (gate)" : "") << '\n';
}

}  // namespace
}  // namespace arflow

int main(int argc, char** argv) {
  using namespace arflow;
  CLI::App app{"Autoregressive flow text-to-mel toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // make-toy-corpus
  ToyCorpusSpec toy;
  std::string toy_out;
  auto* cmd_toy = app.add_subcommand("make-toy-corpus", "write the built-in synthetic corpus");
  cmd_toy->add_option("--out", toy_out, "output directory")->required();
  cmd_toy->add_option("--utterances", toy.n_utterances)->check(CLI::PositiveNumber);
  cmd_toy->add_option("--speakers", toy.n_speakers)->check(CLI::Range(1, static_cast<int>(kMaxToySpeakers)));
  cmd_toy->add_option("--min-words", toy.min_words)->check(CLI::PositiveNumber);
  cmd_toy->add_option("--max-words", toy.max_words)->check(CLI::PositiveNumber);
  cmd_toy->add_option("--seed", toy.seed);

  // prepare
  std::string prep_manifest, prep_cache, prep_out;
  std::uint64_t prep_seed = 0;
  auto* cmd_prep = app.add_subcommand("prepare", "validate a manifest and fill the mel cache");
  cmd_prep->add_option("--manifest", prep_manifest)->required()->check(CLI::ExistingFile);
  cmd_prep->add_option("--cache", prep_cache, "mel cache directory (default: $ARFLOW_CACHE_DIR)");
  cmd_prep->add_option("--out", prep_out, "directory for the summary");
  cmd_prep->add_option("--seed", prep_seed);

  // train
  std::string tr_manifest, tr_out, tr_config, tr_init, tr_cache, tr_mixture_mode = "fixed";
  std::int64_t tr_flows = 1, tr_speakers = 0, tr_mixture = 0;
  bool tr_no_speaker = false, tr_mixture_init = false;
  TrainConfig tr_cfg;
  auto* cmd_train = app.add_subcommand("train", "maximum-likelihood training");
  cmd_train->add_option("--manifest", tr_manifest)->required()->check(CLI::ExistingFile);
  cmd_train->add_option("--out", tr_out, "run directory")->required();
  cmd_train->add_option("--config", tr_config, "training config JSON")->check(CLI::ExistingFile);
  cmd_train->add_option("--init", tr_init, "start from this checkpoint")->check(CLI::ExistingFile);
  cmd_train->add_option("--cache", tr_cache, "mel cache directory (default: $ARFLOW_CACHE_DIR)");
  cmd_train->add_option("--flows", tr_flows, "steps of flow for a new model")->check(CLI::PositiveNumber);
  cmd_train->add_option("--speakers", tr_speakers, "speaker table size (default: from the manifest)");
  cmd_train->add_flag("--no-speaker", tr_no_speaker, "disable speaker conditioning");
  cmd_train->add_option("--mixture", tr_mixture, "Gaussian-mixture prior components (0: spherical)");
  cmd_train->add_option("--mixture-mode", tr_mixture_mode)->check(CLI::IsMember({"fixed", "predicted"}));
  cmd_train->add_flag("--mixture-init", tr_mixture_init, "initialize a fixed mixture from the data");
  std::map<std::string, CLI::Option*> tr_overrides;
  tr_overrides["lr"] = cmd_train->add_option("--lr", tr_cfg.learning_rate);
  tr_overrides["epochs"] = cmd_train->add_option("--epochs", tr_cfg.max_epochs);
  tr_overrides["batch-size"] = cmd_train->add_option("--batch-size", tr_cfg.batch_size);
  tr_overrides["max-seconds"] = cmd_train->add_option("--max-seconds", tr_cfg.max_seconds);
  tr_overrides["validation"] = cmd_train->add_option("--validation", tr_cfg.validation_count);
  tr_overrides["guided-attention"] = cmd_train->add_option("--guided-attention", tr_cfg.guided_attention);
  tr_overrides["gate-pos-weight"] = cmd_train->add_option("--gate-pos-weight", tr_cfg.gate_pos_weight);
  tr_overrides["grad-clip"] = cmd_train->add_option("--grad-clip", tr_cfg.grad_clip);
  tr_overrides["sigma2"] = cmd_train->add_option("--sigma2", tr_cfg.sigma2, "training prior variance");
  tr_overrides["seed"] = cmd_train->add_option("--seed", tr_cfg.seed);
  bool tr_no_gate_loss = false;
  cmd_train->add_flag("--no-gate-loss", tr_no_gate_loss);

  // extend-flows
  std::string ext_ckpt, ext_out;
  std::int64_t ext_flows = 2;
  std::uint64_t ext_seed = 0;
  auto* cmd_ext = app.add_subcommand("extend-flows", "add identity steps of flow to a checkpoint");
  cmd_ext->add_option("--checkpoint", ext_ckpt)->required()->check(CLI::ExistingFile);
  cmd_ext->add_option("--flows", ext_flows, "new total number of steps")->required();
  cmd_ext->add_option("--out", ext_out, "output checkpoint")->required();
  cmd_ext->add_option("--seed", ext_seed);

  // add-speaker
  std::string spk_ckpt, spk_out;
  std::int64_t spk_count = 1;
  std::uint64_t spk_seed = 0;
  auto* cmd_spk = app.add_subcommand("add-speaker", "append speaker embedding rows");
  cmd_spk->add_option("--checkpoint", spk_ckpt)->required()->check(CLI::ExistingFile);
  cmd_spk->add_option("--count", spk_count)->check(CLI::NonNegativeNumber);
  cmd_spk->add_option("--out", spk_out, "output checkpoint")->required();
  cmd_spk->add_option("--seed", spk_seed);

  // infer
  std::string inf_ckpt, inf_text;
  std::int64_t inf_speaker = 0;
  SamplingFlags inf_s;
  OutputFlags inf_o;
  auto* cmd_inf = app.add_subcommand("infer", "sample from the prior");
  cmd_inf->add_option("--checkpoint", inf_ckpt)->required()->check(CLI::ExistingFile);
  cmd_inf->add_option("--text", inf_text)->required();
  cmd_inf->add_option("--speaker", inf_speaker);
  inf_s.add(cmd_inf);
  inf_o.add(cmd_inf);

  // interpolate
  std::string int_ckpt, int_text;
  std::int64_t int_speaker = 0, int_steps = 100;
  std::optional<std::uint64_t> int_seed_a, int_seed_b;
  SamplingFlags int_s;
  OutputFlags int_o;
  auto* cmd_int = app.add_subcommand("interpolate", "linear path between two prior samples");
  cmd_int->add_option("--checkpoint", int_ckpt)->required()->check(CLI::ExistingFile);
  cmd_int->add_option("--text", int_text)->required();
  cmd_int->add_option("--speaker", int_speaker);
  cmd_int->add_option("--steps", int_steps)->check(CLI::Range(std::int64_t{2}, std::int64_t{100000}));
  cmd_int->add_option("--seed-a", int_seed_a, "endpoint A seed (default: seed + 1)");
  cmd_int->add_option("--seed-b", int_seed_b, "endpoint B seed (default: seed + 2)");
  int_s.add(cmd_int);
  int_o.add(cmd_int, false);

  // evidence
  std::string ev_ckpt, ev_manifest, ev_out, ev_cache;
  std::int64_t ev_top = 0, ev_speaker = 0;
  std::uint64_t ev_seed = 0;
  auto* cmd_ev = app.add_subcommand("evidence", "harvest latent evidence from reference utterances");
  cmd_ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  cmd_ev->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  cmd_ev->add_option("--select-top-f0-var", ev_top, "keep the N utterances with the largest F0 variance (0: all)")
      ->check(CLI::NonNegativeNumber);
  cmd_ev->add_option("--speaker", ev_speaker, "speaker id used for the forward pass");
  cmd_ev->add_option("--cache", ev_cache);
  cmd_ev->add_option("--out", ev_out, "evidence file")->required();
  cmd_ev->add_option("--seed", ev_seed);

  // infer-posterior
  std::string post_ckpt, post_ev, post_text, post_strategy = "gaussian";
  std::int64_t post_speaker = 0;
  std::size_t post_replay = 0;
  double post_lambda = 0.5;
  SamplingFlags post_s;
  OutputFlags post_o;
  auto* cmd_post = app.add_subcommand("infer-posterior", "sample around harvested evidence");
  cmd_post->add_option("--checkpoint", post_ckpt)->required()->check(CLI::ExistingFile);
  cmd_post->add_option("--evidence", post_ev)->required()->check(CLI::ExistingFile);
  cmd_post->add_option("--text", post_text)->required();
  cmd_post->add_option("--speaker", post_speaker);
  cmd_post->add_option("--lambda", post_lambda)->check(CLI::Range(0.0, 1.0));
  cmd_post->add_option("--strategy", post_strategy)->check(CLI::IsMember({"gaussian", "replay", "a", "b"}));
  cmd_post->add_option("--replay-index", post_replay, "evidence sequence replayed by the replay strategy");
  post_s.add(cmd_post);
  post_o.add(cmd_post);

  // transfer
  std::string tf_ckpt, tf_source, tf_text;
  std::int64_t tf_source_speaker = 0, tf_target = 0;
  std::optional<std::int64_t> tf_forward;
  std::uint64_t tf_seed = 0;
  OutputFlags tf_o;
  auto* cmd_tf = app.add_subcommand("transfer", "re-synthesize a recording with another speaker");
  cmd_tf->add_option("--checkpoint", tf_ckpt)->required()->check(CLI::ExistingFile);
  cmd_tf->add_option("--source", tf_source, "source .wav or .mel")->required()->check(CLI::ExistingFile);
  cmd_tf->add_option("--text", tf_text, "source transcript")->required();
  cmd_tf->add_option("--source-speaker", tf_source_speaker);
  cmd_tf->add_option("--target-speaker", tf_target)->required();
  cmd_tf->add_option("--forward-speaker", tf_forward, "speaker for the forward pass (default: source speaker)");
  cmd_tf->add_option("--seed", tf_seed);
  tf_o.add(cmd_tf);

  // infer-gm
  std::string gm_ckpt, gm_text, gm_reference;
  std::int64_t gm_speaker = 0;
  std::optional<std::int64_t> gm_component, gm_dim;
  std::vector<double> gm_weights;
  double gm_offset = 0.0;
  SamplingFlags gm_s;
  OutputFlags gm_o;
  auto* cmd_gm = app.add_subcommand("infer-gm", "sample from a Gaussian-mixture prior");
  cmd_gm->add_option("--checkpoint", gm_ckpt)->required()->check(CLI::ExistingFile);
  cmd_gm->add_option("--text", gm_text)->required();
  cmd_gm->add_option("--speaker", gm_speaker);
  auto* gm_comp_opt = cmd_gm->add_option("--component", gm_component, "sample a single component");
  cmd_gm->add_option("--weights", gm_weights, "per-frame component weights")->delimiter(',')->excludes(gm_comp_opt);
  cmd_gm->add_option("--dim", gm_dim, "latent dimension to offset");
  cmd_gm->add_option("--offset", gm_offset, "offset added to --dim");
  cmd_gm->add_option("--reference", gm_reference, "reference .wav or .mel (predicted mixtures)")
      ->check(CLI::ExistingFile);
  gm_s.add(cmd_gm);
  gm_o.add(cmd_gm);

  // analyze
  auto* cmd_an = app.add_subcommand("analyze", "signal analysis and reports");
  cmd_an->require_subcommand(1);
  std::vector<std::string> anf_inputs;
  std::string anf_manifest, anf_out;
  int anf_gl = 32;
  YinConfig anf_yin;
  std::uint64_t anf_seed = 0;
  auto* cmd_anf = cmd_an->add_subcommand("f0", "YIN F0 contours");
  cmd_anf->add_option("--input", anf_inputs, ".wav/.mel files or directories");
  cmd_anf->add_option("--manifest", anf_manifest)->check(CLI::ExistingFile);
  cmd_anf->add_option("--out", anf_out, "CSV path")->required();
  cmd_anf->add_option("--griffin-lim", anf_gl, "iterations used to invert .mel inputs")->check(CLI::PositiveNumber);
  cmd_anf->add_option("--f-min", anf_yin.f_min);
  cmd_anf->add_option("--f-max", anf_yin.f_max);
  cmd_anf->add_option("--threshold", anf_yin.harmonicity_threshold);
  cmd_anf->add_option("--seed", anf_seed, "Griffin-Lim phase seed");

  std::vector<std::string> and_inputs;
  std::string and_out;
  std::optional<double> and_sigma2;
  std::uint64_t and_seed = 0;
  auto* cmd_and = cmd_an->add_subcommand("durations", "durations of synthesized mels");
  cmd_and->add_option("--input", and_inputs, ".mel files or directories")->required();
  cmd_and->add_option("--out", and_out, "CSV path")->required();
  cmd_and->add_option("--sigma2", and_sigma2, "sigma2 label (default: from provenance)");
  cmd_and->add_option("--seed", and_seed);

  std::string ana_ckpt, ana_manifest, ana_out, ana_cache;
  std::uint64_t ana_seed = 0;
  auto* cmd_ana = cmd_an->add_subcommand("assignments", "mean mixture responsibilities per speaker");
  cmd_ana->add_option("--checkpoint", ana_ckpt)->required()->check(CLI::ExistingFile);
  cmd_ana->add_option("--manifest", ana_manifest)->required()->check(CLI::ExistingFile);
  cmd_ana->add_option("--cache", ana_cache);
  cmd_ana->add_option("--out", ana_out, "CSV path")->required();
  cmd_ana->add_option("--seed", ana_seed);

  std::string anp_durations, anp_f0, anp_assign, anp_out;
  std::uint64_t anp_seed = 0;
  auto* cmd_anp = cmd_an->add_subcommand("plots", "SVG plots from analysis CSVs");
  cmd_anp->add_option("--durations", anp_durations)->check(CLI::ExistingFile);
  cmd_anp->add_option("--f0", anp_f0)->check(CLI::ExistingFile);
  cmd_anp->add_option("--assignments", anp_assign)->check(CLI::ExistingFile);
  cmd_anp->add_option("--out", anp_out, "output directory")->required();
  cmd_anp->add_option("--seed", anp_seed);

  // verify
  VerifyOptions vf;
  std::string vf_only, vf_out;
  auto* cmd_vf = app.add_subcommand("verify", "run the acceptance suite");
  cmd_vf->add_option("--checkpoint", vf.checkpoint, "trained toy checkpoint (default: train one)")
      ->check(CLI::ExistingFile);
  cmd_vf->add_option("--mixture-checkpoint", vf.mixture_checkpoint, "trained toy mixture checkpoint")
      ->check(CLI::ExistingFile);
  cmd_vf->add_option("--train-seconds", vf.train_seconds)->check(CLI::PositiveNumber);
  cmd_vf->add_option("--mixture-seconds", vf.mixture_seconds)->check(CLI::PositiveNumber);
  cmd_vf->add_option("--only", vf_only, "comma-separated criterion ids");
  cmd_vf->add_option("--out", vf_out, "directory for trained models and the report");
  cmd_vf->add_option("--seed", vf.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (cmd_toy->parsed()) {
      if (toy.min_words > toy.max_words) throw UsageError("--min-words must be <= --max-words");
      const auto entries = write_toy_corpus(toy, toy_out);
      write_run_record(toy_out, "make-toy-corpus", cmd_toy, toy.seed);
      std::cout << entries.size() << " utterances in " << absolute(toy_out) << "/manifest.txt\n";
    } else if (cmd_prep->parsed()) {
      const auto cache = prep_cache.empty() ? MelCache::from_environment() : MelCache(prep_cache);
      const auto entries = load_manifest(prep_manifest);
      const auto utts = prepare_utterances(entries, Vocabulary(), MelConfig{}, cache);
      std::int64_t frames = 0, max_speaker = 0;
      for (const auto& u : utts) {
        frames += u.mel.frames;
        max_speaker = std::max(max_speaker, u.tokens.speaker);
      }
      json summary;
      summary["utterances"] = utts.size();
      summary["frames"] = frames;
      summary["speakers"] = max_speaker + 1;
      summary["cache"] = cache.directory().empty() ? json(nullptr) : json(absolute(cache.directory()));
      std::cout << summary.dump() << '\n';
      if (!prep_out.empty()) {
        fs::create_directories(prep_out);
        std::ofstream(fs::path(prep_out) / "prepare.json") << summary.dump(2) << '\n';
        write_run_record(prep_out, "prepare", cmd_prep, prep_seed);
      }
    } else if (cmd_train->parsed()) {
      TrainConfig cfg;
      if (!tr_config.empty()) {
        std::ifstream in(tr_config);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
          cfg = TrainConfig::from_json(ss.str());
        } catch (const TrainingError& e) {
          throw UsageError(tr_config + ": " + e.what());
        }
      }
      // Flags given on the command line override the file.
      auto given = [&](const std::string& k) { return tr_overrides.at(k)->count() > 0; };
      if (given("lr")) cfg.learning_rate = tr_cfg.learning_rate;
      if (given("epochs")) cfg.max_epochs = tr_cfg.max_epochs;
      if (given("batch-size")) cfg.batch_size = tr_cfg.batch_size;
      if (given("max-seconds")) cfg.max_seconds = tr_cfg.max_seconds;
      if (given("validation")) cfg.validation_count = tr_cfg.validation_count;
      if (given("guided-attention")) cfg.guided_attention = tr_cfg.guided_attention;
      if (given("gate-pos-weight")) cfg.gate_pos_weight = tr_cfg.gate_pos_weight;
      if (given("grad-clip")) cfg.grad_clip = tr_cfg.grad_clip;
      if (given("sigma2")) cfg.sigma2 = tr_cfg.sigma2;
      if (given("seed")) cfg.seed = tr_cfg.seed;
      if (tr_no_gate_loss) cfg.gate_loss = false;
      try {
        cfg.validate();
      } catch (const TrainingError& e) {
        throw UsageError(e.what());
      }

      const auto cache = tr_cache.empty() ? MelCache::from_environment() : MelCache(tr_cache);
      auto utts = prepare_utterances(load_manifest(tr_manifest), Vocabulary(), MelConfig{}, cache);
      std::int64_t max_speaker = 0;
      for (const auto& u : utts) max_speaker = std::max(max_speaker, u.tokens.speaker);
      const auto corpus = split_corpus(std::move(utts), cfg.validation_count, cfg.seed);

      std::optional<FlowModel<float>> model;
      if (!tr_init.empty()) {
        model.emplace(load_model(tr_init));
      } else {
        ModelConfig mc;
        mc.n_symbols = Vocabulary().size();
        mc.n_flows = tr_flows;
        mc.n_speakers = tr_speakers > 0 ? tr_speakers : max_speaker + 1;
        mc.use_speaker = !tr_no_speaker;
        if (tr_mixture > 0) {
          mc.prior = PriorSpec{PriorKind::kMixture, 1.0, tr_mixture,
                               tr_mixture_mode == "fixed" ? MixtureMode::kFixed : MixtureMode::kPredicted};
        }
        try {
          mc.validate();
        } catch (const std::exception& e) {
          throw UsageError(e.what());
        }
        model.emplace(mc, cfg.seed);
        if (tr_mixture_init) init_mixture_from_data(*model, corpus.train, cfg.seed);
      }
      fs::create_directories(tr_out);
      std::ofstream(fs::path(tr_out) / "model_config.json") << model->config().to_json() << '\n';
      write_run_record(tr_out, "train", cmd_train, cfg.seed, {{"train_config", json::parse(cfg.to_json())}});
      TrainOutputs outputs;
      outputs.directory = tr_out;
      outputs.metadata_json = json{{"manifest", absolute(tr_manifest)}, {"seed", cfg.seed}}.dump();
      outputs.on_epoch = [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " train " << e.train_nll << " val " << e.val_nll << " gate "
                  << e.gate_bce << " lr " << e.learning_rate << " (" << std::fixed << std::setprecision(1)
                  << e.seconds << " s)" << std::defaultfloat << std::setprecision(6) << std::endl;
      };
      const auto res = train(cfg, corpus, *model, outputs);
      std::cout << "best val NLL " << res.best_val_nll << " at epoch " << res.best_epoch << " (initial "
                << res.initial_val_nll << "); checkpoint " << absolute((fs::path(tr_out) / "best.ckpt").string())
                << '\n';
    } else if (cmd_ext->parsed()) {
      auto model = load_model(ext_ckpt);
      if (ext_flows <= model.n_flows()) {
        throw UsageError("--flows must exceed the checkpoint's " + std::to_string(model.n_flows()) + " steps");
      }
      extend_flows(model, ext_flows, ext_seed);
      save_checkpoint(ext_out, model, json{{"extended_from", absolute(ext_ckpt)}, {"seed", ext_seed}}.dump());
      write_run_record(ext_out, "extend-flows", cmd_ext, ext_seed);
      std::cout << "wrote " << absolute(ext_out) << " with " << model.n_flows() << " steps\n";
    } else if (cmd_spk->parsed()) {
      auto model = load_model(spk_ckpt);
      if (!model.config().use_speaker) throw UsageError("checkpoint has no speaker conditioning");
      add_speaker(model, spk_count, spk_seed);
      save_checkpoint(spk_out, model, json{{"speakers_added", spk_count}, {"seed", spk_seed}}.dump());
      write_run_record(spk_out, "add-speaker", cmd_spk, spk_seed);
      std::cout << "wrote " << absolute(spk_out) << " with " << model.config().n_speakers << " speakers\n";
    } else if (cmd_inf->parsed()) {
      const auto spec = inf_s.spec();
      const auto model = load_model(inf_ckpt);
      const auto tokens = tokens_for(model, inf_text, inf_speaker);
      const auto s = sample_prior(model, tokens, spec);
      write_synthesis(s, inf_o.out, inf_o.stem, inf_o.griffin_lim, model.config().features);
      write_run_record(inf_o.out, "infer", cmd_inf, spec.seed);
      report_synthesis(s, inf_o.out, inf_o.stem);
    } else if (cmd_int->parsed()) {
      const auto spec = int_s.spec();
      const auto model = load_model(int_ckpt);
      const auto tokens = tokens_for(model, int_text, int_speaker);
      auto a = spec, b = spec;
      a.seed = int_seed_a.value_or(spec.seed + 1);
      b.seed = int_seed_b.value_or(spec.seed + 2);
      const auto sa = sample_prior(model, tokens, a), sb = sample_prior(model, tokens, b);
      const auto path = interpolate(model, tokens, sa.z, sb.z, int_steps, spec.sigma2, spec.seed);
      const auto width = std::max<std::size_t>(3, std::to_string(int_steps - 1).size());
      for (std::size_t i = 0; i < path.size(); ++i) {
        std::ostringstream stem;
        stem << "interp_" << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
        write_synthesis(path[i], int_o.out, stem.str(), int_o.griffin_lim, model.config().features);
      }
      write_run_record(int_o.out, "interpolate", cmd_int, spec.seed,
                       {{"seed_a", a.seed}, {"seed_b", b.seed}, {"frames_a", sa.frames()}, {"frames_b", sb.frames()}});
      std::cout << path.size() << " syntheses in " << absolute(int_o.out) << '\n';
    } else if (cmd_ev->parsed()) {
      const auto model = load_model(ev_ckpt);
      if (ev_speaker < 0 || ev_speaker >= model.config().n_speakers) {
        throw UsageError("--speaker must be in [0, " + std::to_string(model.config().n_speakers) + ")");
      }
      const auto entries = load_manifest(ev_manifest);
      const auto cache = ev_cache.empty() ? MelCache::from_environment() : MelCache(ev_cache);
      const auto utts = prepare_utterances(entries, Vocabulary(), model.config().features, cache);
      std::vector<std::pair<std::string, F0Contour>> contours;
      for (std::size_t i = 0; i < entries.size(); ++i) contours.emplace_back(utts[i].id, yin_f0(load_wav(entries[i].path)));
      const auto ranked = f0_variance_rank(contours);
      std::set<std::string> keep;
      const auto n = ev_top > 0 ? std::min<std::size_t>(static_cast<std::size_t>(ev_top), ranked.size()) : ranked.size();
      for (std::size_t i = 0; i < n; ++i) keep.insert(ranked[i].id);
      std::vector<EvidenceSample> samples;
      for (const auto& u : utts) {
        if (keep.count(u.id)) samples.push_back({u.id, &u.mel, u.tokens});
      }
      const auto ev = harvest_evidence(model, samples, ev_speaker);
      ev.save(ev_out);
      {
        std::ofstream out(ev_out + ".f0_rank.csv");
        out << "sample_id,f0_variance,voiced_frames,selected\n";
        for (const auto& r : ranked) out << r.id << ',' << r.f0_variance << ',' << r.voiced_frames << ',' << keep.count(r.id) << '\n';
      }
      write_run_record(ev_out, "evidence", cmd_ev, ev_seed, {{"selected", std::vector<std::string>(ev.ids)}});
      for (const auto& w : ev.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << "evidence from " << ev.ids.size() << " utterances written to " << absolute(ev_out) << '\n';
    } else if (cmd_post->parsed()) {
      const auto spec = post_s.spec();
      const auto model = load_model(post_ckpt);
      const auto ev = Evidence::load(post_ev);
      const auto tokens = tokens_for(model, post_text, post_speaker);
      const auto strategy = parse_posterior_strategy(post_strategy);
      if (post_replay >= ev.z.size()) throw UsageError("--replay-index out of range");
      const auto s = sample_posterior(model, ev, post_lambda, tokens, spec, strategy, post_replay);
      write_synthesis(s, post_o.out, post_o.stem, post_o.griffin_lim, model.config().features);
      write_run_record(post_o.out, "infer-posterior", cmd_post, spec.seed);
      report_synthesis(s, post_o.out, post_o.stem);
    } else if (cmd_tf->parsed()) {
      const auto model = load_model(tf_ckpt);
      const auto tokens = tokens_for(model, tf_text, tf_source_speaker);
      if (tf_target < 0 || tf_target >= model.config().n_speakers) {
        throw UsageError("--target-speaker must be in [0, " + std::to_string(model.config().n_speakers) + ")");
      }
      const auto& features = model.config().features;
      const auto mel = fs::path(tf_source).extension() == ".mel" ? load_mel_file(tf_source, features.hop_seconds())
                                                                  : mel_spectrogram(load_wav(tf_source), features);
      TransferOptions opts;
      opts.forward_speaker = tf_forward;
      auto s = transfer_with_alignment(model, mel, tokens, tf_target, opts);
      s.provenance.seed = tf_seed;
      write_synthesis(s, tf_o.out, tf_o.stem, tf_o.griffin_lim, features);
      write_run_record(tf_o.out, "transfer", cmd_tf, tf_seed);
      report_synthesis(s, tf_o.out, tf_o.stem);
    } else if (cmd_gm->parsed()) {
      const auto spec = gm_s.spec();
      const auto model = load_model(gm_ckpt);
      const auto tokens = tokens_for(model, gm_text, gm_speaker);
      MixtureSelection sel;
      sel.component = gm_component;
      sel.weights = gm_weights;
      sel.offset_dim = gm_dim;
      sel.offset = gm_offset;
      std::optional<MelSpectrogram> reference;
      if (!gm_reference.empty()) {
        const auto& features = model.config().features;
        reference = fs::path(gm_reference).extension() == ".mel"
                        ? load_mel_file(gm_reference, features.hop_seconds())
                        : mel_spectrogram(load_wav(gm_reference), features);
      }
      const auto s = sample_mixture(model, tokens, sel, spec, reference ? &*reference : nullptr);
      write_synthesis(s, gm_o.out, gm_o.stem, gm_o.griffin_lim, model.config().features);
      write_run_record(gm_o.out, "infer-gm", cmd_gm, spec.seed);
      report_synthesis(s, gm_o.out, gm_o.stem);
    } else if (cmd_anf->parsed()) {
      if (anf_yin.f_min >= anf_yin.f_max) throw UsageError("--f-min must be below --f-max");
      std::vector<std::string> files;
      if (!anf_manifest.empty()) {
        for (const auto& e : load_manifest(anf_manifest)) files.push_back(e.path);
      }
      if (!anf_inputs.empty()) {
        const auto more = expand_inputs(anf_inputs, {".wav", ".mel"});
        files.insert(files.end(), more.begin(), more.end());
      }
      if (files.empty()) throw UsageError("give --input or --manifest");
      const MelConfig features;
      std::vector<std::pair<std::string, F0Contour>> contours;
      for (const auto& f : files) {
        const auto wave = fs::path(f).extension() == ".mel"
                              ? griffin_lim(load_mel_file(f, features.hop_seconds()), anf_gl, features, anf_seed).audio
                              : load_wav(f);
        contours.emplace_back(stem_of(f), yin_f0(wave, anf_yin));
      }
      write_f0_csv(anf_out, contours);
      write_run_record(anf_out, "analyze f0", cmd_anf, anf_seed);
      std::vector<F0Contour> all;
      for (const auto& [id, c] : contours) all.push_back(c);
      std::cout << contours.size() << " contours, F0-contour variance " << f0_contour_variance(all) << " Hz^2\n";
    } else if (cmd_and->parsed()) {
      const auto files = expand_inputs(and_inputs, {".mel"});
      const MelConfig features;
      std::vector<DurationRow> rows;
      std::map<double, std::vector<std::int64_t>> groups;
      for (const auto& f : files) {
        const auto mel = load_mel_file(f, features.hop_seconds());
        double sigma2 = and_sigma2.value_or(NAN);
        const auto prov = fs::path(f).replace_extension(".provenance.json");
        if (!and_sigma2 && fs::exists(prov)) {
          std::ifstream in(prov);
          sigma2 = json::parse(in).value("sigma2", NAN);
        }
        rows.push_back({stem_of(f), mel.seconds(), sigma2});
        groups[sigma2].push_back(mel.frames);
      }
      write_durations_csv(and_out, rows);
      write_run_record(and_out, "analyze durations", cmd_and, and_seed);
      for (const auto& [s2, frames] : groups) {
        const auto st = duration_stats(frames, features.hop_seconds());
        std::cout << "sigma2 " << s2 << ": n " << frames.size() << " mean " << st.mean << " s variance " << st.variance
                  << " s^2\n";
      }
    } else if (cmd_ana->parsed()) {
      const auto model = load_model(ana_ckpt);
      const auto cache = ana_cache.empty() ? MelCache::from_environment() : MelCache(ana_cache);
      const auto utts = prepare_utterances(load_manifest(ana_manifest), Vocabulary(), model.config().features, cache);
      std::vector<LabeledUtterance> labeled;
      for (const auto& u : utts) labeled.push_back({&u.mel, u.tokens, u.tokens.speaker});
      const auto report = assignment_report(model, labeled);
      write_assignments_csv(ana_out, report);
      write_run_record(ana_out, "analyze assignments", cmd_ana, ana_seed);
      for (std::size_t i = 0; i < report.speakers.size(); ++i) {
        std::cout << "speaker " << report.speakers[i] << ": dominant component " << report.dominant(i) << '\n';
      }
    } else if (cmd_anp->parsed()) {
      if (anp_durations.empty() && anp_f0.empty() && anp_assign.empty()) {
        throw UsageError("give at least one of --durations, --f0, --assignments");
      }
      fs::create_directories(anp_out);
      auto rows_of = [](const std::string& path) {
        auto lines = read_lines(path);
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 1; i < lines.size(); ++i) {
          if (!lines[i].empty()) rows.push_back(split(lines[i], ','));
        }
        return rows;
      };
      if (!anp_durations.empty()) {
        ScatterSeries s{"samples", {}};
        for (const auto& r : rows_of(anp_durations)) s.points.emplace_back(std::stod(r.at(2)), std::stod(r.at(1)));
        write_scatter_svg((fs::path(anp_out) / "durations.svg").string(), "Duration vs sigma2", "sigma2",
                          "seconds", {s});
      }
      if (!anp_f0.empty()) {
        std::map<std::string, ScatterSeries> by_id;
        for (const auto& r : rows_of(anp_f0)) {
          const double f0 = std::stod(r.at(2));
          if (f0 <= 0.0) continue;
          auto& s = by_id[r.at(0)];
          s.name = r.at(0);
          s.points.emplace_back(std::stod(r.at(1)), f0);
        }
        std::vector<ScatterSeries> series;
        for (auto& [id, s] : by_id) series.push_back(std::move(s));
        write_scatter_svg((fs::path(anp_out) / "f0.svg").string(), "F0 contours", "frame", "F0 (Hz)", series);
      }
      if (!anp_assign.empty()) {
        std::map<std::string, ScatterSeries> by_speaker;
        for (const auto& r : rows_of(anp_assign)) {
          auto& s = by_speaker[r.at(0)];
          s.name = "speaker " + r.at(0);
          s.points.emplace_back(std::stod(r.at(1)), std::stod(r.at(2)));
        }
        std::vector<ScatterSeries> series;
        for (auto& [id, s] : by_speaker) series.push_back(std::move(s));
        write_scatter_svg((fs::path(anp_out) / "assignments.svg").string(), "Mean responsibility per component",
                          "component", "mean responsibility", series);
      }
      write_run_record(anp_out, "analyze plots", cmd_anp, anp_seed);
      std::cout << "plots written to " << absolute(anp_out) << '\n';
    } else if (cmd_vf->parsed()) {
      for (const auto& item : split(vf_only, ',')) {
        if (item.empty()) continue;
        int id = 0;
        try {
          id = std::stoi(item);
        } catch (const std::exception&) {
          throw UsageError("--only: not a criterion id: " + item);
        }
        if (id < 1 || id > static_cast<int>(acceptance_names().size())) {
          throw UsageError("--only: criterion ids are 1.." + std::to_string(acceptance_names().size()));
        }
        vf.only.insert(id);
      }
      if (!vf_out.empty()) {
        fs::create_directories(vf_out);
        vf.output_dir = vf_out;
      }
      vf.progress = [](const std::string& msg) { std::cerr << "  " << msg << '\n'; };
      const auto results =
          run_acceptance(vf, [](const CheckResult& r) { std::cout << format_result(r) << std::endl; });
      std::size_t failed = 0;
      json report = json::array();
      for (const auto& r : results) {
        failed += r.passed ? 0 : 1;
        report.push_back({{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail},
                          {"seconds", r.seconds}});
      }
      if (!vf_out.empty()) {
        std::ofstream(fs::path(vf_out) / "verify.json") << report.dump(2) << '\n';
        write_run_record(vf_out, "verify", cmd_vf, vf.seed);
      }
      std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed\n";
      return failed == 0 ? EXIT_SUCCESS : kExitRuntime;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return EXIT_SUCCESS;
}
