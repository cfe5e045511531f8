#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "twostream/train.hpp"
#include "twostream/verify.hpp"

using namespace twostream;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool overwrite = false;
  bool resume = false;
  int stop_after = -1;

  std::string stream = "video";
  std::string video_ckpt, keypoint_ckpt, slr_ckpt, g2t_ckpt, ckpt;
  bool from_scratch = false;
  std::string task = "slr";
  std::string split = "dev";
  std::string name = "TwoStream";
  std::string report;
  bool oracle_glosses = false;
  bool inject_fault = false;
};

// Relative checkpoint and output paths live under TWOSTREAM_CKPT_ROOT when set.
fs::path under_root(const std::string& p) {
  fs::path path(p);
  const char* root = std::getenv("TWOSTREAM_CKPT_ROOT");
  if (path.is_relative() && root && *root) return fs::path(root) / path;
  return path;
}

// A checkpoint is named by its run directory or by its stem.
fs::path checkpoint_stem(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("--") + what + " is required");
  fs::path path = under_root(p);
  if (fs::is_directory(path)) path /= "model";
  const auto ext = path.extension();
  if (ext == ".index" || ext == ".bin") path.replace_extension();
  if (!Checkpoint::exists(path)) throw ConfigError(std::string(what) + ": no checkpoint at " + path.string());
  return path;
}

Settings read_settings(const Options& o, const std::string& fallback_config = "") {
  const std::string file = o.config.empty() ? fallback_config : o.config;
  Settings s = file.empty() ? Settings{} : Settings::load(file);
  for (const auto& a : o.sets) s.apply_override(a);
  return s;
}

std::string effective_config(const std::string& command, const RunConfig& cfg) {
  return "# " + command + "\n" + settings_text(cfg.to_settings());
}

// Checks the output directory, honoring --overwrite and --resume, and writes
// the effective configuration into it.
RunPaths prepare_run(const Options& o, const std::string& command, const RunConfig& cfg) {
  if (o.out.empty()) throw ConfigError("--out is required");
  if (o.overwrite && o.resume) throw ConfigError("--overwrite and --resume exclude each other");
  RunPaths p{under_root(o.out)};
  const bool occupied = Checkpoint::exists(p.stem()) || fs::exists(p.log());
  const std::string text = effective_config(command, cfg);
  if (o.resume) {
    if (!Checkpoint::exists(p.stem())) throw ConfigError("--resume: no checkpoint in " + p.dir.string());
    if (fs::exists(p.config()) && read_file(p.config()) != text)
      throw ConfigError("--resume: configuration differs from " + p.config().string());
  } else if (occupied) {
    if (!o.overwrite) throw ConfigError(p.dir.string() + " already holds a run; pass --overwrite or --resume");
    for (const char* f : {"model.index", "model.bin", "train.log.tsv", "config.ini", "report.tsv"})
      fs::remove(p.dir / f);
  }
  write_file(p.config(), text);
  return p;
}

Dataset open_dataset(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("data.manifest is not set");
  const fs::path m = cfg.manifest;
  if (!fs::exists(m)) throw ConfigError("data.manifest: no such file " + m.string());
  Dataset ds(m);
  if (ds.vocab() != cfg.corpus.vocab)
    throw ConfigError("corpus.vocab is " + std::to_string(cfg.corpus.vocab) + " but the dataset has " +
                      std::to_string(ds.vocab()) + " glosses");
  return ds;
}

Splits open_splits(const Dataset& ds, const RunConfig& cfg) {
  Splits s = load_splits(ds);
  for (const auto* part : {&s.train, &s.dev, &s.test})
    for (const auto& r : *part) {
      if (r.keypoints.keypoints != cfg.model.keypoint.in_channels)
        throw ConfigError("dataset has " + std::to_string(r.keypoints.keypoints) + " keypoints, config expects " +
                          std::to_string(cfg.model.keypoint.in_channels));
      if (r.video.height != cfg.model.video.height || r.video.width != cfg.model.video.width)
        throw ConfigError("dataset video extent differs from corpus.video_size");
      break;
    }
  return s;
}

void require_signature(const Checkpoint& c, const ModelConfig& m, const std::string& what) {
  auto it = c.meta.find("model");
  if (it == c.meta.end() || it->second != model_signature(m))
    throw ConfigError(what + ": checkpoint model (" + (it == c.meta.end() ? "none" : it->second) +
                      ") does not match the configured model (" + model_signature(m) + ")");
}

void require_command(const Checkpoint& c, const std::vector<std::string>& allowed, const std::string& what) {
  auto it = c.meta.find("command");
  const std::string got = it == c.meta.end() ? "" : it->second;
  for (const auto& a : allowed)
    if (a == got) return;
  throw ConfigError(what + ": checkpoint was written by '" + got + "'");
}

template <typename S>
void resume_into(const RunPaths& p, ParamStore<S>& ps, TrainState& st, const std::string& command) {
  auto c = Checkpoint::load(p.stem());
  require_command(c, {command}, "--resume");
  load_params(c, ps, true);
  restore_state(c, st);
  std::fprintf(stderr, "resuming at epoch %d\n", st.next_epoch);
}

void print_load(const std::string& what, const LoadReport& r) {
  std::fprintf(stderr, "%s: loaded %zu tensors, %zu fresh, %zu ignored\n", what.c_str(), r.loaded.size(), r.missing.size(),
               r.unexpected.size());
  for (const auto& u : r.unexpected) std::fprintf(stderr, "  ignored %s\n", u.c_str());
}

TextVocab vocab_from_meta(const Checkpoint& c) {
  auto it = c.meta.find("words");
  if (it == c.meta.end()) throw ConfigError("checkpoint has no text vocabulary");
  return TextVocab(split_tokens(it->second));
}

std::unique_ptr<GlossTranslator<Real>> load_gloss_translator(const std::string& path, const RunConfig& cfg) {
  auto c = Checkpoint::load(checkpoint_stem(path, "g2t-ckpt"));
  require_command(c, {"pretrain-gloss2text"}, "--g2t-ckpt");
  auto gv = c.meta.find("gloss_vocab");
  if (gv == c.meta.end() || std::stoi(gv->second) != cfg.corpus.vocab)
    throw ConfigError("--g2t-ckpt: gloss vocabulary differs from corpus.vocab");
  auto g2t = std::make_unique<GlossTranslator<Real>>(cfg.corpus.vocab, cfg.translator, vocab_from_meta(c), cfg.train.seed);
  load_params(c, g2t->params(), true);
  return g2t;
}

void emit_report(const Options& o, const std::string& text) {
  std::fputs(text.c_str(), stdout);
  if (!o.report.empty()) write_file(under_root(o.report), text);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o));
  fs::path dir = o.out.empty() ? fs::path(cfg.manifest).parent_path() : fs::path(o.out);
  if (dir.empty()) throw ConfigError("gen-data needs --out or data.manifest");
  if (fs::exists(dir / kManifestName) && !o.overwrite)
    throw ConfigError((dir / kManifestName).string() + " exists; pass --overwrite");
  const std::string d = write_corpus(cfg.corpus, dir);
  std::printf("manifest %s\ndigest %s\n", (dir / kManifestName).string().c_str(), d.c_str());
  return 0;
}

int cmd_pretrain_stream(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o));
  cfg.model = stream_only(cfg.model, o.stream);
  const auto ds = open_dataset(cfg);
  const auto paths = prepare_run(o, "pretrain-stream", cfg);
  const auto data = open_splits(ds, cfg);
  TwoStreamModel<Real> model(cfg.model, cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  if (o.resume) resume_into(paths, model.params(), st, "pretrain-stream");
  const double w = train_slr_model(model, data, cfg, paths, st, "pretrain-stream", o.stop_after);
  std::printf("dev WER %s\n", fixed2(w).c_str());
  return 0;
}

int cmd_train_slr(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o));
  const auto ds = open_dataset(cfg);
  const auto paths = prepare_run(o, "train-slr", cfg);
  const auto data = open_splits(ds, cfg);
  TwoStreamModel<Real> model(cfg.model, cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  if (o.resume) {
    resume_into(paths, model.params(), st, "train-slr");
  } else if (!o.from_scratch) {
    const std::vector<std::pair<std::string, std::string>> inits{{"video", o.video_ckpt}, {"keypoint", o.keypoint_ckpt}};
    for (const auto& [stream, path] : inits) {
      if (stream == "video" ? !cfg.model.use_video : !cfg.model.use_keypoint) continue;
      auto c = Checkpoint::load(checkpoint_stem(path, (stream + "-ckpt").c_str()));
      require_command(c, {"pretrain-stream"}, "--" + stream + "-ckpt");
      require_signature(c, stream_only(cfg.model, stream), "--" + stream + "-ckpt");
      print_load(stream + " init", load_params(c, model.params(), false));
    }
  }
  const double w = train_slr_model(model, data, cfg, paths, st, "train-slr", o.stop_after);
  std::printf("dev WER %s\n", fixed2(w).c_str());
  return 0;
}

int cmd_pretrain_g2t(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o));
  const auto ds = open_dataset(cfg);
  const auto paths = prepare_run(o, "pretrain-gloss2text", cfg);
  const auto data = open_splits(ds, cfg);
  GlossTranslator<Real> g2t(cfg.corpus.vocab, cfg.translator, corpus_vocab(ds), cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  if (o.resume) resume_into(paths, g2t.params(), st, "pretrain-gloss2text");
  const double b = train_gloss_translator(g2t, data, cfg, paths, st, o.stop_after);
  std::printf("dev BLEU-4 %s\n", fixed2(b).c_str());
  return 0;
}

int cmd_train_slt(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o));
  const auto ds = open_dataset(cfg);
  const auto paths = prepare_run(o, "train-slt", cfg);
  const auto data = open_splits(ds, cfg);
  SltModel<Real> slt(cfg.model, cfg.translator, corpus_vocab(ds), cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  if (o.resume) {
    auto c = Checkpoint::load(paths.stem());
    require_command(c, {"train-slt"}, "--resume");
    load_params(c, slt.slr().params(), false);
    load_params(c, slt.params(), false);
    restore_state(c, st);
  } else {
    auto c = Checkpoint::load(checkpoint_stem(o.slr_ckpt, "slr-ckpt"));
    require_command(c, {"train-slr", "pretrain-stream"}, "--slr-ckpt");
    require_signature(c, cfg.model, "--slr-ckpt");
    load_params(c, slt.slr().params(), true);
    if (!o.g2t_ckpt.empty())
      std::fprintf(stderr, "translators from gloss2text: %d tensors\n",
                   init_from_gloss_translator(slt, *load_gloss_translator(o.g2t_ckpt, cfg)));
  }
  const double b = train_slt_model(slt, data, cfg, paths, st, o.stop_after);
  std::printf("dev BLEU-4 %s\n", fixed2(b).c_str());
  return 0;
}

// Loads whatever the task needs from the checkpoint and returns one
// hypothesis per record, as tokens.
struct Predictor {
  std::unique_ptr<TwoStreamModel<Real>> slr;
  std::unique_ptr<SltModel<Real>> slt;
  std::unique_ptr<GlossTranslator<Real>> g2t;
  std::string task;
  bool oracle = false;

  Tokens operator()(const SampleRecord& r, const RunConfig& cfg, const Dataset& ds) const {
    if (task == "slr") {
      Tokens out;
      for (int g : slr_predict(*slr, make_input(r, cfg.heatmap, cfg.model), cfg.train.beam))
        out.push_back(ds.gloss_names().at(g));
      return out;
    }
    if (task == "slt-sign2text") return slt->translate(make_input(r, cfg.heatmap, cfg.model), cfg.train.beam);
    if (oracle) return g2t->translate(r.glosses, cfg.train.beam);
    return sign2gloss2text(*slr, *g2t, make_input(r, cfg.heatmap, cfg.model), cfg.train.beam);
  }

  Tokens reference(const SampleRecord& r, const Dataset& ds) const {
    if (task != "slr") return r.text;
    Tokens out;
    for (int g : r.glosses) out.push_back(ds.gloss_names().at(g));
    return out;
  }
};

Predictor make_predictor(const Options& o, const RunConfig& cfg, const Dataset& ds) {
  Predictor p;
  p.task = o.task;
  p.oracle = o.oracle_glosses;
  if (o.task == "slr" || (o.task == "slt-sign2gloss2text" && !o.oracle_glosses)) {
    auto c = Checkpoint::load(checkpoint_stem(o.ckpt, "ckpt"));
    require_command(c, {"pretrain-stream", "train-slr", "train-slt"}, "--ckpt");
    require_signature(c, cfg.model, "--ckpt");
    p.slr = std::make_unique<TwoStreamModel<Real>>(cfg.model, cfg.train.seed);
    load_params(c, p.slr->params(), c.meta.at("command") != "train-slt");
  } else if (o.task == "slt-sign2text") {
    auto c = Checkpoint::load(checkpoint_stem(o.ckpt, "ckpt"));
    require_command(c, {"train-slt"}, "--ckpt");
    require_signature(c, cfg.model, "--ckpt");
    p.slt = std::make_unique<SltModel<Real>>(cfg.model, cfg.translator, vocab_from_meta(c), cfg.train.seed);
    load_params(c, p.slt->slr().params(), false);
    auto r = load_params(c, p.slt->params(), false);
    if (!r.missing.empty()) throw ConfigError("--ckpt lacks translator parameter " + r.missing.front());
  } else if (o.task != "slt-sign2gloss2text") {
    throw ConfigError("unknown task '" + o.task + "'");
  }
  if (o.task == "slt-sign2gloss2text") {
    if (o.g2t_ckpt.empty()) throw ConfigError("slt-sign2gloss2text needs --g2t-ckpt");
    p.g2t = load_gloss_translator(o.g2t_ckpt, cfg);
    if (!(p.g2t->vocab() == corpus_vocab(ds))) throw ConfigError("--g2t-ckpt vocabulary differs from the dataset");
  }
  return p;
}

std::string default_config(const Options& o) {
  if (!o.config.empty() || o.ckpt.empty()) return "";
  fs::path path = under_root(o.ckpt);
  fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  return fs::exists(dir / "config.ini") ? (dir / "config.ini").string() : "";
}

int cmd_eval(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o, default_config(o)));
  const auto ds = open_dataset(cfg);
  const auto p = make_predictor(o, cfg, ds);
  std::vector<Tokens> refs[2], hyps[2];
  const char* names[2] = {"dev", "test"};
  for (int s = 0; s < 2; ++s)
    for (const auto& r : ds.load_split(names[s])) {
      refs[s].push_back(p.reference(r, ds));
      hyps[s].push_back(p(r, cfg, ds));
    }
  auto safe_wer = [](const std::vector<Tokens>& r, const std::vector<Tokens>& h) { return r.empty() ? 0.0 : corpus_wer(r, h); };
  if (o.task == "slr")
    emit_report(o, slr_report(o.name, safe_wer(refs[0], hyps[0]), safe_wer(refs[1], hyps[1])));
  else
    emit_report(o, slt_report(o.name, score_text(refs[0], hyps[0]), score_text(refs[1], hyps[1])));
  return 0;
}

int cmd_decode(const Options& o) {
  RunConfig cfg = run_config_from(read_settings(o, default_config(o)));
  const auto ds = open_dataset(cfg);
  const auto p = make_predictor(o, cfg, ds);
  std::string out = "id\thypothesis\treference\n";
  for (const auto& r : ds.load_split(o.split))
    out += r.id + "\t" + join(p(r, cfg, ds)) + "\t" + join(p.reference(r, ds)) + "\n";
  emit_report(o, out);
  return 0;
}

int cmd_verify(const Options& o) {
  VerifyOptions v;
  if (o.inject_fault) v.ctc_skip_log_weight = -0.5;
  const auto results = run_verify(v);
  emit_report(o, verify_summary(results));
  for (const auto& r : results)
    if (!r.passed) return 1;
  return 0;
}

void add_config(CLI::App* c, Options& o) {
  c->add_option("--config", o.config, "INI configuration file");
  c->add_option("--set", o.sets, "Override one setting, section.key=value")->take_all();
}

void add_run(CLI::App* c, Options& o) {
  add_config(c, o);
  c->add_option("--out", o.out, "Run directory");
  c->add_flag("--overwrite", o.overwrite, "Replace an existing run in --out");
  c->add_flag("--resume", o.resume, "Continue the run in --out from its last checkpoint");
  c->add_option("--stop-after", o.stop_after, "Stop before this epoch");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TwoStream sign recognition and translation at desk scale"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  add_config(gen, o);
  gen->add_option("--out", o.out, "Corpus directory (default: directory of data.manifest)");
  gen->add_flag("--overwrite", o.overwrite, "Replace an existing corpus");

  auto* pre = app.add_subcommand("pretrain-stream", "Train one stream with a single CTC loss");
  add_run(pre, o);
  pre->add_option("--stream", o.stream, "video or keypoint")->check(CLI::IsMember({"video", "keypoint"}));

  auto* slr = app.add_subcommand("train-slr", "Train the two-stream recognizer");
  add_run(slr, o);
  slr->add_option("--video-ckpt", o.video_ckpt, "Pretrained video stream");
  slr->add_option("--keypoint-ckpt", o.keypoint_ckpt, "Pretrained keypoint stream");
  slr->add_flag("--from-scratch", o.from_scratch, "Skip stream initialization");

  auto* g2t = app.add_subcommand("pretrain-gloss2text", "Train a gloss-to-text translator");
  add_run(g2t, o);

  auto* slt = app.add_subcommand("train-slt", "Train translators on a recognizer");
  add_run(slt, o);
  slt->add_option("--slr-ckpt", o.slr_ckpt, "Recognizer checkpoint");
  slt->add_option("--g2t-ckpt", o.g2t_ckpt, "Gloss-to-text checkpoint for translator init");

  const std::vector<std::string> tasks{"slr", "slt-sign2text", "slt-sign2gloss2text"};
  auto* ev = app.add_subcommand("eval", "Score dev and test");
  auto* dec = app.add_subcommand("decode", "Write hypotheses for one split");
  for (auto* c : {ev, dec}) {
    add_config(c, o);
    c->add_option("--ckpt", o.ckpt, "Checkpoint directory or stem");
    c->add_option("--task", o.task, "slr, slt-sign2text or slt-sign2gloss2text")->check(CLI::IsMember(tasks));
    c->add_option("--g2t-ckpt", o.g2t_ckpt, "Gloss-to-text checkpoint");
    c->add_flag("--oracle-glosses", o.oracle_glosses, "Feed reference glosses to the gloss translator");
    c->add_option("--report", o.report, "Also write the output to this file");
  }
  ev->add_option("--name", o.name, "Method column");
  dec->add_option("--split", o.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));

  auto* ver = app.add_subcommand("verify", "Run the oracle suites");
  ver->add_flag("--inject-fault", o.inject_fault, "Perturb the CTC skip transition");
  ver->add_option("--report", o.report, "Also write the summary to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*pre) return cmd_pretrain_stream(o);
    if (*slr) return cmd_train_slr(o);
    if (*g2t) return cmd_pretrain_g2t(o);
    if (*slt) return cmd_train_slt(o);
    if (*ev) return cmd_eval(o);
    if (*dec) return cmd_decode(o);
    if (*ver) return cmd_verify(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
