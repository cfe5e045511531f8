#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "twostream/train.hpp"
#include "twostream/verify.hpp"

#ifndef TWOSTREAM_CLI
#define TWOSTREAM_CLI "twostream"
#endif
#ifndef TWOSTREAM_DESK_CONFIG
#define TWOSTREAM_DESK_CONFIG "configs/desk.ini"
#endif

using namespace twostream;
namespace fs = std::filesystem;

namespace {

struct Context {
  std::string cli;
  std::string config;
  fs::path work;
  std::vector<int> seeds;
  int stream_epochs = 15;
  int fusion_epochs = 20;
  double fusion_lr = 2e-3;
  int g2t_epochs = 30;
  int slt_epochs = 20;
  int steps = 0;
};

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs one CLI command, output goes to a numbered log under work/logs.
void cli(Context& ctx, const std::string& args) {
  fs::create_directories(ctx.work / "logs");
  char name[32];
  std::snprintf(name, sizeof name, "%03d.txt", ctx.steps++);
  const fs::path log = ctx.work / "logs" / name;
  const std::string cmd = quote(ctx.cli) + " " + args + " > " + quote(log.string()) + " 2>&1";
  write_file(log.string() + ".cmd", cmd + "\n");
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed, see " + log.string() + ": " + args);
}

std::string run_args(const Context& ctx, const std::string& out, std::vector<std::string> sets) {
  std::string a = "--config " + quote(ctx.config) + " --overwrite --out " + quote((ctx.work / out).string());
  sets.insert(sets.begin(), "data.manifest=" + (ctx.work / "data" / kManifestName).string());
  for (const auto& s : sets) a += " --set " + quote(s);
  return a;
}

// Cell of the Dev row of a one-row report table.
double report_cell(const fs::path& report, const std::string& column) {
  const auto lines = split(read_file(report.string()), '\n');
  if (lines.size() < 2) throw std::runtime_error("short report " + report.string());
  const auto head = split(lines[0], '\t'), row = split(lines[1], '\t');
  for (std::size_t i = 0; i < head.size() && i < row.size(); ++i)
    if (head[i] == column) return std::stod(row[i]);
  throw std::runtime_error("no column " + column + " in " + report.string());
}

double eval_cell(Context& ctx, const std::string& ckpt, const std::string& task, const std::string& column,
                 const std::string& extra = "") {
  const fs::path report = ctx.work / "reports" / (ckpt + "." + task + ".tsv");
  fs::create_directories(report.parent_path());
  cli(ctx, "eval --ckpt " + quote((ctx.work / ckpt).string()) + " --task " + task + " --report " +
               quote(report.string()) + " " + extra);
  return report_cell(report, column);
}

const SuiteResult& suite(const std::vector<SuiteResult>& rs, const std::string& name) {
  for (const auto& r : rs)
    if (r.name == name) return r;
  throw std::runtime_error("missing suite " + name);
}

Outcome from_suite(const SuiteResult& r, double budget) {
  Outcome o;
  o.passed = r.passed && (budget <= 0 || r.seconds < budget);
  o.detail = r.detail + " seconds=" + fixed(r.seconds);
  return o;
}

void gen_data(Context& ctx) {
  cli(ctx, "gen-data --config " + quote(ctx.config) + " --overwrite --out " + quote((ctx.work / "data").string()));
}

Outcome dev_wer_from_scratch(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  cli(ctx, "train-slr --from-scratch " + run_args(ctx, "c6", {"train.seed=1", "train.epochs=40"}));
  const double secs = seconds_since(t0);
  const double wer = eval_cell(ctx, "c6", "slr", "Dev WER");
  return {wer < 10.0 && secs < 1800, "dev_wer=" + fixed(wer) + " epochs=40 seconds=" + fixed(secs, 0)};
}

std::string seed_dir(int seed, const std::string& what) { return "c7/s" + std::to_string(seed) + "/" + what; }

Outcome staged_trend(Context& ctx) {
  double sum[4] = {0, 0, 0, 0};
  std::string per_seed;
  for (int seed : ctx.seeds) {
    const std::string s = "train.seed=" + std::to_string(seed);
    const std::string e1 = "train.epochs=" + std::to_string(ctx.stream_epochs);
    const std::string e2 = "train.epochs=" + std::to_string(ctx.fusion_epochs), lr = "train.lr=" + fixed(ctx.fusion_lr, 6);
    for (const char* stream : {"video", "keypoint"})
      cli(ctx, std::string("pretrain-stream --stream ") + stream + " " + run_args(ctx, seed_dir(seed, stream), {s, e1}));
    const std::string init = " --video-ckpt " + quote((ctx.work / seed_dir(seed, "video")).string()) +
                             " --keypoint-ckpt " + quote((ctx.work / seed_dir(seed, "keypoint")).string()) + " ";
    cli(ctx, "train-slr" + init +
                 run_args(ctx, seed_dir(seed, "ensemble"),
                          {s, e2, lr, "model.spn=false", "model.joint_head=false", "model.lateral=none", "loss.w_dist=0"}));
    cli(ctx, "train-slr" + init + run_args(ctx, seed_dir(seed, "full"), {s, e2, lr}));
    double w[4];
    int i = 0;
    for (const char* what : {"video", "keypoint", "ensemble", "full"}) {
      w[i] = eval_cell(ctx, seed_dir(seed, what), "slr", "Dev WER");
      sum[i] += w[i];
      ++i;
    }
    per_seed += " s" + std::to_string(seed) + "=" + fixed(w[0]) + "/" + fixed(w[1]) + "/" + fixed(w[2]) + "/" + fixed(w[3]);
  }
  const double n = static_cast<double>(ctx.seeds.size());
  const double v = sum[0] / n, k = sum[1] / n, ens = sum[2] / n, full = sum[3] / n;
  Outcome o;
  o.passed = ens <= std::min(v, k) + 1.0 && full <= ens + 0.5;
  o.detail = "mean v=" + fixed(v) + " k=" + fixed(k) + " ensemble=" + fixed(ens) + " full=" + fixed(full) + per_seed;
  return o;
}

// Decodes every dev gloss sequence with one translator and with three
// copies of it as a multi-source ensemble.
int identical_ensemble_mismatches(const Context& ctx, int& checked) {
  const fs::path dir = ctx.work / "c8" / "g2t";
  const RunConfig cfg = run_config_from(Settings::load((dir / "config.ini").string()));
  auto c = Checkpoint::load(dir / "model");
  GlossTranslator<Real> g2t(cfg.corpus.vocab, cfg.translator, TextVocab(split_tokens(c.meta.at("words"))), cfg.train.seed);
  load_params(c, g2t.params(), true);
  const auto& tr = g2t.translator();
  int bad = 0;
  checked = 0;
  for (const auto& r : generate_corpus(cfg.corpus)) {
    if (r.split != "dev") continue;
    const auto m = g2t.memory(r.glosses);
    if (multi_source_beam_decode<Real>({&tr, &tr, &tr}, {m, m, m}, cfg.train.beam) != beam_decode(tr, m, cfg.train.beam))
      ++bad;
    ++checked;
  }
  return bad;
}

Outcome translation(Context& ctx) {
  const int seed = ctx.seeds.front();
  const std::string slr = (ctx.work / seed_dir(seed, "full")).string();
  cli(ctx, "pretrain-gloss2text " + run_args(ctx, "c8/g2t", {"train.epochs=" + std::to_string(ctx.g2t_epochs)}));
  const std::string g2t = quote((ctx.work / "c8" / "g2t").string());
  const double oracle =
      eval_cell(ctx, seed_dir(seed, "full"), "slt-sign2gloss2text", "Dev B4", "--oracle-glosses --g2t-ckpt " + g2t);
  cli(ctx, "train-slt --slr-ckpt " + quote(slr) + " --g2t-ckpt " + g2t + " " +
               run_args(ctx, "c8/slt", {"train.epochs=" + std::to_string(ctx.slt_epochs)}));
  const double s2t = eval_cell(ctx, "c8/slt", "slt-sign2text", "Dev B4");
  int checked = 0;
  const int bad = identical_ensemble_mismatches(ctx, checked);
  Outcome o;
  o.passed = s2t > 50 && oracle > 90 && bad == 0 && checked > 0;
  o.detail = "sign2text_dev_bleu4=" + fixed(s2t) + " oracle_gloss_dev_bleu4=" + fixed(oracle) +
             " identical_ensemble_mismatch=" + std::to_string(bad) + "/" + std::to_string(checked);
  return o;
}

std::string run_bytes(const fs::path& dir) {
  std::string all;
  for (const char* f : {"model.index", "model.bin", "train.log.tsv", "config.ini"}) all += read_file((dir / f).string());
  return all;
}

Outcome reproducible(Context& ctx) {
  std::string bytes[2];
  for (int i = 0; i < 2; ++i) {
    const std::string name = "c9/run" + std::to_string(i);
    cli(ctx, "train-slr --from-scratch " + run_args(ctx, name, {"train.seed=7", "train.epochs=3", "train.augment=true"}));
    cli(ctx, "pretrain-gloss2text " + run_args(ctx, name + "/g2t", {"train.seed=7", "train.epochs=2"}));
    eval_cell(ctx, name, "slr", "Dev WER");
    bytes[i] = run_bytes(ctx.work / name) + run_bytes(ctx.work / name / "g2t") +
               read_file((ctx.work / "reports" / (name + ".slr.tsv")).string());
  }
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  return {same, "bytes=" + std::to_string(bytes[0].size()) + (same ? " identical" : " differ")};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.cli = TWOSTREAM_CLI;
  ctx.config = TWOSTREAM_DESK_CONFIG;
  std::string work = (fs::temp_directory_path() / "twostream_acceptance").string();
  std::string only;
  ctx.seeds = {1, 2, 3};
  CLI::App app{"Runs the acceptance criteria and prints one line per criterion"};
  app.add_option("--cli", ctx.cli, "twostream executable");
  app.add_option("--config", ctx.config, "Desk configuration");
  app.add_option("--work", work, "Scratch directory, replaced on start");
  app.add_option("--seeds", ctx.seeds, "Seeds for the fusion trend")->delimiter(',');
  app.add_option("--only", only, "Comma separated criteria to run, e.g. 1,2,9");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  std::vector<bool> selected(10, only.empty());
  for (const auto& t : split(only, ',')) {
    const int n = std::atoi(t.c_str());
    if (n >= 1 && n <= 9) selected[n] = true;
  }

  std::vector<SuiteResult> suites;
  auto verify = [&]() -> const std::vector<SuiteResult>& {
    if (suites.empty()) suites = run_verify();
    return suites;
  };
  bool data_ready = false;
  auto need_data = [&] {
    if (!data_ready) gen_data(ctx);
    data_ready = true;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"ctc brute force", [&] { return from_suite(suite(verify(), "ctc-brute-force"), 60); }},
      {"gradient check", [&] { return from_suite(suite(verify(), "gradient-check"), 300); }},
      {"decode oracles", [&] { return from_suite(suite(verify(), "decode-oracles"), 0); }},
      {"heatmap closed form", [&] { return from_suite(suite(verify(), "heatmap-closed-form"), 0); }},
      {"metric goldens", [&] { return from_suite(suite(verify(), "metric-golden"), 0); }},
      {"desk learnability", [&] { need_data(); return dev_wer_from_scratch(ctx); }},
      {"fusion trend", [&] { need_data(); return staged_trend(ctx); }},
      {"translation", [&] {
         need_data();
         if (!fs::exists(ctx.work / seed_dir(ctx.seeds.front(), "full") / "model.index")) {
           auto keep = ctx.seeds;
           ctx.seeds = {keep.front()};
           staged_trend(ctx);
           ctx.seeds = keep;
         }
         return translation(ctx);
       }},
      {"reproducibility", [&] { need_data(); return reproducible(ctx); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i + 1]) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("criterion %zu\t%s\t%s\t%s\t(%.0fs)\n", i + 1, o.passed ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("overall\t%s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
