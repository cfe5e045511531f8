#include <gtest/gtest.h>

#include <filesystem>

#include "twostream/train.hpp"

using namespace twostream;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
  Settings s;
  for (const char* a : {"corpus.train=8", "corpus.dev=3", "corpus.test=2", "model.video_widths=4,4,6,6",
                        "model.keypoint_widths=4,4,6,6", "model.d_rep=6", "translator.layers=1", "translator.d_model=8",
                        "translator.heads=2", "translator.d_ff=8", "translator.max_len=8", "train.epochs=3",
                        "train.lr=0.003", "train.beam=2"})
    s.apply_override(a);
  return run_config_from(s);
}

Splits tiny_splits(const RunConfig& cfg) {
  Splits d;
  for (auto& r : generate_corpus(cfg.corpus)) (r.split == "train" ? d.train : r.split == "dev" ? d.dev : d.test).push_back(r);
  return d;
}

RunPaths run_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "twostream_train" / name;
  fs::remove_all(p);
  return {p};
}

std::string bytes_of(const RunPaths& p) {
  return read_file(p.stem().string() + ".index") + read_file(p.stem().string() + ".bin") + read_file(p.log());
}

std::map<std::string, std::vector<float>> snapshot(const ParamStore<float>& ps, const std::string& prefix) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& [name, t] : ps.tensors())
    if (name.rfind(prefix, 0) == 0) out[name] = t.values();
  return out;
}

}  // namespace

TEST(TrainSlr, RerunIsBitIdentical) {
  auto cfg = tiny_run();
  cfg.train.epochs = 2;
  const auto data = tiny_splits(cfg);
  std::string runs[2];
  for (int i = 0; i < 2; ++i) {
    auto p = run_dir("rerun" + std::to_string(i));
    TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
    TrainState st(cfg.train.weight_decay);
    train_slr_model(m, data, cfg, p, st, "train-slr");
    runs[i] = bytes_of(p);
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(TrainSlr, ResumeMatchesUninterruptedRun) {
  auto cfg = tiny_run();
  cfg.train.augment = true;
  const auto data = tiny_splits(cfg);
  auto a = run_dir("straight");
  {
    TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
    TrainState st(cfg.train.weight_decay);
    train_slr_model(m, data, cfg, a, st, "train-slr");
  }
  auto b = run_dir("resumed");
  {
    TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
    TrainState st(cfg.train.weight_decay);
    train_slr_model(m, data, cfg, b, st, "train-slr", 2);
    EXPECT_EQ(st.next_epoch, 2);
  }
  {
    TwoStreamModel<Real> m(cfg.model, cfg.train.seed + 99);
    TrainState st(cfg.train.weight_decay);
    auto c = Checkpoint::load(b.stem());
    load_params(c, m.params(), true);
    restore_state(c, st);
    EXPECT_EQ(st.next_epoch, 2);
    train_slr_model(m, data, cfg, b, st, "train-slr");
  }
  EXPECT_EQ(bytes_of(a), bytes_of(b));
}

TEST(TrainSlr, LogHasOneRowPerEpoch) {
  auto cfg = tiny_run();
  const auto data = tiny_splits(cfg);
  auto p = run_dir("log");
  TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  train_slr_model(m, data, cfg, p, st, "train-slr");
  auto lines = split(read_file(p.log()), '\n');
  ASSERT_GE(lines.size(), 4u);
  EXPECT_EQ(split(lines[0], '\t'), log_columns());
  for (int e = 0; e < 3; ++e) {
    auto f = split(lines[e + 1], '\t');
    ASSERT_EQ(f.size(), log_columns().size());
    EXPECT_EQ(f[0], std::to_string(e));
    EXPECT_NE(f[11], "");
  }
}

TEST(TrainSlr, BlockOneFrozenByConfig) {
  auto cfg = tiny_run();
  cfg.train.epochs = 1;
  const auto data = tiny_splits(cfg);
  TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
  const auto before = snapshot(m.params(), "video.block1."), head = snapshot(m.params(), "video.head");
  TrainState st(cfg.train.weight_decay);
  train_slr_model(m, data, cfg, {}, st, "train-slr");
  EXPECT_FALSE(before.empty());
  EXPECT_EQ(snapshot(m.params(), "video.block1."), before);
  EXPECT_NE(snapshot(m.params(), "video.head"), head);
}

TEST(PretrainStream, CheckpointHasNoPyramidLateralOrJointHead) {
  auto cfg = tiny_run();
  cfg.train.epochs = 1;
  cfg.model = stream_only(cfg.model, "keypoint");
  const auto data = tiny_splits(cfg);
  auto p = run_dir("stream");
  TwoStreamModel<Real> m(cfg.model, cfg.train.seed);
  TrainState st(cfg.train.weight_decay);
  train_slr_model(m, data, cfg, p, st, "pretrain-stream");
  auto c = Checkpoint::load(p.stem());
  ASSERT_FALSE(c.names("param").empty());
  for (const auto& n : c.names("param")) {
    EXPECT_EQ(n.rfind("keypoint.", 0), 0u) << n;
    EXPECT_EQ(n.find("spn"), std::string::npos) << n;
  }
  EXPECT_THROW(stream_only(cfg.model, "audio"), ConfigError);
}

TEST(TrainSlt, BackboneStaysFixed) {
  auto cfg = tiny_run();
  cfg.train.epochs = 1;
  const auto data = tiny_splits(cfg);
  SltModel<Real> slt(cfg.model, cfg.translator, TextVocab(text_words(cfg.corpus.vocab, cfg.corpus.grammar)), 3);
  std::map<std::string, std::vector<float>> backbone;
  for (const auto& pre : backbone_prefixes())
    for (auto& kv : snapshot(slt.slr().params(), pre)) backbone.insert(kv);
  const auto heads = snapshot(slt.slr().params(), "joint."), translators = snapshot(slt.params(), "slt.");
  TrainState st(cfg.train.weight_decay);
  auto p = run_dir("slt");
  train_slt_model(slt, data, cfg, p, st);
  for (const auto& [name, v] : backbone) EXPECT_EQ(slt.slr().params().at(name).values(), v) << name;
  EXPECT_NE(snapshot(slt.slr().params(), "joint."), heads);
  EXPECT_NE(snapshot(slt.params(), "slt."), translators);
  auto row = split(split(read_file(p.log()), '\n')[1], '\t');
  EXPECT_NE(std::stod(row[9]), 0.0);  // translation
  EXPECT_NE(std::stod(row[8]), 0.0);  // slr
  EXPECT_NEAR(std::stod(row[10]), std::stod(row[8]) + std::stod(row[9]), 1e-3 * std::stod(row[10]));
}

TEST(Reports, TableLayouts) {
  EXPECT_EQ(slr_report("X", 12.345, 0), "Method\tDev WER\tTest WER\nX\t12.35\t0.00\n");
  TextScores s;
  s.rouge = 50;
  s.bleu.b = {1, 2, 3, 4};
  const auto r = slt_report("Y", s, s);
  EXPECT_EQ(split(r, '\n')[0], "Method\tDev R\tDev B1\tDev B2\tDev B3\tDev B4\tTest R\tTest B1\tTest B2\tTest B3\tTest B4");
  EXPECT_EQ(split(r, '\n')[1], "Y\t50.00\t1.00\t2.00\t3.00\t4.00\t50.00\t1.00\t2.00\t3.00\t4.00");
}
