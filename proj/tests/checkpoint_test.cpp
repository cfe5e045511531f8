#include <gtest/gtest.h>

#include <filesystem>

#include "twostream/checkpoint.hpp"

using namespace twostream;
namespace fs = std::filesystem;

namespace {

fs::path stem(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "twostream_ckpt" / name;
  fs::remove_all(dir);
  return dir / "model";
}

}  // namespace

TEST(Checkpoint, SaveLoadRoundTrip) {
  Checkpoint c;
  c.add("param", "a.w", {2, 3}, std::vector<float>{1, -2, 3.5f, 1e-7f, 0, 6});
  c.add("bn_mean", "a.bn", {2}, std::vector<double>{0.25, -1});
  c.meta["command"] = "train-slr";
  c.meta["words"] = "the did w01";
  const auto p = stem("rt");
  c.save(p);
  auto d = Checkpoint::load(p);
  EXPECT_EQ(d.meta, c.meta);
  ASSERT_EQ(d.entries.size(), 2u);
  EXPECT_EQ(d.find("param", "a.w")->values, c.find("param", "a.w")->values);
  EXPECT_EQ(d.find("param", "a.w")->shape, (Shape{2, 3}));
  EXPECT_EQ(d.names("bn_mean"), (std::vector<std::string>{"a.bn"}));
  const auto q = stem("rt2");
  d.save(q);
  EXPECT_EQ(read_file(p.string() + ".bin"), read_file(q.string() + ".bin"));
  EXPECT_EQ(read_file(p.string() + ".index"), read_file(q.string() + ".index"));
}

TEST(Checkpoint, CorruptBlobIsDetected) {
  Checkpoint c;
  c.add("param", "x", {1}, std::vector<float>{1});
  const auto p = stem("bad");
  c.save(p);
  std::string blob = read_file(p.string() + ".bin");
  blob[0] ^= 4;
  write_file(p.string() + ".bin", blob);
  EXPECT_THROW(Checkpoint::load(p), CorruptionError);
  write_file(p.string() + ".index", "something else\n");
  EXPECT_THROW(Checkpoint::load(p), CorruptionError);
}

TEST(LoadParams, ByNameWithReport) {
  ParamStore<float> src(1), dst(2);
  src.normal("shared", {2, 2}, 1.0);
  src.normal("only_src", {3}, 1.0);
  dst.normal("shared", {2, 2}, 1.0);
  dst.normal("only_dst", {1}, 1.0);
  src.norm_state("bn", 2)->running_mean = {0.5f, 1.5f};
  dst.norm_state("bn", 2);
  Checkpoint c;
  store_params(c, src);
  auto r = load_params(c, dst, false);
  EXPECT_EQ(r.loaded, (std::vector<std::string>{"shared"}));
  EXPECT_EQ(r.missing, (std::vector<std::string>{"only_dst"}));
  EXPECT_EQ(r.unexpected, (std::vector<std::string>{"only_src"}));
  EXPECT_EQ(dst.at("shared").values(), src.at("shared").values());
  EXPECT_EQ(dst.norms().at("bn").running_mean, (std::vector<float>{0.5f, 1.5f}));
  EXPECT_THROW(load_params(c, dst, true), ConfigError);
}

TEST(LoadParams, ShapeMismatchListsEveryParameter) {
  ParamStore<float> src(1), dst(2);
  src.normal("a", {2, 2}, 1.0);
  src.normal("b", {3}, 1.0);
  dst.normal("a", {2, 3}, 1.0);
  dst.normal("b", {4}, 1.0);
  Checkpoint c;
  store_params(c, src);
  try {
    load_params(c, dst, false);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("a (model"), std::string::npos);
    EXPECT_NE(m.find("b (model"), std::string::npos);
  }
}

TEST(Optimizer, MomentsRoundTrip) {
  ParamStore<float> ps(3);
  auto w = ps.normal("w", {4}, 1.0);
  AdamW<float> opt(0.01f);
  auto refs = ps.refs();
  for (int i = 0; i < 3; ++i) {
    zero_grads(refs);
    sum(mul(w, w)).backward();
    opt.step(refs, 0.1f);
  }
  Checkpoint c;
  store_optimizer(c, opt);
  AdamW<float> other(0.01f);
  restore_optimizer(c, other);
  EXPECT_EQ(other.steps(), 3);
  EXPECT_EQ(other.moments().at("w").m, opt.moments().at("w").m);
  EXPECT_EQ(other.moments().at("w").v, opt.moments().at("w").v);
}
