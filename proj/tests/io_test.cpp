#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "probe.hpp"
#include "ssvp/io.hpp"
#include "test_util.hpp"

using namespace ssvp;
using namespace ssvp::testing;
namespace fs = std::filesystem;

namespace {

FeatureBundle sample_bundle(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return random_bundle(2, {3, 3}, 5, 4, rng, {4, 5});
}

/// Re-encodes a bundle after editing its header or payload in place.
std::string tamper(const std::string& bytes,
                   const std::function<void(nlohmann::json&, std::string&)>& edit) {
  io::RawFile raw = io::split_container(bytes, io::kBundleMagic, io::kBundleVersion);
  edit(raw.header, raw.payload);
  return io::join_container(io::kBundleMagic, io::kBundleVersion, raw.header, raw.payload);
}

nlohmann::json& entry(nlohmann::json& header, const std::string& name) {
  for (auto& e : header["tensors"]) {
    if (e["name"] == name) return e;
  }
  throw std::out_of_range(name);
}

io::Errc decode_error(const std::string& bytes) {
  try {
    io::decode_bundle(bytes);
  } catch (const io::FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return io::Errc::kIo;
}

io::SynthSpec small_spec() {
  io::SynthSpec s;
  s.n_categories = 2;
  s.samples_per_split = 10;
  s.grid = {5, 6};
  s.d_clip = 8;
  s.d_dino = 6;
  s.layers = 2;
  s.region_size = {1, 3};
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Bundle, RoundTripIsBitIdentical) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FeatureBundle b = sample_bundle(seed);
    const std::string bytes = io::encode_bundle(b);
    const FeatureBundle back = io::decode_bundle(bytes);
    EXPECT_EQ(back, b);
    EXPECT_EQ(io::encode_bundle(back), bytes);
  }
  FeatureBundle normal = sample_bundle();
  normal.label = 0;
  normal.gt_mask.reset();
  EXPECT_EQ(io::decode_bundle(io::encode_bundle(normal)), normal);
}

TEST(Bundle, FileRoundTrip) {
  TempDir dir("ssvp_io_bundle");
  const FeatureBundle b = sample_bundle();
  io::write_bundle(b, dir.path / "x" / "b.ssvpf");
  EXPECT_EQ(io::read_bundle(dir.path / "x" / "b.ssvpf"), b);
  try {
    io::read_bundle(dir.path / "missing.ssvpf");
    FAIL();
  } catch (const io::FormatError& e) {
    EXPECT_EQ(e.code(), io::Errc::kIo);
  }
}

TEST(Bundle, HeaderLayout) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  EXPECT_EQ(bytes.substr(0, 8), "SSVPFEAT");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  EXPECT_EQ(version, 1u);
  const auto raw = io::split_container(bytes, io::kBundleMagic, 1);
  EXPECT_EQ(raw.header["grid"], nlohmann::json({3, 3}));
  EXPECT_EQ(raw.header["label"], 1);
  EXPECT_EQ(raw.header["category"], "widget");
  EXPECT_EQ(raw.header["has_mask"], true);
  std::vector<std::string> names;
  for (const auto& e : raw.header["tensors"]) {
    names.push_back(e["name"]);
    EXPECT_EQ(e["dtype"], "f32");
  }
  EXPECT_EQ(names, (std::vector<std::string>{"clip_global", "clip_local_0", "clip_local_1", "dino_global",
                                             "dino_local_0", "dino_local_1", "gt_mask"}));
  // Payload starts with clip_global as little-endian f32.
  const FeatureBundle b = sample_bundle();
  float first = 0;
  std::memcpy(&first, raw.payload.data(), 4);
  EXPECT_EQ(first, b.clip_global.data[0]);
}

TEST(BundleErrors, BadMagic) {
  std::string bytes = io::encode_bundle(sample_bundle());
  bytes[0] = 'X';
  EXPECT_EQ(decode_error(bytes), io::Errc::kBadMagic);
  EXPECT_EQ(decode_error("SSVP"), io::Errc::kBadMagic);
  try {
    io::decode_bundle(bytes);
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(BundleErrors, VersionMismatch) {
  std::string bytes = io::encode_bundle(sample_bundle());
  bytes[8] = 2;
  EXPECT_EQ(decode_error(bytes), io::Errc::kVersionMismatch);
}

TEST(BundleErrors, Truncated) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  EXPECT_EQ(decode_error(bytes.substr(0, bytes.size() - 4)), io::Errc::kTruncated);
  EXPECT_EQ(decode_error(bytes.substr(0, 12)), io::Errc::kTruncated);
  EXPECT_EQ(decode_error(bytes.substr(0, 40)), io::Errc::kTruncated);
}

TEST(BundleErrors, TrailingBytesAndBadJson) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  EXPECT_EQ(decode_error(bytes + "xx"), io::Errc::kBadHeader);
  std::string broken = bytes;
  broken[16] = '[';
  EXPECT_EQ(decode_error(broken), io::Errc::kBadHeader);
  EXPECT_EQ(decode_error(tamper(bytes, [](auto& h, auto&) { h.erase("grid"); })), io::Errc::kBadHeader);
  EXPECT_EQ(decode_error(tamper(bytes, [](auto& h, auto&) { entry(h, "clip_global")["dtype"] = "f64"; })),
            io::Errc::kBadHeader);
}

TEST(BundleErrors, SpanMismatch) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  // A 3x3 shape over an 8-element span.
  const std::string bad = tamper(bytes, [](auto& h, auto&) {
    auto& e = entry(h, "gt_mask");
    e["shape"] = {3, 3};
    e["nbytes"] = 8 * 4;
  });
  EXPECT_EQ(decode_error(bad), io::Errc::kSpanMismatch);
}

TEST(BundleErrors, OffsetOutOfRange) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  const std::string bad = tamper(bytes, [](auto& h, auto& p) { entry(h, "gt_mask")["offset"] = p.size(); });
  EXPECT_EQ(decode_error(bad), io::Errc::kOffsetOutOfRange);
}

TEST(BundleErrors, Overlap) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  const std::string bad = tamper(bytes, [](auto& h, auto&) { entry(h, "dino_global")["offset"] = 4; });
  EXPECT_EQ(decode_error(bad), io::Errc::kOverlap);
}

TEST(BundleErrors, MissingAndUnexpectedTensors) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  const std::string missing = tamper(bytes, [](auto& h, auto&) { entry(h, "dino_local_1")["name"] = "dino_local_9"; });
  EXPECT_EQ(decode_error(missing), io::Errc::kMissingTensor);
  const std::string extra = tamper(bytes, [](auto& h, auto&) { h["layers"] = 1; });
  EXPECT_EQ(decode_error(extra), io::Errc::kUnexpectedTensor);
  const std::string dup = tamper(bytes, [](auto& h, auto&) { entry(h, "clip_local_1")["name"] = "clip_local_0"; });
  EXPECT_EQ(decode_error(dup), io::Errc::kBadHeader);
}

TEST(BundleErrors, InvalidContents) {
  const std::string bytes = io::encode_bundle(sample_bundle());
  EXPECT_EQ(decode_error(tamper(bytes, [](auto& h, auto&) { h["grid"] = {2, 2}; })), io::Errc::kInvalidBundle);
  FeatureBundle b = sample_bundle();
  b.dino_locals[0].shape = {8, 4};
  b.dino_locals[0].data.resize(32);
  try {
    io::encode_bundle(b);
    FAIL();
  } catch (const io::FormatError& e) {
    EXPECT_EQ(e.code(), io::Errc::kInvalidBundle);
  }
}

TEST(Synthetic, SpecValidation) {
  io::SynthSpec s = small_spec();
  s.anomaly_rate = 1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.region_size = {2, 6};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  const nlohmann::json j = s;
  const auto back = j.get<io::SynthSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Synthetic, ZeroRateIsAllNormal) {
  io::SynthSpec s = small_spec();
  s.anomaly_rate = 0.0;
  const auto ds = io::gen_synthetic(s);
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const auto& b : *split) {
      EXPECT_EQ(b.label, 0);
      ASSERT_TRUE(b.gt_mask);
      for (float v : b.gt_mask->data) EXPECT_EQ(v, 0.0f);
    }
  }
}

TEST(Synthetic, DeterministicFromSeed) {
  const auto a = io::gen_synthetic(small_spec());
  const auto b = io::gen_synthetic(small_spec());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  io::SynthSpec other = small_spec();
  other.seed = 8;
  EXPECT_NE(io::gen_synthetic(other).train, a.train);
}

TEST(Synthetic, LabelsMasksAndShapesConsistent) {
  const io::SynthSpec s = small_spec();
  const auto ds = io::gen_synthetic(s);
  EXPECT_EQ(ds.train.size(), 20u);
  EXPECT_EQ(ds.test.size(), 20u);
  for (const auto* split : {&ds.train, &ds.test}) {
    std::map<std::string, int> anomalous;
    for (const auto& b : *split) {
      EXPECT_NO_THROW(b.validate());
      EXPECT_EQ(b.grid, s.grid);
      EXPECT_EQ(b.layers(), s.layers);
      EXPECT_EQ(b.d_clip(), s.d_clip);
      EXPECT_EQ(b.d_dino(), s.d_dino);
      const bool any = std::any_of(b.gt_mask->data.begin(), b.gt_mask->data.end(), [](float v) { return v > 0.5f; });
      EXPECT_EQ(b.label == 1, any);
      anomalous[b.category] += b.label;
      for (const auto& t : b.clip_locals) {
        for (float v : t.data) EXPECT_TRUE(std::isfinite(v));
      }
      // Global token is the mean of the last layer's patch tokens.
      const auto& last = b.clip_locals.back();
      for (std::size_t k = 0; k < s.d_clip; ++k) {
        double mean = 0;
        for (std::size_t p = 0; p < b.tokens(); ++p) mean += last.data[p * s.d_clip + k];
        EXPECT_NEAR(b.clip_global.data[k], mean / b.tokens(), 1e-5);
      }
    }
    for (const auto& [cat, n] : anomalous) EXPECT_EQ(n, 5) << cat;
  }
}

TEST(Synthetic, AnomalyDirectionSeparatesPixels) {
  io::SynthSpec s;
  s.n_categories = 1;
  s.samples_per_split = 100;
  s.anomaly_offset = 1.0;
  const auto ds = io::gen_synthetic(s);
  EXPECT_GE(oracle::linear_probe_auroc(ds, 200), 0.99);
  double norm = 0;
  for (double v : ds.clip_direction.storage()) norm += v * v;
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(Dataset, ManifestAndFilters) {
  TempDir dir("ssvp_io_dataset");
  const io::SynthSpec s = small_spec();
  const auto ds = io::gen_synthetic(s);
  const io::Manifest written = io::write_dataset(ds, s, dir.path);
  const io::Manifest read = io::read_manifest(dir.path);
  ASSERT_EQ(read.entries.size(), 40u);
  EXPECT_EQ(nlohmann::json(read.spec), nlohmann::json(s));
  EXPECT_EQ(read.entries[0].path, "cat0/train/0000.ssvpf");
  EXPECT_TRUE(fs::exists(dir.path / "cat1" / "test" / "0009.ssvpf"));
  const auto test = io::load_dataset(dir.path, {"test", {}, {}});
  ASSERT_EQ(test.size(), 20u);
  EXPECT_EQ(test[0], ds.test[0]);
  const auto only = io::load_dataset(dir.path, {"", {"cat1"}, {}});
  EXPECT_EQ(only.size(), 20u);
  for (const auto& b : only) EXPECT_EQ(b.category, "cat1");
  const auto held = io::load_dataset(dir.path, {"train", {}, {"cat1"}});
  EXPECT_EQ(held.size(), 10u);
  for (const auto& b : held) EXPECT_EQ(b.category, "cat0");
  EXPECT_THROW(io::read_manifest(dir.path / "nowhere"), io::FormatError);
}

TEST(Heatmap, PgmBytes) {
  const std::string pgm = io::encode_pgm(Tensor({2, 2}, {0, 0.5, 0.5, 1}));
  const std::string head = "P5\n2 2\n255\n";
  ASSERT_EQ(pgm.substr(0, head.size()), head);
  const std::string body = pgm.substr(head.size());
  EXPECT_EQ(std::vector<unsigned char>(body.begin(), body.end()), (std::vector<unsigned char>{0, 128, 128, 255}));
  const std::string zeros = io::encode_pgm(Tensor({3, 4}, 0.0)).substr(std::string("P5\n4 3\n255\n").size());
  EXPECT_EQ(zeros, std::string(12, '\0'));
  const std::string full = io::encode_pgm(Tensor({3, 4}, 1.0)).substr(std::string("P5\n4 3\n255\n").size());
  EXPECT_EQ(full, std::string(12, '\xff'));
  EXPECT_THROW(io::encode_pgm(Tensor({1, 2}, {0.5, 1.01})), std::domain_error);
  EXPECT_THROW(io::encode_pgm(Tensor({1, 2}, {NAN, 0.0})), std::domain_error);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  SsvpModel model = grad_check_model(3);
  TrainConfig cfg;
  cfg.gamma = 0.25;
  const io::Checkpoint c = io::snapshot(model, cfg, 3, "1 2 3", "run.history.jsonl");
  const std::string bytes = io::encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 8), "SSVPCKPT");
  const io::Checkpoint back = io::decode_checkpoint(bytes);
  EXPECT_EQ(back, c);
  EXPECT_EQ(io::encode_checkpoint(back), bytes);

  TempDir dir("ssvp_io_ckpt");
  io::save_checkpoint(c, dir.path / "m.ckpt");
  EXPECT_EQ(io::load_checkpoint(dir.path / "m.ckpt"), c);

  const SsvpModel restored = io::restore_model(back);
  const auto a = model.parameters();
  const auto b = restored.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].value(), b[i].value()) << a[i].name();
  EXPECT_EQ(restored.static_prompts(), model.static_prompts());
}

TEST(Checkpoint, Errors) {
  SsvpModel model = grad_check_model(4);
  const io::Checkpoint c = io::snapshot(model, TrainConfig{}, 4, "", "");
  const std::string bytes = io::encode_checkpoint(c);
  auto code = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const io::FormatError& e) {
      return e.code();
    }
    return io::Errc::kIo;
  };
  EXPECT_EQ(code([&] { io::decode_checkpoint(io::encode_bundle(sample_bundle())); }), io::Errc::kBadMagic);
  EXPECT_EQ(code([&] { io::decode_checkpoint(bytes.substr(0, bytes.size() - 8)); }), io::Errc::kTruncated);

  ModelConfig bigger = c.model;
  bigger.d_k += 1;
  SsvpModel other(bigger, 4);
  EXPECT_EQ(code([&] { io::load_into(other, c); }), io::Errc::kDimMismatch);

  io::Checkpoint reshaped = c;
  reshaped.params[0].second = Tensor({1, 1}, 0.0);
  SsvpModel same(c.model, 4);
  EXPECT_EQ(code([&] { io::load_into(same, reshaped); }), io::Errc::kDimMismatch);
  // Nothing was resized on the failed load.
  EXPECT_EQ(same.parameters()[0].shape(), c.params[0].second.shape());
}
