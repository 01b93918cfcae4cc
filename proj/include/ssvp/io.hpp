#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssvp/feature_bundle.hpp"
#include "ssvp/model.hpp"
#include "ssvp/objective.hpp"

namespace ssvp::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kBundleMagic[9] = "SSVPFEAT";
inline constexpr char kCheckpointMagic[9] = "SSVPCKPT";

enum class Errc {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kBadHeader,
  kSpanMismatch,
  kOffsetOutOfRange,
  kOverlap,
  kMissingTensor,
  kUnexpectedTensor,
  kInvalidBundle,
  kDimMismatch,
};

const char* errc_name(Errc c);

/// Any failure to read or write one of the on-disk formats.
class FormatError : public std::runtime_error {
 public:
  FormatError(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// Feature bundles. Layout: magic, u32 version, u32 header length, JSON
// header, then little-endian f32 payload addressed by the header offsets.
std::string encode_bundle(const FeatureBundle& b);
FeatureBundle decode_bundle(const std::string& bytes);
void write_bundle(const FeatureBundle& b, const fs::path& path);
FeatureBundle read_bundle(const fs::path& path);

/// Parsed container shared by both formats (exposed for tests that corrupt
/// headers deliberately).
struct RawFile {
  std::uint32_t version = 0;
  nlohmann::json header;
  std::string payload;
};
RawFile split_container(const std::string& bytes, const char* magic, std::uint32_t version);
std::string join_container(const char* magic, std::uint32_t version, const nlohmann::json& header,
                           const std::string& payload);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, nc::Tensor>> params;
  std::vector<nc::Tensor> static_prompts;
  std::string rng_state;
  std::string loss_history;  // path of the JSONL history written next to it

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint snapshot(const SsvpModel& model, const TrainConfig& train, std::uint64_t seed,
                    std::string rng_state, std::string loss_history);
std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

/// Copies checkpoint tensors into `model`. Any config or shape difference is
/// kDimMismatch; nothing is resized.
void load_into(SsvpModel& model, const Checkpoint& c);
SsvpModel restore_model(const Checkpoint& c);

struct SynthSpec {
  std::size_t n_categories = 3;
  std::size_t samples_per_split = 60;
  double anomaly_rate = 0.5;
  Grid grid{12, 12};
  std::size_t d_clip = 64;
  std::size_t d_dino = 96;
  std::size_t layers = 2;
  double anomaly_offset = 1.0;
  std::pair<std::size_t, std::size_t> region_size{2, 4};  // side length, inclusive
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct SynthDataset {
  std::vector<FeatureBundle> train;
  std::vector<FeatureBundle> test;
  nc::Tensor clip_direction;  // unit anomaly direction, [d_clip]
  nc::Tensor dino_direction;  // [d_dino]
};

SynthDataset gen_synthetic(const SynthSpec& spec);

/// One entry per bundle file, relative to the dataset root.
struct ManifestEntry {
  std::string path;
  std::string category;
  std::string split;
  int label = 0;
};

struct Manifest {
  SynthSpec spec;
  std::vector<ManifestEntry> entries;
};

/// Writes <dir>/<category>/<split>/<index>.ssvpf plus <dir>/manifest.json.
Manifest write_dataset(const SynthDataset& ds, const SynthSpec& spec, const fs::path& dir);
Manifest read_manifest(const fs::path& dir);

struct DatasetFilter {
  std::string split;                   // empty: any
  std::vector<std::string> include;    // empty: all categories
  std::vector<std::string> exclude;
};

std::vector<FeatureBundle> load_dataset(const fs::path& dir, const DatasetFilter& filter);

/// Binary PGM, one byte per pixel, value floor(255 p + 0.5).
std::string encode_pgm(const nc::Tensor& p);
void write_heatmap(const nc::Tensor& p, const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace ssvp::io
