#include "container.hpp"

namespace ssvp::io {

namespace {

void put(nlohmann::json& table, std::string& payload, const std::string& name, const F32Tensor& t) {
  detail::append_tensor(table, payload, name, t.shape, t.data.data(), t.data.size(), "f32");
}

}  // namespace

std::string encode_bundle(const FeatureBundle& b) {
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(Errc::kInvalidBundle, e.what());
  }
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  put(table, payload, "clip_global", b.clip_global);
  for (std::size_t l = 0; l < b.layers(); ++l) {
    put(table, payload, "clip_local_" + std::to_string(l), b.clip_locals[l]);
  }
  put(table, payload, "dino_global", b.dino_global);
  for (std::size_t l = 0; l < b.layers(); ++l) {
    put(table, payload, "dino_local_" + std::to_string(l), b.dino_locals[l]);
  }
  if (b.gt_mask) put(table, payload, "gt_mask", *b.gt_mask);

  nlohmann::json header = {
      {"tensors", table},
      {"grid", {b.grid.h, b.grid.w}},
      {"label", b.label},
      {"category", b.category},
      {"source_id", b.source_id},
      {"has_mask", b.gt_mask.has_value()},
      {"layers", b.layers()},
      {"d_clip", b.d_clip()},
      {"d_dino", b.d_dino()},
      {"payload_bytes", payload.size()},
  };
  return join_container(kBundleMagic, kBundleVersion, header, payload);
}

FeatureBundle decode_bundle(const std::string& bytes) {
  const RawFile raw = split_container(bytes, kBundleMagic, kBundleVersion);
  const auto table = detail::tensor_table(raw.header, raw.payload, "f32", sizeof(float));

  FeatureBundle b;
  std::size_t layers = 0;
  bool has_mask = false;
  try {
    const auto grid = raw.header.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 2) throw FormatError(Errc::kBadHeader, "grid must have two entries");
    b.grid = {grid[0], grid[1]};
    b.label = raw.header.at("label").get<int>();
    b.category = raw.header.at("category").get<std::string>();
    b.source_id = raw.header.value("source_id", std::string());
    has_mask = raw.header.at("has_mask").get<bool>();
    layers = raw.header.at("layers").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Errc::kBadHeader, e.what());
  }

  std::size_t used = 0;
  auto take = [&](const std::string& name) {
    const auto it = table.find(name);
    if (it == table.end()) throw FormatError(Errc::kMissingTensor, "'" + name + "'");
    ++used;
    return F32Tensor{it->second.shape, detail::extract<float>(raw.payload, it->second)};
  };
  b.clip_global = take("clip_global");
  b.dino_global = take("dino_global");
  for (std::size_t l = 0; l < layers; ++l) {
    b.clip_locals.push_back(take("clip_local_" + std::to_string(l)));
    b.dino_locals.push_back(take("dino_local_" + std::to_string(l)));
  }
  if (has_mask) b.gt_mask = take("gt_mask");
  if (used != table.size()) {
    for (const auto& [name, span] : table) {
      (void)span;
      const bool known = name == "clip_global" || name == "dino_global" ||
                         (has_mask && name == "gt_mask") || name.rfind("clip_local_", 0) == 0 ||
                         name.rfind("dino_local_", 0) == 0;
      if (!known) throw FormatError(Errc::kUnexpectedTensor, "'" + name + "'");
    }
    throw FormatError(Errc::kUnexpectedTensor, "more local layers than the header declares");
  }

  if (raw.header.value("d_clip", b.d_clip()) != b.d_clip() ||
      raw.header.value("d_dino", b.d_dino()) != b.d_dino()) {
    throw FormatError(Errc::kBadHeader, "declared encoder widths disagree with the tensors");
  }
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(Errc::kInvalidBundle, e.what());
  }
  return b;
}

void write_bundle(const FeatureBundle& b, const fs::path& path) { write_file(path, encode_bundle(b)); }

FeatureBundle read_bundle(const fs::path& path) { return decode_bundle(read_file(path)); }

}  // namespace ssvp::io
