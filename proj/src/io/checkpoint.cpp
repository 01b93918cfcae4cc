#include "container.hpp"

namespace ssvp::io {

Checkpoint snapshot(const SsvpModel& model, const TrainConfig& train, std::uint64_t seed,
                    std::string rng_state, std::string loss_history) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  c.seed = seed;
  for (const auto& p : model.parameters()) c.params.emplace_back(p.name(), p.value());
  c.static_prompts = model.static_prompts();
  c.rng_state = std::move(rng_state);
  c.loss_history = std::move(loss_history);
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : c.params) {
    detail::append_tensor(table, payload, name, t.shape(), t.storage().data(), t.size(), "f64");
  }
  for (std::size_t i = 0; i < c.static_prompts.size(); ++i) {
    const auto& t = c.static_prompts[i];
    detail::append_tensor(table, payload, "static." + std::to_string(i), t.shape(),
                          t.storage().data(), t.size(), "f64");
  }
  nlohmann::json header = {
      {"tensors", table},
      {"model", c.model},
      {"train", c.train},
      {"seed", c.seed},
      {"param_count", c.params.size()},
      {"static_count", c.static_prompts.size()},
      {"rng_state", c.rng_state},
      {"loss_history", c.loss_history},
      {"payload_bytes", payload.size()},
  };
  return join_container(kCheckpointMagic, kCheckpointVersion, header, payload);
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const RawFile raw = split_container(bytes, kCheckpointMagic, kCheckpointVersion);
  const auto table = detail::tensor_table(raw.header, raw.payload, "f64", sizeof(double));
  Checkpoint c;
  std::size_t n_static = 0;
  std::size_t n_params = 0;
  try {
    c.model = raw.header.at("model").get<ModelConfig>();
    c.train = raw.header.at("train").get<TrainConfig>();
    c.seed = raw.header.at("seed").get<std::uint64_t>();
    n_params = raw.header.at("param_count").get<std::size_t>();
    n_static = raw.header.at("static_count").get<std::size_t>();
    c.rng_state = raw.header.at("rng_state").get<std::string>();
    c.loss_history = raw.header.at("loss_history").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Errc::kBadHeader, e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(Errc::kBadHeader, e.what());
  }
  // Parameters keep the order of the tensor table.
  for (const auto& e : raw.header["tensors"]) {
    const auto name = e["name"].get<std::string>();
    if (name.rfind("static.", 0) == 0) continue;
    const auto& span = table.at(name);
    c.params.emplace_back(name, nc::Tensor(span.shape, detail::extract<double>(raw.payload, span)));
  }
  if (c.params.size() != n_params) throw FormatError(Errc::kMissingTensor, "parameter count differs");
  for (std::size_t i = 0; i < n_static; ++i) {
    const auto it = table.find("static." + std::to_string(i));
    if (it == table.end()) throw FormatError(Errc::kMissingTensor, "'static." + std::to_string(i) + "'");
    c.static_prompts.emplace_back(it->second.shape, detail::extract<double>(raw.payload, it->second));
  }
  if (table.size() != n_params + n_static) {
    throw FormatError(Errc::kUnexpectedTensor, "tensor table has extra entries");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const fs::path& path) { write_file(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

void load_into(SsvpModel& model, const Checkpoint& c) {
  if (!(model.config() == c.model)) throw FormatError(Errc::kDimMismatch, "model config differs");
  auto params = model.parameters();
  if (params.size() != c.params.size()) {
    throw FormatError(Errc::kDimMismatch, "model has " + std::to_string(params.size()) +
                                              " tensors, checkpoint " + std::to_string(c.params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = c.params[i];
    if (params[i].name() != name) {
      throw FormatError(Errc::kDimMismatch, "expected '" + params[i].name() + "', found '" + name + "'");
    }
    if (params[i].shape() != t.shape()) {
      throw FormatError(Errc::kDimMismatch, "'" + name + "' is " + nc::shape_str(t.shape()) +
                                                ", model expects " + nc::shape_str(params[i].shape()));
    }
  }
  try {
    model.set_static_prompts(c.static_prompts);
  } catch (const std::invalid_argument& e) {
    throw FormatError(Errc::kDimMismatch, e.what());
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = c.params[i].second;
}

SsvpModel restore_model(const Checkpoint& c) {
  SsvpModel model(c.model, c.seed);
  load_into(model, c);
  return model;
}

}  // namespace ssvp::io
