#pragma once

#include <cstring>
#include <map>
#include <string>

#include "ssvp/io.hpp"

namespace ssvp::io::detail {

struct Span {
  nc::Shape shape;
  std::size_t offset = 0;
  std::size_t nbytes = 0;
};

/// Checks every entry of header["tensors"] against the payload and returns
/// them by name. Element size and dtype tag are format specific.
std::map<std::string, Span> tensor_table(const nlohmann::json& header, const std::string& payload,
                                         const char* dtype, std::size_t elem_size);

/// Appends raw little-endian values and records the table entry.
template <typename T>
void append_tensor(nlohmann::json& table, std::string& payload, const std::string& name,
                   const nc::Shape& shape, const T* data, std::size_t count, const char* dtype) {
  const std::size_t offset = payload.size();
  payload.append(reinterpret_cast<const char*>(data), count * sizeof(T));
  table.push_back({{"name", name}, {"dtype", dtype}, {"shape", shape}, {"offset", offset},
                   {"nbytes", count * sizeof(T)}});
}

template <typename T>
std::vector<T> extract(const std::string& payload, const Span& s) {
  std::vector<T> out(s.nbytes / sizeof(T));
  std::memcpy(out.data(), payload.data() + s.offset, s.nbytes);
  return out;
}

}  // namespace ssvp::io::detail
