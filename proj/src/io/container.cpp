#include "container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssvp::io {

static_assert(std::endian::native == std::endian::little, "payloads are little-endian");

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::kIo: return "io error";
    case Errc::kBadMagic: return "bad magic";
    case Errc::kVersionMismatch: return "version mismatch";
    case Errc::kTruncated: return "truncated payload";
    case Errc::kBadHeader: return "bad header";
    case Errc::kSpanMismatch: return "span mismatch";
    case Errc::kOffsetOutOfRange: return "offset out of range";
    case Errc::kOverlap: return "overlapping tensors";
    case Errc::kMissingTensor: return "missing tensor";
    case Errc::kUnexpectedTensor: return "unexpected tensor";
    case Errc::kInvalidBundle: return "invalid bundle";
    case Errc::kDimMismatch: return "dimension mismatch";
  }
  return "unknown";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Errc::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(Errc::kIo, "short write to " + path.string());
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  std::memcpy(&v, s.data() + at, 4);
  return v;
}

}  // namespace

std::string join_container(const char* magic, std::uint32_t version, const nlohmann::json& header,
                           const std::string& payload) {
  const std::string h = header.dump();
  std::string out(magic, 8);
  put_u32(out, version);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out += payload;
  return out;
}

RawFile split_container(const std::string& bytes, const char* magic, std::uint32_t version) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw FormatError(Errc::kBadMagic, std::string("expected ") + magic);
  }
  if (bytes.size() < 16) throw FormatError(Errc::kTruncated, "file ends inside the preamble");
  RawFile raw;
  raw.version = get_u32(bytes, 8);
  if (raw.version != version) {
    throw FormatError(Errc::kVersionMismatch, "file version " + std::to_string(raw.version) +
                                                  ", reader supports " + std::to_string(version));
  }
  const std::size_t header_len = get_u32(bytes, 12);
  if (bytes.size() < 16 + header_len) throw FormatError(Errc::kTruncated, "file ends inside the header");
  try {
    raw.header = nlohmann::json::parse(bytes.begin() + 16,
                                       bytes.begin() + static_cast<std::ptrdiff_t>(16 + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Errc::kBadHeader, e.what());
  }
  if (!raw.header.is_object()) throw FormatError(Errc::kBadHeader, "header is not an object");
  raw.payload = bytes.substr(16 + header_len);
  const auto declared = raw.header.value("payload_bytes", std::size_t{0});
  if (raw.payload.size() < declared) {
    throw FormatError(Errc::kTruncated, "payload has " + std::to_string(raw.payload.size()) +
                                            " bytes, header declares " + std::to_string(declared));
  }
  if (raw.payload.size() > declared) {
    throw FormatError(Errc::kBadHeader, "trailing bytes after declared payload");
  }
  return raw;
}

namespace detail {

std::map<std::string, Span> tensor_table(const nlohmann::json& header, const std::string& payload,
                                         const char* dtype, std::size_t elem_size) {
  std::map<std::string, Span> out;
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError(Errc::kBadHeader, "no tensor table");
  }
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto& e : header["tensors"]) {
    std::string name;
    Span s;
    try {
      name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != dtype) {
        throw FormatError(Errc::kBadHeader, "tensor '" + name + "' has dtype " +
                                                e.at("dtype").get<std::string>());
      }
      s.shape = e.at("shape").get<nc::Shape>();
      s.offset = e.at("offset").get<std::size_t>();
      s.nbytes = e.at("nbytes").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(Errc::kBadHeader, std::string("tensor entry: ") + ex.what());
    }
    if (nc::shape_numel(s.shape) * elem_size != s.nbytes) {
      throw FormatError(Errc::kSpanMismatch, "tensor '" + name + "' shape " + nc::shape_str(s.shape) +
                                                 " needs " +
                                                 std::to_string(nc::shape_numel(s.shape) * elem_size) +
                                                 " bytes, span is " + std::to_string(s.nbytes));
    }
    if (s.offset > payload.size() || s.nbytes > payload.size() - s.offset) {
      throw FormatError(Errc::kOffsetOutOfRange, "tensor '" + name + "' exceeds the payload");
    }
    if (!out.emplace(name, s).second) {
      throw FormatError(Errc::kBadHeader, "duplicate tensor '" + name + "'");
    }
    ranges.emplace_back(s.offset, s.offset + s.nbytes);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw FormatError(Errc::kOverlap, "tensor byte ranges overlap");
    }
  }
  return out;
}

}  // namespace detail

}  // namespace ssvp::io
