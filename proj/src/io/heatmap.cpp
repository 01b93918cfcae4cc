#include <cmath>
#include <fmt/format.h>

#include "ssvp/io.hpp"

namespace ssvp::io {

std::string encode_pgm(const nc::Tensor& p) {
  if (p.rank() != 2) throw std::invalid_argument("heatmap must be a 2-D map");
  std::string out = fmt::format("P5\n{} {}\n255\n", p.shape()[1], p.shape()[0]);
  for (double v : p.storage()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error(fmt::format("heatmap value {} outside [0, 1]", v));
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(255.0 * v + 0.5))));
  }
  return out;
}

void write_heatmap(const nc::Tensor& p, const fs::path& path) { write_file(path, encode_pgm(p)); }

}  // namespace ssvp::io
