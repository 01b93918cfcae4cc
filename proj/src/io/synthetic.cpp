#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "container.hpp"
#include "ssvp/layers.hpp"

namespace ssvp::io {

void SynthSpec::validate() const {
  if (n_categories == 0) throw std::invalid_argument("synth: need at least one category");
  if (samples_per_split == 0) throw std::invalid_argument("synth: samples_per_split must be > 0");
  if (!(anomaly_rate >= 0.0 && anomaly_rate < 1.0)) {
    throw std::invalid_argument("synth: anomaly_rate must lie in [0, 1)");
  }
  if (grid.h == 0 || grid.w == 0) throw std::invalid_argument("synth: empty grid");
  if (d_clip == 0 || d_dino == 0 || layers == 0) throw std::invalid_argument("synth: zero dimension");
  const auto [lo, hi] = region_size;
  if (lo == 0 || lo > hi || hi > std::min(grid.h, grid.w)) {
    throw std::invalid_argument("synth: region_size must satisfy 1 <= lo <= hi <= grid side");
  }
  if (!std::isfinite(anomaly_offset)) throw std::invalid_argument("synth: anomaly_offset must be finite");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"n_categories", s.n_categories},
       {"samples_per_split", s.samples_per_split},
       {"anomaly_rate", s.anomaly_rate},
       {"grid", {s.grid.h, s.grid.w}},
       {"d_clip", s.d_clip},
       {"d_dino", s.d_dino},
       {"layers", s.layers},
       {"anomaly_offset", s.anomaly_offset},
       {"region_size", {s.region_size.first, s.region_size.second}},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  s.n_categories = j.at("n_categories").get<std::size_t>();
  s.samples_per_split = j.at("samples_per_split").get<std::size_t>();
  s.anomaly_rate = j.at("anomaly_rate").get<double>();
  const auto g = j.at("grid").get<std::vector<std::size_t>>();
  s.grid = {g.at(0), g.at(1)};
  s.d_clip = j.at("d_clip").get<std::size_t>();
  s.d_dino = j.at("d_dino").get<std::size_t>();
  s.layers = j.at("layers").get<std::size_t>();
  s.anomaly_offset = j.at("anomaly_offset").get<double>();
  const auto r = j.at("region_size").get<std::vector<std::size_t>>();
  s.region_size = {r.at(0), r.at(1)};
  s.seed = j.at("seed").get<std::uint64_t>();
}

namespace {

using Vec = std::vector<double>;

Vec gaussian(std::size_t d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Vec& v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
}

/// Unit vector orthogonal to `u`.
Vec prototype(const Vec& u, Rng& rng) {
  Vec v = gaussian(u.size(), rng);
  const double p = dot(v, u);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * u[i];
  normalize(v);
  return v;
}

struct Space {
  Vec direction;
  std::vector<std::vector<Vec>> protos;  // [category][layer]
};

Space make_space(std::size_t d, const SynthSpec& spec, Rng& rng) {
  Space s;
  s.direction = gaussian(d, rng);
  normalize(s.direction);
  s.protos.resize(spec.n_categories);
  for (auto& per_layer : s.protos) {
    for (std::size_t l = 0; l < spec.layers; ++l) per_layer.push_back(prototype(s.direction, rng));
  }
  return s;
}

struct Region {
  std::size_t r0 = 0, c0 = 0, h = 0, w = 0;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w;
  }
};

/// Local tokens for every layer plus the global token (mean of the last layer).
void fill_encoder(const Space& s, std::size_t cat, const SynthSpec& spec, const Region* region,
                  Rng& rng, std::vector<F32Tensor>& locals, F32Tensor& global) {
  const std::size_t n = spec.grid.cells();
  const std::size_t d = s.direction.size();
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    F32Tensor t{{n, d}, std::vector<float>(n * d)};
    const Vec& mu = s.protos[cat][l];
    for (std::size_t p = 0; p < n; ++p) {
      const bool anomalous = region && region->contains(p / spec.grid.w, p % spec.grid.w);
      for (std::size_t k = 0; k < d; ++k) {
        double v = mu[k] + noise(rng);
        if (anomalous) v += spec.anomaly_offset * s.direction[k];
        t.data[p * d + k] = static_cast<float>(v);
        if (l + 1 == spec.layers) mean[k] += static_cast<double>(t.data[p * d + k]);
      }
    }
    locals.push_back(std::move(t));
  }
  global = F32Tensor{{d}, std::vector<float>(d)};
  for (std::size_t k = 0; k < d; ++k) global.data[k] = static_cast<float>(mean[k] / static_cast<double>(n));
}

}  // namespace

SynthDataset gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng = seeded_stream(spec.seed, 0);
  const Space clip = make_space(spec.d_clip, spec, rng);
  const Space dino = make_space(spec.d_dino, spec, rng);

  SynthDataset ds;
  ds.clip_direction = nc::Tensor({spec.d_clip}, clip.direction);
  ds.dino_direction = nc::Tensor({spec.d_dino}, dino.direction);

  const auto n_anom = static_cast<std::size_t>(
      std::llround(spec.anomaly_rate * static_cast<double>(spec.samples_per_split)));
  std::uniform_int_distribution<std::size_t> side(spec.region_size.first, spec.region_size.second);
  for (std::size_t cat = 0; cat < spec.n_categories; ++cat) {
    for (const char* split : {"train", "test"}) {
      std::vector<int> labels(spec.samples_per_split, 0);
      std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_anom), 1);
      std::shuffle(labels.begin(), labels.end(), rng);
      auto& out = std::string(split) == "train" ? ds.train : ds.test;
      for (std::size_t i = 0; i < spec.samples_per_split; ++i) {
        FeatureBundle b;
        b.grid = spec.grid;
        b.label = labels[i];
        b.category = "cat" + std::to_string(cat);
        b.source_id = fmt::format("{}/{}/{:04d}", b.category, split, i);
        Region region;
        if (b.label == 1) {
          region.h = side(rng);
          region.w = side(rng);
          region.r0 = std::uniform_int_distribution<std::size_t>(0, spec.grid.h - region.h)(rng);
          region.c0 = std::uniform_int_distribution<std::size_t>(0, spec.grid.w - region.w)(rng);
        }
        const Region* rp = b.label == 1 ? &region : nullptr;
        fill_encoder(clip, cat, spec, rp, rng, b.clip_locals, b.clip_global);
        fill_encoder(dino, cat, spec, rp, rng, b.dino_locals, b.dino_global);
        F32Tensor mask{{spec.grid.h, spec.grid.w}, std::vector<float>(spec.grid.cells(), 0.0f)};
        for (std::size_t p = 0; p < spec.grid.cells(); ++p) {
          if (rp && rp->contains(p / spec.grid.w, p % spec.grid.w)) mask.data[p] = 1.0f;
        }
        b.gt_mask = std::move(mask);
        out.push_back(std::move(b));
      }
    }
  }
  return ds;
}

Manifest write_dataset(const SynthDataset& ds, const SynthSpec& spec, const fs::path& dir) {
  Manifest m;
  m.spec = spec;
  for (const auto* split : {&ds.train, &ds.test}) {
    const std::string name = split == &ds.train ? "train" : "test";
    for (const auto& b : *split) {
      ManifestEntry e;
      e.path = b.source_id + ".ssvpf";
      e.category = b.category;
      e.split = name;
      e.label = b.label;
      write_bundle(b, dir / e.path);
      m.entries.push_back(std::move(e));
    }
  }
  nlohmann::json j = {{"format_version", kBundleVersion}, {"spec", spec}, {"entries", nlohmann::json::array()}};
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"path", e.path}, {"category", e.category}, {"split", e.split}, {"label", e.label}});
  }
  write_file(dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

Manifest read_manifest(const fs::path& dir) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    m.spec = j.at("spec").get<SynthSpec>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("path").get<std::string>(), e.at("category").get<std::string>(),
                           e.at("split").get<std::string>(), e.at("label").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Errc::kBadHeader, "manifest: " + std::string(e.what()));
  }
  return m;
}

std::vector<FeatureBundle> load_dataset(const fs::path& dir, const DatasetFilter& filter) {
  const Manifest m = read_manifest(dir);
  auto listed = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  std::vector<FeatureBundle> out;
  for (const auto& e : m.entries) {
    if (!filter.split.empty() && e.split != filter.split) continue;
    if (!filter.include.empty() && !listed(filter.include, e.category)) continue;
    if (listed(filter.exclude, e.category)) continue;
    out.push_back(read_bundle(dir / e.path));
  }
  return out;
}

}  // namespace ssvp::io
