#include "ssvp/evaluate.hpp"

#include <cmath>
#include <limits>

#include "ssvp/objective.hpp"

namespace ssvp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ImageRecord {
  double score = 0;
  int label = 0;
  Tensor map;   // at mask resolution
  Tensor mask;  // binary
  Tensor v_local;
  Tensor grid_mask;  // one entry per patch
  double scd_normal = 0, scd_abnormal = 0;
  Tensor t_abn;  // mean abnormal row of t_final
};

template <typename F>
double guarded(F f) {
  try {
    return f();
  } catch (const metrics::MetricError&) {
    return kNaN;
  }
}

metrics::CategoryReport summarize(const std::vector<const ImageRecord*>& recs,
                                  const metrics::ProOptions& pro) {
  metrics::CategoryReport r;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> px;
  std::vector<int> px_labels;
  std::vector<Tensor> maps, masks, feats, fg;
  double scd_n = 0, scd_a = 0;
  Tensor t_abn;
  for (const auto* rec : recs) {
    scores.push_back(rec->score);
    labels.push_back(rec->label);
    maps.push_back(rec->map);
    masks.push_back(rec->mask);
    for (std::size_t i = 0; i < rec->map.size(); ++i) {
      px.push_back(rec->map[i]);
      px_labels.push_back(rec->mask[i] > 0.5 ? 1 : 0);
    }
    feats.push_back(rec->v_local);
    fg.push_back(rec->grid_mask);
    scd_n += rec->scd_normal;
    scd_a += rec->scd_abnormal;
    if (t_abn.size() == 0) {
      t_abn = rec->t_abn;
    } else {
      for (std::size_t i = 0; i < t_abn.size(); ++i) t_abn[i] += rec->t_abn[i];
    }
    r.counts.anomalous_images += rec->label == 1 ? 1 : 0;
  }
  r.counts.images = recs.size();
  r.counts.pixels = px.size();
  for (int l : px_labels) r.counts.anomalous_pixels += static_cast<std::size_t>(l);

  r.image.auroc = guarded([&] { return metrics::auroc(scores, labels); });
  r.image.f1_max = guarded([&] { return metrics::f1_max(scores, labels); });
  r.image.ap = guarded([&] { return metrics::average_precision(scores, labels); });
  r.pixel.auroc = guarded([&] { return metrics::auroc(px, px_labels); });
  r.pixel.pro = guarded([&] { return metrics::pro(maps, masks, pro); });
  r.pixel.ap = guarded([&] { return metrics::average_precision(px, px_labels); });
  r.diagnostics.tir_fg = guarded([&] { return metrics::tir_fg(feats, fg, t_abn); });
  const double n = static_cast<double>(recs.size());
  r.diagnostics.scd_normal = recs.empty() ? kNaN : scd_n / n;
  r.diagnostics.scd_abnormal = recs.empty() ? kNaN : scd_a / n;
  return r;
}

Tensor rows(const Tensor& m, std::size_t begin, std::size_t end) {
  Tensor out({end - begin, m.cols()});
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out.at(r - begin, c) = m.at(r, c);
  }
  return out;
}

}  // namespace

Inference infer(const SsvpModel& model, const FeatureBundle& b, const ScoringOptions& opts) {
  Tape t;
  const ForwardResult fwd = forward_pipeline(t, b, model, Tensor({model.config().d_z}), opts);
  return {fwd.scores.s_final.item(), fwd.p_map.value()};
}

metrics::EvalReport evaluate(const SsvpModel& model, std::span<const FeatureBundle> data,
                             const ScoringOptions& opts, const metrics::ProOptions& pro,
                             const HeatmapSink& sink) {
  const auto& cfg = model.config();
  std::vector<ImageRecord> records;
  records.reserve(data.size());
  std::map<std::string, Tensor> t_static;
  for (const auto& b : data) {
    Tape t;
    const ForwardResult fwd = forward_pipeline(t, b, model, Tensor({cfg.d_z}), opts);
    ImageRecord rec;
    rec.score = fwd.scores.s_final.item();
    rec.label = b.label;
    const Tensor& p = fwd.p_map.value();
    if (sink) sink(b, p);
    if (b.gt_mask && (b.gt_mask->shape[0] != b.grid.h || b.gt_mask->shape[1] != b.grid.w)) {
      rec.mask = b.gt_mask->to_f64();
      rec.map = upsample_map(p, rec.mask.shape()[0], rec.mask.shape()[1]);
    } else {
      rec.map = p;
      rec.mask = b.gt_mask ? b.gt_mask->to_f64() : Tensor({b.grid.h, b.grid.w});
    }
    rec.v_local = fwd.aux.v_locals.back().value();
    rec.grid_mask = grid_target(b).reshaped({b.grid.cells()});

    const Tensor& tf = fwd.aux.t_final.value();
    auto it = t_static.find(b.category);
    if (it == t_static.end()) it = t_static.emplace(b.category, model.t_static(b.category)).first;
    const std::size_t nn = cfg.n_normal;
    const std::size_t np = cfg.n_normal + cfg.n_abnormal;
    rec.scd_normal = metrics::scd(rows(tf, 0, nn), rows(it->second, 0, nn));
    rec.scd_abnormal = metrics::scd(rows(tf, nn, np), rows(it->second, nn, np));
    rec.t_abn = Tensor({tf.cols()});
    for (std::size_t r = nn; r < np; ++r) {
      for (std::size_t c = 0; c < tf.cols(); ++c) {
        rec.t_abn[c] += tf.at(r, c) / static_cast<double>(cfg.n_abnormal);
      }
    }
    records.push_back(std::move(rec));
  }

  metrics::EvalReport report;
  std::vector<const ImageRecord*> all;
  std::map<std::string, std::vector<const ImageRecord*>> by_cat;
  for (std::size_t i = 0; i < records.size(); ++i) {
    all.push_back(&records[i]);
    by_cat[data[i].category].push_back(&records[i]);
  }
  report.overall = summarize(all, pro);
  for (const auto& [name, recs] : by_cat) report.per_category[name] = summarize(recs, pro);
  return report;
}

}  // namespace ssvp
