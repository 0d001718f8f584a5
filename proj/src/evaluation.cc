// SPDX-License-Identifier: Apache-2.0

#include "flamkit/evaluation.h"

#include <algorithm>
#include <cmath>

#include "flamkit/batcher.h"
#include "flamkit/inference.h"
#include "flamkit/metrics.h"
#include "flamkit/parallel.h"

namespace flamkit {

nlohmann::json EvalReport::to_json() const {
  auto metrics = [](const EventMetrics& m) {
    return nlohmann::json{{"auroc", m.auroc}, {"mpauc", m.mpauc}, {"rho", m.rho}, {"clips", m.clips},
                          {"frames", m.frames}};
  };
  nlohmann::json events = nlohmann::json::object();
  for (const auto& [name, m] : per_event) events[name] = metrics(m);
  nlohmann::json macro_j = metrics(macro);
  macro_j["events"] = per_event.size();
  return {{"dataset", dataset},
          {"per_event", events},
          {"macro", macro_j},
          {"skipped_events", skipped},
          {"retrieval",
           {{"pairs", retrieval_pairs},
            {"text_to_audio", {{"r1", recall_t2a_1}, {"r5", recall_t2a_5}}},
            {"audio_to_text", {{"r1", recall_a2t_1}, {"r5", recall_a2t_5}}}}},
          {"config_hash", hash_hex(config_hash)},
          {"code_version", kCodeVersion}};
}

std::vector<double> segment_scores(std::span<const double> frame_scores, double segment_seconds) {
  const double frame = static_cast<double>(kClipSeconds) / static_cast<double>(frame_scores.size());
  const auto segments = static_cast<std::size_t>(std::llround(kClipSeconds / segment_seconds));
  std::vector<double> out(segments, 0.0);
  for (std::size_t s = 0; s < segments; ++s) {
    const double a = static_cast<double>(s) * segment_seconds, b = a + segment_seconds;
    double acc = 0.0, weight = 0.0;
    for (std::size_t l = 0; l < frame_scores.size(); ++l) {
      const double lo = std::max(a, static_cast<double>(l) * frame);
      const double hi = std::min(b, static_cast<double>(l + 1) * frame);
      if (hi > lo) {
        acc += (hi - lo) * frame_scores[l];
        weight += hi - lo;
      }
    }
    out[s] = acc / weight;
  }
  return out;
}

std::vector<std::uint8_t> segment_labels(const ActivityCurve& curve, double segment_seconds) {
  if (curve.size() != kLabelFrames) throw InvalidArgument("segment_labels: curve must have 500 frames");
  const auto per = static_cast<std::size_t>(std::llround(segment_seconds * kLabelRate));
  std::vector<std::uint8_t> out(kLabelFrames / per, 0);
  for (std::size_t f = 0; f < out.size() * per; ++f) {
    if (curve[f]) out[f / per] = 1;
  }
  return out;
}

namespace {

struct ClipScores {
  std::vector<std::string> captions;
  std::vector<std::vector<double>> frame;  // median-filtered, model grid
  std::vector<ActivityCurve> activity;
  std::vector<double> global;
};

struct Pool {
  std::vector<double> frame_scores, segment_scores;
  std::vector<std::uint8_t> frame_labels, segment_labels;
  std::size_t clips = 0;
};

}  // namespace

EvalReport evaluate_sed(const Model& model, const FeatureSet& data, const EvalOptions& options) {
  if (data.records.size() != data.features.size()) throw InvalidArgument("feature set is inconsistent");
  const std::size_t n = data.records.size();

  // Text side: one forward per distinct caption.
  std::map<std::string, TextForward> text;
  for (const auto& r : data.records) {
    for (const auto& ev : r.events) {
      const std::string key = normalize_caption(ev.caption);
      if (!text.contains(key)) text.emplace(key, model.encode_text(key));
    }
  }

  std::vector<ClipScores> clips(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const AudioForward fw = model.encode_audio_features(data.features[i]);
    ClipScores& cs = clips[i];
    cs.global = fw.global;
    std::map<std::string, std::size_t> seen;
    for (const auto& ev : data.records[i].events) {
      const std::string key = normalize_caption(ev.caption);
      auto [it, inserted] = seen.emplace(key, cs.captions.size());
      if (!inserted) {
        ActivityCurve& a = cs.activity[it->second];
        for (std::size_t f = 0; f < a.size(); ++f) a[f] = a[f] | ev.activity[f];
        continue;
      }
      const TextForward& t = text.at(key);
      cs.captions.push_back(key);
      cs.frame.push_back(median_filter(frame_scores(fw.frames, t.embedding, t.alpha), options.median_width));
      cs.activity.push_back(ev.activity);
    }
  });

  std::map<std::string, Pool> pools;
  for (const ClipScores& cs : clips) {
    for (std::size_t e = 0; e < cs.captions.size(); ++e) {
      Pool& p = pools[cs.captions[e]];
      p.clips += 1;
      const auto labels = downsample_activity(cs.activity[e], cs.frame[e].size());
      for (std::size_t l = 0; l < labels.size(); ++l) {
        p.frame_scores.push_back(cs.frame[e][l]);
        p.frame_labels.push_back(labels[l] > 0 ? 1 : 0);
      }
      const auto ss = segment_scores(cs.frame[e]);
      const auto sl = segment_labels(cs.activity[e]);
      p.segment_scores.insert(p.segment_scores.end(), ss.begin(), ss.end());
      p.segment_labels.insert(p.segment_labels.end(), sl.begin(), sl.end());
    }
  }

  EvalReport rep;
  std::size_t mp_count = 0;
  for (const auto& [name, p] : pools) {
    EventMetrics m;
    m.clips = p.clips;
    m.frames = p.frame_scores.size();
    try {
      m.auroc = frame_auroc(p.frame_scores, p.frame_labels);
      m.rho = spearman_rho(p.frame_scores, p.frame_labels);
    } catch (const UndefinedMetric&) {
      rep.skipped.push_back(name);
      continue;
    }
    try {
      m.mpauc = mpauc(p.segment_scores, p.segment_labels);
      ++mp_count;
    } catch (const UndefinedMetric&) {
      m.mpauc = std::nan("");
    }
    rep.per_event[name] = m;
    rep.macro.auroc += m.auroc;
    rep.macro.rho += m.rho;
    if (!std::isnan(m.mpauc)) rep.macro.mpauc += m.mpauc;
    rep.macro.clips += m.clips;
    rep.macro.frames += m.frames;
  }
  if (!rep.per_event.empty()) {
    rep.macro.auroc /= static_cast<double>(rep.per_event.size());
    rep.macro.rho /= static_cast<double>(rep.per_event.size());
  }
  if (mp_count > 0) rep.macro.mpauc /= static_cast<double>(mp_count);

  // Retrieval: each clip with events against its first caption.
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (!clips[i].captions.empty()) idx.push_back(i);
  }
  rep.retrieval_pairs = idx.size();
  if (!idx.empty()) {
    Matrix sim(idx.size(), idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = 0; b < idx.size(); ++b) {
        sim(a, b) = dot(clips[idx[a]].global, text.at(clips[idx[b]].captions[0]).embedding);
      }
    }
    const Recall r1 = recall_at_k(sim, 1);
    const Recall r5 = recall_at_k(sim, std::min<std::size_t>(5, idx.size()));
    rep.recall_t2a_1 = r1.text_to_audio;
    rep.recall_a2t_1 = r1.audio_to_text;
    rep.recall_t2a_5 = r5.text_to_audio;
    rep.recall_a2t_5 = r5.audio_to_text;
  }
  return rep;
}

EvalReport evaluate_sed(const Model& model, const Manifest& manifest, const EvalOptions& options) {
  const FeatureSet data = load_feature_set(manifest, false, options.threads);
  EvalReport rep = evaluate_sed(model, data, options);
  rep.dataset = manifest.directory;
  return rep;
}

}  // namespace flamkit
