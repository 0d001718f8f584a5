// SPDX-License-Identifier: Apache-2.0

#include "flamkit/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "flamkit/parallel.h"

namespace flamkit {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEventPeak = 0.9;
// Minimum silence between the pieces of a split or repeated event, in label
// frames. Ten frames survive the gap-filling smoothing rule.
constexpr int kPieceGapFrames = 10;

int seconds_to_frames(double s) { return static_cast<int>(std::lround(s * kLabelRate)); }
double frames_to_seconds(int f) { return static_cast<double>(f) / kLabelRate; }
std::size_t seconds_to_samples(double s) {
  return static_cast<std::size_t>(std::llround(s * kSampleRate));
}

struct Run {
  bool active;
  std::size_t begin;
  std::size_t end;
};

std::vector<Run> runs_of(const ActivityCurve& c) {
  std::vector<Run> runs;
  std::size_t i = 0;
  while (i < c.size()) {
    std::size_t j = i;
    while (j < c.size() && (c[j] != 0) == (c[i] != 0)) ++j;
    runs.push_back({c[i] != 0, i, j});
    i = j;
  }
  return runs;
}

}  // namespace

// --- Recipes -----------------------------------------------------------------------

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::kTone: return "tone";
    case SynthKind::kChirp: return "chirp";
    case SynthKind::kNoiseBurst: return "noise_burst";
    case SynthKind::kAmTone: return "am_tone";
    case SynthKind::kHarmonicStack: return "harmonic_stack";
    case SynthKind::kClickTrain: return "click_train";
  }
  return "tone";
}

SynthKind synth_kind_from_string(const std::string& s) {
  for (SynthKind k : {SynthKind::kTone, SynthKind::kChirp, SynthKind::kNoiseBurst,
                      SynthKind::kAmTone, SynthKind::kHarmonicStack, SynthKind::kClickTrain}) {
    if (to_string(k) == s) return k;
  }
  throw CatalogError("unknown synthesis kind: " + s);
}

std::string EventRecipe::tag() const {
  std::string t = name;
  std::replace(t.begin(), t.end(), '_', ' ');
  return t;
}

std::size_t word_count(const std::string& caption) {
  std::istringstream in(caption);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

namespace {

std::string to_string(NoiseColor c) {
  switch (c) {
    case NoiseColor::kWhite: return "white";
    case NoiseColor::kPink: return "pink";
    case NoiseColor::kBrown: return "brown";
  }
  return "pink";
}

NoiseColor noise_color_from_string(const std::string& s) {
  if (s == "white") return NoiseColor::kWhite;
  if (s == "pink") return NoiseColor::kPink;
  if (s == "brown") return NoiseColor::kBrown;
  throw CatalogError("unknown noise color: " + s);
}

}  // namespace

void validate_catalog(const Catalog& catalog) {
  if (catalog.backgrounds.empty()) throw CatalogError("catalog has no background recipes");
  if (catalog.events.empty()) throw CatalogError("catalog has no event recipes");
  std::set<std::string> names;
  for (const auto& b : catalog.backgrounds) {
    if (!names.insert(b.name).second) throw CatalogError("duplicate recipe name: " + b.name);
    if (b.duration < kClipSeconds) throw CatalogError("background shorter than 10 s: " + b.name);
    if (b.caption.empty()) throw CatalogError("background without caption: " + b.name);
    if (b.lowpass_hz < 0.0 || b.lowpass_hz >= kSampleRate / 2.0) {
      throw CatalogError("background lowpass outside (0, Nyquist): " + b.name);
    }
  }
  for (const auto& e : catalog.events) {
    if (!names.insert(e.name).second) throw CatalogError("duplicate recipe name: " + e.name);
    if (!(e.min_duration > 0.0 && e.min_duration <= e.max_duration && e.max_duration < kClipSeconds)) {
      throw CatalogError("event duration range must satisfy 0 < min <= max < 10 s: " + e.name);
    }
    if (seconds_to_frames(e.max_duration) < 1) throw CatalogError("event shorter than one label frame: " + e.name);
    if (e.captions.empty()) throw CatalogError("event without captions: " + e.name);
    for (const auto& c : e.captions) {
      const std::size_t n = word_count(c);
      if (n < 2 || n > 13) throw CatalogError("caption must have 2-13 words: \"" + c + "\"");
    }
    if (!(e.base_hz > 0.0 && e.base_hz < kSampleRate / 2.0)) {
      throw CatalogError("base frequency outside (0, Nyquist): " + e.name);
    }
    if (e.source_group != "sfx" && e.source_group != "general") {
      throw CatalogError("source_group must be \"sfx\" or \"general\": " + e.name);
    }
    if (e.attack < 0.0 || e.decay < 0.0) throw CatalogError("negative envelope time: " + e.name);
  }
}

Catalog default_catalog() {
  struct Register {
    const char* word;
    double base_hz;
  };
  static const Register kRegisters[] = {{"low", 250.0}, {"mid", 600.0}, {"high", 1500.0}, {"shrill", 3500.0}};
  struct Kind {
    SynthKind kind;
    const char* word;
    const char* group;
    double min_d, max_d;
    double bandwidth_ratio, mod_hz, attack, decay;
    int held_out_register;
    std::vector<std::string> templates;  // "{}" is replaced by the register word
  };
  static const std::vector<Kind> kKinds = {
      {SynthKind::kTone, "tone", "sfx", 0.5, 3.0, 0.0, 0.0, 0.01, 0.05, 2,
       {"a {} steady tone", "{} pitched pure tone sounding", "a constant {} beep"}},
      {SynthKind::kChirp, "chirp", "sfx", 0.4, 1.6, 1.0, 5.0, 0.005, 0.03, 0,
       {"a {} rising chirp", "{} sweeping chirp sound", "a quick {} whistle sweep"}},
      {SynthKind::kNoiseBurst, "hiss", "general", 0.3, 2.0, 0.5, 0.0, 0.005, 0.02, 3,
       {"a {} burst of noise", "{} hissing noise burst", "a short {} static hiss"}},
      {SynthKind::kAmTone, "warble", "general", 1.0, 4.0, 0.0, 6.0, 0.02, 0.05, 1,
       {"a {} pulsing tone", "{} wobbling warble sound", "a {} tremolo hum"}},
      {SynthKind::kHarmonicStack, "buzz", "sfx", 0.5, 3.0, 0.0, 0.0, 0.01, 0.05, 0,
       {"a {} buzzing horn", "{} buzzy harmonic drone", "a rich {} buzz"}},
      {SynthKind::kClickTrain, "clicks", "sfx", 1.0, 4.0, 0.0, 10.0, 0.0, 0.0, 2,
       {"a {} clicking train", "rapid {} ticking clicks", "a {} ticking clock sound"}},
  };

  Catalog c;
  c.backgrounds = {
      {"white_noise", "steady white noise in the background", NoiseColor::kWhite, 6000.0, 10.0, false},
      {"pink_noise", "soft pink noise ambiance", NoiseColor::kPink, 0.0, 10.0, false},
      {"brown_noise", "deep brown noise rumble", NoiseColor::kBrown, 0.0, 10.0, false},
      {"muffled_room", "muffled room tone", NoiseColor::kPink, 1500.0, 10.0, true},
  };
  for (const Kind& k : kKinds) {
    for (int r = 0; r < 4; ++r) {
      EventRecipe e;
      e.name = std::string(kRegisters[r].word) + "_" + k.word;
      for (const std::string& t : k.templates) {
        std::string cap = t;
        cap.replace(cap.find("{}"), 2, kRegisters[r].word);
        e.captions.push_back(cap);
      }
      e.kind = k.kind;
      e.min_duration = k.min_d;
      e.max_duration = k.max_d;
      e.base_hz = kRegisters[r].base_hz;
      e.bandwidth_hz = k.bandwidth_ratio * kRegisters[r].base_hz;
      e.mod_hz = k.mod_hz;
      e.attack = k.attack;
      e.decay = k.decay;
      e.held_out = (r == k.held_out_register);
      e.source_group = k.group;
      c.events.push_back(std::move(e));
    }
  }
  return c;
}

json catalog_to_json(const Catalog& catalog) {
  json j;
  j["backgrounds"] = json::array();
  for (const auto& b : catalog.backgrounds) {
    j["backgrounds"].push_back({{"name", b.name},
                                {"caption", b.caption},
                                {"color", to_string(b.color)},
                                {"lowpass_hz", b.lowpass_hz},
                                {"duration", b.duration},
                                {"held_out", b.held_out}});
  }
  j["events"] = json::array();
  for (const auto& e : catalog.events) {
    j["events"].push_back({{"name", e.name},
                           {"captions", e.captions},
                           {"kind", to_string(e.kind)},
                           {"duration", {e.min_duration, e.max_duration}},
                           {"base_hz", e.base_hz},
                           {"bandwidth_hz", e.bandwidth_hz},
                           {"mod_hz", e.mod_hz},
                           {"attack", e.attack},
                           {"decay", e.decay},
                           {"held_out", e.held_out},
                           {"source_group", e.source_group}});
  }
  return j;
}

Catalog catalog_from_json(const json& j) {
  Catalog c;
  try {
    for (const auto& b : j.at("backgrounds")) {
      BackgroundRecipe r;
      r.name = b.at("name").get<std::string>();
      r.caption = b.at("caption").get<std::string>();
      r.color = noise_color_from_string(b.value("color", std::string("pink")));
      r.lowpass_hz = b.value("lowpass_hz", 0.0);
      r.duration = b.value("duration", kClipSeconds);
      r.held_out = b.value("held_out", false);
      c.backgrounds.push_back(std::move(r));
    }
    for (const auto& e : j.at("events")) {
      EventRecipe r;
      r.name = e.at("name").get<std::string>();
      r.captions = e.at("captions").get<std::vector<std::string>>();
      r.kind = synth_kind_from_string(e.at("kind").get<std::string>());
      const auto d = e.at("duration").get<std::vector<double>>();
      if (d.size() != 2) throw CatalogError("duration must be [min, max]: " + r.name);
      r.min_duration = d[0];
      r.max_duration = d[1];
      r.base_hz = e.at("base_hz").get<double>();
      r.bandwidth_hz = e.value("bandwidth_hz", 0.0);
      r.mod_hz = e.value("mod_hz", 0.0);
      r.attack = e.value("attack", 0.005);
      r.decay = e.value("decay", 0.005);
      r.held_out = e.value("held_out", false);
      r.source_group = e.value("source_group", std::string("sfx"));
      c.events.push_back(std::move(r));
    }
  } catch (const json::exception& ex) {
    throw CatalogError(std::string("malformed catalog: ") + ex.what());
  }
  validate_catalog(c);
  return c;
}

Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw CatalogError("catalog is not valid JSON: " + path + ": " + ex.what());
  }
  return catalog_from_json(j);
}

// --- Sources -------------------------------------------------------------------------

namespace {

void apply_envelope(Waveform& x, double attack_s, double decay_s) {
  const std::size_t n = x.size();
  const std::size_t a = std::min(n / 2, seconds_to_samples(attack_s));
  const std::size_t d = std::min(n / 2, seconds_to_samples(decay_s));
  for (std::size_t i = 0; i < a; ++i) x[i] *= static_cast<double>(i) / a;
  for (std::size_t i = 0; i < d; ++i) x[n - 1 - i] *= static_cast<double>(i) / d;
}

void normalize_peak(Waveform& x, double target) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double g = target / peak;
    for (double& v : x) v *= g;
  }
}

}  // namespace

Waveform generate_event_audio(const EventRecipe& recipe, Rng& rng, std::optional<double> duration) {
  double dur;
  if (duration) {
    dur = *duration;
    if (!(dur > 0.0 && dur < kClipSeconds)) throw InvalidArgument("event duration must be in (0, 10) s");
  } else {
    const int lo = std::max(1, static_cast<int>(std::ceil(recipe.min_duration * kLabelRate - 1e-9)));
    const int hi = std::max(lo, static_cast<int>(std::floor(recipe.max_duration * kLabelRate + 1e-9)));
    dur = frames_to_seconds(static_cast<int>(rng.uniform_int(lo, hi)));
  }
  const std::size_t n = seconds_to_samples(dur);
  const double fs = kSampleRate;
  const double f0 = recipe.base_hz;
  Waveform x(n, 0.0);

  switch (recipe.kind) {
    case SynthKind::kTone: {
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * kPi * f0 * (i / fs) + phi);
      break;
    }
    case SynthKind::kChirp: {
      // A train of rising sweeps, one per modulation period, each covering the
      // first 60% of its period; a single slow sweep when mod_hz is 0.
      const double f1 = recipe.bandwidth_hz > 0.0 ? f0 + recipe.bandwidth_hz : 2.0 * f0;
      const double period = recipe.mod_hz > 0.0 ? 1.0 / recipe.mod_hz : dur;
      const double sweep = recipe.mod_hz > 0.0 ? 0.6 * period : dur;
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = std::fmod(i / fs, period);
        if (t >= sweep) continue;
        const double w = recipe.mod_hz > 0.0 ? std::sin(kPi * t / sweep) : 1.0;
        x[i] = w * std::sin(2.0 * kPi * (f0 * t + (f1 - f0) * t * t / (2.0 * sweep)) + phi);
      }
      break;
    }
    case SynthKind::kNoiseBurst: {
      for (double& v : x) v = rng.normal();
      const double q = f0 / std::max(recipe.bandwidth_hz, 1.0);
      const Biquad bp = bandpass(fs, f0, q);
      x = filter(bp, x);
      x = filter(bp, x);
      break;
    }
    case SynthKind::kAmTone: {
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const double psi = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / fs;
        x[i] = std::sin(2.0 * kPi * f0 * t + phi) *
               (0.55 + 0.45 * std::sin(2.0 * kPi * recipe.mod_hz * t + psi));
      }
      break;
    }
    case SynthKind::kHarmonicStack: {
      for (int h = 1; h <= 6 && h * f0 < 20000.0; ++h) {
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(2.0 * kPi * h * f0 * (i / fs) + phi) / h;
      }
      break;
    }
    case SynthKind::kClickTrain: {
      const double period = 1.0 / (recipe.mod_hz > 0.0 ? recipe.mod_hz : 10.0);
      const std::size_t click_len = seconds_to_samples(0.015);
      for (double start = rng.uniform(0.0, period) * 0.5; start < dur; start += period) {
        const std::size_t s0 = seconds_to_samples(start);
        for (std::size_t j = 0; j < click_len && s0 + j < n; ++j) {
          const double tau = j / fs;
          x[s0 + j] += std::sin(2.0 * kPi * f0 * tau) * std::exp(-tau / 0.003);
        }
      }
      break;
    }
  }
  apply_envelope(x, recipe.attack, recipe.decay);
  normalize_peak(x, kEventPeak);
  return x;
}

Waveform generate_background(const BackgroundRecipe& recipe, Rng& rng) {
  Waveform x(kClipSamples);
  switch (recipe.color) {
    case NoiseColor::kWhite:
      for (double& v : x) v = rng.normal();
      break;
    case NoiseColor::kPink: {
      // Kellet's economy pink filter.
      double b0 = 0, b1 = 0, b2 = 0;
      for (double& v : x) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseColor::kBrown: {
      double acc = 0.0;
      for (double& v : x) {
        acc = 0.995 * acc + 0.1 * rng.normal();
        v = acc;
      }
      break;
    }
  }
  if (recipe.lowpass_hz > 0.0) {
    const Biquad lp = lowpass(kSampleRate, recipe.lowpass_hz);
    x = filter(lp, x);
    x = filter(lp, x);
  }
  const double level = a_weighted_rms_db(x);
  const double g = db_to_gain(kBackgroundLevelDb - level);
  for (double& v : x) v *= g;
  return x;
}

// --- Placement ------------------------------------------------------------------------

namespace {

struct PoolGroups {
  std::vector<std::size_t> sfx;
  std::vector<std::size_t> general;
};

PoolGroups split_pool(const Catalog& catalog, std::span<const std::size_t> pool) {
  PoolGroups g;
  for (std::size_t idx : pool) {
    if (idx >= catalog.events.size()) throw InvalidArgument("pool index out of range");
    (catalog.events[idx].source_group == "general" ? g.general : g.sfx).push_back(idx);
  }
  return g;
}

std::size_t draw_recipe(const PoolGroups& g, Rng& rng, double sfx_share) {
  const std::vector<std::size_t>* group = &g.sfx;
  if (g.sfx.empty()) {
    group = &g.general;
  } else if (!g.general.empty()) {
    group = rng.bernoulli(sfx_share) ? &g.sfx : &g.general;
  }
  return (*group)[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(group->size()) - 1))];
}

}  // namespace

std::vector<PlacedEvent> place_n_events(const Catalog& catalog, std::span<const std::size_t> pool,
                                        int n, Rng& rng, const PlacementOptions& opts) {
  if (pool.empty()) throw InvalidArgument("place_events: empty event pool");
  if (n < 0) throw InvalidArgument("place_events: negative event count");
  const PoolGroups groups = split_pool(catalog, pool);
  const int frames = static_cast<int>(kLabelFrames);
  const int min_split = static_cast<int>(std::ceil(opts.min_split_segment * kLabelRate - 1e-9));
  std::vector<int> load(kLabelFrames, 0);
  std::vector<PlacedEvent> placed;

  for (int e = 0; e < n; ++e) {
    const std::size_t idx = draw_recipe(groups, rng, opts.sfx_share);
    const EventRecipe& recipe = catalog.events[idx];
    PlacedEvent pe;
    pe.recipe = idx;
    pe.caption = recipe.captions[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(recipe.captions.size()) - 1))];
    pe.gain_db = rng.uniform(opts.min_gain_db, opts.max_gain_db);

    const int lo = std::max(1, static_cast<int>(std::ceil(recipe.min_duration * kLabelRate - 1e-9)));
    const int hi = std::max(lo, static_cast<int>(std::floor(recipe.max_duration * kLabelRate + 1e-9)));
    int dur = static_cast<int>(rng.uniform_int(lo, hi));

    const double u = rng.uniform();
    std::vector<int> pieces;  // lengths in frames
    std::vector<int> source_starts;
    if (u < opts.split_prob) {
      pe.mode = PlacementMode::kSplit;
      const int k = static_cast<int>(rng.uniform_int(2, 3));
      dur = std::clamp(dur, k * min_split, frames - (k - 1) * kPieceGapFrames);
      int start = 0;
      for (int j = 0; j < k - 1; ++j) {
        const int remaining_min = (k - 1 - j) * min_split;
        const int len = static_cast<int>(rng.uniform_int(min_split, dur - start - remaining_min));
        pieces.push_back(len);
        source_starts.push_back(start);
        start += len;
      }
      pieces.push_back(dur - start);
      source_starts.push_back(start);
    } else if (u < opts.split_prob + opts.repeat_prob) {
      pe.mode = PlacementMode::kRepeat;
      const int r = static_cast<int>(rng.uniform_int(2, 3));
      dur = std::min(dur, (frames - (r - 1) * kPieceGapFrames) / r);
      pieces.assign(static_cast<std::size_t>(r), dur);
      source_starts.assign(static_cast<std::size_t>(r), 0);
    } else {
      pe.mode = PlacementMode::kSingle;
      pieces = {dur};
      source_starts = {0};
    }
    pe.duration = frames_to_seconds(dur);

    int total = 0;
    for (int p : pieces) total += p;
    const int slack = frames - total - (static_cast<int>(pieces.size()) - 1) * kPieceGapFrames;
    if (slack < 0) throw PlacementError("event pieces do not fit in the clip");

    bool ok = false;
    std::vector<int> onsets(pieces.size());
    for (int attempt = 0; attempt < opts.max_redraws && !ok; ++attempt) {
      // Uniform placement of non-overlapping pieces: sorted offsets into the slack.
      std::vector<int> cuts(pieces.size());
      for (int& c : cuts) c = static_cast<int>(rng.uniform_int(0, slack));
      std::sort(cuts.begin(), cuts.end());
      int consumed = 0;
      for (std::size_t j = 0; j < pieces.size(); ++j) {
        onsets[j] = cuts[j] + consumed + static_cast<int>(j) * kPieceGapFrames;
        consumed += pieces[j];
      }
      ok = true;
      for (std::size_t j = 0; j < pieces.size() && ok; ++j) {
        for (int f = onsets[j]; f < onsets[j] + pieces[j]; ++f) {
          if (load[static_cast<std::size_t>(f)] + 1 > opts.max_concurrent) {
            ok = false;
            break;
          }
        }
      }
    }
    if (!ok) {
      throw PlacementError("could not satisfy the concurrency cap after " +
                           std::to_string(opts.max_redraws) + " draws");
    }
    for (std::size_t j = 0; j < pieces.size(); ++j) {
      for (int f = onsets[j]; f < onsets[j] + pieces[j]; ++f) load[static_cast<std::size_t>(f)] += 1;
      pe.segments.push_back({frames_to_seconds(onsets[j]), frames_to_seconds(onsets[j] + pieces[j])});
      pe.source_spans.push_back(
          {frames_to_seconds(source_starts[j]), frames_to_seconds(source_starts[j] + pieces[j])});
    }
    placed.push_back(std::move(pe));
  }
  return placed;
}

std::vector<PlacedEvent> place_events(const Catalog& catalog, std::span<const std::size_t> pool,
                                      Rng& rng, const PlacementOptions& opts) {
  if (pool.empty()) throw InvalidArgument("place_events: empty event pool");
  int n = static_cast<int>(rng.uniform_int(opts.min_events, opts.max_events));
  for (;;) {
    // Each attempt draws from a fresh child stream so a failed attempt does
    // not shift the sequence in a data-dependent way.
    Rng attempt = rng.substream(streams::kPlacement, static_cast<std::uint64_t>(n));
    try {
      return place_n_events(catalog, pool, n, attempt, opts);
    } catch (const PlacementError&) {
      if (n <= 1) throw;
      --n;
    }
  }
}

int max_concurrency(const std::vector<PlacedEvent>& placed) {
  std::vector<int> load(kLabelFrames, 0);
  for (const auto& pe : placed) {
    const ActivityCurve c = curve_from_segments(pe.segments);
    for (std::size_t f = 0; f < c.size(); ++f) load[f] += c[f];
  }
  return *std::max_element(load.begin(), load.end());
}

// --- Activity curves -----------------------------------------------------------------

ActivityCurve curve_from_segments(std::span<const Segment> segments, std::size_t frames) {
  ActivityCurve c(frames, 0);
  for (const Segment& s : segments) {
    // Frame f is active when its center lies inside [onset, offset).
    const auto first = static_cast<std::int64_t>(std::ceil(s.onset * kLabelRate - 0.5 - 1e-9));
    const auto last = static_cast<std::int64_t>(std::ceil(s.offset * kLabelRate - 0.5 - 1e-9));
    for (std::int64_t f = std::max<std::int64_t>(0, first);
         f < std::min<std::int64_t>(static_cast<std::int64_t>(frames), last); ++f) {
      c[static_cast<std::size_t>(f)] = 1;
    }
  }
  return c;
}

std::vector<Segment> segments_from_curve(const ActivityCurve& curve) {
  std::vector<Segment> out;
  for (const Run& r : runs_of(curve)) {
    if (r.active) {
      out.push_back({frames_to_seconds(static_cast<int>(r.begin)), frames_to_seconds(static_cast<int>(r.end))});
    }
  }
  return out;
}

std::vector<std::uint32_t> encode_rle(const ActivityCurve& curve) {
  std::vector<std::uint32_t> runs;
  bool state = false;
  std::uint32_t len = 0;
  for (std::uint8_t v : curve) {
    if ((v != 0) == state) {
      ++len;
    } else {
      runs.push_back(len);
      state = !state;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

ActivityCurve decode_rle(std::span<const std::uint32_t> runs, std::size_t frames) {
  ActivityCurve c;
  c.reserve(frames);
  bool state = false;
  for (std::uint32_t r : runs) {
    if (c.size() + r > frames) throw InvalidArgument("activity_rle exceeds the frame grid");
    c.insert(c.end(), r, state ? 1 : 0);
    state = !state;
  }
  if (c.size() != frames) throw InvalidArgument("activity_rle does not cover the frame grid");
  return c;
}

ActivityCurve smooth_labels(const ActivityCurve& curve) {
  ActivityCurve out = curve;
  const std::vector<Run> runs = runs_of(curve);
  for (std::size_t r = 1; r + 1 < runs.size(); ++r) {
    const Run& run = runs[r];
    if (!run.active && run.end - run.begin < 10) {
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(run.begin),
                out.begin() + static_cast<std::ptrdiff_t>(run.end), 1);
    }
  }
  std::size_t positives = 0;
  for (std::uint8_t v : out) positives += v;
  if (positives > 10) {
    for (const Run& run : runs_of(out)) {
      if (run.active && run.end - run.begin < 2) {
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(run.begin),
                  out.begin() + static_cast<std::ptrdiff_t>(run.end), 0);
      }
    }
  }
  return out;
}

namespace {

// Level of window k given the A-weighted signal y, which holds samples
// [origin, origin + y.size()) of the clip; samples outside are zero.
double window_level_db(std::span<const double> y, std::size_t origin, std::size_t k) {
  const auto center = static_cast<std::int64_t>(k * kRmsHop);
  const auto lo = static_cast<std::int64_t>(origin);
  const auto hi = lo + static_cast<std::int64_t>(y.size());
  const std::int64_t a = std::max(lo, center - static_cast<std::int64_t>(kRmsWindow / 2));
  const std::int64_t b = std::min(hi, center + static_cast<std::int64_t>(kRmsWindow / 2));
  double acc = 0.0;
  for (std::int64_t i = a; i < b; ++i) {
    const double v = y[static_cast<std::size_t>(i - lo)];
    acc += v * v;
  }
  return gain_to_db(std::sqrt(acc / static_cast<double>(kRmsWindow)));
}

const AWeighting& clip_weighting() {
  static const AWeighting weighting;
  return weighting;
}

}  // namespace

std::vector<double> windowed_a_rms_db(std::span<const double> wave) {
  const Waveform y = clip_weighting().apply(wave);
  std::vector<double> levels(wave.size() / kRmsHop + 1);
  for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = window_level_db(y, 0, k);
  return levels;
}

ActivityCurve rms_relabel(std::span<const double> placed_event, const ActivityCurve& raw) {
  ActivityCurve gated(raw.size(), 0);
  const std::size_t windows = placed_event.size() / kRmsHop + 1;
  auto nearest_window = [&](std::size_t f) {
    const double center = static_cast<double>(f * kSamplesPerLabelFrame + kSamplesPerLabelFrame / 2);
    return std::min<std::size_t>(windows - 1, static_cast<std::size_t>(std::llround(center / kRmsHop)));
  };
  std::size_t last_window = 0;
  bool any = false;
  for (std::size_t f = 0; f < raw.size(); ++f) {
    if (raw[f]) {
      any = true;
      last_window = nearest_window(f);
    }
  }
  std::size_t first_nonzero = placed_event.size();
  for (std::size_t i = 0; i < placed_event.size(); ++i) {
    if (placed_event[i] != 0.0) {
      first_nonzero = i;
      break;
    }
  }
  if (any && first_nonzero < placed_event.size()) {
    // The filter is causal and at rest before the first nonzero sample, so
    // filtering only the needed span gives the same output as the full clip.
    const std::size_t end = std::min(placed_event.size(), last_window * kRmsHop + kRmsWindow / 2);
    if (end > first_nonzero) {
      const Waveform y = clip_weighting().apply(placed_event.subspan(first_nonzero, end - first_nonzero));
      for (std::size_t f = 0; f < raw.size(); ++f) {
        if (raw[f]) gated[f] = window_level_db(y, first_nonzero, nearest_window(f)) >= kRelabelFloorDb ? 1 : 0;
      }
    }
  }
  return smooth_labels(gated);
}

// --- Rendering ---------------------------------------------------------------------------

RenderedMixture render_mixture(std::span<const double> background, const std::vector<PlacedEvent>& placed,
                               const std::vector<Waveform>& event_audio) {
  if (background.size() < kClipSamples) throw InvalidArgument("background shorter than 10 s");
  if (event_audio.size() != placed.size()) throw InvalidArgument("one waveform per placed event required");
  RenderedMixture out;
  out.mixture.assign(background.begin(), background.begin() + kClipSamples);
  const double bg_db = a_weighted_rms_db(out.mixture);

  for (std::size_t e = 0; e < placed.size(); ++e) {
    const PlacedEvent& pe = placed[e];
    const Waveform& src = event_audio[e];
    if (pe.segments.size() != pe.source_spans.size()) throw InvalidArgument("segment/source span mismatch");
    for (const Segment& s : pe.segments) {
      if (!(s.onset >= 0.0 && s.offset <= kClipSeconds && s.onset < s.offset)) {
        throw InvalidArgument("segment outside [0, 10] s");
      }
    }
    const double ev_db = a_weighted_rms_db(src);
    const double g = std::isfinite(ev_db) ? db_to_gain(bg_db + pe.gain_db - ev_db) : 0.0;
    Waveform timeline(kClipSamples, 0.0);
    const std::size_t fade = seconds_to_samples(pe.fade);
    for (std::size_t j = 0; j < pe.segments.size(); ++j) {
      const std::size_t dst = seconds_to_samples(pe.segments[j].onset);
      const std::size_t src0 = seconds_to_samples(pe.source_spans[j].onset);
      std::size_t len = seconds_to_samples(pe.segments[j].offset) - dst;
      len = std::min(len, src0 < src.size() ? src.size() - src0 : 0);
      const std::size_t nf = std::min(fade, len / 2);
      for (std::size_t i = 0; i < len; ++i) {
        double w = 1.0;
        if (i < nf) w = static_cast<double>(i) / nf;
        if (i >= len - nf) w = std::min(w, static_cast<double>(len - 1 - i) / nf);
        timeline[dst + i] = g * w * src[src0 + i];
      }
    }
    for (std::size_t i = 0; i < kClipSamples; ++i) out.mixture[i] += timeline[i];
    out.placed.push_back(std::move(timeline));
    out.raw_activity.push_back(curve_from_segments(pe.segments));
    out.linear_gain.push_back(g);
  }

  double peak = 0.0;
  for (double v : out.mixture) peak = std::max(peak, std::abs(v));
  if (peak > 1.0) {
    const double g = 1.0 / peak;
    for (double& v : out.mixture) v *= g;
    for (Waveform& w : out.placed) {
      for (double& v : w) v *= g;
    }
    for (double& lg : out.linear_gain) lg *= g;
    out.norm_gain_db = gain_to_db(g);
  }
  return out;
}

// --- Manifest ------------------------------------------------------------------------------

json record_to_json(const MixtureRecord& r) {
  json events = json::array();
  for (const EventLabel& e : r.events) {
    json segs = json::array();
    for (const Segment& s : e.segments) segs.push_back({s.onset, s.offset});
    events.push_back({{"caption", e.caption}, {"segments", segs}, {"activity_rle", encode_rle(e.activity)}});
  }
  return {{"id", r.id},
          {"audio", r.audio},
          {"sr", r.sr},
          {"background_caption", r.background_caption},
          {"events", events},
          {"seed", r.seed},
          {"norm_gain_db", r.norm_gain_db}};
}

MixtureRecord record_from_json(const json& j) {
  MixtureRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.audio = j.at("audio").get<std::string>();
    r.sr = j.at("sr").get<int>();
    r.background_caption = j.at("background_caption").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.norm_gain_db = j.at("norm_gain_db").get<double>();
    for (const auto& e : j.at("events")) {
      EventLabel l;
      l.caption = e.at("caption").get<std::string>();
      for (const auto& s : e.at("segments")) l.segments.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
      const auto runs = e.at("activity_rle").get<std::vector<std::uint32_t>>();
      l.activity = decode_rle(runs);
      r.events.push_back(std::move(l));
    }
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("malformed manifest record: ") + ex.what());
  }
  return r;
}

std::string Manifest::audio_path(std::size_t i) const {
  const std::filesystem::path p(records.at(i).audio);
  if (p.is_absolute()) return p.string();
  return (std::filesystem::path(directory) / p).string();
}

void write_manifest(const std::string& path, const std::vector<MixtureRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw IoError("manifest write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  Manifest m;
  m.directory = std::filesystem::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& ex) {
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

// --- Dataset -------------------------------------------------------------------------------

std::string to_string(Partition p) {
  switch (p) {
    case Partition::kTrain: return "train";
    case Partition::kHeldOut: return "heldout";
    case Partition::kAll: return "all";
  }
  return "train";
}

Partition partition_from_string(const std::string& s) {
  if (s == "train") return Partition::kTrain;
  if (s == "heldout" || s == "held_out" || s == "held-out") return Partition::kHeldOut;
  if (s == "all") return Partition::kAll;
  throw InvalidArgument("unknown partition: " + s);
}

namespace {

std::vector<std::size_t> event_pool(const Catalog& c, Partition p) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < c.events.size(); ++i) {
    const bool h = c.events[i].held_out;
    if (p == Partition::kAll || (p == Partition::kTrain && !h) || (p == Partition::kHeldOut && h)) {
      pool.push_back(i);
    }
  }
  if (pool.empty()) throw InvalidArgument("no event recipes in partition " + to_string(p));
  return pool;
}

std::vector<std::size_t> background_pool(const Catalog& c, Partition p) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < c.backgrounds.size(); ++i) {
    const bool h = c.backgrounds[i].held_out;
    if (p == Partition::kAll || (p == Partition::kTrain && !h) || (p == Partition::kHeldOut && h)) {
      pool.push_back(i);
    }
  }
  // Held-out mixtures may reuse training backgrounds when none are flagged.
  if (pool.empty() && p == Partition::kHeldOut) {
    for (std::size_t i = 0; i < c.backgrounds.size(); ++i) pool.push_back(i);
  }
  if (pool.empty()) throw InvalidArgument("no background recipes in partition " + to_string(p));
  return pool;
}

std::string mixture_id(Partition p, std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu", static_cast<unsigned long long>(index));
  return to_string(p) + "_" + buf;
}

}  // namespace

SynthesizedMixture synthesize_mixture(const Catalog& catalog, Partition partition, std::uint64_t seed,
                                      std::uint64_t index, const PlacementOptions& opts) {
  const std::vector<std::size_t> events = event_pool(catalog, partition);
  const std::vector<std::size_t> backgrounds = background_pool(catalog, partition);
  // Partitions draw from disjoint streams.
  const std::uint64_t part_key = mix64(seed ^ (0x51ed2701ULL * (static_cast<std::uint64_t>(partition) + 1)));

  Rng mix_rng(part_key, streams::kMixture, index);
  const BackgroundRecipe& bg = catalog.backgrounds[backgrounds[static_cast<std::size_t>(
      mix_rng.uniform_int(0, static_cast<std::int64_t>(backgrounds.size()) - 1))]];
  Rng bg_rng(part_key, streams::kBackgroundAudio, index);
  const Waveform background = generate_background(bg, bg_rng);

  const std::vector<PlacedEvent> placed = place_events(catalog, events, mix_rng, opts);
  std::vector<Waveform> audio;
  audio.reserve(placed.size());
  const Rng event_root(part_key, streams::kEventAudio, index);
  for (std::size_t e = 0; e < placed.size(); ++e) {
    Rng er = event_root.substream(e);
    audio.push_back(generate_event_audio(catalog.events[placed[e].recipe], er, placed[e].duration));
  }
  const RenderedMixture rendered = render_mixture(background, placed, audio);

  SynthesizedMixture out;
  MixtureRecord& r = out.record;
  r.id = mixture_id(partition, index);
  r.audio = "audio/" + r.id + ".wav";
  r.sr = kSampleRate;
  r.background_caption = bg.caption;
  r.seed = seed;
  r.norm_gain_db = rendered.norm_gain_db;
  for (std::size_t e = 0; e < placed.size(); ++e) {
    ActivityCurve curve = rms_relabel(rendered.placed[e], rendered.raw_activity[e]);
    if (std::none_of(curve.begin(), curve.end(), [](std::uint8_t v) { return v != 0; })) continue;
    EventLabel label;
    label.caption = placed[e].caption;
    label.segments = segments_from_curve(curve);
    label.activity = std::move(curve);
    r.events.push_back(std::move(label));
  }
  out.audio = rendered.mixture;
  out.placed = placed;
  return out;
}

DatasetSummary synthesize_dataset(const Catalog& catalog, std::size_t count, std::uint64_t seed,
                                  const std::string& out_dir, Partition partition, unsigned threads) {
  validate_catalog(catalog);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "audio", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  std::vector<MixtureRecord> records(count);
  parallel_for(count, threads, [&](std::size_t i) {
    SynthesizedMixture m = synthesize_mixture(catalog, partition, seed, i);
    write_wav((fs::path(out_dir) / m.record.audio).string(), m.audio);
    records[i] = std::move(m.record);
  });

  DatasetSummary s;
  s.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(s.manifest_path, records);
  s.mixtures = count;
  std::set<std::string> held_captions;
  for (const auto& e : catalog.events) {
    (e.held_out ? s.held_out_recipes : s.train_recipes) += 1;
    if (e.held_out) held_captions.insert(e.captions.begin(), e.captions.end());
  }
  for (const auto& r : records) {
    s.events += r.events.size();
    for (const auto& e : r.events) s.held_out_events += held_captions.count(e.caption);
  }
  return s;
}

}  // namespace flamkit
