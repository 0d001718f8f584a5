#include "flamkit/synth.h"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace flamkit {
namespace {

namespace fs = std::filesystem;

// Single-bin DFT magnitude.
double goertzel(std::span<const double> x, double freq) {
  const double w = 2.0 * std::numbers::pi * freq / kSampleRate;
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    re += x[i] * std::cos(w * i);
    im -= x[i] * std::sin(w * i);
  }
  return std::hypot(re, im);
}

EventRecipe tone_recipe(double hz, double seconds) {
  EventRecipe r;
  r.name = "test_tone";
  r.captions = {"a test tone"};
  r.kind = SynthKind::kTone;
  r.min_duration = r.max_duration = seconds;
  r.base_hz = hz;
  r.attack = 0.005;
  r.decay = 0.005;
  return r;
}

ActivityCurve curve(const std::string& pattern) {
  ActivityCurve c;
  for (char ch : pattern) c.push_back(ch == '+' ? 1 : 0);
  return c;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// --- generate_event_audio ---

TEST(EventAudio, ToneHasDominantPeakAtBaseFrequency) {
  Rng rng(1, streams::kTest);
  const Waveform x = generate_event_audio(tone_recipe(440.0, 1.0), rng);
  ASSERT_EQ(x.size(), 48000u);
  const double at440 = goertzel(x, 440.0);
  for (double f = 300.0; f <= 600.0; f += 10.0) {
    if (f == 440.0) continue;
    EXPECT_GT(at440, goertzel(x, f)) << f;
  }
  EXPECT_GT(at440, 10.0 * goertzel(x, 880.0));
}

TEST(EventAudio, DeterministicPerSeed) {
  for (const auto& recipe : default_catalog().events) {
    Rng a(5, streams::kEventAudio, 3), b(5, streams::kEventAudio, 3);
    EXPECT_EQ(generate_event_audio(recipe, a), generate_event_audio(recipe, b)) << recipe.name;
  }
}

TEST(EventAudio, NoiseBurstLengthAndPeak) {
  EventRecipe r = tone_recipe(2000.0, 0.2);
  r.kind = SynthKind::kNoiseBurst;
  r.bandwidth_hz = 1000.0;
  Rng rng(2, streams::kTest);
  const Waveform x = generate_event_audio(r, rng);
  EXPECT_EQ(x.size(), 9600u);
  for (double v : x) EXPECT_LE(std::abs(v), 1.0);
}

TEST(EventAudio, EveryDefaultRecipeIsAudibleAndInRange) {
  const Catalog c = default_catalog();
  for (std::size_t i = 0; i < c.events.size(); ++i) {
    const auto& recipe = c.events[i];
    for (std::uint64_t k = 0; k < 3; ++k) {
      Rng rng(9, streams::kEventAudio, i * 10 + k);
      const Waveform x = generate_event_audio(recipe, rng);
      const double seconds = static_cast<double>(x.size()) / kSampleRate;
      EXPECT_GE(seconds, recipe.min_duration - 1e-9) << recipe.name;
      EXPECT_LE(seconds, recipe.max_duration + 1e-9) << recipe.name;
      double peak = 0.0;
      for (double v : x) peak = std::max(peak, std::abs(v));
      EXPECT_LE(peak, 1.0);
      EXPECT_GT(a_weighted_rms_db(x), -60.0) << recipe.name;
    }
  }
}

TEST(Background, LevelAndLength) {
  for (const auto& bg : default_catalog().backgrounds) {
    Rng rng(4, streams::kBackgroundAudio);
    const Waveform x = generate_background(bg, rng);
    EXPECT_EQ(x.size(), kClipSamples);
    EXPECT_NEAR(a_weighted_rms_db(x), kBackgroundLevelDb, 1e-9) << bg.name;
  }
}

// --- catalog ---

TEST(Catalog, DefaultShape) {
  const Catalog c = default_catalog();
  EXPECT_NO_THROW(validate_catalog(c));
  EXPECT_EQ(c.events.size(), 24u);
  EXPECT_EQ(c.backgrounds.size(), 4u);
  std::size_t held = 0;
  std::set<SynthKind> held_kinds;
  for (const auto& e : c.events) {
    if (e.held_out) {
      ++held;
      held_kinds.insert(e.kind);
    }
  }
  EXPECT_EQ(held, 6u);
  EXPECT_EQ(held_kinds.size(), 6u);
}

TEST(Catalog, JsonRoundTrip) {
  const Catalog c = default_catalog();
  const Catalog back = catalog_from_json(catalog_to_json(c));
  EXPECT_EQ(catalog_to_json(back), catalog_to_json(c));
}

TEST(Catalog, RejectsInvalidRecipes) {
  Catalog c = default_catalog();
  c.events[0].captions = {"single"};
  EXPECT_THROW(validate_catalog(c), CatalogError);
  c = default_catalog();
  c.events[0].captions = {"one two three four five six seven eight nine ten eleven twelve thirteen fourteen"};
  EXPECT_THROW(validate_catalog(c), CatalogError);
  c = default_catalog();
  c.events[0].max_duration = 10.0;
  EXPECT_THROW(validate_catalog(c), CatalogError);
  c = default_catalog();
  c.backgrounds[0].duration = 9.0;
  EXPECT_THROW(validate_catalog(c), CatalogError);
  c = default_catalog();
  c.events[0].source_group = "other";
  EXPECT_THROW(validate_catalog(c), CatalogError);
  c = default_catalog();
  c.events.clear();
  EXPECT_THROW(validate_catalog(c), CatalogError);
}

// --- placement ---

std::vector<std::size_t> all_events(const Catalog& c) {
  std::vector<std::size_t> pool(c.events.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  return pool;
}

TEST(Placement, SingleEventWithoutSplitOrRepeat) {
  const Catalog c = default_catalog();
  PlacementOptions opts;
  opts.split_prob = opts.repeat_prob = 0.0;
  Rng rng(0, streams::kTest);
  const auto placed = place_n_events(c, all_events(c), 1, rng, opts);
  ASSERT_EQ(placed.size(), 1u);
  ASSERT_EQ(placed[0].segments.size(), 1u);
  EXPECT_GE(placed[0].segments[0].onset, 0.0);
  EXPECT_LE(placed[0].segments[0].offset, 10.0);
  EXPECT_GE(placed[0].gain_db, 6.0);
  EXPECT_LE(placed[0].gain_db, 30.0);
}

TEST(Placement, MonteCarloRatesAndConcurrency) {
  const Catalog c = default_catalog();
  const auto pool = all_events(c);
  std::size_t events = 0, split = 0, repeat = 0, sfx = 0;
  std::vector<int> count_hist(11, 0);
  for (std::uint64_t m = 0; m < 10000; ++m) {
    Rng rng(17, streams::kMixture, m);
    const auto placed = place_events(c, pool, rng);
    ASSERT_GE(placed.size(), 1u);
    ASSERT_LE(placed.size(), 10u);
    count_hist[placed.size()]++;
    ASSERT_LE(max_concurrency(placed), 3);
    for (const auto& pe : placed) {
      ++events;
      split += pe.mode == PlacementMode::kSplit;
      repeat += pe.mode == PlacementMode::kRepeat;
      sfx += c.events[pe.recipe].source_group == "sfx";
      EXPECT_GE(pe.gain_db, 6.0);
      EXPECT_LE(pe.gain_db, 30.0);
      for (const auto& s : pe.segments) {
        ASSERT_GE(s.onset, 0.0);
        ASSERT_LE(s.offset, 10.0);
        if (pe.mode == PlacementMode::kSplit) EXPECT_GE(s.offset - s.onset, 0.5 - 1e-9);
      }
      if (pe.mode == PlacementMode::kSplit) {
        EXPECT_GE(pe.segments.size(), 2u);
        EXPECT_LE(pe.segments.size(), 3u);
      }
      if (pe.mode == PlacementMode::kRepeat) {
        EXPECT_GE(pe.segments.size(), 2u);
        EXPECT_LE(pe.segments.size(), 3u);
      }
    }
  }
  const double n = static_cast<double>(events);
  EXPECT_NEAR(split / n, 0.1, 0.02);
  EXPECT_NEAR(repeat / n, 0.1, 0.02);
  EXPECT_NEAR(sfx / n, 0.8, 0.02);
  // Small counts are rarely reduced, so their frequency stays near 1/10.
  EXPECT_NEAR(count_hist[1] / 10000.0, 0.1, 0.02);
}

TEST(Placement, ImpossibleCapRaisesPlacementError) {
  const Catalog c = default_catalog();
  PlacementOptions opts;
  opts.max_concurrent = 0;
  opts.max_redraws = 5;
  Rng rng(1, streams::kTest);
  EXPECT_THROW(place_n_events(c, all_events(c), 1, rng, opts), PlacementError);
  EXPECT_THROW(place_n_events(c, {}, 1, rng, opts), InvalidArgument);
}

// --- activity curves ---

TEST(Activity, SegmentMapsToFrameIndices) {
  const std::vector<Segment> segs{{1.0, 2.0}};
  const ActivityCurve c = curve_from_segments(segs);
  ASSERT_EQ(c.size(), 500u);
  for (std::size_t f = 0; f < 500; ++f) EXPECT_EQ(c[f], (f >= 50 && f <= 99) ? 1 : 0) << f;
}

TEST(Activity, SegmentCurveRoundTrip) {
  Rng rng(3, streams::kTest);
  for (int t = 0; t < 500; ++t) {
    ActivityCurve c(500);
    for (auto& v : c) v = rng.bernoulli(0.3);
    const auto segs = segments_from_curve(c);
    EXPECT_EQ(curve_from_segments(segs), c);
    EXPECT_EQ(decode_rle(encode_rle(c)), c);
  }
}

TEST(Activity, RleStartsWithInactiveRun) {
  EXPECT_EQ(encode_rle(curve("++--")), (std::vector<std::uint32_t>{0, 2, 2}));
  EXPECT_EQ(encode_rle(curve("--+")), (std::vector<std::uint32_t>{2, 1}));
  const std::vector<std::uint32_t> bad{100};
  EXPECT_THROW(decode_rle(bad), InvalidArgument);
}

TEST(SmoothLabels, FillsShortGaps) {
  EXPECT_EQ(smooth_labels(curve("++---++")), curve("+++++++"));
}

TEST(SmoothLabels, RemovesIsolatedPositiveWhenEventIsLong) {
  // 15 positives elsewhere plus an isolated one, separated by long gaps.
  const std::string pattern = std::string(15, '+') + std::string(20, '-') + "+" + std::string(20, '-');
  const std::string expect = std::string(15, '+') + std::string(41, '-');
  EXPECT_EQ(smooth_labels(curve(pattern)), curve(expect));
}

TEST(SmoothLabels, KeepsIsolatedPositiveInShortEvent) {
  const std::string pattern = std::string(5, '+') + std::string(20, '-') + "+" + std::string(5, '-');
  EXPECT_EQ(smooth_labels(curve(pattern)), curve(pattern));
}

TEST(SmoothLabels, EdgeGapsAreNotFilled) {
  EXPECT_EQ(smooth_labels(curve("---++++")), curve("---++++"));
  EXPECT_EQ(smooth_labels(ActivityCurve(500, 0)), ActivityCurve(500, 0));
}

TEST(SmoothLabels, Idempotent) {
  Rng rng(8, streams::kTest);
  for (int t = 0; t < 2000; ++t) {
    ActivityCurve c(500);
    const double p = rng.uniform(0.02, 0.9);
    for (auto& v : c) v = rng.bernoulli(p);
    const ActivityCurve once = smooth_labels(c);
    EXPECT_EQ(smooth_labels(once), once);
  }
}

// --- rms_relabel ---

TEST(RmsRelabel, SilentEventIsInactive) {
  const ActivityCurve raw = curve_from_segments(std::vector<Segment>{{1.0, 3.0}});
  EXPECT_EQ(rms_relabel(Waveform(kClipSamples, 0.0), raw), ActivityCurve(500, 0));
}

TEST(RmsRelabel, LoudToneKeepsRawCurve) {
  const std::vector<Segment> segs{{2.0, 4.0}};
  const ActivityCurve raw = curve_from_segments(segs);
  Waveform x(kClipSamples, 0.0);
  for (std::size_t i = 96000; i < 192000; ++i) x[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * i / kSampleRate);
  EXPECT_EQ(rms_relabel(x, raw), raw);
}

Waveform tone_with_gap(std::size_t gap_start, std::size_t gap_len) {
  Waveform x(kClipSamples, 0.0);
  for (std::size_t i = 96000; i < 192000; ++i) x[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * i / kSampleRate);
  for (std::size_t i = gap_start; i < gap_start + gap_len; ++i) x[i] = 0.0;
  return x;
}

TEST(RmsRelabel, SixtyMillisecondGapEndsUpActive) {
  const ActivityCurve raw = curve_from_segments(std::vector<Segment>{{2.0, 4.0}});
  EXPECT_EQ(rms_relabel(tone_with_gap(144000, 2880), raw), raw);
}

TEST(RmsRelabel, GatedGapShorterThanTenFramesIsRefilled) {
  // 160 ms of silence: the gate drops frames, smoothing restores them.
  const ActivityCurve raw = curve_from_segments(std::vector<Segment>{{2.0, 4.0}});
  const Waveform x = tone_with_gap(144000, 7680);
  const auto lv = windowed_a_rms_db(x);
  std::size_t gated = 0;
  for (std::size_t f = 0; f < 500; ++f) {
    const auto k = static_cast<std::size_t>(std::llround((960.0 * f + 480.0) / 1200.0));
    gated += raw[f] && lv[k] < -70.0;
  }
  EXPECT_GT(gated, 0u);
  EXPECT_LT(gated, 10u);
  EXPECT_EQ(rms_relabel(x, raw), raw);
}

TEST(RmsRelabel, LongGapStaysInactive) {
  const ActivityCurve raw = curve_from_segments(std::vector<Segment>{{2.0, 4.0}});
  const ActivityCurve out = rms_relabel(tone_with_gap(130000, 24000), raw);
  std::size_t lost = 0;
  for (std::size_t f = 0; f < 500; ++f) {
    EXPECT_LE(out[f], raw[f]);
    lost += raw[f] - out[f];
  }
  EXPECT_GE(lost, 10u);
}

TEST(RmsRelabel, SpanFilteringMatchesFullClipLevels) {
  Rng rng(30, streams::kTest);
  Waveform x(kClipSamples, 0.0);
  for (std::size_t i = 200000; i < 260000; ++i) x[i] = 0.001 * rng.normal() * (i < 230000 ? 1.0 : 1e-3);
  const ActivityCurve raw = curve_from_segments(std::vector<Segment>{{4.0, 5.5}});
  const auto lv = windowed_a_rms_db(x);
  ActivityCurve expect(500, 0);
  for (std::size_t f = 0; f < 500; ++f) {
    const auto k = static_cast<std::size_t>(std::llround((960.0 * f + 480.0) / 1200.0));
    expect[f] = raw[f] && lv[k] >= -70.0;
  }
  EXPECT_EQ(rms_relabel(x, raw), smooth_labels(expect));
}

TEST(RmsRelabel, NeverAddsActivity) {
  Rng rng(21, streams::kTest);
  for (int t = 0; t < 20; ++t) {
    Waveform x(kClipSamples);
    for (auto& v : x) v = 0.1 * rng.normal();
    ActivityCurve raw(500);
    for (auto& v : raw) v = rng.bernoulli(0.4);
    const ActivityCurve gated = rms_relabel(x, raw);
    // Only smoothing may add frames, and only inside short interior gaps of raw.
    EXPECT_EQ(gated, smooth_labels(raw));
    const Waveform quiet(x.size(), 0.0);
    EXPECT_EQ(rms_relabel(quiet, raw), ActivityCurve(500, 0));
  }
}

TEST(RmsRelabel, WindowGridHas401Windows) {
  EXPECT_EQ(windowed_a_rms_db(Waveform(kClipSamples, 0.0)).size(), 401u);
}

// --- render_mixture ---

PlacedEvent simple_event(double onset, double offset, double gain_db) {
  PlacedEvent pe;
  pe.recipe = 0;
  pe.caption = "a test tone";
  pe.gain_db = gain_db;
  pe.duration = offset - onset;
  pe.segments = {{onset, offset}};
  pe.source_spans = {{0.0, offset - onset}};
  return pe;
}

Waveform constant_tone(double seconds, double hz) {
  Waveform x(static_cast<std::size_t>(std::llround(seconds * kSampleRate)));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate);
  return x;
}

TEST(Render, RawActivityAndLouderEventRegion) {
  Rng rng(2, streams::kTest);
  const Waveform bg = generate_background(default_catalog().backgrounds[1], rng);
  const auto r = render_mixture(bg, {simple_event(1.0, 2.0, 6.0)}, {constant_tone(1.0, 1000.0)});
  ASSERT_EQ(r.mixture.size(), kClipSamples);
  for (std::size_t f = 0; f < 500; ++f) EXPECT_EQ(r.raw_activity[0][f], (f >= 50 && f <= 99) ? 1 : 0);
  const std::span<const double> event(r.mixture.data() + 52000, 40000);
  const std::span<const double> quiet(r.mixture.data() + 200000, 40000);
  EXPECT_GT(a_weighted_rms_db(event), a_weighted_rms_db(quiet));
}

TEST(Render, GainPropertyWithinTolerance) {
  Rng rng(3, streams::kTest);
  const Waveform bg = generate_background(default_catalog().backgrounds[0], rng);
  for (double offset : {6.0, 12.0, 20.0, 30.0}) {
    const auto r = render_mixture(bg, {simple_event(2.0, 6.0, offset)}, {constant_tone(4.0, 1000.0)});
    // Measure away from the fades and the filter transients.
    const std::span<const double> event(r.mixture.data() + 2 * 48000 + 4800, 3 * 48000);
    const std::span<const double> quiet(r.mixture.data() + 7 * 48000, 2 * 48000);
    const double measured = a_weighted_rms_db(event) - a_weighted_rms_db(quiet);
    EXPECT_NEAR(measured, offset, 1.5) << offset;
  }
}

TEST(Render, FadesAreLinearTenMilliseconds) {
  const Waveform bg(kClipSamples, 0.0);
  Waveform src(48000, 1.0);
  const auto r = render_mixture(bg, {simple_event(1.0, 2.0, 6.0)}, {src});
  const double g = r.linear_gain[0];
  EXPECT_EQ(r.placed[0][48000], 0.0);
  EXPECT_NEAR(r.placed[0][48000 + 240], 0.5 * g, 1e-12);
  EXPECT_NEAR(r.placed[0][48000 + 480], g, 1e-12);
  EXPECT_NEAR(r.placed[0][96000 - 1], 0.0, 1e-12);
}

TEST(Render, PeakNormalizationRecordsGain) {
  Waveform bg(kClipSamples, 0.0);
  bg[10] = 1e-4;  // keeps the background level finite
  const auto r = render_mixture(bg, {simple_event(1.0, 2.0, 30.0)}, {constant_tone(1.0, 1000.0)});
  double peak = 0.0;
  for (double v : r.mixture) peak = std::max(peak, std::abs(v));
  EXPECT_LE(peak, 1.0 + 1e-12);
  if (r.norm_gain_db < 0.0) EXPECT_NEAR(peak, 1.0, 1e-12);
}

TEST(Render, Deterministic) {
  Rng a(4, streams::kTest), b(4, streams::kTest);
  const auto bg1 = generate_background(default_catalog().backgrounds[2], a);
  const auto bg2 = generate_background(default_catalog().backgrounds[2], b);
  const auto r1 = render_mixture(bg1, {simple_event(3.0, 5.5, 10.0)}, {constant_tone(2.5, 700.0)});
  const auto r2 = render_mixture(bg2, {simple_event(3.0, 5.5, 10.0)}, {constant_tone(2.5, 700.0)});
  EXPECT_EQ(encode_wav(r1.mixture), encode_wav(r2.mixture));
}

TEST(Render, RejectsOutOfRangeSegments) {
  const Waveform bg(kClipSamples, 0.0);
  EXPECT_THROW(render_mixture(bg, {simple_event(9.5, 10.5, 6.0)}, {constant_tone(1.0, 500.0)}), InvalidArgument);
}

// --- dataset ---

void check_record_invariants(const MixtureRecord& r, std::size_t samples) {
  EXPECT_EQ(samples, kClipSamples);
  EXPECT_EQ(r.sr, 48000);
  std::vector<int> load(500, 0);
  for (const auto& e : r.events) {
    ASSERT_EQ(e.activity.size(), 500u);
    EXPECT_EQ(curve_from_segments(e.segments), e.activity);
    EXPECT_EQ(segments_from_curve(e.activity).size(), e.segments.size());
    EXPECT_GE(word_count(e.caption), 2u);
    EXPECT_LE(word_count(e.caption), 13u);
    for (const auto& s : e.segments) {
      EXPECT_GE(s.onset, 0.0);
      EXPECT_LE(s.offset, 10.0);
    }
    for (std::size_t f = 0; f < 500; ++f) load[f] += e.activity[f];
  }
  for (int l : load) EXPECT_LE(l, 3);
}

TEST(Dataset, InvariantSweep) {
  const Catalog c = default_catalog();
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto m = synthesize_mixture(c, Partition::kAll, 23, i);
    check_record_invariants(m.record, m.audio.size());
    double peak = 0.0;
    for (double v : m.audio) peak = std::max(peak, std::abs(v));
    EXPECT_LE(peak, 1.0 + 1e-12);
  }
}

TEST(Dataset, DeterministicFilesAndHeldOutFilter) {
  const Catalog c = default_catalog();
  const fs::path base = fs::temp_directory_path() / "flamkit_synth_test";
  fs::remove_all(base);
  const auto s1 = synthesize_dataset(c, 10, 7, (base / "a").string(), Partition::kTrain, 2);
  const auto s2 = synthesize_dataset(c, 10, 7, (base / "b").string(), Partition::kTrain, 1);
  EXPECT_EQ(read_bytes(s1.manifest_path), read_bytes(s2.manifest_path));
  const Manifest m = read_manifest(s1.manifest_path);
  ASSERT_EQ(m.records.size(), 10u);
  std::set<std::string> held;
  for (const auto& e : c.events) {
    if (e.held_out) held.insert(e.captions.begin(), e.captions.end());
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(read_bytes(m.audio_path(i)), read_bytes((base / "b" / m.records[i].audio).string()));
    const WavData w = read_wav(m.audio_path(i));
    check_record_invariants(m.records[i], w.samples.size());
    for (const auto& e : m.records[i].events) EXPECT_EQ(held.count(e.caption), 0u) << e.caption;
  }
  EXPECT_EQ(s1.held_out_events, 0u);
  fs::remove_all(base);
}

TEST(Dataset, HeldOutPartitionUsesOnlyHeldOutRecipes) {
  const Catalog c = default_catalog();
  std::set<std::string> held;
  for (const auto& e : c.events) {
    if (e.held_out) held.insert(e.captions.begin(), e.captions.end());
  }
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto m = synthesize_mixture(c, Partition::kHeldOut, 7, i);
    for (const auto& e : m.record.events) EXPECT_EQ(held.count(e.caption), 1u);
  }
}

TEST(Dataset, ManifestRecordJsonRoundTrip) {
  const auto m = synthesize_mixture(default_catalog(), Partition::kTrain, 3, 0);
  const auto j = record_to_json(m.record);
  for (const char* key : {"id", "audio", "sr", "background_caption", "events", "seed", "norm_gain_db"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(record_to_json(record_from_json(j)), j);
}

TEST(Dataset, UnwritableDirectoryIsIoError) {
  EXPECT_THROW(synthesize_dataset(default_catalog(), 1, 1, "/proc/flamkit_cannot_write"), IoError);
}

}  // namespace
}  // namespace flamkit
