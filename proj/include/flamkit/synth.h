// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_SYNTH_H_
#define FLAMKIT_SYNTH_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flamkit/dsp.h"
#include "flamkit/numcore.h"
#include "flamkit/rng.h"

#include "json.hpp"

namespace flamkit {

// --- Recipes and catalog ------------------------------------------------------

enum class SynthKind { kTone, kChirp, kNoiseBurst, kAmTone, kHarmonicStack, kClickTrain };

std::string to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& s);

struct EventRecipe {
  std::string name;
  std::vector<std::string> captions;
  SynthKind kind = SynthKind::kTone;
  double min_duration = 1.0;  // seconds
  double max_duration = 1.0;
  double base_hz = 440.0;
  double bandwidth_hz = 0.0;
  double mod_hz = 0.0;
  double attack = 0.005;
  double decay = 0.005;
  bool held_out = false;
  std::string source_group = "sfx";  // "sfx" | "general"

  // Bare class tag ("low tone"), used by caption/tag augmentation.
  std::string tag() const;
};

enum class NoiseColor { kWhite, kPink, kBrown };

struct BackgroundRecipe {
  std::string name;
  std::string caption;
  NoiseColor color = NoiseColor::kPink;
  double lowpass_hz = 0.0;  // 0 disables band shaping
  double duration = kClipSeconds;
  bool held_out = false;
};

struct Catalog {
  std::vector<BackgroundRecipe> backgrounds;
  std::vector<EventRecipe> events;
};

// Thrown for catalogs that violate recipe invariants. Message names the rule.
class CatalogError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

void validate_catalog(const Catalog& catalog);
Catalog default_catalog();
nlohmann::json catalog_to_json(const Catalog& catalog);
Catalog catalog_from_json(const nlohmann::json& j);
Catalog load_catalog(const std::string& path);

// --- Procedural sources ---------------------------------------------------------

// Renders one event. Duration is drawn from the recipe range (on the 20 ms
// label grid) unless given. Peak-normalized to 0.9.
Waveform generate_event_audio(const EventRecipe& recipe, Rng& rng,
                              std::optional<double> duration = std::nullopt);

// Background A-weighted level before mixing.
inline constexpr double kBackgroundLevelDb = -50.0;

// Ten seconds of colored noise at kBackgroundLevelDb (A-weighted).
Waveform generate_background(const BackgroundRecipe& recipe, Rng& rng);

// --- Placement ----------------------------------------------------------------

// Half-open span [onset, offset) in seconds.
struct Segment {
  double onset = 0.0;
  double offset = 0.0;
};

enum class PlacementMode { kSingle, kSplit, kRepeat };

struct PlacedEvent {
  std::size_t recipe = 0;  // index into Catalog::events
  std::string caption;
  double gain_db = 0.0;    // A-weighted level relative to the background
  double duration = 0.0;   // length of the rendered source audio, seconds
  PlacementMode mode = PlacementMode::kSingle;
  std::vector<Segment> segments;      // placement on the 10 s timeline
  std::vector<Segment> source_spans;  // matching spans of the source audio
  double fade = 0.010;
};

struct PlacementOptions {
  int min_events = 1;
  int max_events = 10;
  int max_concurrent = 3;
  int max_redraws = 1000;
  double split_prob = 0.1;
  double repeat_prob = 0.1;
  double min_gain_db = 6.0;
  double max_gain_db = 30.0;
  double min_split_segment = 0.5;
  double sfx_share = 0.8;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

// Places exactly n events drawn from `pool` (indices into catalog.events).
// Each event's onsets are re-drawn until the concurrency cap holds; throws
// PlacementError after max_redraws failures for any event.
std::vector<PlacedEvent> place_n_events(const Catalog& catalog, std::span<const std::size_t> pool,
                                        int n, Rng& rng, const PlacementOptions& opts = {});

// Draws N ~ U{min_events..max_events} and places that many events, lowering N
// on PlacementError.
std::vector<PlacedEvent> place_events(const Catalog& catalog, std::span<const std::size_t> pool,
                                      Rng& rng, const PlacementOptions& opts = {});

// Maximum number of simultaneously active placed events on the 50 Hz grid.
int max_concurrency(const std::vector<PlacedEvent>& placed);

// --- Activity curves -------------------------------------------------------------

// One flag per 20 ms label frame.
using ActivityCurve = std::vector<std::uint8_t>;

ActivityCurve curve_from_segments(std::span<const Segment> segments,
                                  std::size_t frames = kLabelFrames);
std::vector<Segment> segments_from_curve(const ActivityCurve& curve);

// Alternating run lengths starting with an inactive run (possibly 0).
std::vector<std::uint32_t> encode_rle(const ActivityCurve& curve);
ActivityCurve decode_rle(std::span<const std::uint32_t> runs, std::size_t frames = kLabelFrames);

// Label clean-up: (1) negative runs shorter than 10 frames lying between
// positive runs become positive; then (2) if the curve holds more than 10
// positive frames, positive runs shorter than 2 frames are removed.
ActivityCurve smooth_labels(const ActivityCurve& curve);

inline constexpr std::size_t kRmsWindow = 2400;
inline constexpr std::size_t kRmsHop = 1200;
inline constexpr double kRelabelFloorDb = -70.0;

// A-weighted RMS level per 2400-sample window with hop 1200, windows centered
// on multiples of the hop (zero padded at the clip edges).
std::vector<double> windowed_a_rms_db(std::span<const double> wave);

// Deactivates raw-active label frames whose nearest RMS window is below
// -70 dBFS, then applies smooth_labels. Never activates a frame outside `raw`
// before smoothing.
ActivityCurve rms_relabel(std::span<const double> placed_event, const ActivityCurve& raw);

// --- Rendering ----------------------------------------------------------------------

struct RenderedMixture {
  Waveform mixture;
  std::vector<Waveform> placed;  // each event on the 10 s timeline, post-gain
  std::vector<ActivityCurve> raw_activity;
  std::vector<double> linear_gain;  // per-event gain applied to the source
  double norm_gain_db = 0.0;        // global gain applied when peak > 1
};

RenderedMixture render_mixture(std::span<const double> background,
                               const std::vector<PlacedEvent>& placed,
                               const std::vector<Waveform>& event_audio);

// --- Dataset --------------------------------------------------------------------

struct EventLabel {
  std::string caption;
  std::vector<Segment> segments;
  ActivityCurve activity;
};

struct MixtureRecord {
  std::string id;
  std::string audio;  // path relative to the manifest directory
  int sr = kSampleRate;
  std::string background_caption;
  std::vector<EventLabel> events;
  std::uint64_t seed = 0;
  double norm_gain_db = 0.0;
};

nlohmann::json record_to_json(const MixtureRecord& r);
MixtureRecord record_from_json(const nlohmann::json& j);

struct Manifest {
  std::string directory;  // base for relative audio paths
  std::vector<MixtureRecord> records;

  std::string audio_path(std::size_t i) const;
};

void write_manifest(const std::string& path, const std::vector<MixtureRecord>& records);
Manifest read_manifest(const std::string& path);

enum class Partition { kTrain, kHeldOut, kAll };
std::string to_string(Partition p);
Partition partition_from_string(const std::string& s);

struct SynthesizedMixture {
  MixtureRecord record;
  Waveform audio;
  std::vector<PlacedEvent> placed;  // before relabeling; dropped events included
};

// Builds mixture `index` of the partition. Depends only on (catalog, seed,
// partition, index).
SynthesizedMixture synthesize_mixture(const Catalog& catalog, Partition partition,
                                      std::uint64_t seed, std::uint64_t index,
                                      const PlacementOptions& opts = {});

struct DatasetSummary {
  std::size_t mixtures = 0;
  std::size_t events = 0;
  std::size_t held_out_events = 0;
  std::size_t train_recipes = 0;
  std::size_t held_out_recipes = 0;
  std::string manifest_path;
};

// Writes <out_dir>/manifest.jsonl and <out_dir>/audio/<id>.wav.
DatasetSummary synthesize_dataset(const Catalog& catalog, std::size_t count, std::uint64_t seed,
                                  const std::string& out_dir, Partition partition = Partition::kTrain,
                                  unsigned threads = 0);

// Words in a caption (whitespace separated).
std::size_t word_count(const std::string& caption);

}  // namespace flamkit

#endif  // FLAMKIT_SYNTH_H_
