#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "speechflow/rng.hpp"
#include "speechflow/signal.hpp"
#include "speechflow/tensor.hpp"

namespace speechflow {

enum class Gender { M, F, unknown };
std::string_view gender_name(Gender g);
Gender parse_gender(std::string_view s);

struct SegmentRecord {
  std::string utterance_id;
  std::string speaker_id;
  Gender gender = Gender::unknown;
  Vowel vowel = Vowel::aa;
  std::size_t start_sample = 0;
  std::size_t end_sample = 0;
  std::optional<double> noise_snr_db;
};

struct PhoneInterval {
  std::size_t begin;
  std::size_t end;
  std::string label;
  friend bool operator==(const PhoneInterval&, const PhoneInterval&) = default;
};

// Lines of "begin end label" in sample indices; blank lines are skipped.
std::vector<PhoneInterval> parse_phone_alignment(std::string_view text);

// Keeps intervals whose label is in vowel_set; the template supplies the
// utterance/speaker fields.
std::vector<SegmentRecord> extract_segments(const std::vector<PhoneInterval>& alignment,
                                            const std::vector<Vowel>& vowel_set, const SegmentRecord& tmpl = {});

// Full-resolution image geometry: 288 frames by 288 bands (257 STFT bins
// plus zero bands), average-pooled down to size x size.
struct SpectrogramConfig {
  StftConfig stft;
  std::size_t frames = 288;
  std::size_t bands = 288;
  std::size_t size = 32;

  void validate() const;
  std::size_t pool() const { return frames / size; }
};

struct Spectrogram {
  Tensor pixels;  // 1 x size x size, time-major
  SegmentRecord record;
  std::size_t valid_frames = 0;  // at full resolution
};

struct Discard {
  std::string reason;
};

// ln(magnitude + floor) image at full resolution, padded with ln(floor).
struct LogSpectrogram {
  Tensor log_mag;  // frames x bands
  std::size_t valid_frames = 0;
  std::size_t valid_bands = 0;
};

// Samples [start_sample, end_sample) of w.
Waveform segment_waveform(const Waveform& w, const SegmentRecord& rec);

std::variant<LogSpectrogram, Discard> log_spectrogram(const Waveform& w, const SegmentRecord& rec,
                                                       const SpectrogramConfig& config);

// Block average to size x size; uniform blocks are copied exactly.
Tensor average_pool(const Tensor& image, std::size_t factor);

std::variant<Spectrogram, Discard> segment_to_spectrogram(const Waveform& w, const SegmentRecord& rec,
                                                          const SpectrogramConfig& config, const NormStats& stats);

// Running mean/variance of log-magnitudes over unpadded pixels.
struct LogStatsAccumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(const LogSpectrogram& s);
  NormStats finish() const;
};

Tensor add_jitter(const Tensor& pixels, Rng& rng, double delta);

struct ManifestEntry {
  SegmentRecord record;
  std::size_t valid_frames = 0;
  std::uint64_t offset = 0;
  bool eval = false;
  std::optional<std::size_t> clean_index;  // set on noisy twins
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  NormStats stats;
  nlohmann::json config;

  std::vector<std::size_t> find(std::string_view speaker_id, Vowel vowel) const;
  std::optional<std::size_t> find_utterance(std::string_view utterance_id) const;
};

struct Corpus {
  Manifest manifest;
  std::vector<Tensor> spectrograms;  // one per manifest entry
};

struct CorpusConfig {
  SpectrogramConfig spectrogram;
  std::vector<Vowel> vowels{std::begin(kAllVowels), std::end(kAllVowels)};
  std::optional<double> noise_snr_db;
  double eval_fraction = 0.1;
  // Synthetic source.
  int speakers = 4;
  int draws = 10;
  double min_duration = 0.08;
  double max_duration = 0.28;
  // When set, skip statistics estimation and normalize with these.
  std::optional<NormStats> fixed_stats;

  void validate() const;
};

nlohmann::json to_json(const CorpusConfig& c);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

// One speech source: a waveform plus the segments to cut from it.
struct SourceUtterance {
  Waveform waveform;
  std::vector<SegmentRecord> segments;
};

// Synthetic vowels: speakers x vowels x draws one-segment utterances.
std::vector<SourceUtterance> synthetic_utterances(const CorpusConfig& config, std::uint64_t seed);
// Real corpus laid out as <dialect>/<G><ID>/<utt>.wav with <utt>.phn next to it.
std::vector<SourceUtterance> corpus_utterances(const std::filesystem::path& root, const CorpusConfig& config);

Corpus build_corpus(const std::vector<SourceUtterance>& sources, const CorpusConfig& config, std::uint64_t seed);

inline constexpr const char* kArchiveFile = "archive.fstn";
inline constexpr const char* kManifestFile = "manifest.jsonl";

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

// Training spectrograms: train split, noisy twins optional.
std::vector<Tensor> training_set(const Corpus& corpus, bool include_noisy);

}  // namespace speechflow
