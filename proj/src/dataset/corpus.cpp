#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "speechflow/dataset.hpp"
#include "speechflow/error.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream tags for Rng::derive.
constexpr std::uint64_t kSpeakerStream = 0x5350'4b00;
constexpr std::uint64_t kDrawStream = 0x4452'4157;
constexpr std::uint64_t kNoiseStream = 0x4e4f'4953;

}  // namespace

void CorpusConfig::validate() const {
  spectrogram.validate();
  if (vowels.empty()) throw InvalidArgument("vowel set is empty");
  if (!(eval_fraction >= 0 && eval_fraction < 1)) throw InvalidArgument("eval_fraction must lie in [0, 1)");
  if (speakers < 1 || draws < 1) throw InvalidArgument("speakers and draws must be positive");
  if (!(min_duration > 0 && max_duration >= min_duration))
    throw InvalidArgument("synthetic durations must satisfy 0 < min <= max");
  if (fixed_stats && !(fixed_stats->std > 0)) throw InvalidArgument("fixed stats need std > 0");
}

json to_json(const CorpusConfig& c) {
  json vowels = json::array();
  for (Vowel v : c.vowels) vowels.push_back(std::string(vowel_name(v)));
  json j = {{"window_len", c.spectrogram.stft.window_len},
            {"hop", c.spectrogram.stft.hop},
            {"fft_size", c.spectrogram.stft.fft_size},
            {"frames", c.spectrogram.frames},
            {"bands", c.spectrogram.bands},
            {"size", c.spectrogram.size},
            {"vowels", vowels},
            {"noise_snr_db", c.noise_snr_db ? json(*c.noise_snr_db) : json(nullptr)},
            {"eval_fraction", c.eval_fraction},
            {"speakers", c.speakers},
            {"draws", c.draws},
            {"min_duration", c.min_duration},
            {"max_duration", c.max_duration}};
  j["fixed_stats"] = c.fixed_stats ? json{{"mean", c.fixed_stats->mean}, {"std", c.fixed_stats->std}} : json(nullptr);
  return j;
}

CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig c;
  c.spectrogram.stft.window_len = j.at("window_len").get<std::size_t>();
  c.spectrogram.stft.hop = j.at("hop").get<std::size_t>();
  c.spectrogram.stft.fft_size = j.at("fft_size").get<std::size_t>();
  c.spectrogram.frames = j.at("frames").get<std::size_t>();
  c.spectrogram.bands = j.at("bands").get<std::size_t>();
  c.spectrogram.size = j.at("size").get<std::size_t>();
  c.vowels.clear();
  for (const auto& v : j.at("vowels")) c.vowels.push_back(parse_vowel(v.get<std::string>()));
  if (!j.at("noise_snr_db").is_null()) c.noise_snr_db = j.at("noise_snr_db").get<double>();
  c.eval_fraction = j.at("eval_fraction").get<double>();
  c.speakers = j.at("speakers").get<int>();
  c.draws = j.at("draws").get<int>();
  c.min_duration = j.at("min_duration").get<double>();
  c.max_duration = j.at("max_duration").get<double>();
  if (j.contains("fixed_stats") && !j.at("fixed_stats").is_null())
    c.fixed_stats = NormStats{j["fixed_stats"].at("mean").get<double>(), j["fixed_stats"].at("std").get<double>()};
  return c;
}

std::vector<std::size_t> Manifest::find(std::string_view speaker_id, Vowel vowel) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].record.speaker_id == speaker_id && entries[i].record.vowel == vowel) out.push_back(i);
  return out;
}

std::optional<std::size_t> Manifest::find_utterance(std::string_view utterance_id) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].record.utterance_id == utterance_id) return i;
  return std::nullopt;
}

std::vector<SourceUtterance> synthetic_utterances(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  std::vector<SourceUtterance> out;
  for (int spk = 0; spk < config.speakers; ++spk) {
    // Alternate genders; female speakers get higher f0 and formant scaling.
    const Gender gender = spk % 2 == 0 ? Gender::M : Gender::F;
    Rng srng = root.derive(kSpeakerStream + static_cast<std::uint64_t>(spk));
    const double base_f0 = gender == Gender::M ? srng.uniform(95, 140) : srng.uniform(180, 240);
    const double shift = gender == Gender::M ? srng.uniform(-0.06, 0.02) : srng.uniform(0.08, 0.16);
    char speaker_id[16];
    std::snprintf(speaker_id, sizeof speaker_id, "%s%02d", gender == Gender::M ? "M" : "F", spk);
    for (Vowel v : config.vowels) {
      for (int d = 0; d < config.draws; ++d) {
        const std::string utt =
            std::string(speaker_id) + "-" + std::string(vowel_name(v)) + "-" + std::to_string(d);
        Rng rng = root.derive(kDrawStream ^ fnv1a(utt));
        const double f0 = std::clamp(base_f0 * rng.uniform(0.95, 1.05), 70.0, 350.0);
        const double duration = rng.uniform(config.min_duration, config.max_duration);
        SourceUtterance u;
        u.waveform = synth_vowel(rng, v, f0, duration, shift);
        SegmentRecord r;
        r.utterance_id = utt;
        r.speaker_id = speaker_id;
        r.gender = gender;
        r.vowel = v;
        r.start_sample = 0;
        r.end_sample = u.waveform.size();
        u.segments.push_back(r);
        out.push_back(std::move(u));
      }
    }
  }
  return out;
}

std::vector<SourceUtterance> corpus_utterances(const std::filesystem::path& root, const CorpusConfig& config) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("corpus root " + root.string() + " is not a directory");
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".wav" || ext == ".WAV") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());
  std::vector<SourceUtterance> out;
  for (const auto& wav : wavs) {
    fs::path phn;
    for (const char* ext : {".phn", ".PHN"}) {
      auto candidate = wav;
      candidate.replace_extension(ext);
      if (fs::exists(candidate)) phn = candidate;
    }
    if (phn.empty()) continue;
    std::ifstream in(phn);
    std::stringstream text;
    text << in.rdbuf();
    // <dialect>/<G><ID>/<utt>: the speaker directory carries the gender letter.
    const std::string speaker_dir = wav.parent_path().filename().string();
    SegmentRecord tmpl;
    tmpl.speaker_id = speaker_dir;
    tmpl.gender = speaker_dir.empty() ? Gender::unknown : parse_gender(speaker_dir.substr(0, 1));
    tmpl.utterance_id = speaker_dir + "/" + wav.stem().string();
    std::vector<SegmentRecord> segments;
    try {
      segments = extract_segments(parse_phone_alignment(text.str()), config.vowels, tmpl);
    } catch (const ParseError& e) {
      throw ParseError(e.line(), phn.string() + ": " + e.what());
    }
    if (segments.empty()) continue;
    out.push_back({read_wav(wav), std::move(segments)});
  }
  return out;
}

namespace {

std::set<std::string> eval_utterances(const std::vector<SourceUtterance>& sources, double fraction,
                                      std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  std::set<std::string> seen;
  for (const auto& s : sources)
    for (const auto& r : s.segments)
      if (seen.insert(r.utterance_id).second) ranked.emplace_back(mix64(seed ^ fnv1a(r.utterance_id)), r.utterance_id);
  std::sort(ranked.begin(), ranked.end());
  const auto n_eval = static_cast<std::size_t>(std::llround(fraction * double(ranked.size())));
  std::set<std::string> out;
  for (std::size_t i = 0; i < n_eval; ++i) out.insert(ranked[i].second);
  return out;
}

struct PendingEntry {
  ManifestEntry entry;
  Tensor pooled_log;
};

}  // namespace

Corpus build_corpus(const std::vector<SourceUtterance>& sources, const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  const auto eval = eval_utterances(sources, config.eval_fraction, seed);
  const Rng root(seed);
  const std::size_t pool = config.spectrogram.pool();

  std::vector<PendingEntry> pending;
  LogStatsAccumulator stats_acc;
  for (const auto& source : sources) {
    for (const auto& rec : source.segments) {
      auto log = log_spectrogram(source.waveform, rec, config.spectrogram);
      if (std::holds_alternative<Discard>(log)) continue;
      const auto& image = std::get<LogSpectrogram>(log);
      const bool is_eval = eval.count(rec.utterance_id) > 0;
      if (!is_eval) stats_acc.add(image);
      const std::size_t clean_index = pending.size();
      pending.push_back({ManifestEntry{rec, image.valid_frames, 0, is_eval, std::nullopt},
                         average_pool(image.log_mag, pool)});
      if (!config.noise_snr_db) continue;

      // Noisy twin: noise confined to the segment.
      Rng nrng = root.derive(kNoiseStream ^ fnv1a(rec.utterance_id + "@" + std::to_string(rec.start_sample)));
      Waveform noisy = source.waveform;
      Waveform slice{{noisy.samples.begin() + static_cast<long>(rec.start_sample),
                      noisy.samples.begin() + static_cast<long>(rec.end_sample)},
                     noisy.sample_rate};
      slice = add_white_noise(slice, nrng, *config.noise_snr_db);
      std::copy(slice.samples.begin(), slice.samples.end(), noisy.samples.begin() + static_cast<long>(rec.start_sample));
      SegmentRecord twin = rec;
      twin.noise_snr_db = *config.noise_snr_db;
      const auto noisy_log = log_spectrogram(noisy, twin, config.spectrogram);
      const auto& noisy_image = std::get<LogSpectrogram>(noisy_log);
      pending.push_back({ManifestEntry{twin, noisy_image.valid_frames, 0, is_eval, clean_index},
                         average_pool(noisy_image.log_mag, pool)});
    }
  }
  if (pending.empty()) throw Error("empty corpus: no segments survived extraction");

  Corpus corpus;
  corpus.manifest.stats = config.fixed_stats ? *config.fixed_stats : stats_acc.finish();
  corpus.manifest.config = to_json(config);
  corpus.manifest.config["seed"] = seed;
  const NormStats& st = corpus.manifest.stats;
  std::uint64_t offset = 0;
  for (auto& p : pending) {
    Tensor pixels(Shape{1, config.spectrogram.size, config.spectrogram.size});
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = (p.pooled_log[i] - st.mean) / st.std;
    p.entry.offset = offset;
    offset += tensor_record_bytes(pixels);
    corpus.manifest.entries.push_back(std::move(p.entry));
    corpus.spectrograms.push_back(std::move(pixels));
  }
  return corpus;
}

namespace {

json entry_to_json(const ManifestEntry& e) {
  const auto& r = e.record;
  return {{"utt", r.utterance_id},
          {"spk", r.speaker_id},
          {"gender", std::string(gender_name(r.gender))},
          {"vowel", std::string(vowel_name(r.vowel))},
          {"valid_frames", e.valid_frames},
          {"offset", e.offset},
          {"noise_snr_db", r.noise_snr_db ? json(*r.noise_snr_db) : json(nullptr)},
          {"start", r.start_sample},
          {"end", r.end_sample},
          {"split", e.eval ? "eval" : "train"},
          {"pair", e.clean_index ? json(*e.clean_index) : json(nullptr)}};
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry e;
  e.record.utterance_id = j.at("utt").get<std::string>();
  e.record.speaker_id = j.at("spk").get<std::string>();
  e.record.gender = parse_gender(j.at("gender").get<std::string>());
  e.record.vowel = parse_vowel(j.at("vowel").get<std::string>());
  e.record.start_sample = j.value("start", std::size_t{0});
  e.record.end_sample = j.value("end", std::size_t{0});
  if (!j.at("noise_snr_db").is_null()) e.record.noise_snr_db = j["noise_snr_db"].get<double>();
  e.valid_frames = j.at("valid_frames").get<std::size_t>();
  e.offset = j.at("offset").get<std::uint64_t>();
  e.eval = j.value("split", std::string("train")) == "eval";
  if (j.contains("pair") && !j["pair"].is_null()) e.clean_index = j["pair"].get<std::size_t>();
  return e;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ostringstream archive(std::ios::binary);
  for (const auto& t : corpus.spectrograms) write_tensor(archive, t);
  std::ostringstream manifest;
  const json header = {{"header",
                        {{"format", "speechflow-corpus"},
                         {"version", 1},
                         {"count", corpus.manifest.entries.size()},
                         {"stats", {{"mean", corpus.manifest.stats.mean}, {"std", corpus.manifest.stats.std}}},
                         {"config", corpus.manifest.config}}}};
  manifest << header.dump() << '\n';
  for (const auto& e : corpus.manifest.entries) manifest << entry_to_json(e).dump() << '\n';
  write_file_atomic(dir / kArchiveFile, archive.str());
  write_file_atomic(dir / kManifestFile, manifest.str());
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw IoError("cannot open " + (dir / kManifestFile).string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("manifest: ") + e.what());
    }
    if (j.contains("header")) {
      const auto& h = j["header"];
      corpus.manifest.stats = {h.at("stats").at("mean").get<double>(), h.at("stats").at("std").get<double>()};
      corpus.manifest.config = h.at("config");
      continue;
    }
    corpus.manifest.entries.push_back(entry_from_json(j));
  }
  corpus.spectrograms = load_tensors(dir / kArchiveFile);
  if (corpus.spectrograms.size() != corpus.manifest.entries.size())
    throw FormatError("archive holds " + std::to_string(corpus.spectrograms.size()) + " tensors, manifest lists " +
                      std::to_string(corpus.manifest.entries.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < corpus.spectrograms.size(); ++i) {
    if (corpus.manifest.entries[i].offset != offset) throw FormatError("manifest offset mismatch at record " + std::to_string(i));
    offset += tensor_record_bytes(corpus.spectrograms[i]);
  }
  return corpus;
}

std::vector<Tensor> training_set(const Corpus& corpus, bool include_noisy) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < corpus.spectrograms.size(); ++i) {
    const auto& e = corpus.manifest.entries[i];
    if (e.eval) continue;
    if (e.clean_index && !include_noisy) continue;
    out.push_back(corpus.spectrograms[i]);
  }
  return out;
}

}  // namespace speechflow
