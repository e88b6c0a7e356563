#include <sstream>

#include "speechflow/cli.hpp"
#include "speechflow/latent.hpp"

namespace speechflow {

using nlohmann::json;

namespace {

// Keys whose default is null but which accept a value.
bool nullable(const std::string& path) { return path == "dataset.noise_snr_db" || path == "dataset.fixed_stats"; }

bool compatible(const json& def, const json& v, const std::string& path) {
  if (v.is_null()) return def.is_null() || nullable(path);
  if (def.is_null()) return nullable(path);
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

void merge_at(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config" + (prefix.empty() ? "" : " section " + prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_at(slot, value, path);
    } else {
      if (!compatible(slot, value, path)) throw ConfigError("config key '" + path + "' has the wrong type");
      slot = value;
    }
  }
}

}  // namespace

json default_run_config() {
  const CorpusConfig c;
  const TrainConfig t;
  const FlowConfig f = FlowConfig::desk();
  const AnalysisConfig a;
  json vowels = json::array();
  for (Vowel v : c.vowels) vowels.push_back(std::string(vowel_name(v)));
  return {
      {"seed", 0},
      {"stft",
       {{"window_len", c.spectrogram.stft.window_len},
        {"hop", c.spectrogram.stft.hop},
        {"fft_size", c.spectrogram.stft.fft_size}}},
      {"dataset",
       {{"frames", c.spectrogram.frames},
        {"bands", c.spectrogram.bands},
        {"size", c.spectrogram.size},
        {"vowels", vowels},
        {"noise_snr_db", 10.0},
        {"eval_fraction", c.eval_fraction},
        {"speakers", c.speakers},
        {"draws", c.draws},
        {"min_duration", c.min_duration},
        {"max_duration", c.max_duration},
        {"fixed_stats", nullptr},
        {"root", ""}}},
      {"flow", {{"levels", f.levels}, {"depth", f.depth}, {"width", f.width}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"steps", t.steps},
        {"lr", t.learning_rate},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"epsilon", t.epsilon},
        {"grad_clip_norm", t.grad_clip_norm},
        {"checkpoint_every", t.checkpoint_every},
        {"jitter", t.jitter},
        {"include_noisy", t.include_noisy},
        {"log_wall_time", t.log_wall_time}}},
      {"analysis",
       {{"dims_sampled", a.dims_sampled},
        {"temperature", a.temperature},
        {"num_samples", a.num_samples},
        {"alphas", a.alphas},
        {"betas", a.betas},
        {"write_pgm", a.write_pgm},
        {"write_audio", a.write_audio},
        {"audit_h", a.audit_h},
        {"audit_tolerance", a.audit_tolerance}}},
  };
}

void merge_config(json& base, const json& patch) { merge_at(base, patch, ""); }

void set_config_value(json& config, const std::string& path, const std::string& text) {
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  // Build the nested patch so the same key and type checks apply.
  json patch = value;
  std::string rest = path;
  std::vector<std::string> keys;
  for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1))
    keys.push_back(rest.substr(0, dot));
  keys.push_back(rest);

  const json* def = &config;
  for (const auto& k : keys) {
    if (!def->is_object() || !def->contains(k)) throw ConfigError("unknown config key '" + path + "'");
    def = &(*def)[k];
  }
  if (def->is_array() && !value.is_array()) {
    json list = json::array();
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) list.push_back(item);
    patch = list;
  } else if (def->is_string() && !value.is_string()) {
    patch = text;
  }
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json{{*it, patch}};
  merge_config(config, patch);
}

RunConfig resolve_run_config(const json& merged) {
  RunConfig rc;
  rc.echo = merged;
  try {
    rc.seed = merged.at("seed").get<std::uint64_t>();
    const json& s = merged.at("stft");
    const json& d = merged.at("dataset");
    json corpus = {{"window_len", s.at("window_len")},
                   {"hop", s.at("hop")},
                   {"fft_size", s.at("fft_size")},
                   {"frames", d.at("frames")},
                   {"bands", d.at("bands")},
                   {"size", d.at("size")},
                   {"vowels", d.at("vowels")},
                   {"noise_snr_db", d.at("noise_snr_db")},
                   {"eval_fraction", d.at("eval_fraction")},
                   {"speakers", d.at("speakers")},
                   {"draws", d.at("draws")},
                   {"min_duration", d.at("min_duration")},
                   {"max_duration", d.at("max_duration")},
                   {"fixed_stats", d.at("fixed_stats")}};
    rc.corpus = corpus_config_from_json(corpus);
    rc.root = d.at("root").get<std::string>();

    const json& f = merged.at("flow");
    rc.flow = FlowConfig{f.at("levels").get<int>(), f.at("depth").get<int>(), f.at("width").get<int>(),
                         rc.corpus.spectrogram.size};

    json train = merged.at("train");
    train["seed"] = rc.seed;
    rc.train = train_config_from_json(train);

    const json& a = merged.at("analysis");
    rc.analysis.dims_sampled = a.at("dims_sampled").get<std::size_t>();
    rc.analysis.temperature = a.at("temperature").get<double>();
    rc.analysis.num_samples = a.at("num_samples").get<std::size_t>();
    rc.analysis.alphas = a.at("alphas").get<std::string>();
    rc.analysis.betas = a.at("betas").get<std::string>();
    rc.analysis.write_pgm = a.at("write_pgm").get<bool>();
    rc.analysis.write_audio = a.at("write_audio").get<bool>();
    rc.analysis.audit_h = a.at("audit_h").get<double>();
    rc.analysis.audit_tolerance = a.at("audit_tolerance").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  try {
    rc.corpus.validate();
    rc.flow.validate();
    rc.train.validate();
    parse_sweep(rc.analysis.alphas);
    parse_sweep(rc.analysis.betas);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (!(rc.analysis.temperature >= 0)) throw ConfigError("invalid config: analysis.temperature must be >= 0");
  if (!(rc.analysis.audit_h > 0)) throw ConfigError("invalid config: analysis.audit_h must be positive");
  return rc;
}

std::vector<double> parse_sweep(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError("bad number '" + s + "' in sweep '" + text + "'");
    return v;
  };
  std::vector<std::string> parts;
  const char sep = text.find(':') != std::string::npos ? ':' : ',';
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, sep);) parts.push_back(p);
  if (parts.empty()) throw ConfigError("empty sweep");
  if (sep == ':') {
    if (parts.size() != 3) throw ConfigError("sweep '" + text + "' must be lo:hi:step");
    try {
      return sweep(number(parts[0]), number(parts[1]), number(parts[2]));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(number(p));
  return out;
}

}  // namespace speechflow
