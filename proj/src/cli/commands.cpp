#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "speechflow/cli.hpp"
#include "speechflow/latent.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  RunConfig rc;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void write_tensors(const fs::path& path, std::span<const Tensor> tensors) {
  std::ostringstream buf(std::ios::binary);
  for (const Tensor& t : tensors) write_tensor(buf, t);
  write_text(path, buf.str());
}

TrainState load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--model is required");
  return load_checkpoint(path);
}

void require_compatible(const Corpus& corpus, const FlowModel& model) {
  if (corpus.spectrograms.empty()) throw InvalidArgument("corpus is empty");
  const Shape expected{1, model.config().size, model.config().size};
  if (corpus.spectrograms[0].shape() != expected)
    throw DimensionError("corpus spectrograms are " + shape_string(corpus.spectrograms[0].shape()) +
                         " but the model expects " + shape_string(expected));
}

// An entry index, or the utterance id of a clean entry.
std::size_t resolve_entry(const Corpus& corpus, const std::string& ref) {
  if (ref.empty()) throw ConfigError("segment reference is empty");
  if (std::all_of(ref.begin(), ref.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    const std::size_t i = std::stoul(ref);
    if (i >= corpus.spectrograms.size())
      throw ConfigError("entry " + ref + " out of range (corpus has " + std::to_string(corpus.spectrograms.size()) +
                        ")");
    return i;
  }
  if (auto i = corpus.manifest.find_utterance(ref)) return *i;
  throw ConfigError("no corpus entry for utterance '" + ref + "'");
}

// Phase source for an entry: the STFT of its clean source segment.
std::optional<ComplexStft> phase_source(const Manifest& manifest, std::size_t entry) {
  const CorpusConfig cfg = corpus_config_from_json(manifest.config);
  const SegmentRecord& rec = manifest.entries[entry].record;
  std::vector<SourceUtterance> sources;
  if (manifest.config.contains("root")) {
    const fs::path root = manifest.config["root"].get<std::string>();
    if (!fs::exists(root)) return std::nullopt;
    sources = corpus_utterances(root, cfg);
  } else {
    sources = synthetic_utterances(cfg, manifest.config.at("seed").get<std::uint64_t>());
  }
  for (const auto& src : sources)
    for (const auto& seg : src.segments)
      if (seg.utterance_id == rec.utterance_id && seg.start_sample == rec.start_sample &&
          seg.end_sample == rec.end_sample)
        return stft(segment_waveform(src.waveform, seg), cfg.spectrogram.stft);
  return std::nullopt;
}

void emit_spectrogram(const Context& ctx, const fs::path& stem, const Tensor& pixels, const NormStats& stats,
                      const SpectrogramConfig& spec, const std::optional<ComplexStft>& phase) {
  const std::string base = stem.string();
  write_text(base + ".fstn", [&] {
    std::ostringstream b(std::ios::binary);
    write_tensor(b, pixels);
    return b.str();
  }());
  if (ctx.rc.analysis.write_pgm) write_pgm(base + ".pgm", pixels);
  if (ctx.rc.analysis.write_audio && phase)
    write_wav(base + ".wav", reconstruct(pixels, stats, spec, *phase));
}

// ---------------------------------------------------------------- commands

int run_synth(const Context& ctx, const std::string& out) {
  const fs::path dir = or_default(out, ctx.out_dir / "corpus");
  Corpus corpus = build_corpus(synthetic_utterances(ctx.rc.corpus, ctx.rc.seed), ctx.rc.corpus, ctx.rc.seed);
  write_corpus(dir, corpus);
  ctx.err << "wrote " << corpus.spectrograms.size() << " spectrograms to " << dir.string() << "\n";
  return 0;
}

int run_prepare(const Context& ctx, const std::string& root_flag, const std::string& out) {
  const std::string root = root_flag.empty() ? ctx.rc.root : root_flag;
  if (root.empty()) throw ConfigError("prepare needs --root or dataset.root");
  const fs::path dir = or_default(out, ctx.out_dir / "corpus");
  Corpus corpus = build_corpus(corpus_utterances(root, ctx.rc.corpus), ctx.rc.corpus, ctx.rc.seed);
  corpus.manifest.config["root"] = fs::absolute(root).string();
  write_corpus(dir, corpus);
  ctx.err << "wrote " << corpus.spectrograms.size() << " spectrograms to " << dir.string() << "\n";
  return 0;
}

int run_train(const Context& ctx, const std::string& corpus_dir, const std::string& ckpt_flag,
              const std::string& metrics_flag, bool resume) {
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  const std::vector<Tensor> data = training_set(corpus, ctx.rc.train.include_noisy);
  const fs::path ckpt = or_default(ckpt_flag, ctx.out_dir / "model.ckpt");
  const fs::path metrics = or_default(metrics_flag, ctx.out_dir / "metrics.csv");

  std::optional<TrainState> state;
  if (resume && fs::exists(ckpt)) {
    state = load_checkpoint(ckpt);
    if (!(state->model.config() == ctx.rc.flow)) throw ConfigError("checkpoint flow config differs from the run config");
    state->train.steps = ctx.rc.train.steps;
    ctx.err << "resuming from step " << state->step << "\n";
  } else {
    state = make_train_state(ctx.rc.flow, ctx.rc.train, corpus.manifest.stats, ctx.rc.echo);
  }
  TrainOptions options{ckpt, metrics, [&](const MetricsRow& row) {
                         if (row.step % 50 == 0) ctx.err << "step " << row.step << " nats/dim " << row.nats_per_dim << "\n";
                       }};
  const TrainResult result = train_loop(data, std::move(*state), options);
  if (!result.metrics.empty()) {
    const MetricsRow& last = result.metrics.back();
    ctx.out << "step " << last.step << " nats_per_dim " << general(last.nats_per_dim) << " bits_per_dim "
            << general(last.bits_per_dim) << "\n";
  }
  return 0;
}

int run_encode(const Context& ctx, const std::string& model_path, const std::string& corpus_dir,
               const std::string& out) {
  const TrainState state = load_model(model_path);
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  require_compatible(corpus, state.model);
  std::vector<Tensor> codes;
  std::ostringstream csv;
  csv << csv_comment(ctx.rc.echo) << "index,utt,split,noisy,log_px,nats_per_dim\n";
  const double dims = static_cast<double>(state.model.config().dims());
  for (std::size_t i = 0; i < corpus.spectrograms.size(); ++i) {
    EncodeResult e = encode(state.model, corpus.spectrograms[i]);
    const auto& entry = corpus.manifest.entries[i];
    csv << i << ',' << entry.record.utterance_id << ',' << (entry.eval ? "eval" : "train") << ','
        << (entry.record.noise_snr_db ? 1 : 0) << ',' << general(e.log_px) << ',' << general(-e.log_px / dims) << "\n";
    codes.push_back(std::move(e.code.flat));
  }
  const fs::path path = or_default(out, ctx.out_dir / "codes.fstn");
  write_tensors(path, codes);
  write_text(fs::path(path).replace_extension(".csv"), csv.str());
  ctx.err << "encoded " << codes.size() << " entries\n";
  return 0;
}

int run_sample(const Context& ctx, const std::string& model_path, std::optional<std::size_t> n,
               std::optional<double> temperature) {
  const TrainState state = load_model(model_path);
  Rng rng = Rng(ctx.rc.seed).derive(0x5a3b1e);
  const Samples s =
      sample(state.model, rng, n.value_or(ctx.rc.analysis.num_samples), temperature.value_or(ctx.rc.analysis.temperature));
  write_tensors(ctx.out_dir / "samples.fstn", s.spectrograms);
  std::vector<Tensor> codes;
  for (const auto& c : s.codes) codes.push_back(c.flat);
  write_tensors(ctx.out_dir / "sample_codes.fstn", codes);
  if (ctx.rc.analysis.write_pgm)
    for (std::size_t i = 0; i < s.spectrograms.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%02zu.pgm", i);
      write_pgm(ctx.out_dir / "samples" / name, s.spectrograms[i]);
    }
  ctx.err << "wrote " << s.spectrograms.size() << " samples\n";
  return 0;
}

int run_interpolate(const Context& ctx, const std::string& model_path, const std::string& corpus_dir,
                    const std::string& a_ref, const std::string& b_ref, const std::string& alphas_flag) {
  const TrainState state = load_model(model_path);
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  require_compatible(corpus, state.model);
  const std::size_t ia = resolve_entry(corpus, a_ref), ib = resolve_entry(corpus, b_ref);
  const auto alphas = parse_sweep(alphas_flag.empty() ? ctx.rc.analysis.alphas : alphas_flag);
  const LatentCode za = encode(state.model, corpus.spectrograms[ia]).code;
  const LatentCode zb = encode(state.model, corpus.spectrograms[ib]).code;
  const SpectrogramConfig spec = corpus_config_from_json(corpus.manifest.config).spectrogram;
  const auto phase = ctx.rc.analysis.write_audio ? phase_source(corpus.manifest, ia) : std::nullopt;
  const auto codes = interpolate(za, zb, alphas);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const fs::path stem = ctx.out_dir / "interpolate" / ("alpha_" + fixed(alphas[i]));
    emit_spectrogram(ctx, stem, decode(state.model, codes[i]), corpus.manifest.stats, spec, phase);
    ctx.out << stem.string() << ".fstn\n";
  }
  return 0;
}

double mean_squared(const Tensor& a, const Tensor& b) {
  const Tensor d = a - b;
  return dot(d.reshaped({d.size()}), d.reshaped({d.size()})) / static_cast<double>(d.size());
}

int run_denoise(const Context& ctx, const std::string& model_path, const std::string& corpus_dir,
                const std::string& eval_dir, const std::string& betas_flag) {
  const TrainState state = load_model(model_path);
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  require_compatible(corpus, state.model);
  const auto betas = parse_sweep(betas_flag.empty() ? ctx.rc.analysis.betas : betas_flag);

  std::vector<Tensor> clean, noisy;
  std::optional<double> snr;
  for (std::size_t i = 0; i < corpus.manifest.entries.size(); ++i) {
    const auto& e = corpus.manifest.entries[i];
    if (!e.clean_index || e.eval) continue;
    noisy.push_back(encode(state.model, corpus.spectrograms[i]).code.flat);
    clean.push_back(encode(state.model, corpus.spectrograms[*e.clean_index]).code.flat);
    snr = e.record.noise_snr_db;
  }
  if (noisy.empty()) throw InvalidArgument("corpus has no clean/noisy training pairs; set dataset.noise_snr_db");
  const DisplacementVector xi = displacement(clean, noisy, snr);
  write_tensors(ctx.out_dir / "xi.fstn", std::vector<Tensor>{xi.xi});

  const Corpus held_out = eval_dir.empty() ? corpus : read_corpus(eval_dir);
  require_compatible(held_out, state.model);
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < held_out.manifest.entries.size(); ++i) {
    const auto& e = held_out.manifest.entries[i];
    if (e.clean_index && (e.eval || !eval_dir.empty())) targets.push_back(i);
  }
  if (targets.empty()) throw InvalidArgument("no held-out noisy entries to denoise");

  std::vector<LatentCode> codes;
  for (std::size_t i : targets) codes.push_back(encode(state.model, held_out.spectrograms[i]).code);
  std::ostringstream csv;
  csv << csv_comment(ctx.rc.echo) << "beta,mse_to_clean\n";
  double best_beta = 0, best_mse = std::numeric_limits<double>::infinity();
  for (double beta : betas) {
    std::vector<Tensor> outputs;
    double mse = 0;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      outputs.push_back(decode(state.model, denoise(codes[j], xi.xi, beta)));
      mse += mean_squared(outputs.back(), held_out.spectrograms[*held_out.manifest.entries[targets[j]].clean_index]);
    }
    mse /= static_cast<double>(targets.size());
    if (mse < best_mse) {
      best_mse = mse;
      best_beta = beta;
    }
    write_tensors(ctx.out_dir / "denoise" / ("beta_" + fixed(beta) + ".fstn"), outputs);
    csv << general(beta) << ',' << general(mse) << "\n";
  }
  write_text(ctx.out_dir / "denoise.csv", csv.str());
  ctx.out << "best beta " << general(best_beta) << " mse " << general(best_mse) << " over " << targets.size()
          << " held-out segments\n";
  return 0;
}

std::string entry_label(const ManifestEntry& e, const std::string& task) {
  if (task == "vowel") return std::string(vowel_name(e.record.vowel));
  if (task == "gender") return std::string(gender_name(e.record.gender));
  return e.record.speaker_id;
}

int run_lda(const Context& ctx, const std::string& model_path, const std::string& corpus_dir, const std::string& task,
            const std::string& classes) {
  if (task != "vowel" && task != "gender" && task != "speaker")
    throw ConfigError("--task must be vowel, gender or speaker");
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  std::optional<TrainState> state;
  if (!model_path.empty()) {
    state = load_model(model_path);
    require_compatible(corpus, state->model);
  }

  std::string a, b;
  if (!classes.empty()) {
    const auto comma = classes.find(',');
    if (comma == std::string::npos) throw ConfigError("--classes takes two labels, e.g. aa,ae");
    a = classes.substr(0, comma);
    b = classes.substr(comma + 1);
  } else if (task == "vowel") {
    a = "aa", b = "ae";
  } else if (task == "gender") {
    a = "M", b = "F";
  } else {
    // First two speakers of the same gender, so the pair is not a gender probe.
    std::map<std::string, Gender> speakers;
    for (const auto& e : corpus.manifest.entries) speakers.emplace(e.record.speaker_id, e.record.gender);
    for (auto i = speakers.begin(); i != speakers.end() && a.empty(); ++i)
      for (auto j = std::next(i); j != speakers.end(); ++j)
        if (i->second == j->second) {
          a = i->first, b = j->first;
          break;
        }
    if (a.empty() && speakers.size() >= 2) a = speakers.begin()->first, b = std::next(speakers.begin())->first;
  }

  std::vector<Tensor> pix_a, pix_b, all_pix;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < corpus.manifest.entries.size(); ++i) {
    const auto& e = corpus.manifest.entries[i];
    if (e.record.noise_snr_db) continue;
    const std::string label = entry_label(e, task);
    if (label != a && label != b) continue;
    Tensor v = corpus.spectrograms[i].reshaped({corpus.spectrograms[i].size()});
    (label == a ? pix_a : pix_b).push_back(v);
    all_pix.push_back(std::move(v));
    labels.push_back(label);
  }
  if (pix_a.size() < 2 || pix_b.size() < 2)
    throw InvalidArgument("lda needs at least two clean segments of '" + a + "' and '" + b + "'");

  std::ostringstream fisher;
  fisher << csv_comment(ctx.rc.echo) << "task,space,class_a,class_b,fisher_ratio\n";
  auto probe_space = [&](const std::string& space, std::span<const Tensor> va, std::span<const Tensor> vb,
                         std::span<const Tensor> all) {
    const LdaProbe probe = lda_fit(va, vb);
    write_scatter_csv(ctx.out_dir / ("lda_" + task + "_" + space + ".csv"), project_scatter(all, labels, probe),
                      ctx.rc.echo);
    fisher << task << ',' << space << ',' << a << ',' << b << ',' << general(probe.fisher_ratio) << "\n";
    ctx.out << task << ' ' << space << " fisher_ratio " << general(probe.fisher_ratio) << "\n";
  };
  probe_space("pixels", pix_a, pix_b, all_pix);
  if (state) {
    auto to_codes = [&](std::span<const Tensor> xs) {
      std::vector<Tensor> out;
      for (const Tensor& x : xs)
        out.push_back(encode(state->model, x.reshaped({1, state->model.config().size, state->model.config().size})).code.flat);
      return out;
    };
    probe_space("codes", to_codes(pix_a), to_codes(pix_b), to_codes(all_pix));
  }
  write_text(ctx.out_dir / ("fisher_" + task + ".csv"), fisher.str());
  return 0;
}

int run_gauss(const Context& ctx, const std::string& model_path, const std::string& corpus_dir,
              std::optional<std::size_t> dims) {
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  std::vector<Tensor> pixels;
  for (const Tensor& x : training_set(corpus, false)) pixels.push_back(x.reshaped({x.size()}));
  const std::size_t k = dims.value_or(ctx.rc.analysis.dims_sampled);
  std::ostringstream summary;
  summary << "space,dims,mean_abs_skewness,mean_abs_excess_kurtosis,degenerate\n";
  auto report = [&](const std::string& space, const std::vector<Tensor>& v, std::uint64_t stream) {
    Rng rng = Rng(ctx.rc.seed).derive(stream);
    const GaussianityReport r = gaussianity_report(v, k, rng);
    write_gaussianity_csv(ctx.out_dir / ("gauss_" + space + ".csv"), r, ctx.rc.echo);
    write_scatter_2d_csv(ctx.out_dir / ("scatter2d_" + space + ".csv"), r, ctx.rc.echo);
    summary << space << ',' << r.dims.size() << ',' << general(r.mean_abs_skewness) << ','
            << general(r.mean_abs_excess_kurtosis) << ',' << r.degenerate.size() << "\n";
  };
  report("pixels", pixels, 0x9a01);
  if (!model_path.empty()) {
    const TrainState state = load_model(model_path);
    require_compatible(corpus, state.model);
    std::vector<Tensor> codes;
    for (const Tensor& x : training_set(corpus, false)) codes.push_back(encode(state.model, x).code.flat);
    report("codes", codes, 0x9a02);
  }
  ctx.out << summary.str();
  return 0;
}

int run_reconstruct(const Context& ctx, const std::string& corpus_dir, const std::string& entry_ref,
                    const std::string& input, std::size_t item, const std::string& out) {
  const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
  const std::size_t entry = resolve_entry(corpus, entry_ref);
  Tensor pixels = corpus.spectrograms[entry];
  if (!input.empty()) {
    const auto tensors = load_tensors(input);
    if (item >= tensors.size())
      throw ConfigError("--item " + std::to_string(item) + " out of range (" + std::to_string(tensors.size()) + " tensors)");
    pixels = tensors[item];
  }
  const auto phase = phase_source(corpus.manifest, entry);
  if (!phase) throw IoError("source audio for entry " + std::to_string(entry) + " is unavailable");
  const SpectrogramConfig spec = corpus_config_from_json(corpus.manifest.config).spectrogram;
  const fs::path path = or_default(out, ctx.out_dir / "reconstruct.wav");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_wav(path, reconstruct(pixels, corpus.manifest.stats, spec, *phase));
  ctx.out << path.string() << "\n";
  return 0;
}

int run_grad_audit(const Context& ctx, const std::string& model_path, const std::string& corpus_dir,
                   std::size_t max_per_tensor) {
  Rng rng = Rng(ctx.rc.seed).derive(0xa0d1);
  std::optional<FlowModel> model;
  std::vector<Tensor> batch;
  if (model_path.empty()) {
    // Tiny randomly perturbed model on Gaussian inputs.
    const FlowConfig tiny{1, 1, 4, 4};
    model.emplace(tiny, rng);
    perturb_parameters(*model, rng, 0.1);
    for (int i = 0; i < 2; ++i) batch.push_back(randn(rng, {1, 4, 4}));
  } else {
    model.emplace(load_model(model_path).model);
    const Corpus corpus = read_corpus(or_default(corpus_dir, ctx.out_dir / "corpus"));
    require_compatible(corpus, *model);
    const auto data = training_set(corpus, false);
    for (std::size_t i = 0; i < std::min<std::size_t>(2, data.size()); ++i) batch.push_back(data[i]);
  }
  const AuditReport r = grad_audit(*model, batch, ctx.rc.analysis.audit_h, ctx.rc.analysis.audit_tolerance,
                                   max_per_tensor, ctx.rc.seed);
  ctx.out << "group,max_rel_error,checked,status\n";
  for (const auto& g : r.groups)
    ctx.out << g.name << ',' << general(g.max_rel_error) << ',' << g.checked << ','
            << (g.max_rel_error <= r.tolerance ? "pass" : "FAIL") << "\n";
  ctx.err << (r.passed() ? "all groups within " : "some groups exceed ") << general(r.tolerance) << "\n";
  return 0;
}

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object() && path != "dataset.fixed_stats")
      collect_leaves(value, path, out);
    else
      out.push_back(path);
  }
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

}  // namespace

int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Normalizing-flow toolkit for speech spectrograms", "speechflow"};
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::optional<std::uint64_t> seed;
  std::string config_path, out_dir = ".";
  app.add_option("--seed", seed, "Random seed (overrides the config's seed)");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out-dir", out_dir, "Directory for outputs")->capture_default_str();

  const json defaults = default_run_config();
  std::vector<std::string> leaves;
  collect_leaves(defaults, "", leaves);
  std::map<std::string, std::string> overrides;
  for (const auto& path : leaves)
    if (path != "seed")
      app.add_option("--" + path, overrides[path], "default " + defaults[json::json_pointer("/" + std::regex_replace(path, std::regex("\\."), "/"))].dump())
          ->group("Config overrides")
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string corpus, model, out_path, checkpoint, metrics, a, b, alphas, betas, eval_corpus, task = "vowel",
                                                                                          classes, root, input,
                                                                                          entry;
  std::optional<std::size_t> count, dims;
  std::optional<double> temperature;
  std::size_t item = 0, max_per_tensor = 0;
  bool resume = false;

  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };
  CLI::App* synth = sub("synth-data", "Build a synthetic vowel corpus");
  synth->add_option("--out", out_path, "Corpus directory (default <out-dir>/corpus)");
  CLI::App* prepare = sub("prepare", "Ingest a real corpus with phone alignments");
  prepare->add_option("--root", root, "Corpus root (default dataset.root)");
  prepare->add_option("--out", out_path, "Corpus directory (default <out-dir>/corpus)");
  CLI::App* train = sub("train", "Train a flow model by maximum likelihood");
  train->add_option("--corpus", corpus, "Corpus directory");
  train->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out-dir>/model.ckpt)");
  train->add_option("--metrics", metrics, "Metrics CSV (default <out-dir>/metrics.csv)");
  train->add_flag("--resume", resume, "Continue from the checkpoint if it exists");
  CLI::App* enc = sub("encode", "Encode every corpus entry");
  enc->add_option("--model", model, "Checkpoint")->required();
  enc->add_option("--corpus", corpus, "Corpus directory");
  enc->add_option("--out", out_path, "Code file (default <out-dir>/codes.fstn)");
  CLI::App* smp = sub("sample", "Decode codes drawn from the prior");
  smp->add_option("--model", model, "Checkpoint")->required();
  smp->add_option("--n", count, "Number of samples (default analysis.num_samples)");
  smp->add_option("--temperature", temperature, "Prior temperature (default analysis.temperature)");
  CLI::App* interp = sub("interpolate", "Decode points on the line between two codes");
  interp->add_option("--model", model, "Checkpoint")->required();
  interp->add_option("--corpus", corpus, "Corpus directory");
  interp->add_option("--a", a, "First segment: entry index or utterance id")->required();
  interp->add_option("--b", b, "Second segment: entry index or utterance id")->required();
  interp->add_option("--alphas", alphas, "lo:hi:step or list (default analysis.alphas)");
  CLI::App* den = sub("denoise", "Subtract the clean-to-noisy displacement from noisy codes");
  den->add_option("--model", model, "Checkpoint")->required();
  den->add_option("--corpus", corpus, "Corpus with clean/noisy pairs");
  den->add_option("--eval-corpus", eval_corpus, "Held-out corpus (default: eval split of --corpus)");
  den->add_option("--beta-sweep", betas, "lo:hi:step or list (default analysis.betas)");
  CLI::App* lda = sub("lda", "Two-class LDA probe in pixel and code space");
  lda->add_option("--model", model, "Checkpoint (omit for pixel space only)");
  lda->add_option("--corpus", corpus, "Corpus directory");
  lda->add_option("--task", task, "vowel, gender or speaker")->capture_default_str();
  lda->add_option("--classes", classes, "Two labels, e.g. aa,ae");
  CLI::App* gauss = sub("gauss-report", "Skewness and kurtosis of pixels and codes");
  gauss->add_option("--model", model, "Checkpoint (omit for pixel space only)");
  gauss->add_option("--corpus", corpus, "Corpus directory");
  gauss->add_option("--dims", dims, "Dimensions sampled (default analysis.dims_sampled)");
  CLI::App* recon = sub("reconstruct", "Spectrogram to WAV using a corpus entry's phase");
  recon->add_option("--corpus", corpus, "Corpus directory");
  recon->add_option("--entry", entry, "Phase source: entry index or utterance id")->required();
  recon->add_option("--input", input, "Tensor file (default: the entry's own spectrogram)");
  recon->add_option("--item", item, "Index of the tensor within --input");
  recon->add_option("--out", out_path, "WAV path (default <out-dir>/reconstruct.wav)");
  CLI::App* audit = sub("grad-audit", "Compare analytic and finite-difference gradients");
  audit->add_option("--model", model, "Checkpoint (default: a tiny random model)");
  audit->add_option("--corpus", corpus, "Corpus for the audit batch when --model is given");
  audit->add_option("--max-per-tensor", max_per_tensor, "Entries checked per tensor (0 = all)");

  if (args.empty()) {
    err << app.help();
    return 1;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  const auto chosen = app.get_subcommands();
  if (chosen.empty()) {
    err << "error: a subcommand is required\n\n" << app.help();
    return 1;
  }
  const std::string command = chosen.front()->get_name();

  try {
    json merged = defaults;
    if (!config_path.empty()) merge_config(merged, read_config_file(config_path));
    for (const auto& path : leaves)
      if (path != "seed" && app.get_option("--" + path)->count() > 0) set_config_value(merged, path, overrides[path]);
    if (seed) merged["seed"] = *seed;
    Context ctx{resolve_run_config(merged), out_dir, out, err};
    fs::create_directories(ctx.out_dir);

    if (command == "synth-data") return run_synth(ctx, out_path);
    if (command == "prepare") return run_prepare(ctx, root, out_path);
    if (command == "train") return run_train(ctx, corpus, checkpoint, metrics, resume);
    if (command == "encode") return run_encode(ctx, model, corpus, out_path);
    if (command == "sample") return run_sample(ctx, model, count, temperature);
    if (command == "interpolate") return run_interpolate(ctx, model, corpus, a, b, alphas);
    if (command == "denoise") return run_denoise(ctx, model, corpus, eval_corpus, betas);
    if (command == "lda") return run_lda(ctx, model, corpus, task, classes);
    if (command == "gauss-report") return run_gauss(ctx, model, corpus, dims);
    if (command == "reconstruct") return run_reconstruct(ctx, corpus, entry, input, item, out_path);
    if (command == "grad-audit") return run_grad_audit(ctx, model, corpus, max_per_tensor);
    err << "error: unhandled subcommand " << command << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what();
    if (!e.last_good().empty()) err << " (last good checkpoint: " << e.last_good().string() << ")";
    err << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace speechflow
