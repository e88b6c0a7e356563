#include <fstream>
#include <sstream>

#include "speechflow/tensor_io.hpp"
#include "speechflow/train.hpp"

namespace speechflow {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};

std::vector<std::string> tensor_names(const FlowParams& params) {
  std::vector<std::string> names;
  for_each_tensor(params, [&](const std::string& n, const Tensor&) { names.push_back(n); });
  return names;
}

void write_params(std::ostream& out, const FlowParams& params) {
  for_each_tensor(params, [&](const std::string&, const Tensor& t) { write_tensor(out, t); });
}

void read_params(std::istream& in, FlowParams& params) {
  for_each_tensor(params, [&](const std::string& name, Tensor& t) {
    Tensor loaded = read_tensor(in);
    if (loaded.shape() != t.shape())
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_string(loaded.shape()) +
                        ", expected " + shape_string(t.shape()));
    t = std::move(loaded);
  });
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be positive");
  if (steps < 0) throw InvalidArgument("train.steps must be non-negative");
  if (!(learning_rate > 0)) throw InvalidArgument("train.learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw InvalidArgument("train.beta1 and train.beta2 must lie in [0, 1)");
  if (!(epsilon > 0)) throw InvalidArgument("train.epsilon must be positive");
  if (!(grad_clip_norm >= 0)) throw InvalidArgument("train.grad_clip_norm must be non-negative");
  if (checkpoint_every < 1) throw InvalidArgument("train.checkpoint_every must be positive");
  if (!(jitter >= 0)) throw InvalidArgument("train.jitter must be non-negative");
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},     {"steps", c.steps},
          {"lr", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},               {"epsilon", c.epsilon},
          {"grad_clip_norm", c.grad_clip_norm}, {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}, {"jitter", c.jitter},
          {"include_noisy", c.include_noisy}, {"log_wall_time", c.log_wall_time}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("lr", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.jitter = j.value("jitter", c.jitter);
  c.include_noisy = j.value("include_noisy", c.include_noisy);
  c.log_wall_time = j.value("log_wall_time", c.log_wall_time);
  return c;
}

json to_json(const FlowConfig& c) {
  return {{"levels", c.levels}, {"depth", c.depth}, {"width", c.width}, {"size", c.size}};
}

FlowConfig flow_config_from_json(const json& j) {
  FlowConfig c;
  c.levels = j.value("levels", c.levels);
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.size = j.value("size", c.size);
  return c;
}

TrainState make_train_state(const FlowConfig& flow, const TrainConfig& train, const NormStats& stats,
                            json run_config) {
  flow.validate();
  train.validate();
  Rng init = Rng(train.seed).derive(0x1417);
  FlowModel model(flow, init);
  AdamState adam = AdamState::zeros_for(model.params());
  return TrainState{std::move(model), std::move(adam), 0, stats, train, 0.0, 0, std::move(run_config)};
}

std::string encode_checkpoint(const TrainState& state) {
  const FlowParams& params = state.model.params();
  json initialized = json::array();
  for (const auto& s : params) initialized.push_back(s.actnorm.initialized);
  const json header = {{"flow", to_json(state.model.config())},
                       {"train", to_json(state.train)},
                       {"stats", {{"mean", state.stats.mean}, {"std", state.stats.std}}},
                       {"step", state.step},
                       {"rng", {{"seed", state.train.seed}, {"counter", state.step}}},
                       {"adam_t", state.adam.t},
                       {"initial_loss", state.initial_loss},
                       {"steps_above_threshold", state.steps_above_threshold},
                       {"actnorm_initialized", initialized},
                       {"tensors", tensor_names(params)},
                       {"run_config", state.run_config}};
  const std::string text = header.dump();
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_params(out, params);
  write_params(out, state.adam.m);
  write_params(out, state.adam.v);
  return out.str();
}

TrainState decode_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError("not a checkpoint file");
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  std::string text(read_u32(in), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size()))) throw FormatError("truncated checkpoint");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  try {
    const FlowConfig flow = flow_config_from_json(header.at("flow"));
    flow.validate();
    FlowModel model = FlowModel::identity(flow);
    FlowParams params = model.params();
    read_params(in, params);
    const auto& initialized = header.at("actnorm_initialized");
    if (initialized.size() != params.size()) throw FormatError("checkpoint actnorm flags do not match model");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].actnorm.initialized = initialized[i].get<bool>();
    AdamState adam = AdamState::zeros_for(params);
    read_params(in, adam.m);
    read_params(in, adam.v);
    adam.t = header.at("adam_t").get<std::int64_t>();
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
    TrainState state{FlowModel(flow, std::move(params)),
                     std::move(adam),
                     header.at("step").get<std::int64_t>(),
                     NormStats{header.at("stats").at("mean").get<double>(), header.at("stats").at("std").get<double>()},
                     train_config_from_json(header.at("train")),
                     header.at("initial_loss").get<double>(),
                     header.at("steps_above_threshold").get<int>(),
                     header.value("run_config", json::object())};
    return state;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace speechflow
