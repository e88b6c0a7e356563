#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>

#include "json.hpp"
#include "speechflow/dataset.hpp"
#include "speechflow/error.hpp"
#include "speechflow/flow.hpp"
#include "speechflow/train.hpp"

namespace speechflow {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct AnalysisConfig {
  std::size_t dims_sampled = 64;
  double temperature = 1.0;
  std::size_t num_samples = 16;
  std::string alphas = "0.1:0.9:0.1";
  std::string betas = "0:0.8:0.1";
  bool write_pgm = true;
  bool write_audio = true;
  double audit_h = 1e-5;
  double audit_tolerance = 1e-5;
};

// Validated view of the merged configuration document.
struct RunConfig {
  nlohmann::json echo;  // the merged document, embedded in every artifact
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  std::string root;  // real corpus root for `prepare`
  FlowConfig flow;
  TrainConfig train;
  AnalysisConfig analysis;
};

nlohmann::json default_run_config();

// Overlays patch onto base. Every key must already exist in base with a
// compatible type; otherwise throws ConfigError naming the key path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch);

// Sets one dotted path (e.g. "train.lr") from command-line text.
void set_config_value(nlohmann::json& config, const std::string& path, const std::string& text);

RunConfig resolve_run_config(const nlohmann::json& merged);

// "lo:hi:step" or a comma-separated list.
std::vector<double> parse_sweep(const std::string& text);

// Returns the process exit code: 0 success, 1 usage error, 2 runtime error.
int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace speechflow
