#ifndef RPCOVA_CLI_HPP
#define RPCOVA_CLI_HPP

#include "rpcova/error.hpp"
#include "rpcova/simlab.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rpcova::cli {

inline constexpr int kSchemaVersion = 1;

/// Fully resolved run settings. Every field has a JSON key of the same name.
struct RunConfig {
  std::string kernel = "epanechnikov";
  std::string bandwidth_mode = "cv";  ///< cv | fixed
  std::vector<double> bandwidths;     ///< h1..h5 when fixed
  std::optional<double> h_v;
  std::vector<double> resistant_bandwidths;  ///< h_r1, h_r2; empty means h1, h2 (fixed) or CV
  std::optional<double> gamma = 1.1;         ///< null disables undersmoothing
  double pi_clip = 0.05;
  double delta_exponent = 1.0 / 3.0;
  double alpha_level = 0.05;
  std::string resistant_mode = "heteroscedastic";
  std::string grid;
  std::uint64_t seed = 1;
  // simulate
  std::string model = "att_model1";
  Index n = 1000;
  int d = 0;  ///< 0 selects the model default
  int reps = 100;
  std::vector<Index> n_list = {500, 1000, 2000, 4000};
  std::string policy = "pilot_cv";
  std::vector<double> x;  ///< regime study point; empty means the origin
  std::optional<std::string> sim_resistant_mode;  ///< null: model default
  std::optional<double> sim_pi_clip;  ///< null: model default
  // att / diagnose
  int diag_points = 5;
  Index diag_draws = 200;
  double diag_cutoff = 0.0;
  // constant
  std::vector<double> adjust_coef;
};

nlohmann::ordered_json to_json(const RunConfig& config);

/// defaults < file < overrides. Unknown keys and out-of-range values throw
/// Error(ConfigError) whose message starts with the offending key.
RunConfig resolve_config(const std::optional<std::string>& file, const nlohmann::json& overrides);
RunConfig resolve_config(const nlohmann::json& file_values, const nlohmann::json& overrides);

/// "lin:a,b,k;..." gives the cartesian product of per-coordinate linspaces;
/// "pts:x1,..,xd;..." lists points. Throws Error(ConfigError) on bad syntax
/// or a dimension other than d.
std::vector<VectorXd> parse_grid(const std::string& text, Index d);

/// Columns y, z, x1..xd in any order. Throws Error(ParseError) for malformed
/// or non-finite cells and Error(SchemaError) for missing or unexpected
/// columns and invalid z, naming the line.
Dataset load_dataset(const std::string& path);
Dataset read_dataset(std::istream& in);
/// Columns y, x1..xd.
ResistantSample load_resistant(const std::string& path);
ResistantSample read_resistant(std::istream& in);

void write_dataset(std::ostream& out, const Dataset& data);
void write_resistant(std::ostream& out, const ResistantSample& resistant);

/// 0 success, 2 configuration, 3 data, 4 estimation.
int exit_code(ErrorCode code);
nlohmann::ordered_json error_record(const Error& err);

struct Outputs {
  std::ostream& report;
  std::ostream* table = nullptr;  ///< flat plot table (estimate only)
  std::optional<std::string> prefix;  ///< file prefix for simulate generate
};

BandwidthSet resolve_bandwidths(const RunConfig& config, const Dataset& data, const ResistantSample& resistant);

void cmd_estimate(const RunConfig& config, const std::string& study, const std::string& resistant,
                  const Outputs& out);
void cmd_att(const RunConfig& config, const std::string& study, const std::string& resistant, const Outputs& out);
void cmd_diagnose(const RunConfig& config, const std::string& study, const std::string& resistant,
                  const Outputs& out);
void cmd_constant(const RunConfig& config, const std::string& study, const std::string& resistant,
                  const Outputs& out);
/// study: generate | mse | coverage | rate | regime.
void cmd_simulate(const RunConfig& config, const std::string& study, const Outputs& out);

}  // namespace rpcova::cli

#endif  // RPCOVA_CLI_HPP
