#include "rpcova/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

struct Flags {
  std::string study;
  std::string resistant;
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::string> table;
  std::string sim_study;
  json overrides = json::object();
};

// Registers a flag that writes into the override object only when given.
template <typename T>
CLI::Option* override_option(CLI::App* app, Flags& flags, const std::string& name, const std::string& key,
                     const std::string& help) {
  return app->add_option_function<T>(name, [&flags, key](const T& v) { flags.overrides[key] = v; }, help);
}

void common_options(CLI::App* app, Flags& flags) {
  app->add_option("--config", flags.config, "JSON config file");
  app->add_option("--out", flags.out, "report path (simulate generate: output prefix)");
  app->add_option("--table", flags.table, "flat table path (default: report path with .table.csv)");
  override_option<std::uint64_t>(app, flags, "--seed", "seed", "random seed");
  override_option<std::string>(app, flags, "--grid", "grid", "lin:a,b,k;... or pts:x1,..,xd;...");
  override_option<double>(app, flags, "--alpha", "alpha_level", "CI level alpha");
  override_option<double>(app, flags, "--delta-exponent", "delta_exponent", "regime threshold exponent");
  override_option<double>(app, flags, "--pi-clip", "pi_clip", "propensity clip");
  override_option<std::string>(app, flags, "--kernel", "kernel", "kernel family");
  override_option<std::string>(app, flags, "--resistant-mode", "resistant_mode", "heteroscedastic | homoscedastic");
  app->add_option_function<std::string>(
      "--gamma",
      [&flags](const std::string& v) {
        if (v == "none") {
          flags.overrides["gamma"] = nullptr;
        } else {
          try {
            flags.overrides["gamma"] = std::stod(v);
          } catch (const std::exception&) {
            throw CLI::ValidationError("--gamma", "expected a number or none");
          }
        }
      },
      "undersmoothing exponent, or none");
  app->add_option_function<std::vector<double>>(
         "--bandwidths",
         [&flags](const std::vector<double>& h) {
           flags.overrides["bandwidths"] = h;
           flags.overrides["bandwidth_mode"] = "fixed";
         },
         "fixed h1,h2,h3,h4,h5")
      ->delimiter(',');
}

void data_options(CLI::App* app, Flags& flags) {
  app->add_option("--study", flags.study, "study CSV (y,z,x1..xd)");
  app->add_option("--resistant", flags.resistant, "resistant CSV (y,x1..xd)");
}

std::string table_path(const Flags& flags) {
  if (flags.table) return *flags.table;
  std::filesystem::path p(*flags.out);
  p.replace_extension(".table.csv");
  return p.string();
}

int run(const std::string& command, const Flags& flags) {
  const rpcova::cli::RunConfig config = rpcova::cli::resolve_config(flags.config, flags.overrides);

  const bool to_prefix = command == "simulate" && flags.sim_study == "generate";
  std::ofstream report_file;
  std::ofstream table_file;
  if (flags.out && !to_prefix) {
    report_file.open(*flags.out);
    if (!report_file) throw rpcova::Error(rpcova::ErrorCode::ConfigError, "out: cannot write " + *flags.out);
  }
  std::ostream& report = report_file.is_open() ? report_file : std::cout;
  std::ostream* table = nullptr;
  if (command == "estimate" && (flags.out || flags.table)) {
    const std::string path = table_path(flags);
    table_file.open(path);
    if (!table_file) throw rpcova::Error(rpcova::ErrorCode::ConfigError, "table: cannot write " + path);
    table = &table_file;
  }
  const rpcova::cli::Outputs out{report, table, to_prefix ? flags.out : std::nullopt};

  try {
    if (command == "estimate") rpcova::cli::cmd_estimate(config, flags.study, flags.resistant, out);
    if (command == "att") rpcova::cli::cmd_att(config, flags.study, flags.resistant, out);
    if (command == "diagnose") rpcova::cli::cmd_diagnose(config, flags.study, flags.resistant, out);
    if (command == "constant") rpcova::cli::cmd_constant(config, flags.study, flags.resistant, out);
    if (command == "simulate") rpcova::cli::cmd_simulate(config, flags.sim_study, out);
  } catch (const rpcova::Error& err) {
    // Keep the error in the report as well when it goes to a file.
    if (report_file.is_open()) report << rpcova::cli::error_record(err).dump() << '\n';
    throw;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-point treatment effect estimation with a resistant population"};
  app.require_subcommand(1);
  Flags flags;

  for (const char* name : {"estimate", "att", "diagnose", "constant"}) {
    CLI::App* sub = app.add_subcommand(name);
    data_options(sub, flags);
    common_options(sub, flags);
    if (std::string(name) == "att" || std::string(name) == "diagnose") {
      override_option<int>(sub, flags, "--diag-points", "diag_points", "grid values per coordinate");
      override_option<long>(sub, flags, "--diag-draws", "diag_draws", "covariate draws averaged");
      override_option<double>(sub, flags, "--diag-cutoff", "diag_cutoff", "pass threshold on mean Delta^2");
    }
    if (std::string(name) == "constant") {
      override_option<std::vector<double>>(sub, flags, "--adjust-coef", "adjust_coef", "linear covariate adjustment")
          ->delimiter(',');
    }
  }
  CLI::App* sim = app.add_subcommand("simulate");
  sim->add_option("study", flags.sim_study, "generate | mse | coverage | rate | regime")->required();
  common_options(sim, flags);
  override_option<std::string>(sim, flags, "--model", "model", "simulation model");
  override_option<long>(sim, flags, "--n", "n", "sample size");
  override_option<int>(sim, flags, "--d", "d", "covariate dimension (0: model default)");
  override_option<int>(sim, flags, "--reps", "reps", "replicates");
  override_option<std::string>(sim, flags, "--policy", "policy", "per_rep_cv | pilot_cv | fixed");
  override_option<std::string>(sim, flags, "--sim-resistant-mode", "sim_resistant_mode", "resistant mode in studies");
  override_option<double>(sim, flags, "--sim-pi-clip", "sim_pi_clip", "propensity clip in studies");
  override_option<std::vector<long>>(sim, flags, "--n-list", "n_list", "rate study sizes")->delimiter(',');
  override_option<std::vector<double>>(sim, flags, "--x", "x", "regime study point")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string command;
  for (const CLI::App* sub : app.get_subcommands()) command = sub->get_name();
  try {
    return run(command, flags);
  } catch (const rpcova::Error& err) {
    std::cerr << rpcova::cli::error_record(err).dump() << '\n';
    return rpcova::cli::exit_code(err.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"record", "error"}, {"code", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 4;
  }
}
