#include "rpcova/cli.hpp"

#include "rpcova/att.hpp"
#include "rpcova/inference.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace rpcova::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& key, const std::string& reason) {
  throw Error(ErrorCode::ConfigError, key + ": " + reason);
}

double get_number(const ordered_json& j, const std::string& key) {
  if (!j.is_number()) config_error(key, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) config_error(key, "must be finite");
  return v;
}

std::int64_t get_integer(const ordered_json& j, const std::string& key) {
  if (!j.is_number_integer()) config_error(key, "expected an integer");
  return j.get<std::int64_t>();
}

std::string get_string(const ordered_json& j, const std::string& key) {
  if (!j.is_string()) config_error(key, "expected a string");
  return j.get<std::string>();
}

std::vector<double> get_numbers(const ordered_json& j, const std::string& key) {
  if (!j.is_array()) config_error(key, "expected an array of numbers");
  std::vector<double> out;
  for (const ordered_json& v : j) out.push_back(get_number(v, key));
  return out;
}

void merge_into(ordered_json& target, const json& values, const char* source) {
  if (values.is_null()) return;
  if (!values.is_object()) throw Error(ErrorCode::ConfigError, std::string(source) + ": expected a JSON object");
  for (auto it = values.begin(); it != values.end(); ++it) {
    if (!target.contains(it.key())) config_error(it.key(), "unknown key");
    target[it.key()] = it.value();
  }
}

RunConfig from_json(const ordered_json& j) {
  RunConfig c;
  c.kernel = get_string(j["kernel"], "kernel");
  if (!parse_kernel_family(c.kernel)) config_error("kernel", "unknown kernel family '" + c.kernel + "'");

  c.bandwidth_mode = get_string(j["bandwidth_mode"], "bandwidth_mode");
  if (c.bandwidth_mode != "cv" && c.bandwidth_mode != "fixed") config_error("bandwidth_mode", "must be cv or fixed");
  c.bandwidths = get_numbers(j["bandwidths"], "bandwidths");
  if (!c.bandwidths.empty() && c.bandwidths.size() != 5) config_error("bandwidths", "expected five values h1..h5");
  if (c.bandwidth_mode == "fixed" && c.bandwidths.empty()) config_error("bandwidths", "required in fixed mode");
  for (double h : c.bandwidths) {
    if (!(h > 0.0)) config_error("bandwidths", "must be positive");
  }
  if (!j["h_v"].is_null()) {
    c.h_v = get_number(j["h_v"], "h_v");
    if (!(*c.h_v > 0.0)) config_error("h_v", "must be positive");
  }
  c.resistant_bandwidths = get_numbers(j["resistant_bandwidths"], "resistant_bandwidths");
  if (!c.resistant_bandwidths.empty() && c.resistant_bandwidths.size() != 2) {
    config_error("resistant_bandwidths", "expected two values h_r1, h_r2");
  }
  for (double h : c.resistant_bandwidths) {
    if (!(h > 0.0)) config_error("resistant_bandwidths", "must be positive");
  }
  if (j["gamma"].is_null()) {
    c.gamma.reset();
  } else {
    c.gamma = get_number(j["gamma"], "gamma");
    if (!(*c.gamma > 1.0)) config_error("gamma", "must exceed 1 (null disables undersmoothing)");
  }
  c.pi_clip = get_number(j["pi_clip"], "pi_clip");
  if (!(c.pi_clip > 0.0 && c.pi_clip < 0.5)) config_error("pi_clip", "must lie in (0, 0.5)");
  c.delta_exponent = get_number(j["delta_exponent"], "delta_exponent");
  if (!(c.delta_exponent > 0.0 && c.delta_exponent < 1.0)) config_error("delta_exponent", "must lie in (0, 1)");
  c.alpha_level = get_number(j["alpha_level"], "alpha_level");
  if (!(c.alpha_level > 0.0 && c.alpha_level < 1.0)) config_error("alpha_level", "must lie in (0, 1)");
  c.resistant_mode = get_string(j["resistant_mode"], "resistant_mode");
  if (!parse_resistant_mode(c.resistant_mode)) config_error("resistant_mode", "must be heteroscedastic or homoscedastic");
  c.grid = get_string(j["grid"], "grid");
  if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0)) {
    config_error("seed", "expected a nonnegative integer");
  }
  c.seed = j["seed"].get<std::uint64_t>();

  c.model = get_string(j["model"], "model");
  if (!parse_model_id(c.model)) config_error("model", "unknown model '" + c.model + "'");
  c.n = get_integer(j["n"], "n");
  if (c.n < 10) config_error("n", "must be at least 10");
  c.d = static_cast<int>(get_integer(j["d"], "d"));
  if (c.d < 0) config_error("d", "must be nonnegative");
  c.reps = static_cast<int>(get_integer(j["reps"], "reps"));
  if (c.reps < 0) config_error("reps", "must be nonnegative");
  if (!j["n_list"].is_array()) config_error("n_list", "expected an array of integers");
  c.n_list.clear();
  for (const ordered_json& v : j["n_list"]) {
    const std::int64_t n = get_integer(v, "n_list");
    if (n < 10) config_error("n_list", "sample sizes must be at least 10");
    c.n_list.push_back(n);
  }
  c.policy = get_string(j["policy"], "policy");
  if (!parse_bandwidth_policy(c.policy)) config_error("policy", "must be per_rep_cv, pilot_cv or fixed");
  c.x = get_numbers(j["x"], "x");
  if (!j["sim_pi_clip"].is_null()) {
    c.sim_pi_clip = get_number(j["sim_pi_clip"], "sim_pi_clip");
    if (!(*c.sim_pi_clip > 0.0 && *c.sim_pi_clip < 0.5)) config_error("sim_pi_clip", "must lie in (0, 0.5)");
  }
  if (!j["sim_resistant_mode"].is_null()) {
    c.sim_resistant_mode = get_string(j["sim_resistant_mode"], "sim_resistant_mode");
    if (!parse_resistant_mode(*c.sim_resistant_mode)) {
      config_error("sim_resistant_mode", "must be heteroscedastic or homoscedastic");
    }
  }
  c.diag_points = static_cast<int>(get_integer(j["diag_points"], "diag_points"));
  if (c.diag_points < 1) config_error("diag_points", "must be positive");
  c.diag_draws = get_integer(j["diag_draws"], "diag_draws");
  if (c.diag_draws < 1) config_error("diag_draws", "must be positive");
  c.diag_cutoff = get_number(j["diag_cutoff"], "diag_cutoff");
  c.adjust_coef = get_numbers(j["adjust_coef"], "adjust_coef");
  return c;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<double> to_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return std::nullopt;
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> lines;  ///< file line of each row
};

Table read_table(std::istream& in) {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (t.header.empty()) {
      for (const std::string& c : cells) t.header.push_back(trim(c));
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(t.header.size()) + " fields, found " +
                                             std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const std::optional<double> v = to_double(cells[k]);
      if (!v) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ", column " + t.header[k] +
                                               ": not a number '" + trim(cells[k]) + "'");
      }
      if (!std::isfinite(*v)) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ", column " + t.header[k] + ": non-finite value");
      }
      row.push_back(*v);
    }
    t.rows.push_back(std::move(row));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) throw Error(ErrorCode::SchemaError, "missing header row");
  return t;
}

// Column positions for y, optionally z, and x1..xd.
struct Columns {
  std::size_t y = 0;
  std::optional<std::size_t> z;
  std::vector<std::size_t> x;
};

Columns map_columns(const std::vector<std::string>& header, bool with_z) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!pos.emplace(header[k], k).second) throw Error(ErrorCode::SchemaError, "duplicate column " + header[k]);
  }
  Columns c;
  auto need = [&](const std::string& name) {
    const auto it = pos.find(name);
    if (it == pos.end()) throw Error(ErrorCode::SchemaError, "missing required column " + name);
    const std::size_t k = it->second;
    pos.erase(it);
    return k;
  };
  c.y = need("y");
  if (with_z) c.z = need("z");
  for (std::size_t j = 1;; ++j) {
    const auto it = pos.find("x" + std::to_string(j));
    if (it == pos.end()) break;
    c.x.push_back(it->second);
    pos.erase(it);
  }
  if (!pos.empty()) throw Error(ErrorCode::SchemaError, "unexpected column " + pos.begin()->first);
  return c;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  return in;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

ordered_json vec_json(const VectorXd& x) {
  ordered_json a = ordered_json::array();
  for (Index j = 0; j < x.size(); ++j) a.push_back(x(j));
  return a;
}

ordered_json bandwidth_json(const BandwidthSet& bw) {
  return ordered_json{{"h1", bw.h1},       {"h2", bw.h2},         {"h3", bw.h3},         {"h4", bw.h4},
                      {"h5", bw.h5},       {"h_v", bw.h_v},       {"h_r1", bw.h_r1},     {"h_r2", bw.h_r2},
                      {"alpha2", bw.alpha2}, {"alpha3", bw.alpha3}, {"alpha4", bw.alpha4}, {"d", bw.d}};
}

void emit(std::ostream& out, const ordered_json& record) { out << record.dump() << '\n'; }

ordered_json run_record(const std::string& command, const RunConfig& config) {
  return ordered_json{{"schema_version", kSchemaVersion}, {"record", "run"}, {"command", command},
                      {"config", to_json(config)}};
}

EstimatorOptions estimator_options(const RunConfig& config) {
  EstimatorOptions o;
  o.kernel.family = *parse_kernel_family(config.kernel);
  o.pi_clip = config.pi_clip;
  o.resistant_mode = *parse_resistant_mode(config.resistant_mode);
  return o;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  return v[k];
}

std::vector<double> linspace(double a, double b, int k) {
  std::vector<double> out;
  for (int i = 0; i < k; ++i) out.push_back(k == 1 ? a : a + (b - a) * i / (k - 1));
  return out;
}

std::vector<VectorXd> cartesian(const std::vector<std::vector<double>>& axes) {
  std::vector<VectorXd> out;
  const auto d = static_cast<Index>(axes.size());
  std::vector<std::size_t> idx(axes.size(), 0);
  for (const auto& a : axes) {
    if (a.empty()) return out;
  }
  while (true) {
    VectorXd x(d);
    for (Index j = 0; j < d; ++j) x(j) = axes[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]];
    out.push_back(x);
    // Last coordinate varies fastest.
    Index j = d - 1;
    while (j >= 0) {
      auto& i = idx[static_cast<std::size_t>(j)];
      if (++i < axes[static_cast<std::size_t>(j)].size()) break;
      i = 0;
      --j;
    }
    if (j < 0) break;
  }
  return out;
}

std::vector<VectorXd> default_data_grid(const Dataset& data) {
  const Index d = data.d();
  int per_axis = 0;
  if (d == 1) per_axis = 50;
  if (d == 2) per_axis = 10;
  if (per_axis == 0) config_error("grid", "required when d > 2");
  std::vector<std::vector<double>> axes;
  for (Index j = 0; j < d; ++j) {
    std::vector<double> col(data.x.col(j).data(), data.x.col(j).data() + data.n());
    axes.push_back(linspace(quantile(col, 0.05), quantile(col, 0.95), per_axis));
  }
  return cartesian(axes);
}

std::vector<VectorXd> study_grid(const RunConfig& config, const Dataset& data) {
  return config.grid.empty() ? default_data_grid(data) : parse_grid(config.grid, data.d());
}

ordered_json interval_json(const Interval& i) { return ordered_json::array({i.lower, i.upper}); }

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

struct Samples {
  Dataset data;
  ResistantSample resistant;
};

Samples load_samples(const std::string& study, const std::string& resistant) {
  if (study.empty()) config_error("study", "a study data path is required");
  if (resistant.empty()) config_error("resistant", "a resistant data path is required");
  Samples s{load_dataset(study), load_resistant(resistant)};
  s.data.validate();
  s.resistant.validate(s.data.d());
  return s;
}

std::vector<std::vector<double>> diagnostic_grids(const Dataset& data, int points) {
  std::vector<std::vector<double>> grids;
  for (Index j = 0; j < data.d(); ++j) {
    std::vector<double> col(data.x.col(j).data(), data.x.col(j).data() + data.n());
    grids.push_back(linspace(quantile(col, 0.10), quantile(col, 0.90), points));
  }
  return grids;
}

void emit_diagnostic(std::ostream& out, const SignDiagnostic& diag, double cutoff) {
  for (const CoordinateReport& r : diag.coordinates) {
    ordered_json means = ordered_json::array();
    for (double m : r.mean_delta2) means.push_back(std::isnan(m) ? ordered_json(nullptr) : ordered_json(m));
    emit(out, ordered_json{{"record", "sign_diagnostic"},
                           {"coordinate", r.coordinate + 1},
                           {"grid", r.grid},
                           {"mean_delta2", means},
                           {"draws_used", r.draws_used},
                           {"min_mean", std::isnan(r.min_mean) ? ordered_json(nullptr) : ordered_json(r.min_mean)},
                           {"cutoff", cutoff},
                           {"pass", r.pass}});
  }
}

StudyOptions study_options(const RunConfig& config, int d) {
  StudyOptions so;
  so.estimator = estimator_options(config);
  if (config.sim_resistant_mode) so.resistant_mode = parse_resistant_mode(*config.sim_resistant_mode);
  so.pi_clip = config.sim_pi_clip;
  so.policy = *parse_bandwidth_policy(config.policy);
  so.undersmooth_gamma = config.gamma;
  if (so.policy == BandwidthPolicy::Fixed) {
    if (config.bandwidths.empty()) config_error("bandwidths", "required by the fixed policy");
    BandwidthSet bw;
    bw.h1 = config.bandwidths[0];
    bw.h2 = config.bandwidths[1];
    bw.h3 = config.bandwidths[2];
    bw.h4 = config.bandwidths[3];
    bw.h5 = config.bandwidths[4];
    bw.h_v = config.h_v.value_or(bw.h2);
    bw.h_r1 = config.resistant_bandwidths.empty() ? bw.h1 : config.resistant_bandwidths[0];
    bw.h_r2 = config.resistant_bandwidths.empty() ? bw.h2 : config.resistant_bandwidths[1];
    bw.d = d;
    so.fixed = bw;
  }
  return so;
}

std::vector<VectorXd> default_sim_grid(ModelId model, int d) {
  if (model == ModelId::CiModel || d == 2) return cartesian(std::vector<std::vector<double>>(d, linspace(-1.0, 1.0, 5)));
  if (d == 1) return cartesian({linspace(-2.0, 2.0, 21)});
  config_error("grid", "required for this model and dimension");
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["kernel"] = c.kernel;
  j["bandwidth_mode"] = c.bandwidth_mode;
  j["bandwidths"] = c.bandwidths;
  j["h_v"] = opt_json(c.h_v);
  j["resistant_bandwidths"] = c.resistant_bandwidths;
  j["gamma"] = opt_json(c.gamma);
  j["pi_clip"] = c.pi_clip;
  j["delta_exponent"] = c.delta_exponent;
  j["alpha_level"] = c.alpha_level;
  j["resistant_mode"] = c.resistant_mode;
  j["grid"] = c.grid;
  j["seed"] = c.seed;
  j["model"] = c.model;
  j["n"] = c.n;
  j["d"] = c.d;
  j["reps"] = c.reps;
  j["n_list"] = c.n_list;
  j["policy"] = c.policy;
  j["x"] = c.x;
  j["sim_resistant_mode"] = c.sim_resistant_mode ? ordered_json(*c.sim_resistant_mode) : ordered_json(nullptr);
  j["sim_pi_clip"] = opt_json(c.sim_pi_clip);
  j["diag_points"] = c.diag_points;
  j["diag_draws"] = c.diag_draws;
  j["diag_cutoff"] = c.diag_cutoff;
  j["adjust_coef"] = c.adjust_coef;
  return j;
}

RunConfig resolve_config(const json& file_values, const json& overrides) {
  ordered_json merged = to_json(RunConfig{});
  merge_into(merged, file_values, "config file");
  merge_into(merged, overrides, "flags");
  return from_json(merged);
}

RunConfig resolve_config(const std::optional<std::string>& file, const json& overrides) {
  json values;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorCode::ConfigError, "config: cannot open " + *file);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (!trim(text).empty()) {
      try {
        values = json::parse(text);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, std::string("config: invalid JSON: ") + e.what());
      }
    }
  }
  return resolve_config(values, overrides);
}

std::vector<VectorXd> parse_grid(const std::string& text, Index d) {
  const std::string t = trim(text);
  auto bad = [&](const std::string& why) { config_error("grid", why + " in '" + text + "'"); };
  if (t.rfind("lin:", 0) == 0) {
    const std::vector<std::string> axes_text = split(t.substr(4), ';');
    if (static_cast<Index>(axes_text.size()) != d) bad("expected " + std::to_string(d) + " axes");
    std::vector<std::vector<double>> axes;
    for (const std::string& a : axes_text) {
      const std::vector<std::string> parts = split(a, ',');
      if (parts.size() != 3) bad("each axis needs a,b,k");
      const auto lo = to_double(parts[0]);
      const auto hi = to_double(parts[1]);
      const auto k = to_double(parts[2]);
      if (!lo || !hi || !k || *k < 1 || std::floor(*k) != *k) bad("malformed axis '" + a + "'");
      axes.push_back(linspace(*lo, *hi, static_cast<int>(*k)));
    }
    return cartesian(axes);
  }
  if (t.rfind("pts:", 0) == 0) {
    std::vector<VectorXd> out;
    for (const std::string& p : split(t.substr(4), ';')) {
      const std::vector<std::string> parts = split(p, ',');
      if (static_cast<Index>(parts.size()) != d) bad("point '" + p + "' is not " + std::to_string(d) + "-dimensional");
      VectorXd x(d);
      for (Index j = 0; j < d; ++j) {
        const auto v = to_double(parts[static_cast<std::size_t>(j)]);
        if (!v || !std::isfinite(*v)) bad("malformed point '" + p + "'");
        x(j) = *v;
      }
      out.push_back(x);
    }
    if (out.empty()) bad("no points");
    return out;
  }
  bad("expected lin: or pts: prefix");
  return {};
}

Dataset read_dataset(std::istream& in) {
  const Table t = read_table(in);
  const Columns c = map_columns(t.header, true);
  const auto n = static_cast<Index>(t.rows.size());
  const auto d = static_cast<Index>(c.x.size());
  Dataset data;
  data.y.resize(n);
  data.z.resize(n);
  data.x.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    data.y(i) = row[c.y];
    const double z = row[*c.z];
    if (z != 0.0 && z != 1.0) {
      throw Error(ErrorCode::SchemaError,
                  "line " + std::to_string(t.lines[static_cast<std::size_t>(i)]) + ": z must be 0 or 1");
    }
    data.z(i) = z;
    for (Index j = 0; j < d; ++j) data.x(i, j) = row[c.x[static_cast<std::size_t>(j)]];
  }
  return data;
}

ResistantSample read_resistant(std::istream& in) {
  const Table t = read_table(in);
  const Columns c = map_columns(t.header, false);
  const auto m = static_cast<Index>(t.rows.size());
  const auto d = static_cast<Index>(c.x.size());
  ResistantSample r;
  r.y.resize(m);
  r.x.resize(m, d);
  for (Index i = 0; i < m; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    r.y(i) = row[c.y];
    for (Index j = 0; j < d; ++j) r.x(i, j) = row[c.x[static_cast<std::size_t>(j)]];
  }
  return r;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in = open_input(path);
  return read_dataset(in);
}

ResistantSample load_resistant(const std::string& path) {
  std::ifstream in = open_input(path);
  return read_resistant(in);
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out << "y,z";
  for (Index j = 0; j < data.d(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y(i)) << ',' << (data.z(i) != 0.0 ? 1 : 0);
    for (Index j = 0; j < data.d(); ++j) out << ',' << format_double(data.x(i, j));
    out << '\n';
  }
}

void write_resistant(std::ostream& out, const ResistantSample& resistant) {
  out << "y";
  for (Index j = 0; j < resistant.d(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (Index i = 0; i < resistant.m(); ++i) {
    out << format_double(resistant.y(i));
    for (Index j = 0; j < resistant.d(); ++j) out << ',' << format_double(resistant.x(i, j));
    out << '\n';
  }
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnsupportedDim: return 2;
    case ErrorCode::ParseError:
    case ErrorCode::SchemaError: return 3;
    default: return 4;
  }
}

ordered_json error_record(const Error& err) {
  return ordered_json{{"schema_version", kSchemaVersion},
                      {"record", "error"},
                      {"code", to_string(err.code())},
                      {"exit_code", exit_code(err.code())},
                      {"message", err.what()}};
}

BandwidthSet resolve_bandwidths(const RunConfig& config, const Dataset& data, const ResistantSample& resistant) {
  BandwidthSet bw;
  if (config.bandwidth_mode == "fixed") {
    bw.h1 = config.bandwidths[0];
    bw.h2 = config.bandwidths[1];
    bw.h3 = config.bandwidths[2];
    bw.h4 = config.bandwidths[3];
    bw.h5 = config.bandwidths[4];
    bw.h_v = bw.h2;
    bw.h_r1 = bw.h1;
    bw.h_r2 = bw.h2;
    bw.d = static_cast<int>(data.d());
  } else {
    BandwidthSelection sel;
    sel.kernel.family = *parse_kernel_family(config.kernel);
    sel.resistant_mode = *parse_resistant_mode(config.resistant_mode);
    sel.undersmooth_gamma = config.gamma;
    bw = select_bandwidths(data, resistant, sel);
  }
  if (config.h_v) bw.h_v = *config.h_v;
  if (!config.resistant_bandwidths.empty()) {
    bw.h_r1 = config.resistant_bandwidths[0];
    bw.h_r2 = config.resistant_bandwidths[1];
  }
  bw.validate();
  return bw;
}

void cmd_estimate(const RunConfig& config, const std::string& study, const std::string& resistant_path,
                  const Outputs& out) {
  const Samples s = load_samples(study, resistant_path);
  const std::vector<VectorXd> grid = study_grid(config, s.data);
  const BandwidthSet bw = resolve_bandwidths(config, s.data, s.resistant);
  const TwoPointEstimator estimator(s.data, s.resistant, bw, estimator_options(config));
  const CiOptions ci_options{config.alpha_level, config.delta_exponent};
  const double n_hd = effective_sample_size(s.data.n(), bw);

  ordered_json run = run_record("estimate", config);
  run["n"] = s.data.n();
  run["m"] = s.resistant.m();
  run["d"] = s.data.d();
  run["n_hd"] = n_hd;
  run["bandwidths"] = bandwidth_json(bw);
  emit(out.report, run);

  const Index d = s.data.d();
  if (out.table != nullptr) {
    for (Index j = 0; j < d; ++j) *out.table << 'x' << j + 1 << ',';
    *out.table << "tau_minus,tau_plus,ci_minus_lower,ci_minus_upper,ci_plus_lower,ci_plus_upper,regime\n";
  }

  Index failed = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    ordered_json rec{{"record", "point"}, {"index", g}, {"x", vec_json(grid[g])}};
    std::optional<TwoPointFit> fit;
    try {
      fit = estimator.estimate(grid[g]);
    } catch (const Error& err) {
      rec["status"] = "failed";
      rec["failure"] = err.what();
    }
    if (fit) {
      rec["status"] = "ok";
      rec["beta_C"] = fit->beta_C;
      rec["beta_U"] = fit->beta_U;
      rec["s_hat"] = fit->s_hat;
      rec["delta2"] = fit->delta2;
      rec["tau_minus"] = fit->tau_minus;
      rec["tau_plus"] = fit->tau_plus;
      rec["boundary"] = fit->boundary;
      rec["moments"] = ordered_json{{"m_hat", fit->moments.m_hat},
                                    {"sigma2_hat", fit->moments.sigma2_hat},
                                    {"pi_hat", fit->moments.pi_hat},
                                    {"sigma02_hat", fit->moments.sigma02_hat},
                                    {"f_hat", fit->moments.f_hat}};
      try {
        const VarComponents c = estimate_components(estimator, *fit);
        const CiPair ci = confidence_intervals(*fit, c, n_hd, ci_options);
        rec["regime"] = to_string(ci.regime);
        rec["ci_minus"] = interval_json(ci.ci_minus);
        rec["ci_plus"] = interval_json(ci.ci_plus);
        rec["v_delta"] = ci.v_delta;
        rec["v_delta_clamped"] = ci.v_delta_clamped;
        rec["threshold"] = ci.threshold;
        rec["v_tau_minus"] = opt_json(ci.v_tau_minus);
        rec["v_tau_plus"] = opt_json(ci.v_tau_plus);
        rec["v_beta_U"] = opt_json(ci.v_beta_U);
        rec["components"] = ordered_json{{"nu0_sq", c.nu0_sq}, {"nu1_sq", c.nu1_sq}, {"lambda_sq", c.lambda_sq},
                                         {"eta0", c.eta0},     {"eta1", c.eta1},     {"theta_K_d", c.theta_K_d}};
      } catch (const Error& err) {
        rec["status"] = "ci_failed";
        rec["failure"] = err.what();
      }
    } else {
      ++failed;
    }
    emit(out.report, rec);

    if (out.table != nullptr) {
      // Flat values come from the emitted record.
      for (Index j = 0; j < d; ++j) *out.table << format_double(grid[g](j)) << ',';
      auto cell = [&](const char* key, int k = -1) {
        if (!rec.contains(key)) return std::string();
        const ordered_json& v = k < 0 ? rec[key] : rec[key][static_cast<std::size_t>(k)];
        return format_double(v.get<double>());
      };
      *out.table << cell("tau_minus") << ',' << cell("tau_plus") << ',' << cell("ci_minus", 0) << ','
                 << cell("ci_minus", 1) << ',' << cell("ci_plus", 0) << ',' << cell("ci_plus", 1) << ','
                 << (rec.contains("regime") ? rec["regime"].get<std::string>() : std::string()) << '\n';
    }
  }
  emit(out.report, ordered_json{{"record", "summary"}, {"n_points", grid.size()}, {"n_failed", failed}});
}

void cmd_att(const RunConfig& config, const std::string& study, const std::string& resistant_path,
             const Outputs& out) {
  const Samples s = load_samples(study, resistant_path);
  const BandwidthSet bw = resolve_bandwidths(config, s.data, s.resistant);
  const TwoPointEstimator estimator(s.data, s.resistant, bw, estimator_options(config));

  ordered_json run = run_record("att", config);
  run["n"] = s.data.n();
  run["m"] = s.resistant.m();
  run["d"] = s.data.d();
  run["bandwidths"] = bandwidth_json(bw);
  emit(out.report, run);

  const AttEstimate att = att_two_point(estimator);
  emit(out.report, ordered_json{{"record", "att"},
                                {"att_minus", att.att_minus},
                                {"att_plus", att.att_plus},
                                {"e_beta", att.e_beta},
                                {"e_abs_delta", att.e_abs_delta},
                                {"n_used", att.n_used},
                                {"n", att.n}});
  const SignDiagnostic diag = att_sign_diagnostic(estimator, diagnostic_grids(s.data, config.diag_points),
                                                  {config.diag_draws, config.diag_cutoff});
  emit_diagnostic(out.report, diag, config.diag_cutoff);
  emit(out.report, ordered_json{{"record", "summary"}, {"sign_diagnostic_pass", diag.pass}});
}

void cmd_diagnose(const RunConfig& config, const std::string& study, const std::string& resistant_path,
                  const Outputs& out) {
  const Samples s = load_samples(study, resistant_path);
  const BandwidthSet bw = resolve_bandwidths(config, s.data, s.resistant);
  const TwoPointEstimator estimator(s.data, s.resistant, bw, estimator_options(config));
  ordered_json run = run_record("diagnose", config);
  run["n"] = s.data.n();
  run["m"] = s.resistant.m();
  run["d"] = s.data.d();
  run["bandwidths"] = bandwidth_json(bw);
  emit(out.report, run);
  const SignDiagnostic diag = att_sign_diagnostic(estimator, diagnostic_grids(s.data, config.diag_points),
                                                  {config.diag_draws, config.diag_cutoff});
  emit_diagnostic(out.report, diag, config.diag_cutoff);
  emit(out.report, ordered_json{{"record", "summary"}, {"sign_diagnostic_pass", diag.pass}});
}

void cmd_constant(const RunConfig& config, const std::string& study, const std::string& resistant_path,
                  const Outputs& out) {
  if (study.empty()) config_error("study", "a study data path is required");
  if (resistant_path.empty()) config_error("resistant", "a resistant data path is required");
  const Dataset data = load_dataset(study);
  const ResistantSample resistant = load_resistant(resistant_path);
  if (resistant.d() != data.d()) throw Error(ErrorCode::SchemaError, "study and resistant covariate columns differ");

  VectorXd y = data.y;
  VectorXd ry = resistant.y;
  if (!config.adjust_coef.empty()) {
    if (static_cast<Index>(config.adjust_coef.size()) != data.d()) {
      config_error("adjust_coef", "needs one coefficient per covariate");
    }
    const VectorXd coef = Eigen::Map<const VectorXd>(config.adjust_coef.data(), data.d());
    y = residualize(data.y, data.x, coef);
    ry = residualize(resistant.y, resistant.x, coef);
  }
  std::vector<double> yt, yc;
  for (Index i = 0; i < data.n(); ++i) (data.z(i) != 0.0 ? yt : yc).push_back(y(i));
  const ResistantMoments rm = resistant_moments(std::span<const double>(ry.data(), static_cast<std::size_t>(ry.size())));

  emit(out.report, [&] {
    ordered_json run = run_record("constant", config);
    run["n"] = data.n();
    run["m"] = resistant.m();
    run["n_t"] = yt.size();
    run["n_c"] = yc.size();
    return run;
  }());
  const ConstantEffectResult r = constant_effect_estimate(yt, yc, rm.sigma02);
  ordered_json rec{{"record", "constant"},
                   {"tau_minus", r.tau_minus},
                   {"tau_plus", r.tau_plus},
                   {"mean_difference", r.mean_difference},
                   {"s2_pooled", r.s2_pooled},
                   {"sigma02_hat", rm.sigma02},
                   {"var_sigma02_hat", rm.var_sigma02},
                   {"gap", r.gap},
                   {"clamped", r.clamped}};
  try {
    rec["variance"] = constant_effect_variance(yt, yc, rm.sigma02, rm.var_sigma02);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::DegenerateGap) throw;
    rec["variance"] = nullptr;
    rec["variance_note"] = err.what();
  }
  rec["two_sample_variance_lower_bound"] = two_sample_variance(yt, yc);
  emit(out.report, rec);
}

void cmd_simulate(const RunConfig& config, const std::string& study, const Outputs& out) {
  DgpSpec spec;
  spec.model = *parse_model_id(config.model);
  spec.n = config.n;
  spec.d = config.d > 0 ? config.d : default_dim(spec.model);
  spec.seed = config.seed;
  check_dim(spec.model, spec.d);
  const StudyOptions base = study_options(config, spec.d);

  ordered_json run = run_record("simulate", config);
  run["study"] = study;
  run["model"] = to_string(spec.model);
  run["d"] = spec.d;
  run["resistant_size"] = resistant_size(spec);
  run["resistant_mode"] = to_string(base.resistant_mode.value_or(default_resistant_mode(spec.model)));
  run["pi_clip"] = base.pi_clip.value_or(default_pi_clip(spec.model));

  if (study == "generate") {
    if (!out.prefix) config_error("out", "generate needs --out PREFIX");
    emit(out.report, run);
    const SimDraw draw = generate(spec);
    const std::string study_path = *out.prefix + ".study.csv";
    const std::string resistant_path = *out.prefix + ".resistant.csv";
    std::ofstream fs(study_path);
    std::ofstream fr(resistant_path);
    if (!fs || !fr) throw Error(ErrorCode::ConfigError, "out: cannot write " + *out.prefix + ".*.csv");
    write_dataset(fs, draw.dataset);
    write_resistant(fr, draw.resistant);
    emit(out.report, ordered_json{{"record", "summary"},
                                  {"study_path", study_path},
                                  {"resistant_path", resistant_path},
                                  {"n", draw.dataset.n()},
                                  {"m", draw.resistant.m()},
                                  {"oracle_att", opt_json(draw.att)},
                                  {"oracle_att_treated", opt_json(oracle_att_treated(spec.model, spec.d))}});
    return;
  }

  StudyOptions so = base;
  so.log = &out.report;
  if (study == "mse") {
    emit(out.report, run);
    const MseStudyResult r = run_mse_study(
        spec, config.reps, {AttEstimator::AttMinus, AttEstimator::AttPlus, AttEstimator::LinearBaseline}, so);
    ordered_json rows = ordered_json::array();
    for (const MseRow& row : r.rows) {
      rows.push_back({{"estimator", to_string(row.estimator)}, {"mse", row.mse}, {"bias", row.bias},
                      {"reps_used", row.reps_used}});
    }
    emit(out.report, ordered_json{{"record", "summary"},
                                  {"oracle_att", r.oracle},
                                  {"rows", rows},
                                  {"failed_reps", r.failed_reps},
                                  {"pilot_bandwidths", r.pilot ? bandwidth_json(*r.pilot) : ordered_json(nullptr)}});
  } else if (study == "coverage") {
    const std::vector<VectorXd> grid =
        config.grid.empty() ? default_sim_grid(spec.model, spec.d) : parse_grid(config.grid, spec.d);
    emit(out.report, run);
    CoverageOptions cov;
    cov.ci = {config.alpha_level, config.delta_exponent};
    const CoverageStudyResult r = run_coverage_study(spec, config.reps, grid, cov, so);
    for (const CoveragePoint& p : r.points) {
      emit(out.report, ordered_json{{"record", "coverage_point"},
                                    {"x", vec_json(p.x)},
                                    {"tau", p.tau},
                                    {"reps_used", p.reps_used},
                                    {"coverage_minus", p.coverage_minus},
                                    {"coverage_plus", p.coverage_plus},
                                    {"mean_length_minus", p.mean_length_minus},
                                    {"mean_length_plus", p.mean_length_plus},
                                    {"interior_fraction", p.interior_fraction}});
    }
    emit(out.report, ordered_json{{"record", "summary"},
                                  {"median_coverage_minus", r.median_coverage_minus},
                                  {"median_coverage_plus", r.median_coverage_plus},
                                  {"mean_length_minus", r.mean_length_minus},
                                  {"pilot_bandwidths", r.pilot ? bandwidth_json(*r.pilot) : ordered_json(nullptr)}});
  } else if (study == "rate") {
    emit(out.report, run);
    const RateStudyResult r = run_rate_study(spec, config.n_list, config.reps, so);
    emit(out.report, ordered_json{{"record", "summary"}, {"n_list", r.n_list}, {"mse", r.mse}, {"slope", r.slope}});
  } else if (study == "regime") {
    VectorXd x = VectorXd::Zero(spec.d);
    if (!config.x.empty()) {
      if (static_cast<int>(config.x.size()) != spec.d) config_error("x", "dimension differs from d");
      x = Eigen::Map<const VectorXd>(config.x.data(), spec.d);
    }
    emit(out.report, run);
    const RegimeStudyResult r = run_regime_study(spec, config.reps, x, so, {config.alpha_level, config.delta_exponent});
    emit(out.report, ordered_json{{"record", "summary"},
                                  {"x", vec_json(x)},
                                  {"reps", r.reps},
                                  {"reps_used", r.reps_used},
                                  {"boundary_fraction", opt_json(r.boundary_fraction)},
                                  {"ci_boundary_fraction", opt_json(r.ci_boundary_fraction)}});
  } else {
    config_error("study", "unknown simulation '" + study + "' (generate, mse, coverage, rate, regime)");
  }
}

}  // namespace rpcova::cli
