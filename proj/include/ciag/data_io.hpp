#pragma once

// I/O: libsvm-format dataset loading (plus a writer used for fixtures),
// trace serialization to CSV with round-trip-exact reals, and the flat
// key=value run configuration shared by the CLI and its config files.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "ciag/core.hpp"
#include "ciag/optimizers.hpp"
#include "ciag/problems.hpp"

namespace ciag {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// libsvm text format
// ---------------------------------------------------------------------------

struct SparseRow {
  double label = 0.0;
  std::vector<std::pair<long, double>> entries;  // (1-based index, value)
};

enum class LabelMap {
  automatic,  // {1,2} alphabets use one_two, everything else sign
  sign,       // label > 0 -> +1, else -1
  one_two,    // 1 -> +1, 2 -> -1, anything else is an error
};

namespace detail {

inline double parse_real(std::string_view tok, long line_no, const char* what) {
  std::string_view body = tok;                          // from_chars rejects '+'
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(body.data(), body.data() + body.size(), v);
  if (body.empty() || res.ec != std::errc() ||
      res.ptr != body.data() + body.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                     " '" + std::string(tok) + "'");
  if (!std::isfinite(v))
    throw ParseError("line " + std::to_string(line_no) + ": non-finite " +
                     what + " '" + std::string(tok) + "'");
  return v;
}

inline long parse_index(std::string_view tok, long line_no) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || v < 1)
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad feature index '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

// One line of `<label> <idx>:<val> ...`; indices must strictly increase.
inline SparseRow parse_libsvm_line(std::string_view line, long line_no) {
  SparseRow row;
  std::size_t pos = 0;
  const auto next_token = [&]() -> std::string_view {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
    return line.substr(start, pos - start);
  };

  const std::string_view label_tok = next_token();
  if (label_tok.empty())
    throw ParseError("line " + std::to_string(line_no) + ": missing label");
  row.label = detail::parse_real(label_tok, line_no, "label");

  long prev_index = 0;
  for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
    const std::size_t colon = tok.find(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == tok.size())
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected index:value, got '" + std::string(tok) + "'");
    const long idx = detail::parse_index(tok.substr(0, colon), line_no);
    if (idx <= prev_index)
      throw ParseError("line " + std::to_string(line_no) +
                       ": feature indices must strictly increase (saw " +
                       std::to_string(idx) + " after " +
                       std::to_string(prev_index) + ")");
    const double val = detail::parse_real(tok.substr(colon + 1), line_no, "feature value");
    row.entries.emplace_back(idx, val);
    prev_index = idx;
  }
  return row;
}

inline double map_label(double raw, LabelMap rule, long line_no) {
  if (rule == LabelMap::one_two) {
    if (raw == 1.0) return 1.0;
    if (raw == 2.0) return -1.0;
    throw ParseError("line " + std::to_string(line_no) + ": label " +
                     std::to_string(raw) + " not mappable under the 1/2 rule");
  }
  return raw > 0.0 ? 1.0 : -1.0;
}

// Dense materialization of a libsvm file.  Dimension is expected_dim when
// given (indices beyond it are an error), otherwise the max observed index.
// append_bias adds a trailing constant-1 column after everything else.
inline LabeledDataset load_libsvm(const std::string& path,
                                  std::optional<long> expected_dim = std::nullopt,
                                  LabelMap label_map = LabelMap::automatic,
                                  bool append_bias = false) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file '" + path + "'");

  std::vector<SparseRow> rows;
  std::set<double> label_alphabet;
  long max_index = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    SparseRow row = parse_libsvm_line(line, line_no);
    if (!row.entries.empty()) max_index = std::max(max_index, row.entries.back().first);
    label_alphabet.insert(row.label);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("dataset file '" + path + "' has no rows");

  const long dim = expected_dim ? *expected_dim : max_index;
  if (dim < 1) throw ParseError("dataset file '" + path + "' has no features");
  if (expected_dim && max_index > *expected_dim)
    throw ParseError("dataset file '" + path + "': feature index " +
                     std::to_string(max_index) + " exceeds expected dimension " +
                     std::to_string(*expected_dim));

  LabelMap rule = label_map;
  if (rule == LabelMap::automatic)
    rule = (label_alphabet == std::set<double>{1.0, 2.0}) ? LabelMap::one_two
                                                          : LabelMap::sign;

  LabeledDataset data;
  const long m = static_cast<long>(rows.size());
  data.features = Matrix::Zero(m, append_bias ? dim + 1 : dim);
  data.labels.resize(m);
  for (long i = 0; i < m; ++i) {
    for (const auto& [idx, val] : rows[static_cast<std::size_t>(i)].entries)
      data.features(i, idx - 1) = val;
    if (append_bias) data.features(i, dim) = 1.0;
    data.labels[i] = map_label(rows[static_cast<std::size_t>(i)].label, rule, i + 1);
  }
  return data;
}

namespace detail {

inline void format_real(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::scientific);
  out.append(buf, res.ptr);
}

}  // namespace detail

// Companion writer (fixtures and round-trip tests): labels as written,
// nonzero entries only, values in shortest round-trip form.
inline void write_libsvm(const LabeledDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_libsvm: cannot open '" + path + "'");
  std::string buf;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    buf.clear();
    buf += data.labels[i] > 0 ? "+1" : "-1";
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      const double v = data.features(i, j);
      if (v == 0.0) continue;
      buf += ' ';
      buf += std::to_string(j + 1);
      buf += ':';
      detail::format_real(buf, v);
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw std::runtime_error("write_libsvm: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceCsvHeader =
    "k,effective_passes,objective_gap,grad_norm,surrogate_error,error_bound,"
    "step_size,wall_time_s";

inline std::string trace_to_csv(const std::vector<TraceRecord>& trace) {
  std::string out(kTraceCsvHeader);
  out += '\n';
  const auto opt_field = [&](const std::optional<double>& v) {
    out += ',';
    if (v) detail::format_real(out, *v);
  };
  for (const TraceRecord& r : trace) {
    out += std::to_string(r.k);
    out += ',';
    detail::format_real(out, r.effective_passes);
    opt_field(r.objective_gap);
    out += ',';
    detail::format_real(out, r.grad_norm);
    opt_field(r.surrogate_error);
    opt_field(r.error_bound);
    out += ',';
    detail::format_real(out, r.step_size);
    out += ',';
    detail::format_real(out, r.wall_time_s);
    out += '\n';
  }
  return out;
}

inline void write_trace_csv(const RunResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open '" + path + "'");
  out << trace_to_csv(result.trace);
  if (!out) throw std::runtime_error("write_trace_csv: write failed for '" + path + "'");
}

inline std::vector<TraceRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open trace file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("trace file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceCsvHeader)
    throw ParseError("trace file '" + path + "' has an unexpected header");

  std::vector<TraceRecord> trace;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.push_back(std::string_view(line).substr(start, i - start));
        start = i + 1;
      }
    }
    if (cells.size() != 8)
      throw ParseError("line " + std::to_string(line_no) + ": expected 8 cells, got " +
                       std::to_string(cells.size()));
    const auto required = [&](int c, const char* what) {
      if (cells[static_cast<std::size_t>(c)].empty())
        throw ParseError("line " + std::to_string(line_no) + ": missing " + what);
      return detail::parse_real(cells[static_cast<std::size_t>(c)], line_no, what);
    };
    const auto optional_cell = [&](int c, const char* what) -> std::optional<double> {
      if (cells[static_cast<std::size_t>(c)].empty()) return std::nullopt;
      return detail::parse_real(cells[static_cast<std::size_t>(c)], line_no, what);
    };
    TraceRecord r;
    long k = 0;
    const auto& kc = cells[0];
    const auto res = std::from_chars(kc.data(), kc.data() + kc.size(), k);
    if (res.ec != std::errc() || res.ptr != kc.data() + kc.size())
      throw ParseError("line " + std::to_string(line_no) + ": bad k '" +
                       std::string(kc) + "'");
    r.k = k;
    r.effective_passes = required(1, "effective_passes");
    r.objective_gap = optional_cell(2, "objective_gap");
    r.grad_norm = required(3, "grad_norm");
    r.surrogate_error = optional_cell(4, "surrogate_error");
    r.error_bound = optional_cell(5, "error_bound");
    r.step_size = required(6, "step_size");
    r.wall_time_s = required(7, "wall_time_s");
    trace.push_back(r);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
  enum class Kind { synthetic, libsvm_file };
  Kind kind = Kind::synthetic;
  int d = 0;
  int m = 0;
  std::uint64_t seed = 0;
  std::string path;
};

struct StepSpec {
  enum class Kind { const_gamma, const_frac, iag_frac, vanishing, adaptive };
  Kind kind = Kind::const_frac;
  double value = 1.0;  // gamma for const, fraction c otherwise
};

struct RunConfig {
  std::vector<std::string> methods;  // one entry for `run`, several for `compare`
  std::optional<DatasetSpec> dataset;
  double rho = 0.0;  // 0 means 1/m
  std::optional<StepSpec> step;
  std::map<std::string, StepSpec> step_overrides;  // per-method, keys step_<method>
  long batch = 1;
  double grad_tol = 1e-10;
  long max_passes = 2000;
  long trace_every = 0;  // 0 means once per pass
  InitMode init = InitMode::warm;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> asserts;  // e.g. "ciag<iag"
  bool reference = true;
  bool timing = true;
  bool append_bias = false;
};

namespace detail {

inline double config_real(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size() ||
      !std::isfinite(v))
    throw ConfigError("key '" + key + "': bad numeric value '" + value + "'");
  return v;
}

inline long config_int(const std::string& key, const std::string& value) {
  long v = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': bad integer value '" + value + "'");
  return v;
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected on/off, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= value.size(); ++i) {
    if (i == value.size() || value[i] == ',') {
      if (i > start) out.push_back(value.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

inline bool known_method(const std::string& name) {
  return name == "ciag" || name == "iag" || name == "ig" || name == "fg" ||
         name == "newton-agg";
}

inline Method method_from_name(const std::string& name) {
  if (name == "ciag") return Method::ciag;
  if (name == "iag") return Method::iag;
  if (name == "ig") return Method::ig;
  if (name == "fg") return Method::fg;
  if (name == "newton-agg") return Method::newton_agg;
  throw ConfigError("unknown method '" + name + "'");
}

// `synthetic:<d>:<m>:<seed>` or `libsvm:<path>`
inline DatasetSpec parse_dataset_spec(const std::string& key, const std::string& value) {
  DatasetSpec spec;
  if (value.rfind("synthetic:", 0) == 0) {
    const std::string rest = value.substr(10);
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= rest.size(); ++i) {
      if (i == rest.size() || rest[i] == ':') {
        fields.push_back(rest.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 3)
      throw ConfigError("key '" + key + "': expected synthetic:<d>:<m>:<seed>");
    spec.kind = DatasetSpec::Kind::synthetic;
    spec.d = static_cast<int>(detail::config_int(key, fields[0]));
    spec.m = static_cast<int>(detail::config_int(key, fields[1]));
    spec.seed = static_cast<std::uint64_t>(detail::config_int(key, fields[2]));
    if (spec.d < 1 || spec.m < 1)
      throw ConfigError("key '" + key + "': synthetic d and m must be >= 1");
    return spec;
  }
  if (value.rfind("libsvm:", 0) == 0) {
    spec.kind = DatasetSpec::Kind::libsvm_file;
    spec.path = value.substr(7);
    if (spec.path.empty())
      throw ConfigError("key '" + key + "': expected libsvm:<path>");
    return spec;
  }
  throw ConfigError("key '" + key + "': unknown dataset spec '" + value + "'");
}

// const:<gamma> | const-frac:<c> (gamma = c/L) | iag-frac:<c> (gamma = c/(mL))
// | vanishing | adaptive
inline StepSpec parse_step_spec(const std::string& key, const std::string& value) {
  StepSpec spec;
  if (value == "vanishing") {
    spec.kind = StepSpec::Kind::vanishing;
    return spec;
  }
  if (value == "adaptive") {
    spec.kind = StepSpec::Kind::adaptive;
    return spec;
  }
  const auto with_value = [&](StepSpec::Kind kind, std::size_t prefix_len) {
    spec.kind = kind;
    spec.value = detail::config_real(key, value.substr(prefix_len));
    if (!(spec.value > 0.0))
      throw ConfigError("key '" + key + "': step value must be positive");
    return spec;
  };
  if (value.rfind("const:", 0) == 0) return with_value(StepSpec::Kind::const_gamma, 6);
  if (value.rfind("const-frac:", 0) == 0) return with_value(StepSpec::Kind::const_frac, 11);
  if (value.rfind("iag-frac:", 0) == 0) return with_value(StepSpec::Kind::iag_frac, 9);
  throw ConfigError("key '" + key + "': unknown step spec '" + value + "'");
}

// Flat `key = value` lines; '#' starts a comment; whitespace is trimmed.
inline std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  long line_no = 0;
  const auto trim = [](std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string();
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file '" + path + "' line " +
                        std::to_string(line_no) + ": expected key = value");
    std::string k = trim(line.substr(0, eq));
    std::string v = trim(line.substr(eq + 1));
    if (k.empty() || v.empty())
      throw ConfigError("config file '" + path + "' line " +
                        std::to_string(line_no) + ": empty key or value");
    for (char& c : k)
      if (c == '-') c = '_';
    entries.emplace_back(std::move(k), std::move(v));
  }
  return entries;
}

// Applies entries in order (later entries win), so callers can concatenate
// config-file pairs with command-line pairs to get flags-over-file behavior.
inline RunConfig parse_run_config(
    const std::vector<std::pair<std::string, std::string>>& entries) {
  RunConfig cfg;
  for (const auto& [key, value] : entries) {
    if (key == "method") {
      if (!known_method(value)) throw ConfigError("key 'method': unknown method '" + value + "'");
      cfg.methods = {value};
    } else if (key == "methods") {
      cfg.methods = detail::split_list(value);
      if (cfg.methods.empty()) throw ConfigError("key 'methods': empty list");
      for (const auto& mname : cfg.methods)
        if (!known_method(mname))
          throw ConfigError("key 'methods': unknown method '" + mname + "'");
    } else if (key == "dataset") {
      cfg.dataset = parse_dataset_spec(key, value);
    } else if (key == "rho") {
      cfg.rho = detail::config_real(key, value);
      if (cfg.rho < 0.0) throw ConfigError("key 'rho': must be >= 0");
    } else if (key == "step") {
      cfg.step = parse_step_spec(key, value);
    } else if (key.rfind("step_", 0) == 0) {
      const std::string mname = key.substr(5);
      if (!known_method(mname))
        throw ConfigError("key '" + key + "': unknown method suffix");
      cfg.step_overrides[mname] = parse_step_spec(key, value);
    } else if (key == "batch") {
      cfg.batch = detail::config_int(key, value);
      if (cfg.batch < 1) throw ConfigError("key 'batch': must be >= 1");
    } else if (key == "grad_tol") {
      cfg.grad_tol = detail::config_real(key, value);
      if (!(cfg.grad_tol >= 0.0)) throw ConfigError("key 'grad_tol': must be >= 0");
    } else if (key == "max_passes") {
      cfg.max_passes = detail::config_int(key, value);
      if (cfg.max_passes < 1) throw ConfigError("key 'max_passes': must be >= 1");
    } else if (key == "trace_every") {
      cfg.trace_every = detail::config_int(key, value);
      if (cfg.trace_every < 0) throw ConfigError("key 'trace_every': must be >= 0");
    } else if (key == "init") {
      if (value == "warm") cfg.init = InitMode::warm;
      else if (value == "cold") cfg.init = InitMode::cold;
      else throw ConfigError("key 'init': expected warm or cold, got '" + value + "'");
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(detail::config_int(key, value));
    } else if (key == "out") {
      cfg.out = value;
    } else if (key == "assert") {
      for (auto& a : detail::split_list(value)) cfg.asserts.push_back(std::move(a));
    } else if (key == "reference") {
      cfg.reference = detail::config_bool(key, value);
    } else if (key == "timing") {
      cfg.timing = detail::config_bool(key, value);
    } else if (key == "bias") {
      cfg.append_bias = detail::config_bool(key, value);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  return cfg;
}

}  // namespace ciag
