#pragma once

// JSON serialization of systems, ensembles and analyses, plus atomic file
// output.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hierlqr/decomp.hpp"
#include "hierlqr/errors.hpp"
#include "hierlqr/matlin.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/sysmodel.hpp"

namespace hierlqr {

using Json = nlohmann::json;

/// Rejects keys of `j` outside `allowed`.
inline void expect_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline const Json& require_key(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + std::string(key) + "'");
  return j.at(key);
}

template <typename T>
T get_as(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Json to_json(const Mat& M) {
  Json data = Json::array();
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j) data.push_back(M(i, j));
  return Json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", data}};
}

inline Mat mat_from_json(const Json& j, const std::string& where) {
  expect_keys(j, {"rows", "cols", "data"}, where);
  const auto r = get_as<Index>(require_key(j, "rows", where), where + ".rows");
  const auto c = get_as<Index>(require_key(j, "cols", where), where + ".cols");
  const auto data = get_as<std::vector<double>>(require_key(j, "data", where), where + ".data");
  if (r < 0 || c < 0 || Index(data.size()) != r * c) {
    throw ConfigError(where + ": data length does not match rows*cols");
  }
  Mat M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index k = 0; k < c; ++k) M(i, k) = data[i * c + k];
  if (!M.allFinite()) throw ConfigError(where + ": non-finite entry");
  return M;
}

inline SymMat symmat_from_json(const Json& j, const std::string& where) {
  try {
    return SymMat(mat_from_json(j, where));
  } catch (const SymmetryError& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Json to_json(const SubpopulationPartition& p) {
  return Json{{"sizes", p.sizes}, {"state_dims", p.state_dims}, {"action_dims", p.action_dims}};
}

inline SubpopulationPartition partition_from_json(const Json& j, const std::string& where) {
  expect_keys(j, {"sizes", "state_dims", "action_dims"}, where);
  SubpopulationPartition p;
  p.sizes = get_as<std::vector<int>>(require_key(j, "sizes", where), where + ".sizes");
  p.state_dims = get_as<std::vector<int>>(require_key(j, "state_dims", where), where + ".state_dims");
  p.action_dims = get_as<std::vector<int>>(require_key(j, "action_dims", where), where + ".action_dims");
  try {
    p.validate();
  } catch (const DimensionError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return p;
}

inline Json to_json(const GlobalLQRSystem& s) {
  Json w = Json::array();
  for (const auto& W : s.W_noise) w.push_back(to_json(W));
  return Json{{"partition", to_json(s.partition)}, {"A", to_json(s.A)}, {"B", to_json(s.B)},
              {"Q", to_json(s.Q)},                 {"R", to_json(s.R)}, {"W_noise", w}};
}

inline GlobalLQRSystem system_from_json(const Json& j, const std::string& where = "system") {
  expect_keys(j, {"partition", "A", "B", "Q", "R", "W_noise"}, where);
  GlobalLQRSystem s;
  s.partition = partition_from_json(require_key(j, "partition", where), where + ".partition");
  s.A = mat_from_json(require_key(j, "A", where), where + ".A");
  s.B = mat_from_json(require_key(j, "B", where), where + ".B");
  s.Q = symmat_from_json(require_key(j, "Q", where), where + ".Q");
  s.R = symmat_from_json(require_key(j, "R", where), where + ".R");
  const Json& w = require_key(j, "W_noise", where);
  if (!w.is_array()) throw ConfigError(where + ".W_noise: expected an array");
  for (std::size_t i = 0; i < w.size(); ++i) {
    s.W_noise.push_back(symmat_from_json(w[i], where + ".W_noise[" + std::to_string(i) + "]"));
  }
  try {
    s.validate();
  } catch (const DimensionError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return s;
}

inline Json to_json(const AuxiliaryEnsemble& e) {
  Json subs = Json::array();
  for (const auto& s : e.subsystems) {
    subs.push_back(Json{{"A", to_json(s.A)},
                        {"B", to_json(s.B)},
                        {"Q", to_json(s.Q)},
                        {"R", to_json(s.R)},
                        {"Phi", to_json(s.Phi)},
                        {"n_agents", s.n_agents}});
  }
  const auto& m = e.mean_field;
  return Json{{"partition", to_json(e.partition)},
              {"subsystems", subs},
              {"mean_field", Json{{"A_bar", to_json(m.A_bar)},
                                  {"B_bar", to_json(m.B_bar)},
                                  {"Q_eff", to_json(m.Q_eff)},
                                  {"R_eff", to_json(m.R_eff)},
                                  {"Phi_bar", to_json(m.Phi_bar)}}}};
}

inline AuxiliaryEnsemble ensemble_from_json(const Json& j, const std::string& where = "ensemble") {
  expect_keys(j, {"partition", "subsystems", "mean_field"}, where);
  AuxiliaryEnsemble e;
  e.partition = partition_from_json(require_key(j, "partition", where), where + ".partition");
  const Json& subs = require_key(j, "subsystems", where);
  if (!subs.is_array() || static_cast<int>(subs.size()) != e.partition.L()) {
    throw ConfigError(where + ".subsystems: expected one entry per subpopulation");
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const std::string w = where + ".subsystems[" + std::to_string(i) + "]";
    expect_keys(subs[i], {"A", "B", "Q", "R", "Phi", "n_agents"}, w);
    AuxiliarySubsystem s;
    s.A = mat_from_json(require_key(subs[i], "A", w), w + ".A");
    s.B = mat_from_json(require_key(subs[i], "B", w), w + ".B");
    s.Q = symmat_from_json(require_key(subs[i], "Q", w), w + ".Q");
    s.R = symmat_from_json(require_key(subs[i], "R", w), w + ".R");
    s.Phi = symmat_from_json(require_key(subs[i], "Phi", w), w + ".Phi");
    s.n_agents = get_as<int>(require_key(subs[i], "n_agents", w), w + ".n_agents");
    e.subsystems.push_back(std::move(s));
  }
  const std::string w = where + ".mean_field";
  const Json& m = require_key(j, "mean_field", where);
  expect_keys(m, {"A_bar", "B_bar", "Q_eff", "R_eff", "Phi_bar"}, w);
  e.mean_field.A_bar = mat_from_json(require_key(m, "A_bar", w), w + ".A_bar");
  e.mean_field.B_bar = mat_from_json(require_key(m, "B_bar", w), w + ".B_bar");
  e.mean_field.Q_eff = symmat_from_json(require_key(m, "Q_eff", w), w + ".Q_eff");
  e.mean_field.R_eff = symmat_from_json(require_key(m, "R_eff", w), w + ".R_eff");
  e.mean_field.Phi_bar = symmat_from_json(require_key(m, "Phi_bar", w), w + ".Phi_bar");
  return e;
}

inline Json to_json(const ExchangeabilityReport& r) {
  auto fam = [](const BlockFamily& f) {
    return Json{{"family", f.name()}, {"max_deviation", f.max_deviation}};
  };
  Json v = Json::array(), all = Json::array();
  for (const auto& f : r.violations) v.push_back(fam(f));
  for (const auto& f : r.families) all.push_back(fam(f));
  return Json{{"holds", r.holds}, {"tol", r.tol}, {"violations", v}, {"families", all}};
}

inline Json to_json(const PolicyAnalysis& a) {
  return Json{{"cost", a.cost},           {"spectral_radius", a.rho}, {"E", to_json(a.E)},
              {"E_norm", a.E.norm()},     {"grad", to_json(a.grad)},  {"Sigma", to_json(a.Sigma)},
              {"P", to_json(a.P)}};
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path.string());
  return ss.str();
}

inline Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("error writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace hierlqr
