#pragma once

// Staged pipeline behind the qsdist executable. Each stage reads its inputs
// from the output directory and writes its artifacts there.
//
// Exit codes: 0 success, 1 usage/config error, 2 convergence failure,
// 3 I/O failure, 4 certification/acceptance failure, 5 missing or malformed
// dependency.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qsdist/bounds.hpp"
#include "qsdist/charfn.hpp"
#include "qsdist/continuation.hpp"
#include "qsdist/density.hpp"
#include "qsdist/laplace.hpp"
#include "qsdist/quicksim.hpp"

namespace qsdist::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kNoConvergence = 2,
  kIo = 3,
  kCertification = 4,
  kMissingDependency = 5,
};

class StageError : public std::runtime_error {
 public:
  StageError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

[[noreturn]] inline void stage_fail(int code, const std::string& what) { throw StageError(code, what); }

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

struct RunConfig {
  double t_max = 200.0;
  double h = 0.02;
  double tol = 1e-8;
  int max_iter = 60;
  double sigma_min = 0.05;
  std::uint64_t seed = 42;
  long n = 10000;
  long samples = 100000;
  double x_lo = -2.0;
  double x_hi = 8.0;
  double x_step = 0.01;
  double decay_lo = 30.0;
  double decay_hi = 150.0;
  double contour_tolerance = 4e-3;
  std::string output_dir = ".";
};

namespace detail {

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) stage_fail(kUsage, "config: bad value '" + v + "' for " + key);
  return out;
}

inline std::pair<double, double> parse_pair(const std::string& key, const std::string& v) {
  const auto c = v.find(',');
  if (c == std::string::npos) stage_fail(kUsage, "config: " + key + " expects 'lo,hi'");
  return {parse_number<double>(key, trim(v.substr(0, c))), parse_number<double>(key, trim(v.substr(c + 1)))};
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "t_max") c.t_max = parse_number<double>(key, v);
  else if (key == "h") c.h = parse_number<double>(key, v);
  else if (key == "tol") c.tol = parse_number<double>(key, v);
  else if (key == "max_iter") c.max_iter = parse_number<int>(key, v);
  else if (key == "sigma_min") c.sigma_min = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "n") c.n = parse_number<long>(key, v);
  else if (key == "samples") c.samples = parse_number<long>(key, v);
  else if (key == "x_range") std::tie(c.x_lo, c.x_hi) = detail::parse_pair(key, v);
  else if (key == "x_step") c.x_step = parse_number<double>(key, v);
  else if (key == "decay_window") std::tie(c.decay_lo, c.decay_hi) = detail::parse_pair(key, v);
  else if (key == "contour_tolerance") c.contour_tolerance = parse_number<double>(key, v);
  else if (key == "output_dir") c.output_dir = v;
  else stage_fail(kUsage, "config: unknown key '" + key + "'");
}

/// key=value lines; '#' starts a comment.
inline RunConfig parse_config(std::istream& in, RunConfig c = {}) {
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) stage_fail(kUsage, "config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(t.substr(0, eq)), value = detail::trim(t.substr(eq + 1));
    if (!seen.insert(key).second) stage_fail(kUsage, "config: duplicate key '" + key + "'");
    set_config_value(c, key, value);
  }
  return c;
}

inline void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) stage_fail(kUsage, "config: " + what);
  };
  check(c.t_max >= 10, "t_max must be >= 10");
  check(c.h > 0 && c.h <= 0.05, "h must lie in (0, 0.05]");
  check(c.tol > 0, "tol must be positive");
  check(c.max_iter >= 1, "max_iter must be >= 1");
  check(c.sigma_min > 0 && c.sigma_min < 1, "sigma_min must lie in (0, 1)");
  check(c.n >= 2, "n must be >= 2");
  check(c.samples >= 1000, "samples must be >= 1000");
  check(c.x_lo < c.x_hi && c.x_step > 0, "x_range must be increasing with x_step > 0");
  check(c.decay_lo >= 0 && c.decay_lo < c.decay_hi && c.decay_hi <= c.t_max, "decay_window must lie in [0, t_max]");
  check(c.contour_tolerance > 0, "contour_tolerance must be positive");
}

/// Resolved config as embedded in every artifact (output_dir excluded so that
/// the same run into another directory gives identical files).
inline ojson config_json(const RunConfig& c) {
  ojson j;
  j["t_max"] = c.t_max;
  j["h"] = c.h;
  j["tol"] = c.tol;
  j["max_iter"] = c.max_iter;
  j["sigma_min"] = c.sigma_min;
  j["seed"] = c.seed;
  j["n"] = c.n;
  j["samples"] = c.samples;
  j["x_range"] = {c.x_lo, c.x_hi};
  j["x_step"] = c.x_step;
  j["decay_window"] = {c.decay_lo, c.decay_hi};
  j["contour_tolerance"] = c.contour_tolerance;
  return j;
}

// ---------------------------------------------------------------------------
// hashing and files
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

inline std::optional<std::string> read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    out.flush();
    if (!out) stage_fail(kIo, "cannot write " + p.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) stage_fail(kIo, "cannot move " + tmp.string() + " into place: " + ec.message());
}

/// Single-writer guard on an output directory. A lock left by a dead process
/// is taken over.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".qsdist.lock") {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        const bool ok = ::write(fd, pid.data(), pid.size()) == ssize_t(pid.size());
        ::close(fd);
        if (!ok) stage_fail(kIo, "cannot write lock file " + path_.string());
        held_ = true;
        return;
      }
      if (errno != EEXIST) stage_fail(kIo, "cannot create lock file " + path_.string());
      const auto text = read_text(path_);
      long pid = 0;
      if (text) pid = std::atol(text->c_str());
      if (pid > 0 && (::kill(pid_t(pid), 0) == 0 || errno != ESRCH))
        stage_fail(kIo, "output directory is locked by process " + std::to_string(pid));
      std::error_code ec;
      fs::remove(path_, ec);
    }
    stage_fail(kIo, "cannot acquire lock file " + path_.string());
  }
  ~DirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

// ---------------------------------------------------------------------------
// stage context
// ---------------------------------------------------------------------------

struct Context {
  RunConfig cfg;
  bool strict = false;
  std::ostream* log = &std::cerr;

  fs::path dir() const { return fs::path(cfg.output_dir); }
  fs::path path(const std::string& name) const { return dir() / name; }
  std::ostream& out() const { return *log; }

  /// Adds config, config_hash and content_hash (over everything else) and writes pretty JSON.
  void write_json(const std::string& name, ojson doc) const {
    ojson full;
    full["config"] = config_json(cfg);
    full["config_hash"] = hash_hex(config_json(cfg).dump());
    for (auto it = doc.begin(); it != doc.end(); ++it) full[it.key()] = it.value();
    full["content_hash"] = hash_hex(full.dump());
    write_text(path(name), full.dump(2) + "\n");
  }
};

inline ojson read_json(const Context& c, const std::string& name, const std::string& producer) {
  const auto text = read_text(c.path(name));
  if (!text) stage_fail(kMissingDependency, name + " is missing; run '" + producer + "' first");
  try {
    return ojson::parse(*text);
  } catch (const std::exception& e) {
    stage_fail(kMissingDependency, name + " is malformed: " + e.what());
  }
}

template <class T>
T json_field(const ojson& j, const std::string& key, const std::string& file) {
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    stage_fail(kMissingDependency, file + " lacks a valid '" + key + "'");
  }
}

inline GridCharFn load_grid(const Context& c) {
  const ojson meta = read_json(c, "meta.json", "iterate");
  const auto csv = read_text(c.path("charfn.csv"));
  if (!csv) stage_fail(kMissingDependency, "charfn.csv is missing; run 'iterate' first");
  if (json_field<std::string>(meta, "charfn_csv_hash", "meta.json") != hash_hex(*csv))
    stage_fail(kMissingDependency, "charfn.csv does not match the hash recorded in meta.json");
  FixpointTrace tr{json_field<int>(meta, "iteration_count", "meta.json"),
                   json_field<double>(meta, "residual", "meta.json"),
                   json_field<std::vector<double>>(meta, "sup_differences", "meta.json")};
  std::istringstream in(*csv);
  try {
    return read_charfn_csv(in, std::move(tr));
  } catch (const Error& e) {
    stage_fail(kMissingDependency, std::string("charfn.csv: ") + e.what());
  }
}

inline DecayFit decay_from_json(const ojson& j) {
  DecayFit f;
  f.eta_hat = json_field<double>(j, "eta_hat", "decay.json");
  f.log_c_hat = json_field<double>(j, "log_c_hat", "decay.json");
  f.t_lo = json_field<double>(j, "t_lo", "decay.json");
  f.t_hi = json_field<double>(j, "t_hi", "decay.json");
  f.rms_residual = json_field<double>(j, "rms_residual", "decay.json");
  f.knots_used = json_field<std::size_t>(j, "knots_used", "decay.json");
  if (!(f.eta_hat > 0)) stage_fail(kMissingDependency, "decay.json holds no positive eta_hat");
  return f;
}

inline DecayFit load_decay(const Context& c) { return decay_from_json(read_json(c, "decay.json", "decay")); }

inline ojson to_json(const DecayFit& f) {
  ojson j;
  j["eta_hat"] = f.eta_hat;
  j["log_c_hat"] = f.log_c_hat;
  j["t_lo"] = f.t_lo;
  j["t_hi"] = f.t_hi;
  j["rms_residual"] = f.rms_residual;
  j["knots_used"] = f.knots_used;
  return j;
}

// ---------------------------------------------------------------------------
// iterate
// ---------------------------------------------------------------------------

inline void write_grid(const Context& c, const GridCharFn& f) {
  std::ostringstream csv;
  write_charfn_csv(csv, f);
  ojson meta;
  meta["iteration_count"] = f.iteration_count();
  meta["residual"] = f.residual();
  meta["sup_differences"] = f.trace().sup_differences;
  std::vector<double> ratios;
  const auto& d = f.trace().sup_differences;
  for (std::size_t k = 1; k < d.size(); ++k) ratios.push_back(d[k] / d[k - 1]);
  meta["contraction_ratios"] = ratios;
  ojson probes = ojson::array();
  for (double t : {1.0, 5.0, 10.0, 20.0, 50.0})
    if (t <= f.t_max()) probes.push_back({t, equation_residual(f, std::span<const double>(&t, 1))});
  meta["residual_checkpoints"] = std::move(probes);
  meta["knots"] = f.size();
  meta["h"] = f.step();
  meta["t_max"] = f.t_max();
  meta["charfn_csv_hash"] = hash_hex(csv.str());
  write_text(c.path("charfn.csv"), csv.str());
  c.write_json("meta.json", std::move(meta));
}

inline int cmd_iterate(const Context& c) {
  FixpointOptions opt;
  opt.t_max = c.cfg.t_max;
  opt.h = c.cfg.h;
  opt.tol = c.cfg.tol;
  opt.max_iter = c.cfg.max_iter;
  opt.on_iteration = [&](int k, double d) { c.out() << "iterate: k=" << k << " sup-diff=" << d << "\n"; };
  try {
    const GridCharFn f = iterate_to_fixpoint(opt);
    write_grid(c, f);
    c.out() << "iterate: converged in " << f.iteration_count() << " iterations, residual " << f.residual() << "\n";
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NoConvergence) stage_fail(kNoConvergence, e.what());
    throw;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int cmd_simulate(const Context& c) {
  const SimSummary s = simulate(c.cfg.n, c.cfg.samples, c.cfg.seed);
  std::string csv = "y\n";
  csv.reserve(26 * s.y.size());
  for (double v : s.y) csv += format_double(v) + "\n";
  ojson j = qsdist::to_json(s);
  j["samples_csv_hash"] = hash_hex(csv);
  j["mc_noise_ks"] = 1.36 / std::sqrt(double(s.samples));
  j["finite_n_drift"] = std::log(double(s.n)) / double(s.n);
  bool pass = true;
  if (fs::exists(c.path("charfn.csv"))) {
    const GridCharFn f = load_grid(c);
    double worst = 0;
    for (const auto& [t, v] : s.ecf)
      if (t <= 10) worst = std::max(worst, std::abs(v - f(t)));
    j["ecf_max_gap"] = worst;
    j["ecf_tolerance"] = 0.02;
    pass = worst < 0.02;
    j["ecf_pass"] = pass;
  }
  write_text(c.path("sim_samples.csv"), csv);
  c.write_json("sim.json", std::move(j));
  c.out() << "simulate: n=" << s.n << " samples=" << s.samples << " variance " << s.empirical_variance << "\n";
  return c.strict && !pass ? kCertification : kOk;
}

inline SimSummary load_sim(const Context& c) {
  const ojson j = read_json(c, "sim.json", "simulate");
  const auto csv = read_text(c.path("sim_samples.csv"));
  if (!csv) stage_fail(kMissingDependency, "sim_samples.csv is missing; run 'simulate' first");
  if (json_field<std::string>(j, "samples_csv_hash", "sim.json") != hash_hex(*csv))
    stage_fail(kMissingDependency, "sim_samples.csv does not match the hash recorded in sim.json");
  SimSummary s;
  s.n = json_field<long>(j, "n", "sim.json");
  s.samples = json_field<long>(j, "samples", "sim.json");
  s.seed = json_field<std::uint64_t>(j, "seed", "sim.json");
  s.empirical_variance = json_field<double>(j, "empirical_variance", "sim.json");
  std::istringstream in(*csv);
  std::string line;
  std::getline(in, line);
  std::size_t lineno = 1;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty()) s.y.push_back(qsdist::detail::parse_double(line, lineno));
    }
  } catch (const Error& e) {
    stage_fail(kMissingDependency, std::string("sim_samples.csv: ") + e.what());
  }
  if (long(s.y.size()) != s.samples) stage_fail(kMissingDependency, "sim_samples.csv row count differs from sim.json");
  return s;
}

// ---------------------------------------------------------------------------
// decay
// ---------------------------------------------------------------------------

inline int cmd_decay(const Context& c) {
  const GridCharFn f = load_grid(c);
  DecayFit fit;
  try {
    fit = fit_decay(f, c.cfg.decay_lo, c.cfg.decay_hi);
  } catch (const Error& e) {
    c.out() << "decay: " << e.what() << "\n";
    return kCertification;
  }
  ojson j = to_json(fit);
  j["floor"] = 1e-14;
  ojson sens = ojson::array();
  const std::vector<std::pair<double, double>> windows{
      {c.cfg.decay_lo, c.cfg.decay_hi}, {50, 200}, {100, 200}, {20, 60}};
  for (const auto& [lo, hi] : windows) {
    if (hi > f.t_max()) continue;
    try {
      const DecayFit g = fit_decay(f, lo, hi, 0.0);
      sens.push_back({{"t_lo", lo}, {"t_hi", hi}, {"floor", 0.0}, {"eta_hat", g.eta_hat},
                      {"rms_residual", g.rms_residual}, {"knots_used", g.knots_used}});
    } catch (const Error&) {
    }
  }
  j["sensitivity"] = std::move(sens);
  j["pass"] = fit.eta_hat > 0;
  c.write_json("decay.json", std::move(j));
  c.out() << "decay: eta_hat=" << fit.eta_hat << " rms=" << fit.rms_residual << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& certify_ids() {
  static const std::vector<std::string> ids{"EQ1_SHIFT",    "EQ2_ASYMPTOTIC", "LEMMA1_DERIV",  "LEMMA2_LOWER",
                                            "LEMMA3_SUP",   "LEMMA4_STRIP",   "LEMMA5_REGION", "ENVELOPE",
                                            "CONTINUATION"};
  return ids;
}

inline std::set<std::string> parse_which(const std::string& which) {
  std::set<std::string> out;
  std::stringstream ss(which);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    if (item == "all") {
      out.insert(certify_ids().begin(), certify_ids().end());
      continue;
    }
    if (item == "CONTINUATION") {
      out.insert(item);
      continue;
    }
    const auto id = bound_id_from_string(item);
    if (!id) stage_fail(kUsage, "unknown bound id '" + item + "'");
    out.insert(to_string(*id));
  }
  if (out.empty()) stage_fail(kUsage, "--which selects no bounds");
  return out;
}

inline ojson to_json(const SupReport& s) {
  ojson j = qsdist::to_json(s.report);
  j["sigma"] = s.sigma;
  j["sup"] = s.sup;
  j["argsup"] = s.argsup;
  return j;
}

/// The fit for ψ's tail model: decay.json when present, otherwise refit in process.
inline std::pair<DecayFit, std::string> decay_for_engine(const Context& c, const GridCharFn& f) {
  if (fs::exists(c.path("decay.json"))) return {load_decay(c), "decay.json"};
  return {fit_decay(f, c.cfg.decay_lo, c.cfg.decay_hi), "refit"};
}

inline int cmd_certify(const Context& c, const std::set<std::string>& which) {
  const GridCharFn f = load_grid(c);
  const auto [fit, fit_source] = decay_for_engine(c, f);
  const LaplaceEngine eng(f, fit, LaplaceOptions{c.cfg.sigma_min, 6});
  fs::create_directories(c.path("bounds"));
  bool all_pass = true;
  auto emit = [&](const std::string& id, ojson doc, bool pass) {
    doc["decay_source"] = fit_source;
    c.write_json("bounds/" + id + ".json", std::move(doc));
    c.out() << "certify: " << id << (pass ? " PASS" : " FAIL") << "\n";
    all_pass = all_pass && pass;
  };
  auto want = [&](const char* id) { return which.count(id) > 0; };

  if (want("EQ1_SHIFT")) {
    const BoundReport r = certify_shift_equation(eng, default_eq1_points());
    emit("EQ1_SHIFT", qsdist::to_json(r), r.pass);
  }
  std::optional<Calibration> cal;
  if (want("EQ2_ASYMPTOTIC") || want("LEMMA2_LOWER") || want("LEMMA4_STRIP") || want("LEMMA5_REGION") ||
      want("CONTINUATION"))
    cal = calibrate_a(eng);
  if (want("EQ2_ASYMPTOTIC")) {
    const BoundReport r = certify_asymptotic(eng, *cal);
    emit("EQ2_ASYMPTOTIC", qsdist::to_json(r), r.pass);
  }
  if (want("LEMMA1_DERIV") || want("LEMMA2_LOWER")) {
    const DerivReports d = certify_deriv_bounds(eng, default_deriv_points(), 2, cal ? cal->a : 0.0);
    if (want("LEMMA1_DERIV")) emit("LEMMA1_DERIV", qsdist::to_json(d.lemma1), d.lemma1.pass);
    if (want("LEMMA2_LOWER")) emit("LEMMA2_LOWER", qsdist::to_json(d.lemma2), d.lemma2.pass);
  }
  std::optional<SupReport> sup1;
  if (want("LEMMA3_SUP")) {
    ojson j;
    j["bound"] = "LEMMA3_SUP";
    ojson per = ojson::array();
    bool pass = true;
    for (double sigma : {0.5, 1.0, 2.0}) {
      SupReport s = certify_sup_bound(eng, sigma);
      pass = pass && s.report.pass;
      per.push_back(to_json(s));
      if (sigma == 1.0) sup1 = std::move(s);
    }
    pass = pass && sup1->eps_hat && *sup1->eps_hat > 0;
    j["pass"] = pass;
    j["eps_hat"] = *sup1->eps_hat;
    j["argsup"] = sup1->argsup;
    j["sigmas"] = std::move(per);
    emit("LEMMA3_SUP", std::move(j), pass);
  }
  if (want("LEMMA4_STRIP") || want("LEMMA5_REGION") || want("CONTINUATION")) {
    ContinuationCache cache(eng, ContinuationOptions{.c1 = cal->a});
    if (want("LEMMA4_STRIP") || want("LEMMA5_REGION")) {
      if (!sup1) sup1 = certify_sup_bound(eng, 1.0);
      const StripReports st = certify_strip_bounds(cache, StripInputs{sup1->eps_hat, sup1->argsup});
      if (want("LEMMA4_STRIP")) emit("LEMMA4_STRIP", qsdist::to_json(st.lemma4), st.lemma4.pass);
      if (want("LEMMA5_REGION")) emit("LEMMA5_REGION", qsdist::to_json(st.lemma5), st.lemma5.pass);
    }
    if (want("CONTINUATION")) {
      const ConsistencyCheck cc = continuation_consistency(cache);
      const OneStepShift o = one_step_shift_check(eng, cplx(1, 0.5));
      ojson j;
      j["bound"] = "CONTINUATION";
      const bool pass = cc.pass && o.residual <= o.budget;
      j["pass"] = pass;
      j["worst_ratio"] = cc.worst_ratio;
      ojson pts = ojson::array();
      for (std::size_t k = 0; k < cc.continued.size(); ++k) {
        const PsiSample& b = cc.continued[k];
        const PsiSample& d = cc.direct[k];
        pts.push_back({b.s.re(), b.s.im(), b.value.real(), b.value.imag(), d.value.real(), d.value.imag(),
                       b.err_est, d.err_est, b.shift_depth});
      }
      j["samples"] = std::move(pts);
      j["sample_columns"] = {"re", "im", "continued_re", "continued_im", "direct_re", "direct_im",
                             "continued_err", "direct_err", "shift_depth"};
      j["one_step_point"] = {1.0, 0.5};
      j["one_step_residual"] = o.residual;
      j["one_step_budget"] = o.budget;
      emit("CONTINUATION", std::move(j), pass);
    }
  }
  if (want("ENVELOPE")) {
    const EnvelopeReport e = envelope_certify(f, 10.0, 0.05);
    ojson j;
    j["bound"] = "ENVELOPE";
    j["pass"] = e.pass;
    j["t_range"] = {10.0, f.t_max()};
    j["max_ratio"] = e.max_ratio;
    j["tolerance"] = e.tolerance;
    ojson pts = ojson::array();
    for (std::size_t k = 0; k < e.t.size(); k += 50) pts.push_back({e.t[k], e.measured[k], e.envelope[k]});
    j["samples"] = std::move(pts);
    emit("ENVELOPE", std::move(j), e.pass);
  }
  return all_pass ? kOk : kCertification;
}

// ---------------------------------------------------------------------------
// density
// ---------------------------------------------------------------------------

inline int cmd_density(const Context& c) {
  const GridCharFn f = load_grid(c);
  const DecayFit fit = load_decay(c);
  const DensityGrid d = invert_density(f, fit, XGrid{c.cfg.x_lo, c.cfg.x_hi, c.cfg.x_step});
  const ComplexDensity cd(f, fit);
  const DensityChecks chk = check_density(d, cd, c.cfg.seed);
  std::ostringstream csv;
  write_density_csv(csv, d);
  ojson j = qsdist::to_json(d);
  j["checks"] = to_json(chk);
  const double limit = std::max(1e-3, 2 * d.budget());
  bool pass = chk.mass_ok(limit) && chk.mean_ok(limit) && chk.min_p >= -d.budget() && chk.strip_ok() &&
              chk.real_axis_worst <= 1.0;
  j["acceptance_limit"] = limit;
  j["density_csv_hash"] = hash_hex(csv.str());
  if (fs::exists(c.path("sim.json"))) {
    const SimSummary s = load_sim(c);
    try {
      const DivergenceReport r = compare_histogram(d, s);
      const DivergenceReport shifted = compare_histogram(d.shifted(0.1), s);
      ojson dj = qsdist::to_json(r);
      dj["shifted_control_ks"] = shifted.ks_distance;
      dj["ks_limit"] = 0.01;
      const bool ok = r.ks_distance < 0.01 && shifted.ks_distance > 0.02;
      const bool var_ok = std::abs(d.variance() - s.empirical_variance) <= 0.05;
      dj["density_variance"] = d.variance();
      dj["sim_variance"] = s.empirical_variance;
      dj["variance_pass"] = var_ok;
      dj["pass"] = ok;
      pass = pass && ok && var_ok;
      c.write_json("divergence.json", std::move(dj));
      c.out() << "density: KS " << r.ks_distance << " (shifted " << shifted.ks_distance << ")\n";
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InsufficientSamples) throw;
      c.out() << "density: no histogram comparison (" << e.what() << ")\n";
    }
  }
  j["pass"] = pass;
  write_text(c.path("density.csv"), csv.str());
  c.write_json("density.json", std::move(j));
  c.out() << "density: mass " << d.mass() << " mean " << d.mean() << (pass ? " PASS" : " FAIL") << "\n";
  return c.strict && !pass ? kCertification : kOk;
}

// ---------------------------------------------------------------------------
// contour
// ---------------------------------------------------------------------------

inline int cmd_contour(const Context& c) {
  const GridCharFn f = load_grid(c);
  const DecayFit fit = load_decay(c);
  const ojson sup = read_json(c, "bounds/LEMMA3_SUP.json", "certify --which LEMMA3_SUP");
  const double eps = json_field<double>(sup, "eps_hat", "bounds/LEMMA3_SUP.json");
  if (!(eps > 0)) stage_fail(kMissingDependency, "bounds/LEMMA3_SUP.json holds no positive eps_hat");
  const LaplaceEngine eng(f, fit, LaplaceOptions{c.cfg.sigma_min, 6});
  double a = 0;
  if (fs::exists(c.path("bounds/EQ2_ASYMPTOTIC.json"))) {
    const ojson eq2 = read_json(c, "bounds/EQ2_ASYMPTOTIC.json", "certify");
    a = json_field<double>(eq2.at("constants"), "A", "bounds/EQ2_ASYMPTOTIC.json");
  } else {
    a = calibrate_a(eng).a;
  }
  const double eta = std::min(fit.eta_hat, eps / 4);
  ContinuationCache cache(eng, ContinuationOptions{.c1 = a});
  const ContourIntegrator ci(cache, eta, ContourOptions{.tolerance = c.cfg.contour_tolerance, .eps_hat = eps});
  ojson j;
  j["eta"] = eta;
  j["eta_hat"] = fit.eta_hat;
  j["eps_hat"] = eps;
  j["A"] = a;
  j["y_max"] = ci.y_max();
  j["M"] = ci.m_const();
  j["C_apriori"] = ci.c_apriori();
  j["taylor_evaluations"] = cache.taylor_evaluations();
  j["max_shift_depth"] = cache.max_shift_depth();
  ojson pts = ojson::array();
  bool pass = true;
  std::map<double, ContourResult> rec;
  for (double t : {5.0, 10.0, 20.0}) {
    const ContourResult r = ci.recover(t);
    rec[t] = r;
    const cplx g = f(t);
    const double diff = std::abs(r.value - g);
    const double envelope = r.c_apriori * std::exp(-eta * t) / t;
    const bool ok = diff <= r.budget() && std::abs(r.value) <= envelope + r.budget();
    pass = pass && ok;
    pts.push_back({{"t", t},
                   {"recovered", {r.value.real(), r.value.imag()}},
                   {"grid", {g.real(), g.imag()}},
                   {"difference", diff},
                   {"budget", r.budget()},
                   {"quadrature", r.quadrature},
                   {"propagated", r.propagated},
                   {"tail", r.tail},
                   {"envelope", envelope},
                   {"pass", ok}});
    c.out() << "contour: t=" << t << " |diff|=" << diff << " budget=" << r.budget() << "\n";
  }
  j["points"] = std::move(pts);
  // |f(2t)| <= |f(t)|·e^{-ηt}·2 up to the budget at 2t
  ojson dbl = ojson::array();
  for (double t : {5.0, 10.0}) {
    const double lhs = std::abs(rec[2 * t].value);
    const double rhs = 2 * std::abs(rec[t].value) * std::exp(-eta * t) + rec[2 * t].budget();
    dbl.push_back({t, lhs, rhs});
    pass = pass && lhs <= rhs;
  }
  j["doubling"] = std::move(dbl);
  j["pass"] = pass;
  c.write_json("contour.json", std::move(j));
  return c.strict && !pass ? kCertification : kOk;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_stage(const std::string& name, const Context& c, const std::set<std::string>& which) {
  if (name == "iterate") return cmd_iterate(c);
  if (name == "simulate") return cmd_simulate(c);
  if (name == "decay") return cmd_decay(c);
  if (name == "certify") return cmd_certify(c, which);
  if (name == "density") return cmd_density(c);
  if (name == "contour") return cmd_contour(c);
  int worst = kOk;
  for (const char* stage : {"iterate", "simulate", "decay", "certify", "density", "contour"}) {
    const int rc = run_stage(stage, c, which);
    if (rc != kOk && rc != kCertification) return rc;
    if (rc == kCertification && stage == std::string("certify") && !fs::exists(c.path("bounds/LEMMA3_SUP.json")))
      return rc;
    worst = std::max(worst, rc);
  }
  return worst;
}

inline int run(int argc, const char* const* argv, std::ostream& log = std::cerr) {
  CLI::App app{"Quicksort limit law: fixed point, certificates, density and simulation"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path, output_dir, which = "all";
  std::optional<std::uint64_t> seed;
  bool strict = false;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--output-dir", output_dir, "directory for all artifacts (must exist)");
  app.add_option("--seed", seed, "simulation / sampling seed");
  app.add_flag("--strict", strict, "exit 4 when acceptance thresholds fail");
  std::vector<std::pair<std::string, std::string>> subs{
      {"iterate", "iterate the fixed point; writes charfn.csv, meta.json"},
      {"certify", "check the analytic bounds; writes bounds/*.json"},
      {"density", "invert f; writes density.csv, density.json, divergence.json"},
      {"simulate", "simulate quicksort costs; writes sim.json, sim_samples.csv"},
      {"decay", "fit exponential decay; writes decay.json"},
      {"contour", "recover f from a shifted contour; writes contour.json"},
      {"all", "run every stage in order"}};
  for (const auto& [name, desc] : subs) {
    CLI::App* sub = app.add_subcommand(name, desc);
    if (name == "certify" || name == "all") sub->add_option("--which", which, "comma-separated bound ids or 'all'");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, log, log);
    return kOk;
  } catch (const CLI::ParseError& e) {
    log << e.what() << "\n";
    return kUsage;
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    Context c;
    c.log = &log;
    c.strict = strict;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) stage_fail(kIo, "cannot read config " + config_path);
      c.cfg = parse_config(in);
    }
    if (!output_dir.empty()) c.cfg.output_dir = output_dir;
    if (seed) c.cfg.seed = *seed;
    validate(c.cfg);
    const std::set<std::string> ids = parse_which(which);
    if (!fs::is_directory(c.dir())) stage_fail(kIo, "output directory " + c.cfg.output_dir + " does not exist");
    DirLock lock(c.dir());
    return run_stage(stage, c, ids);
  } catch (const StageError& e) {
    log << stage << ": " << e.what() << "\n";
    return e.code();
  } catch (const Error& e) {
    log << stage << ": " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidArgument ? kUsage : kCertification;
  } catch (const fs::filesystem_error& e) {
    log << stage << ": " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    log << stage << ": " << e.what() << "\n";
    return kIo;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& log = std::cerr) {
  std::vector<const char*> argv{"qsdist"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(int(argv.size()), argv.data(), log);
}

}  // namespace qsdist::cli
