#include "isolab/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "isolab/grid.hpp"

namespace isolab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

struct Binder {
  std::map<std::string, std::function<void(const std::string&)>> setters;
  std::map<std::string, std::function<std::string()>> getters;
  std::map<std::string, std::vector<std::string>> sections;

  void bind_double(const std::string& sec, const std::string& key, double* v) {
    reg(sec, key, [v](const std::string& s) { *v = std::stod(s); },
        [v] { std::ostringstream o; o.precision(17); o << *v; return o.str(); });
  }
  void bind_int(const std::string& sec, const std::string& key, int* v) {
    reg(sec, key, [v](const std::string& s) { *v = std::stoi(s); },
        [v] { return std::to_string(*v); });
  }
  void bind_ll(const std::string& sec, const std::string& key, long long* v) {
    reg(sec, key, [v](const std::string& s) { *v = std::stoll(s); },
        [v] { return std::to_string(*v); });
  }
  void bind_u64(const std::string& sec, const std::string& key, uint64_t* v) {
    reg(sec, key, [v](const std::string& s) { *v = std::stoull(s); },
        [v] { return std::to_string(*v); });
  }
  void bind_bool(const std::string& sec, const std::string& key, bool* v) {
    reg(sec, key,
        [v, key](const std::string& s) {
          if (s == "true" || s == "1") *v = true;
          else if (s == "false" || s == "0") *v = false;
          else throw Error(ErrorCode::config, "config: bad boolean for " + key);
        },
        [v] { return std::string(*v ? "true" : "false"); });
  }
  void bind_string(const std::string& sec, const std::string& key, std::string* v) {
    reg(sec, key, [v](const std::string& s) { *v = s; }, [v] { return *v; });
  }

 private:
  void reg(const std::string& sec, const std::string& key,
           std::function<void(const std::string&)> set, std::function<std::string()> get) {
    std::string full = sec + "." + key;
    setters[full] = std::move(set);
    getters[full] = std::move(get);
    sections[sec].push_back(key);
  }
};

Binder make_binder(RunConfig& c) {
  Binder b;
  b.bind_string("run", "variant", &c.variant);
  b.bind_int("run", "n", &c.n);
  b.bind_int("run", "stages", &c.stages);
  b.bind_int("run", "kallen_steps", &c.kallen_steps);
  b.bind_u64("run", "seed", &c.seed);
  b.bind_string("run", "out_dir", &c.out_dir);

  b.bind_double("ansatz", "a", &c.a);
  b.bind_double("ansatz", "b", &c.b);
  b.bind_double("ansatz", "alpha", &c.alpha);
  b.bind_double("ansatz", "beta", &c.beta);
  b.bind_double("ansatz", "epsilon", &c.epsilon);

  b.bind_int("grid", "points_per_axis", &c.points_per_axis);
  b.bind_double("grid", "radius", &c.radius);
  b.bind_double("grid", "margin", &c.margin);
  b.bind_int("grid", "pad_cells", &c.pad_cells);

  b.bind_string("initial", "kind", &c.initial_kind);
  b.bind_double("initial", "scale", &c.initial_scale);
  b.bind_double("initial", "bump_amp", &c.bump_amp);
  b.bind_double("initial", "bump_freq", &c.bump_freq);
  b.bind_string("initial", "P_kind", &c.P_kind);
  b.bind_double("initial", "P_amp", &c.P_amp);
  b.bind_double("initial", "P_freq", &c.P_freq);
  b.bind_int("initial", "P_modes", &c.P_modes);

  b.bind_double("tolerances", "theta", &c.theta);
  b.bind_bool("tolerances", "theta_hard", &c.theta_hard);
  b.bind_double("tolerances", "sigma1", &c.sigma1);
  b.bind_double("tolerances", "sigma_floor", &c.sigma_floor);
  b.bind_double("tolerances", "frame_tol", &c.frame_tol);
  b.bind_double("tolerances", "min_points_per_rad", &c.min_points_per_rad);
  b.bind_double("tolerances", "min_lambda_ell", &c.min_lambda_ell);
  b.bind_ll("tolerances", "pair_budget", &c.pair_budget);
  b.bind_double("tolerances", "alpha_prime_factor", &c.alpha_prime_factor);
  b.bind_bool("tolerances", "keep_ledger_fields", &c.keep_ledger_fields);
  b.bind_bool("tolerances", "track_derivative_norms", &c.track_derivative_norms);
  return b;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  Binder b = make_binder(c);
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::config,
                  "config: expected key = value at line " + std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    auto it = b.setters.find(section + "." + key);
    if (it == b.setters.end())
      throw Error(ErrorCode::config, "config: unknown key [" + section + "] " + key);
    try {
      it->second(val);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "config: bad value for [" + section + "] " + key);
    }
  }
  return c;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string emit_config(const RunConfig& c) {
  RunConfig copy = c;
  Binder b = make_binder(copy);
  std::ostringstream o;
  for (const char* sec : {"run", "ansatz", "grid", "initial", "tolerances"}) {
    o << "[" << sec << "]\n";
    for (const auto& key : b.sections[sec])
      o << key << " = " << b.getters[std::string(sec) + "." + key]() << "\n";
    o << "\n";
  }
  return o.str();
}

}  // namespace isolab
