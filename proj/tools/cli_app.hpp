#pragma once

// Experiment runner. Every subcommand writes self-describing output: CSV
// starts with "# key=value" lines holding the resolved configuration, JSON
// carries a "schema" tag and the same configuration.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "toral/toral.hpp"

namespace toral::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitCapacity = 3;

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// "p/q" or an integer.
inline Rational parse_rational(const std::string& s) {
  const auto slash = s.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const auto v = std::stoll(s, &used);
      require(used == s.size(), ErrorKind::InvalidArgument, "bad rational '" + s + "'");
      return Rational(v);
    }
    const auto p = std::stoll(s.substr(0, slash), &used);
    require(used == slash, ErrorKind::InvalidArgument, "bad rational '" + s + "'");
    const auto q = std::stoll(s.substr(slash + 1), &used);
    require(used == s.size() - slash - 1 && q != 0, ErrorKind::InvalidArgument, "bad rational '" + s + "'");
    return Rational(p, q);
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::InvalidArgument, "bad rational '" + s + "'");
  }
}

/// "halves", "quadrants", or atoms "a1,b1,a2,b2;..." giving [a1,b1) x [a2,b2).
inline Partition parse_partition(const std::string& spec) {
  if (spec == "halves") return Partition::halves();
  if (spec == "quadrants") return Partition::quadrants();
  std::vector<TorusRect> atoms;
  std::stringstream atoms_ss(spec);
  std::string atom;
  while (std::getline(atoms_ss, atom, ';')) {
    std::vector<Rational> v;
    std::stringstream ss(atom);
    std::string tok;
    while (std::getline(ss, tok, ',')) v.push_back(parse_rational(tok));
    require(v.size() == 4, ErrorKind::InvalidPartition, "atom '" + atom + "' needs a1,b1,a2,b2");
    for (const auto& c : v)
      require(c >= 0 && c <= 1, ErrorKind::InvalidPartition, "atom endpoints must lie in [0, 1]");
    atoms.push_back({Arc::between(v[0], v[1]), Arc::between(v[2], v[3])});
  }
  return Partition(std::move(atoms));
}

namespace detail {

struct Common {
  std::vector<std::int64_t> matrix;
  std::string output;  // empty: the provided stream
};

inline ToralMatrix make_matrix(const std::vector<std::int64_t>& m) {
  require(m.size() == 4, ErrorKind::InvalidArgument, "--matrix needs 4 integers");
  return {m[0], m[1], m[2], m[3]};
}

inline std::string join(const std::vector<std::int64_t>& v, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

// Writes to --output when given, else to the caller's stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      require(static_cast<bool>(file_), ErrorKind::InvalidArgument, "cannot open " + path);
    }
    os_ = path.empty() ? &fallback : &file_;
  }
  std::ostream& os() { return *os_; }

 private:
  std::ofstream file_;
  std::ostream* os_;
};

inline void header(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) os << "# " << k << '=' << v << '\n';
}

inline void add_matrix(CLI::App* sub, Common& c) {
  sub->add_option("--matrix", c.matrix, "T as t11 t12 t21 t22")->expected(4)->required();
  sub->add_option("-o,--output", c.output, "write to this file instead of stdout");
  // Consumed by merge_config before parsing; declared for --help.
  static std::string ignored;
  sub->add_option("--config", ignored, "key=value configuration file (flags take precedence)");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Expands "--config FILE" into ordinary flags for the chosen subcommand.
// Lines are key=value; "#" and ";" start comments; keys may carry a
// "subcommand." prefix or sit under a [subcommand] section. Keys already
// given on the command line are skipped, so flags win.
inline std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      require(i + 1 < args.size(), ErrorKind::InvalidArgument, "--config needs a file");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;

  CLI::App* sub = nullptr;
  for (const auto& a : args)
    if (a.empty() || a[0] != '-') {
      sub = app.get_subcommand_no_throw(a);
      if (sub) break;
    }
  require(sub != nullptr, ErrorKind::InvalidArgument, "--config needs a subcommand");
  const std::string name = sub->get_name();

  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::InvalidArgument, "cannot read config " + path);
  auto given = [&](const std::string& flag) {
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> extra;
  std::string line, section;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidArgument, "config line without '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      if (key.substr(0, dot) != name) continue;
      key = key.substr(dot + 1);
    } else if (!section.empty() && section != name) {
      continue;
    }
    const std::string flag = "--" + key;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    require(opt != nullptr, ErrorKind::InvalidArgument, "unknown config key '" + key + "' for " + name);
    if (given(flag)) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") extra.push_back(flag);
      continue;
    }
    for (char& c : value)
      if (c == ',' || c == '[' || c == ']') c = ' ';
    if (key == "partition") {
      extra.push_back(flag);
      extra.push_back(trim(line.substr(eq + 1)));
      continue;
    }
    extra.push_back(flag);
    std::stringstream ss(value);
    for (std::string tok; ss >> tok;) extra.push_back(tok);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace detail

/// Runs the CLI and returns the process exit status. Output goes to `out`,
/// diagnostics to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lattice discretization of toral automorphisms: breaking times and entropy production",
               "toral"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // classify
  detail::Common cls;
  std::int64_t cls_N = 0;
  double cls_gamma = 2.0;
  auto* c_classify = app.add_subcommand("classify", "family and spectral data of T");
  detail::add_matrix(c_classify, cls);
  c_classify->add_option("--N", cls_N, "lattice side for the breaking-time estimate")->check(CLI::Range(2, 1 << 30));
  c_classify->add_option("--gamma", cls_gamma, "form factor > 1")->capture_default_str();

  // diameters
  detail::Common dia;
  std::int64_t dia_nmax = 12, dia_samples = 100000;
  auto* c_diam = app.add_subcommand(
      "diameters", "evolved unit-ball diameters.\nCSV columns: n, formula, bruteforce, rel_err");
  detail::add_matrix(c_diam, dia);
  c_diam->add_option("--n-max", dia_nmax, "largest n")->capture_default_str()->check(CLI::Range(0, 200));
  c_diam->add_option("--samples", dia_samples, "unit-circle samples for the brute force")->capture_default_str()
      ->check(CLI::Range(64, 100000000));

  // localize
  detail::Common loc;
  std::int64_t loc_N = 0, loc_n = 0, loc_trials = 100000;
  double loc_gamma = 2.0, loc_d0 = 0.1;
  std::uint64_t loc_seed = 0;
  std::string loc_mode = "both";
  auto* c_loc = app.add_subcommand(
      "localize", "dynamical localization and orbit shadowing checks (JSON report)");
  detail::add_matrix(c_loc, loc);
  c_loc->add_option("--N", loc_N, "lattice side")->required()->check(CLI::Range(2, 1 << 30));
  c_loc->add_option("--n", loc_n, "time step")->required()->check(CLI::Range(0, 100000));
  c_loc->add_option("--gamma", loc_gamma, "form factor > 1")->capture_default_str();
  c_loc->add_option("--d0", loc_d0, "distance cut-off")->capture_default_str();
  c_loc->add_option("--trials", loc_trials, "sampled pairs")->capture_default_str()->check(CLI::Range(1, 1000000000));
  c_loc->add_option("--seed", loc_seed, "64-bit seed")->required();
  c_loc->add_option("--mode", loc_mode, "localization, shadowing or both")->capture_default_str()
      ->check(CLI::IsMember({"localization", "shadowing", "both"}));

  // egorov
  detail::Common ego;
  std::vector<std::int64_t> ego_Ns;
  std::int64_t ego_jmax = 12, ego_grid_factor = 2;
  int ego_quad = 2;
  std::string ego_obs = "sin_x1";
  auto* c_ego = app.add_subcommand(
      "egorov", "Egorov defect sweep.\nCSV columns: j, N, defect");
  detail::add_matrix(c_ego, ego);
  c_ego->add_option("--N", ego_Ns, "lattice sides")->required()->check(CLI::Range(2, 1 << 14));
  c_ego->add_option("--j-max", ego_jmax, "largest time step")->capture_default_str()->check(CLI::Range(0, 10000));
  c_ego->add_option("--grid-factor", ego_grid_factor, "L2 mesh side as a multiple of N")->capture_default_str()
      ->check(CLI::Range(1, 64));
  c_ego->add_option("--quadrature", ego_quad, "midpoint sub-samples per cell edge")->capture_default_str()
      ->check(CLI::Range(1, 64));
  c_ego->add_option("--observable", ego_obs, "sin_x1, cos_sum or const")->capture_default_str()
      ->check(CLI::IsMember({"sin_x1", "cos_sum", "const"}));

  // entropy
  detail::Common ent;
  std::vector<std::int64_t> ent_Ns;
  std::int64_t ent_nmax = 10, ent_samples = 1000000;
  std::uint64_t ent_seed = 0;
  std::string ent_partition = "quadrants", ent_manifest;
  bool ent_identity = false;
  double ent_rate_frac = 0.1, ent_abs_gap = 0.05;
  auto* c_ent = app.add_subcommand(
      "entropy",
      "CS versus KS entropy over an (n, N) grid.\n"
      "CSV columns: n, N, S_cs, S_ks, gap, rate\n"
      "  S_cs  coherent-state entropy of the snapped partition (nats)\n"
      "  S_ks  Monte Carlo Shannon entropy of the classical coding (nats)\n"
      "  gap   |S_cs - S_ks| / n\n"
      "  rate  S_cs / n");
  detail::add_matrix(c_ent, ent);
  c_ent->add_option("--N", ent_Ns, "lattice sides")->required()->check(CLI::Range(2, 1 << 13));
  c_ent->add_option("--n-max", ent_nmax, "largest horizon")->capture_default_str()->check(CLI::Range(1, 30));
  c_ent->add_option("--partition", ent_partition, "halves, quadrants or a1,b1,a2,b2;...")->capture_default_str();
  c_ent->add_option("--samples", ent_samples, "Monte Carlo orbits for the KS side")->capture_default_str()
      ->check(CLI::Range(1000, 1000000000));
  c_ent->add_option("--seed", ent_seed, "64-bit seed")->required();
  c_ent->add_flag("--identity", ent_identity, "CS side uses the identity dynamics (measurement entropy)");
  c_ent->add_option("--rate-threshold", ent_rate_frac, "breaking when gap > this * xi (hyperbolic)")->capture_default_str();
  c_ent->add_option("--gap-threshold", ent_abs_gap, "breaking when |S_cs - S_ks| > this (other families)")->capture_default_str();
  c_ent->add_option("--manifest", ent_manifest, "write the JSON run manifest here");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = detail::merge_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::CapacityExceeded ? kExitCapacity : kExitValidation;
  }

  try {
    if (c_classify->parsed()) {
      const ToralMatrix T = detail::make_matrix(cls.matrix);
      const SpectralData s = classify(T);
      detail::Sink sink(cls.output, out);
      auto& os = sink.os();
      nlohmann::json j = {{"schema", "toral.classify.v1"},
                          {"matrix", cls.matrix},
                          {"family", std::string(to_string(s.family))},
                          {"trace", s.trace},
                          {"eta", s.eta},
                          {"xi", s.xi}};
      os << "family=" << to_string(s.family) << '\n';
      os << "semitrace=" << (s.trace % 2 == 0 ? std::to_string(s.trace / 2) : std::to_string(s.trace) + "/2") << '\n';
      os << "eta=" << fmt6(s.eta) << '\n';
      if (s.lambda) {
        os << "lambda=" << fmt6(*s.lambda) << '\n' << "sin_beta=" << fmt6(s.sin_beta()) << '\n';
        j["lambda"] = *s.lambda;
        j["beta"] = *s.beta;
      }
      if (s.J) {
        os << "J=" << fmt6(*s.J) << '\n';
        j["J"] = *s.J;
      }
      if (s.phi) {
        os << "phi=" << fmt6(*s.phi) << '\n' << "order=" << *s.order << '\n';
        j["phi"] = *s.phi;
        j["order"] = *s.order;
      }
      os << "xi=" << fmt6(s.xi) << '\n';
      if (cls_N > 0) {
        require(cls_gamma > 1, ErrorKind::InvalidArgument, "gamma must be > 1");
        const auto bt = breaking_time_estimate(s, cls_N, cls_gamma);
        os << "breaking_time=" << (bt ? std::to_string(*bt) : std::string("unbounded")) << '\n';
        j["N"] = cls_N;
        j["gamma"] = cls_gamma;
        j["breaking_time"] = bt ? nlohmann::json(*bt) : nlohmann::json(nullptr);
      }
      os << j.dump() << '\n';
      return kExitOk;
    }

    if (c_diam->parsed()) {
      const ToralMatrix T = detail::make_matrix(dia.matrix);
      const SpectralData s = classify(T);
      detail::Sink sink(dia.output, out);
      auto& os = sink.os();
      detail::header(os, {{"schema", "toral.diameters.v1"},
                          {"matrix", detail::join(dia.matrix)},
                          {"n_max", std::to_string(dia_nmax)},
                          {"samples", std::to_string(dia_samples)}});
      os << "n,formula,bruteforce,rel_err\n";
      for (std::int64_t n = 0; n <= dia_nmax; ++n) {
        const double f = diameter_formula(s, n);
        const double b = diameter_bruteforce(T, n, dia_samples);
        os << n << ',' << fmt(f) << ',' << fmt(b) << ',' << fmt(std::fabs(f - b) / f) << '\n';
      }
      return kExitOk;
    }

    if (c_loc->parsed()) {
      const ToralMatrix T = detail::make_matrix(loc.matrix);
      const LatticeConfig cfg(loc_N);
      detail::Sink sink(loc.output, out);
      nlohmann::json j = {{"schema", "toral.localize.v1"},
                          {"config",
                           {{"matrix", loc.matrix}, {"N", loc_N}, {"n", loc_n}, {"gamma", loc_gamma},
                            {"d0", loc_d0}, {"trials", loc_trials}, {"seed", loc_seed}, {"mode", loc_mode}}}};
      if (loc_mode != "shadowing")
        j["localization"] = verify_dynamical_localization(T, cfg, loc_n, loc_gamma, loc_d0, loc_trials, loc_seed);
      if (loc_mode != "localization") {
        try {
          j["shadowing"] = verify_orbit_shadowing(T, cfg, loc_n, loc_trials, loc_seed);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::ThresholdUnmet || loc_mode == "shadowing") throw;
          j["shadowing"] = {{"operation", "verify_orbit_shadowing"}, {"error", e.what()}};
        }
      }
      sink.os() << j.dump(2) << '\n';
      return kExitOk;
    }

    if (c_ego->parsed()) {
      const ToralMatrix T = detail::make_matrix(ego.matrix);
      const Observable<double> f = ego_obs == "sin_x1"    ? observables::sin_x1()
                                   : ego_obs == "cos_sum" ? observables::cos_sum()
                                                          : observables::constant(1.0);
      detail::Sink sink(ego.output, out);
      auto& os = sink.os();
      detail::header(os, {{"schema", "toral.egorov.v1"},
                          {"matrix", detail::join(ego.matrix)},
                          {"N", detail::join(ego_Ns, ",")},
                          {"j_max", std::to_string(ego_jmax)},
                          {"grid_factor", std::to_string(ego_grid_factor)},
                          {"quadrature", std::to_string(ego_quad)},
                          {"observable", ego_obs}});
      os << "j,N,defect\n";
      for (std::int64_t N : ego_Ns) {
        const auto series = egorov_defect_series(T.matrix(), LatticeConfig(N), f, ego_jmax,
                                                 ego_grid_factor * N, ego_quad);
        for (std::size_t jj = 0; jj < series.size(); ++jj) os << jj << ',' << N << ',' << fmt(series[jj]) << '\n';
      }
      return kExitOk;
    }

    if (c_ent->parsed()) {
      const ToralMatrix T = detail::make_matrix(ent.matrix);
      const Partition P = parse_partition(ent_partition);
      Theorem3Options opt;
      opt.samples = ent_samples;
      opt.seed = ent_seed;
      opt.hyperbolic_rate_fraction = ent_rate_frac;
      opt.absolute_gap = ent_abs_gap;

      std::optional<Theorem3Report> rep;
      std::vector<std::vector<double>> identity_S;  // per N, per n
      if (!ent_identity) {
        rep = theorem3_comparison(T, P, ent_nmax, ent_Ns, opt);
      } else {
        for (std::int64_t N : ent_Ns) {
          const Partition Q = snap_to_aligned(P, N).partition;
          std::vector<double> row;
          for (const auto& t : cs_probabilities_all(IntMatrix2::identity(), LatticeConfig(N), Q, ent_nmax))
            row.push_back(shannon_entropy(t));
          identity_S.push_back(std::move(row));
        }
        rep = theorem3_comparison(T, P, ent_nmax, ent_Ns, opt);
      }

      detail::Sink sink(ent.output, out);
      auto& os = sink.os();
      detail::header(os, {{"schema", "toral.entropy.v1"},
                          {"matrix", detail::join(ent.matrix)},
                          {"N", detail::join(ent_Ns, ",")},
                          {"n_max", std::to_string(ent_nmax)},
                          {"partition", ent_partition},
                          {"samples", std::to_string(ent_samples)},
                          {"seed", std::to_string(ent_seed)},
                          {"dynamics", ent_identity ? "identity" : "T"},
                          {"rate_threshold", fmt(ent_rate_frac)},
                          {"gap_threshold", fmt(ent_abs_gap)}});
      os << "n,N,S_cs,S_ks,gap,rate\n";
      for (std::size_t i = 0; i < ent_Ns.size(); ++i)
        for (std::int64_t n = 1; n <= ent_nmax; ++n) {
          const auto& c = rep->cell(i, n);
          const double S_cs = ent_identity ? identity_S[i][static_cast<std::size_t>(n - 1)] : c.S_cs;
          const double gap = std::fabs(S_cs - c.S_ks) / static_cast<double>(n);
          os << n << ',' << c.N << ',' << fmt(S_cs) << ',' << fmt(c.S_ks) << ',' << fmt(gap) << ','
             << fmt(S_cs / static_cast<double>(n)) << '\n';
        }

      if (!ent_manifest.empty()) {
        nlohmann::json j = *rep;
        j["schema"] = "toral.entropy-manifest.v1";
        j["config"] = {{"matrix", ent.matrix}, {"N", ent_Ns}, {"n_max", ent_nmax},
                       {"partition", ent_partition}, {"samples", ent_samples}, {"seed", ent_seed},
                       {"dynamics", ent_identity ? "identity" : "T"},
                       {"rate_threshold", ent_rate_frac}, {"gap_threshold", ent_abs_gap}};
        nlohmann::json comps = nlohmann::json::array();
        for (std::size_t i = 0; i < ent_Ns.size(); ++i) {
          const Partition Q = snap_to_aligned(P, ent_Ns[i]).partition;
          const auto meas = cs_probabilities_all(IntMatrix2::identity(), LatticeConfig(ent_Ns[i]), Q, ent_nmax);
          for (std::int64_t n = 1; n <= ent_nmax; ++n) {
            const double total = rep->cell(i, n).S_cs;
            const double m = shannon_entropy(meas[static_cast<std::size_t>(n - 1)]);
            comps.push_back({{"N", ent_Ns[i]}, {"n", n}, {"total", total}, {"measurement", m},
                             {"dynamical", total - m}});
          }
        }
        j["components"] = comps;
        std::ofstream mf(ent_manifest, std::ios::binary);
        require(static_cast<bool>(mf), ErrorKind::InvalidArgument, "cannot open " + ent_manifest);
        mf << j.dump(2) << '\n';
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::CapacityExceeded:
      case ErrorKind::AlignmentRequired:
      case ErrorKind::Overflow: return kExitCapacity;
      default: return kExitValidation;
    }
  }
  return kExitValidation;
}

}  // namespace toral::cli
