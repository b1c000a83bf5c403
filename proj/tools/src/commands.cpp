#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <utility>

#ifdef SPLINEMIX_SYSTEM_CLI11
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#ifdef SPLINEMIX_SYSTEM_JSON
#include <nlohmann/json.hpp>
#else
#include <json.hpp>
#endif

#include "csv_io.hpp"
#include "output.hpp"
#include "splinemix/criteria.hpp"
#include "splinemix/error.hpp"
#include "splinemix/estimation.hpp"
#include "splinemix/simulation.hpp"

namespace splinemix::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string out;
  double tol = 1e-8;
  int max_iter = 500;
  int threads = 0;
  bool print_config = false;
};

void add_common(CLI::App& app, Common& c) {
  app.add_option("--out", c.out, "Output directory (created if missing)");
  app.add_option("--tol", c.tol, "EM relative log-likelihood tolerance")->capture_default_str();
  app.add_option("--max-iter", c.max_iter, "EM iteration cap")->capture_default_str();
  app.add_option("--threads", c.threads, "Worker threads; 0 uses SPLINEMIX_THREADS or all cores")
      ->capture_default_str();
  app.add_flag("--print-config", c.print_config, "Print the effective configuration and exit")
      ->configurable(false);
  app.set_config("--config", "", "Flat key = value file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
}

EmOptions em_options(const Common& c) {
  EmOptions em;
  em.rel_tol = c.tol;
  em.max_iter = c.max_iter;
  em.validate();
  return em;
}

std::optional<std::pair<double, double>> parse_domain(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto comma = text.find(',');
  auto number = [&](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw UsageError("--domain expects a,b with finite numbers, got '" + text + "'");
    }
    return v;
  };
  if (comma == std::string::npos) throw UsageError("--domain expects a,b, got '" + text + "'");
  const std::string_view view(text);
  return std::pair{number(view.substr(0, comma)), number(view.substr(comma + 1))};
}

std::vector<int> grid_option(const std::string& text, const char* name) {
  try {
    return parse_int_list(text);
  } catch (const Error& e) {
    throw UsageError(std::string(name) + ": " + e.what());
  }
}

fs::path prepare_out(const Common& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  fs::create_directories(c.out);
  return fs::path(c.out);
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

json number_or_null(double v, bool valid) { return valid && std::isfinite(v) ? json(v) : json(nullptr); }

std::string cell(double v, bool valid) { return valid && std::isfinite(v) ? format_exact(v) : ""; }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// --- fit ---------------------------------------------------------------------

struct FitConfig {
  Common common;
  std::string input;
  int mf = 5;
  int mr = 8;
  std::string domain;
};

int cmd_fit(const FitConfig& cfg, std::ostream& out) {
  const auto data = read_dataset(cfg.input);
  const auto dom = parse_domain(cfg.domain).value_or(data.time_range());
  const ModelSpec spec{cfg.mf, cfg.mr, dom.first, dom.second};
  spec.validate();
  const auto em = em_options(cfg.common);
  const auto dir = prepare_out(cfg.common);

  const auto fit = em_fit(spec, data, default_init(spec, data), em);
  const int p = num_params(spec.mf, spec.mr);
  const double a = aic(fit, data);
  const double b = bic(fit, data);
  std::optional<double> log_det;
  std::string info_status = "ok";
  try {
    log_det = log_det_information(information_matrix(fit, data));
  } catch (const Error& e) {
    info_status = std::string(to_string(e.code()));
  }
  const double bi = log_det ? bic_i_value(fit.loglik, p, data.size(), *log_det) : 0.0;

  json effects = json::array();
  for (std::size_t s = 0; s < data.size(); ++s) {
    effects.push_back({{"subject_id", data.subject(s).id}, {"gamma", to_json(fit.subject_effects[s])}});
  }
  json report = {
      {"command", "fit"},
      {"input", cfg.input},
      {"model", {{"mf", spec.mf}, {"mr", spec.mr}, {"degree", ModelSpec::degree},
                 {"domain", {spec.domain_min, spec.domain_max}}}},
      {"data", {{"num_subjects", data.size()}, {"total_observations", data.total_observations()}}},
      {"em", {{"rel_tol", em.rel_tol}, {"max_iter", em.max_iter}, {"converged", fit.converged},
              {"iterations", fit.iterations}, {"trace", fit.em_trace}}},
      {"estimates", {{"beta", to_json(fit.params.beta)},
                     {"gamma_cov", to_json(fit.params.gamma_cov)},
                     {"noise_var", fit.params.noise_var}}},
      {"loglik", fit.loglik},
      {"criteria", {{"p", p}, {"aic", a}, {"bic", b},
                    {"bic_i", number_or_null(bi, log_det.has_value())},
                    {"log_det_info", number_or_null(log_det.value_or(0.0), log_det.has_value())},
                    {"information_status", info_status}}},
      {"subject_effects", effects},
  };
  write_atomic(dir / "report.json", dump(report));

  std::ostringstream curves;
  curves << "subject_id,t,x,x_hat,mean_curve\n";
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& subj = data.subject(s);
    const Eigen::VectorXd mean = mean_curve(fit, data, s);
    for (std::size_t i = 0; i < subj.times.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      curves << subj.id << ',' << format_exact(subj.times[i]) << ',' << format_exact(subj.values[i])
             << ',' << format_exact(fit.fitted_values[s](k)) << ',' << format_exact(mean(k)) << '\n';
    }
  }
  write_atomic(dir / "curves.csv", curves.str());

  out << "fit m_f=" << spec.mf << " m_r=" << spec.mr << " n=" << data.size()
      << " p=" << p << "\n"
      << "  loglik " << format_short(fit.loglik) << "  AIC " << format_short(a) << "  BIC "
      << format_short(b) << "  BIC_I " << (log_det ? format_short(bi) : info_status) << "\n"
      << "  EM " << (fit.converged ? "converged" : "stopped at the iteration cap") << " after "
      << fit.iterations << " iterations\n";
  return exit_ok;
}

// --- select ------------------------------------------------------------------

struct SelectConfig {
  Common common;
  std::string input;
  std::string mf_grid = "4..10";
  std::string mr_grid = "4..10";
  std::string domain;
};

int cmd_select(const SelectConfig& cfg, std::ostream& out) {
  const auto mf = grid_option(cfg.mf_grid, "--mf-grid");
  const auto mr = grid_option(cfg.mr_grid, "--mr-grid");
  const auto data = read_dataset(cfg.input);
  SelectOptions opts;
  opts.em = em_options(cfg.common);
  opts.domain = parse_domain(cfg.domain);
  opts.threads = cfg.common.threads;
  const auto dir = prepare_out(cfg.common);

  const auto report = select_model(data, mf, mr, opts);

  std::ostringstream csv;
  csv << "mf,mr,p,loglik,aic,bic,bic_i,log_det_info,status,detail,converged,iterations\n";
  json rows = json::array();
  for (const auto& c : report.candidates) {
    const bool fitted = c.status != CandidateStatus::em_failed;
    const bool info = c.status == CandidateStatus::ok;
    csv << c.mf << ',' << c.mr << ',' << c.p << ',' << cell(c.loglik, fitted) << ','
        << cell(c.aic, fitted) << ',' << cell(c.bic, fitted) << ',' << cell(c.bic_i, info) << ','
        << cell(c.log_det_info, info) << ',' << to_string(c.status) << ',' << c.detail << ','
        << (c.converged ? 1 : 0) << ',' << c.iterations << '\n';
    rows.push_back({{"mf", c.mf}, {"mr", c.mr}, {"p", c.p},
                    {"loglik", number_or_null(c.loglik, fitted)},
                    {"aic", number_or_null(c.aic, fitted)},
                    {"bic", number_or_null(c.bic, fitted)},
                    {"bic_i", number_or_null(c.bic_i, info)},
                    {"log_det_info", number_or_null(c.log_det_info, info)},
                    {"status", to_string(c.status)}, {"detail", c.detail},
                    {"converged", c.converged}, {"iterations", c.iterations}});
  }
  json chosen = json::object();
  for (auto crit : kAllCriteria) {
    const auto m = report.chosen_model(crit);
    chosen[std::string(to_string(crit))] =
        m ? json{{"mf", m->first}, {"mr", m->second}} : json(nullptr);
  }
  const json doc = {{"command", "select"},
                    {"input", cfg.input},
                    {"num_subjects", report.num_subjects},
                    {"small_n", report.small_n},
                    {"search", "joint"},
                    {"candidates", rows},
                    {"chosen", chosen}};
  write_atomic(dir / "criteria.csv", csv.str());
  write_atomic(dir / "criteria.json", dump(doc));

  if (report.small_n) out << "warning: fewer than 2 subjects, BIC penalties are degenerate\n";
  for (auto crit : kAllCriteria) {
    const auto idx = report.chosen[static_cast<int>(crit)];
    out << std::string(to_string(crit)) << std::string(8 - to_string(crit).size(), ' ');
    if (!idx) {
      out << "no eligible candidate\n";
      continue;
    }
    const auto& c = report.candidates[*idx];
    out << "m_f=" << c.mf << " m_r=" << c.mr << "  value " << format_short(c.value(crit)) << "\n";
  }
  return exit_ok;
}

// --- simulate ----------------------------------------------------------------

struct SimulateConfig {
  Common common;
  std::string n = "30,50,100";
  int reps = 100;
  std::uint64_t seed = 20240101;
  std::string mf_grid = "4..10";
  std::string mr_grid = "4..10";
  std::string noise_reading = "variance";
  double noise_scale = 0.1;
  int points = 50;
  bool audit = false;
};

int cmd_simulate(const SimulateConfig& cfg, std::ostream& out) {
  const auto ns = grid_option(cfg.n, "--n");
  const auto mf = grid_option(cfg.mf_grid, "--mf-grid");
  const auto mr = grid_option(cfg.mr_grid, "--mr-grid");
  std::vector<SimulationDesign> designs;
  for (int n : ns) {
    auto d = SimulationDesign::reference(n);
    d.replications = cfg.reps;
    d.seed = cfg.seed;
    d.mf_grid = mf;
    d.mr_grid = mr;
    d.noise_reading = cfg.noise_reading == "sd" ? NoiseReading::sd : NoiseReading::variance;
    d.noise_scale = cfg.noise_scale;
    d.points_per_subject = cfg.points;
    try {
      d.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    designs.push_back(std::move(d));
  }
  StudyOptions opts;
  opts.em = em_options(cfg.common);
  opts.threads = cfg.common.threads;
  const auto dir = prepare_out(cfg.common);

  std::vector<StudyResult> results;
  for (const auto& d : designs) results.push_back(run_study(d, opts));

  std::ostringstream amse_csv, freq_csv, audit_csv;
  amse_csv << "n,criterion,selected,mean_amse,mean_amse_x100\n";
  freq_csv << "n,criterion,parameter,value,count\n";
  audit_csv << "n,replication,ok,criterion,selected,chosen_mf,chosen_mr,amse,"
               "failed_candidates,unconverged_candidates,error\n";
  json studies = json::array();
  for (const auto& r : results) {
    json mean = json::object(), sel = json::object(), mf_freq = json::object(),
         mr_freq = json::object();
    for (auto crit : kAllCriteria) {
      const auto k = static_cast<std::size_t>(crit);
      const std::string name(to_string(crit));
      const bool any = r.selected[k] > 0;
      amse_csv << r.n << ',' << name << ',' << r.selected[k] << ',' << cell(r.mean_amse[k], any)
               << ',' << cell(100.0 * r.mean_amse[k], any) << '\n';
      mean[name] = number_or_null(r.mean_amse[k], any);
      sel[name] = r.selected[k];
      json fm = json::object(), fr = json::object();
      for (const auto& [v, count] : r.mf_freq[k]) {
        freq_csv << r.n << ',' << name << ",mf," << v << ',' << count << '\n';
        fm[std::to_string(v)] = count;
      }
      for (const auto& [v, count] : r.mr_freq[k]) {
        freq_csv << r.n << ',' << name << ",mr," << v << ',' << count << '\n';
        fr[std::to_string(v)] = count;
      }
      mf_freq[name] = fm;
      mr_freq[name] = fr;
    }
    for (const auto& rec : r.records) {
      for (auto crit : kAllCriteria) {
        const auto k = static_cast<std::size_t>(crit);
        const bool s = rec.selected[k];
        audit_csv << r.n << ',' << rec.replication << ',' << (rec.ok ? 1 : 0) << ','
                  << to_string(crit) << ',' << (s ? 1 : 0) << ','
                  << (s ? std::to_string(rec.chosen_mf[k]) : "") << ','
                  << (s ? std::to_string(rec.chosen_mr[k]) : "") << ',' << cell(rec.amse[k], s)
                  << ',' << rec.failed_candidates << ',' << rec.unconverged_candidates << ','
                  << '"' << rec.error << '"' << '\n';
      }
    }
    studies.push_back({{"n", r.n},
                       {"replications", r.replications},
                       {"failures", r.failures},
                       {"selected", sel},
                       {"mean_amse", mean},
                       {"mf_freq", mf_freq},
                       {"mr_freq", mr_freq}});
  }
  const auto& d0 = designs.front();
  const json doc = {
      {"command", "simulate"},
      {"design", {{"mf_true", d0.mf_true}, {"mr_true", d0.mr_true},
                  {"beta_true", to_json(d0.beta_true)},
                  {"gamma_cov_true", to_json(d0.gamma_cov_true)},
                  {"points_per_subject", d0.points_per_subject},
                  {"domain", {d0.domain_min, d0.domain_max}},
                  {"noise_scale", d0.noise_scale},
                  {"noise_reading", to_string(d0.noise_reading)},
                  {"seed", d0.seed},
                  {"replications", d0.replications},
                  {"mf_grid", mf},
                  {"mr_grid", mr}}},
      {"em", {{"rel_tol", opts.em.rel_tol}, {"max_iter", opts.em.max_iter}}},
      {"tabulation",
       "joint argmin over the (mf, mr) grid; frequency tables are its marginal counts, "
       "each row summing to the replications in which the criterion selected a model"},
      {"studies", studies},
  };
  write_atomic(dir / "amse.csv", amse_csv.str());
  write_atomic(dir / "frequencies.csv", freq_csv.str());
  write_atomic(dir / "study.json", dump(doc));
  if (cfg.audit) write_atomic(dir / "replications.csv", audit_csv.str());

  auto pad = [](const std::string& s, std::size_t w) {
    return s.size() >= w ? s + " " : std::string(w - s.size(), ' ') + s;
  };
  out << "AMSE x 10^2 (noise reading " << cfg.noise_reading << ", " << cfg.reps
      << " replications)\n" << pad("n", 6);
  for (auto crit : kAllCriteria) out << pad(std::string(to_string(crit)), 10);
  out << "\n";
  for (const auto& r : results) {
    out << pad(std::to_string(r.n), 6);
    for (auto crit : kAllCriteria) {
      const auto k = static_cast<std::size_t>(crit);
      out << pad(r.selected[k] ? format_short(100.0 * r.mean_amse[k]) : "-", 10);
    }
    out << "\n";
  }
  for (const auto& r : results) {
    out << "\nSelection counts, n = " << r.n << " (" << r.failures << " failed replications)\n"
        << pad("", 7) << "m_f:";
    for (int v : mf) out << pad(std::to_string(v), 4);
    out << "   m_r:";
    for (int v : mr) out << pad(std::to_string(v), 4);
    out << "\n";
    for (auto crit : kAllCriteria) {
      const auto k = static_cast<std::size_t>(crit);
      std::string name(to_string(crit));
      out << name << std::string(11 - name.size(), ' ');
      for (int v : mf) out << pad(std::to_string(r.mf_freq[k].at(v)), 4);
      out << std::string(7, ' ');
      for (int v : mr) out << pad(std::to_string(r.mr_freq[k].at(v)), 4);
      out << "\n";
    }
  }
  return exit_ok;
}

// --- dispatch ----------------------------------------------------------------

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error:
      return exit_parse;
    case ErrorCode::invalid_argument:
    case ErrorCode::invalid_basis_count:
    case ErrorCode::invalid_domain:
    case ErrorCode::invalid_index:
    case ErrorCode::out_of_domain:
      return exit_usage;
    default:
      return exit_numerical;
  }
}

void write_error(const std::string& command, const std::string& out_dir, const std::string& code,
                 const std::string& message, int exit_code) {
  if (out_dir.empty()) return;
  try {
    fs::create_directories(out_dir);
    const json doc = {{"status", "error"}, {"command", command}, {"code", code},
                      {"message", message}, {"exit_code", exit_code}};
    write_atomic(fs::path(out_dir) / "error.json", dump(doc));
  } catch (const std::exception&) {
    // The terminal message is still printed.
  }
}

const char* kUsage =
    "usage: splinemix <fit|select|simulate> [options]\n"
    "       splinemix <command> --help\n";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << kUsage;
    return exit_usage;
  }
  const std::string& command = args[0];
  if (command == "--help" || command == "-h") {
    out << kUsage;
    return exit_ok;
  }

  FitConfig fit_cfg;
  SelectConfig select_cfg;
  SimulateConfig sim_cfg;
  CLI::App app;
  Common* common = nullptr;
  app.name("splinemix " + command);

  if (command == "fit") {
    app.description("Fit one mixed-effects B-spline model by EM");
    common = &fit_cfg.common;
    app.add_option("--input", fit_cfg.input, "CSV with columns subject_id,t,x");
    app.add_option("--mf", fit_cfg.mf, "Number of mean basis functions")->capture_default_str();
    app.add_option("--mr", fit_cfg.mr, "Number of random-effect basis functions")->capture_default_str();
    app.add_option("--domain", fit_cfg.domain, "Basis domain a,b; defaults to the data's time range");
  } else if (command == "select") {
    app.description("Fit every (m_f, m_r) in a grid and choose by AIC, BIC and BIC_I");
    common = &select_cfg.common;
    app.add_option("--input", select_cfg.input, "CSV with columns subject_id,t,x");
    app.add_option("--mf-grid", select_cfg.mf_grid, "m_f values, e.g. 4..10 or 4,6,8")->capture_default_str();
    app.add_option("--mr-grid", select_cfg.mr_grid, "m_r values")->capture_default_str();
    app.add_option("--domain", select_cfg.domain, "Basis domain a,b; defaults to the data's time range");
  } else if (command == "simulate") {
    app.description("Monte Carlo study on the reference design");
    common = &sim_cfg.common;
    app.add_option("--n", sim_cfg.n, "Subject counts, e.g. 30,50,100")->capture_default_str();
    app.add_option("--reps", sim_cfg.reps, "Replications per subject count")->capture_default_str();
    app.add_option("--seed", sim_cfg.seed, "Base seed")->capture_default_str();
    app.add_option("--mf-grid", sim_cfg.mf_grid, "m_f values")->capture_default_str();
    app.add_option("--mr-grid", sim_cfg.mr_grid, "m_r values")->capture_default_str();
    app.add_option("--noise-reading", sim_cfg.noise_reading,
                   "variance: Var = c R^2; sd: sd = c R")
        ->check(CLI::IsMember({"variance", "sd"}))
        ->capture_default_str();
    app.add_option("--noise-scale", sim_cfg.noise_scale, "Noise scale c")->capture_default_str();
    app.add_option("--points", sim_cfg.points, "Observation points per subject")->capture_default_str();
    app.add_flag("--audit", sim_cfg.audit, "Also write replications.csv");
  } else {
    err << "unknown command '" << command << "'\n" << kUsage;
    return exit_usage;
  }
  add_common(app, *common);

  try {
    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    write_error(command, common->out, "usage", e.what(), exit_usage);
    return exit_usage;
  }
  if (common->print_config) {
    out << app.config_to_str(true, false);
    return exit_ok;
  }

  auto failure = [&](const std::string& code, const std::string& message, int exit_code) {
    err << "error[" << code << "]: " << message << "\n";
    write_error(command, common->out, code, message, exit_code);
    return exit_code;
  };
  try {
    if (command == "fit") {
      if (fit_cfg.input.empty()) throw UsageError("--input is required");
      return cmd_fit(fit_cfg, out);
    }
    if (command == "select") {
      if (select_cfg.input.empty()) throw UsageError("--input is required");
      return cmd_select(select_cfg, out);
    }
    return cmd_simulate(sim_cfg, out);
  } catch (const UsageError& e) {
    return failure("usage", e.what(), exit_usage);
  } catch (const Error& e) {
    return failure(std::string(to_string(e.code())), e.what(), exit_code_for(e.code()));
  } catch (const fs::filesystem_error& e) {
    return failure("io-error", e.what(), exit_parse);
  } catch (const std::exception& e) {
    return failure("internal", e.what(), exit_numerical);
  }
}

}  // namespace splinemix::cli
