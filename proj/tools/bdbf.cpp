// Command-line harness for Bayesian deep basis fitting: synthetic scene
// generation, fitting, evaluation, calibration, and sparsity sweeps.
// Exit codes: 0 ok, 2 usage, 3 I/O or format, 4 numerical.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bdbf/bdbf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(bdbf::ErrorCode code) {
  switch (code) {
    case bdbf::ErrorCode::kUsage:
      return 2;
    case bdbf::ErrorCode::kIo:
    case bdbf::ErrorCode::kParse:
    case bdbf::ErrorCode::kBadMagic:
    case bdbf::ErrorCode::kBadVersion:
    case bdbf::ErrorCode::kTruncated:
    case bdbf::ErrorCode::kChecksum:
      return 3;
    default:
      return 4;
  }
}

[[noreturn]] void usage_error(const std::string& what) {
  throw bdbf::Error(bdbf::ErrorCode::kUsage, what);
}

// Optional JSON config file; precedence is CLI flag > file > built-in
// default, so a file value applies only to options left at their defaults.
class ConfigFile {
 public:
  void load(const std::string& path) {
    try {
      j_ = json::parse(bdbf::detail::read_all(path));
    } catch (const json::exception& e) {
      throw bdbf::Error(bdbf::ErrorCode::kParse, std::string("config JSON: ") + e.what());
    }
    if (!j_.is_object()) usage_error("config JSON must be an object");
    loaded_ = true;
  }

  template <typename T>
  void apply(const CLI::App* cmd, const char* flag, const char* key, T& target) {
    if (!loaded_ || !j_.contains(key)) return;
    used_.insert(key);
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    if (opt != nullptr && opt->count() > 0) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      usage_error(std::string("config key '") + key + "' has the wrong type");
    }
  }

  void finish() const {
    if (!loaded_) return;
    for (const auto& item : j_.items()) {
      if (!used_.contains(item.key())) {
        usage_error("unknown config key '" + item.key() + "'");
      }
    }
  }

 private:
  json j_;
  bool loaded_ = false;
  std::set<std::string> used_;
};

std::string hex8(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json file_entry(const fs::path& path) {
  const std::string bytes = bdbf::detail::read_all(path);
  return json{{"path", path.string()},
              {"bytes", bytes.size()},
              {"crc32", hex8(bdbf::crc32(bytes))}};
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) usage_error("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    throw bdbf::Error(bdbf::ErrorCode::kIo, "cannot create " + out + ": " + ec.message());
  }
}

// Sparsity flag: 0 means no measurements, values in (0,1) are fractions,
// integers >= 1 are absolute counts.
bdbf::Sparsity to_sparsity(double v) {
  if (!(v >= 0.0)) usage_error("--sparsity must be >= 0");
  if (v == 0.0) return bdbf::Sparsity::count(0);
  if (v < 1.0) return bdbf::Sparsity::fraction(v);
  const double rounded = std::round(v);
  if (std::abs(v - rounded) > 1e-9) {
    usage_error("--sparsity >= 1 must be an integral count");
  }
  return bdbf::Sparsity::count(static_cast<long>(rounded));
}

bdbf::NoiseFamily to_noise(const std::string& name) {
  if (name == "gaussian") return bdbf::NoiseFamily::kGaussian;
  if (name == "laplace") return bdbf::NoiseFamily::kLaplace;
  usage_error("--noise must be 'gaussian' or 'laplace'");
}

bdbf::ErrorSpace to_space(const std::string& name) {
  if (name == "latent") return bdbf::ErrorSpace::kLatent;
  if (name == "depth") return bdbf::ErrorSpace::kDepth;
  usage_error("--ause-space must be 'latent' or 'depth'");
}

bdbf::BaseMetric to_base_metric(const std::string& name) {
  if (name == "mae") return bdbf::BaseMetric::kMae;
  if (name == "rmse") return bdbf::BaseMetric::kRmse;
  usage_error("--ause-metric must be 'mae' or 'rmse'");
}

long thread_cap() {
  long cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BDBF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      usage_error("BDBF_THREADS must be a positive integer");
    }
    cap = v;
  }
  return cap;
}

// Built-in generation prior: bias weight centered on an 8 m scene depth,
// modest spread on every channel so depths stay under the 80 m cap.
bdbf::GaussianPrior default_synth_prior(int m, bool bias) {
  bdbf::GaussianPrior prior;
  prior.mean = Eigen::VectorXd::Zero(m);
  if (bias) prior.mean[0] = std::log(8.0);
  prior.cov = 0.04 * Eigen::MatrixXd::Identity(m, m);
  return prior;
}

// Fallback fitting prior when no file is given: uninformative zero mean,
// identity covariance.
bdbf::GaussianPrior default_fit_prior(int m) {
  bdbf::GaussianPrior prior;
  prior.mean = Eigen::VectorXd::Zero(m);
  prior.cov = Eigen::MatrixXd::Identity(m, m);
  return prior;
}

struct DenseMaps {
  int height = 0;
  int width = 0;
  std::vector<double> mu;   // latent mean, row-major
  std::vector<double> var;  // latent variance, row-major
};

template <typename PredictFn>
DenseMaps predict_dense(const bdbf::BasisMap& basis, PredictFn&& predict_one) {
  DenseMaps maps;
  maps.height = basis.height();
  maps.width = basis.width();
  const std::size_t total = static_cast<std::size_t>(maps.height) * maps.width;
  maps.mu.resize(total);
  maps.var.resize(total);
  for (int u = 0; u < maps.height; ++u) {
    for (int v = 0; v < maps.width; ++v) {
      const auto [mu, var] = predict_one(Eigen::VectorXd(basis.phi(u, v)));
      maps.mu[static_cast<std::size_t>(u) * maps.width + v] = mu;
      maps.var[static_cast<std::size_t>(u) * maps.width + v] = var;
    }
  }
  return maps;
}

// Dense prediction container: an M=2 basis file holding (mu, var) per pixel.
bdbf::BasisMap to_prediction_map(const DenseMaps& maps) {
  std::vector<double> values(maps.mu.size() * 2);
  for (std::size_t p = 0; p < maps.mu.size(); ++p) {
    values[2 * p] = maps.mu[p];
    values[2 * p + 1] = maps.var[p];
  }
  return bdbf::BasisMap(maps.height, maps.width, 2, std::move(values), false);
}

DenseMaps from_prediction_map(const bdbf::BasisMap& map) {
  if (map.num_bases() != 2) {
    throw bdbf::Error(bdbf::ErrorCode::kDimension,
                      "prediction file must have exactly 2 channels (mu, var)");
  }
  DenseMaps maps;
  maps.height = map.height();
  maps.width = map.width();
  const std::size_t total = static_cast<std::size_t>(maps.height) * maps.width;
  maps.mu.resize(total);
  maps.var.resize(total);
  for (std::size_t p = 0; p < total; ++p) {
    maps.mu[p] = map.values()[2 * p];
    maps.var[p] = map.values()[2 * p + 1];
  }
  return maps;
}

bdbf::EvalSet build_eval_set(const DenseMaps& pred, const bdbf::BasisMap& truth) {
  if (truth.num_bases() != 1) {
    throw bdbf::Error(bdbf::ErrorCode::kDimension, "truth file must have exactly 1 channel");
  }
  if (truth.height() != pred.height || truth.width() != pred.width) {
    throw bdbf::Error(bdbf::ErrorCode::kDimension, "prediction and truth shapes differ");
  }
  bdbf::EvalSet set;
  const std::size_t total = pred.mu.size();
  set.pred_depth.resize(total);
  set.true_depth.resize(total);
  set.latent_mu.resize(total);
  set.latent_b.resize(total);
  set.valid.resize(total);
  for (std::size_t p = 0; p < total; ++p) {
    const double d_true = truth.values()[p];
    set.pred_depth[p] = bdbf::latent_to_depth(pred.mu[p]);
    set.true_depth[p] = d_true;
    set.latent_mu[p] = pred.mu[p];
    set.latent_b[p] = bdbf::laplace_scale(pred.var[p]);
    set.valid[p] = std::isfinite(d_true) && d_true > 0.0;
  }
  return set;
}

bdbf::EvalSet eval_set_from_scene(const DenseMaps& pred,
                                  const std::vector<double>& depth_true) {
  bdbf::EvalSet set;
  const std::size_t total = pred.mu.size();
  set.pred_depth.resize(total);
  set.true_depth.resize(total);
  set.latent_mu.resize(total);
  set.latent_b.resize(total);
  set.valid.assign(total, true);
  for (std::size_t p = 0; p < total; ++p) {
    set.pred_depth[p] = bdbf::latent_to_depth(pred.mu[p]);
    set.true_depth[p] = depth_true[p];
    set.latent_mu[p] = pred.mu[p];
    set.latent_b[p] = bdbf::laplace_scale(pred.var[p]);
  }
  return set;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::string config_path;
  std::string prior_path;
  long seed = 0;
  long count = 1;
  long h = 64, w = 64, m = 8;
  bool no_bias = false;
  double sparsity = 0.05;
  double beta_true = 4.0;
  double alpha_true = 1.0;
  double smoothness = 4.0;
  std::string noise = "gaussian";
  double depth_cap = 80.0;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  CLI::App* cmd = app.add_subcommand("synth", "Generate synthetic scene files");
  cmd->set_help_flag("--help", "Print help");  // frees -h for the --h option
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--config", a.config_path, "JSON config file (flags override)");
  cmd->add_option("--prior", a.prior_path, "Generation prior JSON (default built-in)");
  cmd->add_option("--seed", a.seed, "First scene seed");
  cmd->add_option("--count", a.count, "Number of consecutive seeds");
  cmd->add_option("--h", a.h, "Image height");
  cmd->add_option("--w", a.w, "Image width");
  cmd->add_option("--m", a.m, "Number of basis channels");
  cmd->add_flag("--no-bias", a.no_bias, "Disable the constant-one bias channel");
  cmd->add_option("--sparsity", a.sparsity, "Fraction in (0,1) or integral count");
  cmd->add_option("--beta-true", a.beta_true, "Latent noise precision (inf = noiseless)");
  cmd->add_option("--alpha-true", a.alpha_true, "Prior precision scale for w_true");
  cmd->add_option("--smoothness", a.smoothness, "Basis correlation length, pixels");
  cmd->add_option("--noise", a.noise, "Noise family: gaussian | laplace");
  cmd->add_option("--depth-cap", a.depth_cap, "Sampling depth cap, meters");
}

void apply_synth_config(const CLI::App* cmd, SynthArgs& a) {
  if (a.config_path.empty()) return;
  ConfigFile cfg;
  cfg.load(a.config_path);
  cfg.apply(cmd, "--out", "out", a.out);
  cfg.apply(cmd, "--prior", "prior", a.prior_path);
  cfg.apply(cmd, "--seed", "seed", a.seed);
  cfg.apply(cmd, "--count", "count", a.count);
  cfg.apply(cmd, "--h", "h", a.h);
  cfg.apply(cmd, "--w", "w", a.w);
  cfg.apply(cmd, "--m", "m", a.m);
  cfg.apply(cmd, "--no-bias", "no_bias", a.no_bias);
  cfg.apply(cmd, "--sparsity", "sparsity", a.sparsity);
  cfg.apply(cmd, "--beta-true", "beta_true", a.beta_true);
  cfg.apply(cmd, "--alpha-true", "alpha_true", a.alpha_true);
  cfg.apply(cmd, "--smoothness", "smoothness", a.smoothness);
  cfg.apply(cmd, "--noise", "noise", a.noise);
  cfg.apply(cmd, "--depth-cap", "depth_cap", a.depth_cap);
  cfg.finish();
}

json synth_config_echo(const SynthArgs& a) {
  return json{{"out", a.out},         {"prior", a.prior_path},
              {"seed", a.seed},       {"count", a.count},
              {"h", a.h},             {"w", a.w},
              {"m", a.m},             {"no_bias", a.no_bias},
              {"sparsity", a.sparsity}, {"beta_true", a.beta_true},
              {"alpha_true", a.alpha_true}, {"smoothness", a.smoothness},
              {"noise", a.noise},     {"depth_cap", a.depth_cap}};
}

bdbf::SynthConfig to_synth_config(const SynthArgs& a, long seed,
                                  const std::optional<bdbf::GaussianPrior>& prior) {
  bdbf::SynthConfig cfg;
  cfg.height = static_cast<int>(a.h);
  cfg.width = static_cast<int>(a.w);
  cfg.num_bases = static_cast<int>(a.m);
  cfg.bias = !a.no_bias;
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.beta_true = a.beta_true;
  cfg.prior = prior ? *prior : default_synth_prior(cfg.num_bases, cfg.bias);
  cfg.alpha_true = a.alpha_true;
  cfg.sparsity = to_sparsity(a.sparsity);
  cfg.smoothness = a.smoothness;
  cfg.noise_family = to_noise(a.noise);
  cfg.depth_cap = a.depth_cap;
  return cfg;
}

void validate_scene_args(const SynthArgs& a) {
  if (a.h < 1 || a.w < 1) usage_error("--h and --w must be >= 1");
  if (a.m < 1) usage_error("--m must be >= 1");
  if (!(a.beta_true > 0.0)) usage_error("--beta-true must be positive");
  if (!(a.alpha_true > 0.0)) usage_error("--alpha-true must be positive");
  if (a.smoothness < 0.0) usage_error("--smoothness must be >= 0");
  if (!(a.depth_cap > 0.0)) usage_error("--depth-cap must be positive");
  to_noise(a.noise);
  to_sparsity(a.sparsity);
}

int run_synth(const SynthArgs& a) {
  validate_scene_args(a);
  if (a.count < 1) usage_error("--count must be >= 1");
  ensure_out_dir(a.out);
  std::optional<bdbf::GaussianPrior> prior;
  if (!a.prior_path.empty()) {
    prior = bdbf::read_prior(a.prior_path);
    if (prior->num_bases() != a.m) {
      usage_error("prior dimension does not match --m");
    }
  }

  json manifest;
  manifest["command"] = "synth";
  manifest["config"] = synth_config_echo(a);
  json files = json::array();
  for (long s = a.seed; s < a.seed + a.count; ++s) {
    const bdbf::SynthScene scene = bdbf::generate(to_synth_config(a, s, prior));
    const std::string suffix = a.count == 1 ? "" : "_s" + std::to_string(s);
    const fs::path basis_path = fs::path(a.out) / ("basis" + suffix + ".bdbf");
    const fs::path sparse_path = fs::path(a.out) / ("sparse" + suffix + ".csv");
    const fs::path truth_path = fs::path(a.out) / ("truth" + suffix + ".bdbf");
    bdbf::write_basis(scene.basis, basis_path);
    bdbf::write_sparse(scene.sparse, sparse_path);
    bdbf::write_basis(
        bdbf::BasisMap(scene.basis.height(), scene.basis.width(), 1,
                       std::vector<double>(scene.depth_true), false),
        truth_path);
    files.push_back(file_entry(basis_path));
    files.push_back(file_entry(sparse_path));
    files.push_back(file_entry(truth_path));
  }
  manifest["files"] = files;
  std::printf("%s\n", manifest.dump(2).c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string basis_path, sparse_path, prior_path, calibration_path, config_path;
  std::string out;
  long em_max_iters = 8;
  double em_tol = 0.01;
  double alpha0 = 1.0;
  double beta0 = 0.0;  // 0 selects sqrt(N)
  bool include_noise = false;
  bool ml_only = false;
  bool broad_prior = false;
};

void add_fit(CLI::App& app, FitArgs& a) {
  CLI::App* cmd = app.add_subcommand("fit", "Fit a scene and write dense mu/var maps");
  cmd->add_option("--basis", a.basis_path, "Basis map file");
  cmd->add_option("--sparse", a.sparse_path, "Sparse depth file");
  cmd->add_option("--prior", a.prior_path, "Prior JSON (required when N = 0)");
  cmd->add_option("--calibration", a.calibration_path, "Calibration JSON to apply");
  cmd->add_option("--config", a.config_path, "JSON config file (flags override)");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--em-max-iters", a.em_max_iters, "EM iteration budget");
  cmd->add_option("--em-tol", a.em_tol, "EM relative-beta convergence tolerance");
  cmd->add_option("--alpha0", a.alpha0, "EM initial prior precision");
  cmd->add_option("--beta0", a.beta0, "EM initial noise precision (0 = sqrt(N))");
  cmd->add_flag("--include-noise", a.include_noise, "Add beta^-1 to predictive variance");
  cmd->add_flag("--ml-only", a.ml_only, "Maximum-likelihood fit, no prior");
  cmd->add_flag("--broad-prior", a.broad_prior, "Fixed alpha = 1e-12, no EM");
}

void apply_fit_config(const CLI::App* cmd, FitArgs& a) {
  if (a.config_path.empty()) return;
  ConfigFile cfg;
  cfg.load(a.config_path);
  cfg.apply(cmd, "--basis", "basis", a.basis_path);
  cfg.apply(cmd, "--sparse", "sparse", a.sparse_path);
  cfg.apply(cmd, "--prior", "prior", a.prior_path);
  cfg.apply(cmd, "--calibration", "calibration", a.calibration_path);
  cfg.apply(cmd, "--out", "out", a.out);
  cfg.apply(cmd, "--em-max-iters", "em_max_iters", a.em_max_iters);
  cfg.apply(cmd, "--em-tol", "em_tol", a.em_tol);
  cfg.apply(cmd, "--alpha0", "alpha0", a.alpha0);
  cfg.apply(cmd, "--beta0", "beta0", a.beta0);
  cfg.apply(cmd, "--include-noise", "include_noise", a.include_noise);
  cfg.apply(cmd, "--ml-only", "ml_only", a.ml_only);
  cfg.apply(cmd, "--broad-prior", "broad_prior", a.broad_prior);
  cfg.finish();
}

json fit_config_echo(const FitArgs& a) {
  return json{{"basis", a.basis_path},
              {"sparse", a.sparse_path},
              {"prior", a.prior_path},
              {"calibration", a.calibration_path},
              {"out", a.out},
              {"em_max_iters", a.em_max_iters},
              {"em_tol", a.em_tol},
              {"alpha0", a.alpha0},
              {"beta0", a.beta0},
              {"include_noise", a.include_noise},
              {"ml_only", a.ml_only},
              {"broad_prior", a.broad_prior}};
}

int run_fit(const FitArgs& a) {
  if (a.basis_path.empty() || a.sparse_path.empty()) {
    usage_error("--basis and --sparse are required");
  }
  if (a.ml_only && a.broad_prior) usage_error("--ml-only conflicts with --broad-prior");
  if (a.em_max_iters < 1) usage_error("--em-max-iters must be >= 1");
  if (!(a.em_tol > 0.0)) usage_error("--em-tol must be positive");
  if (!(a.alpha0 > 0.0)) usage_error("--alpha0 must be positive");
  if (a.beta0 < 0.0) usage_error("--beta0 must be >= 0");
  ensure_out_dir(a.out);

  const bdbf::BasisMap basis = bdbf::read_basis(a.basis_path);
  const bdbf::SparseDepthSet sparse = bdbf::read_sparse(a.sparse_path);
  const bdbf::RegressionSystem sys = bdbf::assemble(basis, sparse);
  const long n = sys.n_obs();
  const int m = basis.num_bases();

  std::optional<bdbf::GaussianPrior> prior;
  if (!a.prior_path.empty()) {
    prior = bdbf::read_prior(a.prior_path);
    if (prior->num_bases() != m) usage_error("prior dimension does not match basis");
  }
  std::optional<bdbf::CalibrationState> calib;
  if (!a.calibration_path.empty()) calib = bdbf::read_calibration(a.calibration_path);

  json fit_block;
  fit_block["n_obs"] = n;
  fit_block["n_bases"] = m;
  fit_block["prior_only"] = false;
  DenseMaps maps;

  if (a.ml_only) {
    const bdbf::MlFit ml = bdbf::fit_ml(sys);
    bdbf::SpdSolver gram_solver(Eigen::MatrixXd(sys.design.transpose() * sys.design),
                                bdbf::ErrorCode::kRank);
    maps = predict_dense(basis, [&](const Eigen::VectorXd& phi) {
      const double mu = ml.w_ml.dot(phi);
      double var = std::max(0.0, gram_solver.quad_inv(phi) / ml.beta_ml);
      if (a.include_noise) var += 1.0 / ml.beta_ml;
      return std::pair<double, double>(mu, var);
    });
    fit_block["mode"] = "ml";
    fit_block["beta"] = ml.beta_ml;
  } else if (n == 0 && !a.broad_prior) {
    if (!prior) usage_error("prior required: no measurements and no --prior file");
    if (a.include_noise) {
      usage_error("--include-noise has no noise precision in prior-only mode");
    }
    maps = predict_dense(basis, [&](const Eigen::VectorXd& phi) {
      return bdbf::predict_prior(*prior, phi);
    });
    fit_block["mode"] = "prior";
    fit_block["prior_only"] = true;
    fit_block["alpha"] = 1.0;
  } else if (a.broad_prior) {
    const bdbf::GaussianPrior fit_prior = prior ? *prior : default_fit_prior(m);
    double beta = a.beta0;
    if (beta <= 0.0) {
      beta = n >= m ? bdbf::fit_ml(sys).beta_ml : std::sqrt(static_cast<double>(n));
    }
    constexpr double kBroadAlpha = 1e-12;
    const bdbf::PosteriorFit fit = bdbf::fit_bayes(sys, fit_prior, kBroadAlpha, beta);
    maps = predict_dense(basis, [&](const Eigen::VectorXd& phi) {
      return bdbf::predict(fit, phi, a.include_noise);
    });
    fit_block["mode"] = "broad";
    fit_block["alpha"] = fit.alpha;
    fit_block["beta"] = fit.beta;
  } else {
    const bdbf::GaussianPrior fit_prior = prior ? *prior : default_fit_prior(m);
    bdbf::EmOptions opts;
    opts.alpha0 = a.alpha0;
    opts.beta0 = a.beta0;
    opts.max_iters = static_cast<int>(a.em_max_iters);
    opts.tol = a.em_tol;
    const bdbf::PosteriorFit fit = bdbf::fit_em(sys, fit_prior, opts);
    maps = predict_dense(basis, [&](const Eigen::VectorXd& phi) {
      return bdbf::predict(fit, phi, a.include_noise);
    });
    fit_block["mode"] = "em";
    fit_block["alpha"] = fit.alpha;
    fit_block["beta"] = fit.beta;
    fit_block["em_iters"] = fit.em_iters;
    fit_block["converged"] = fit.converged;
    fit_block["log_evidence"] = bdbf::log_evidence(sys, fit_prior, fit.alpha, fit.beta);
  }

  if (calib) {
    for (double& v : maps.var) v = bdbf::apply_calibration(*calib, v);
    fit_block["eps_bar"] = calib->mean_nees;
  } else {
    fit_block["eps_bar"] = nullptr;
  }

  const fs::path pred_path = fs::path(a.out) / "prediction.bdbf";
  bdbf::write_basis(to_prediction_map(maps), pred_path);

  json report;
  report["command"] = "fit";
  report["config"] = fit_config_echo(a);
  report["fit"] = fit_block;
  report["files"] = json{{"prediction", pred_path.string()}};
  const fs::path report_path = fs::path(a.out) / "report.json";
  bdbf::write_json(report, report_path);
  std::printf("wrote %s\nwrote %s\n", report_path.string().c_str(),
              pred_path.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred_path, truth_path, config_path;
  std::string out;
  double step = 0.01;
  std::string ause_space = "latent";
  std::string ause_metric = "mae";
  long auce_grid = 100;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  CLI::App* cmd = app.add_subcommand("eval", "Evaluate a prediction against ground truth");
  cmd->add_option("--pred", a.pred_path, "Prediction file (2-channel mu/var)");
  cmd->add_option("--truth", a.truth_path, "Ground-truth depth file (1 channel)");
  cmd->add_option("--config", a.config_path, "JSON config file (flags override)");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--step", a.step, "Sparsification step fraction");
  cmd->add_option("--ause-space", a.ause_space, "Sparsification error space: latent | depth");
  cmd->add_option("--ause-metric", a.ause_metric, "Sparsification base metric: mae | rmse");
  cmd->add_option("--auce-grid", a.auce_grid, "Calibration-curve grid size");
}

void apply_eval_config(const CLI::App* cmd, EvalArgs& a) {
  if (a.config_path.empty()) return;
  ConfigFile cfg;
  cfg.load(a.config_path);
  cfg.apply(cmd, "--pred", "pred", a.pred_path);
  cfg.apply(cmd, "--truth", "truth", a.truth_path);
  cfg.apply(cmd, "--out", "out", a.out);
  cfg.apply(cmd, "--step", "step", a.step);
  cfg.apply(cmd, "--ause-space", "ause_space", a.ause_space);
  cfg.apply(cmd, "--ause-metric", "ause_metric", a.ause_metric);
  cfg.apply(cmd, "--auce-grid", "auce_grid", a.auce_grid);
  cfg.finish();
}

json eval_config_echo(const EvalArgs& a) {
  return json{{"pred", a.pred_path},   {"truth", a.truth_path},
              {"out", a.out},          {"step", a.step},
              {"ause_space", a.ause_space}, {"ause_metric", a.ause_metric},
              {"auce_grid", a.auce_grid}};
}

json metrics_block(const bdbf::EvalSet& set, double step, const std::string& space,
                   const std::string& base_metric, long auce_grid,
                   bdbf::AuseResult* ause_out = nullptr,
                   bdbf::AuceResult* auce_out = nullptr) {
  const bdbf::DepthMetrics dm = bdbf::depth_metrics(set);
  const bdbf::AuseResult ar =
      bdbf::ause(set, to_base_metric(base_metric), step, to_space(space));
  const bdbf::AuceResult cr = bdbf::auce(set, static_cast<int>(auce_grid));
  const double nll_value = bdbf::nll(set);
  if (ause_out) *ause_out = ar;
  if (auce_out) *auce_out = cr;
  return json{{"mae", dm.mae},   {"rmse", dm.rmse},   {"delta1", dm.delta1},
              {"ause", ar.value}, {"auce", cr.value}, {"nll", nll_value}};
}

int run_eval(const EvalArgs& a) {
  if (a.pred_path.empty() || a.truth_path.empty()) {
    usage_error("--pred and --truth are required");
  }
  if (!(a.step > 0.0) || a.step > 1.0) usage_error("--step must lie in (0, 1]");
  if (a.auce_grid < 2) usage_error("--auce-grid must be >= 2");
  to_space(a.ause_space);
  to_base_metric(a.ause_metric);
  ensure_out_dir(a.out);

  const DenseMaps pred = from_prediction_map(bdbf::read_basis(a.pred_path));
  const bdbf::BasisMap truth = bdbf::read_basis(a.truth_path);
  const bdbf::EvalSet set = build_eval_set(pred, truth);

  bdbf::AuseResult ar;
  bdbf::AuceResult cr;
  const json metrics =
      metrics_block(set, a.step, a.ause_space, a.ause_metric, a.auce_grid, &ar, &cr);

  const fs::path ause_path = fs::path(a.out) / "ause_curve.csv";
  const fs::path auce_path = fs::path(a.out) / "auce_curve.csv";
  bdbf::write_curve_csv(ar.curve, "fraction", "error_gap", ause_path);
  bdbf::write_curve_csv(cr.curve, "p", "abs_error", auce_path);

  long n_valid = 0;
  for (const bool v : set.valid) n_valid += v ? 1 : 0;

  json report;
  report["command"] = "eval";
  report["config"] = eval_config_echo(a);
  report["n_valid"] = n_valid;
  report["metrics"] = metrics;
  report["curves"] = json{{"ause", ause_path.string()}, {"auce", auce_path.string()}};
  const fs::path report_path = fs::path(a.out) / "report.json";
  bdbf::write_json(report, report_path);
  std::printf("wrote %s\nwrote %s\nwrote %s\n", report_path.string().c_str(),
              ause_path.string().c_str(), auce_path.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::vector<std::string> pred_paths;
  std::vector<std::string> truth_paths;
  std::string config_path;
  std::string out;
};

void add_calibrate(CLI::App& app, CalibrateArgs& a) {
  CLI::App* cmd =
      app.add_subcommand("calibrate", "Record mean NEES over fitted scenes");
  cmd->add_option("--pred", a.pred_paths, "Prediction files (repeatable, paired)");
  cmd->add_option("--truth", a.truth_paths, "Ground-truth files (repeatable, paired)");
  cmd->add_option("--config", a.config_path, "JSON config file (flags override)");
  cmd->add_option("--out", a.out, "Output directory");
}

void apply_calibrate_config(const CLI::App* cmd, CalibrateArgs& a) {
  if (a.config_path.empty()) return;
  ConfigFile cfg;
  cfg.load(a.config_path);
  cfg.apply(cmd, "--pred", "pred", a.pred_paths);
  cfg.apply(cmd, "--truth", "truth", a.truth_paths);
  cfg.apply(cmd, "--out", "out", a.out);
  cfg.finish();
}

int run_calibrate(const CalibrateArgs& a) {
  if (a.pred_paths.empty()) usage_error("at least one --pred/--truth pair required");
  if (a.pred_paths.size() != a.truth_paths.size()) {
    usage_error("--pred and --truth lists must pair up");
  }
  ensure_out_dir(a.out);

  bdbf::CalibrationState state;
  for (std::size_t i = 0; i < a.pred_paths.size(); ++i) {
    const DenseMaps pred = from_prediction_map(bdbf::read_basis(a.pred_paths[i]));
    const bdbf::BasisMap truth = bdbf::read_basis(a.truth_paths[i]);
    if (truth.num_bases() != 1 || truth.height() != pred.height ||
        truth.width() != pred.width) {
      throw bdbf::Error(bdbf::ErrorCode::kDimension,
                        "prediction and truth shapes differ: " + a.pred_paths[i]);
    }
    std::vector<double> mu, b, z;
    for (std::size_t p = 0; p < pred.mu.size(); ++p) {
      const double d_true = truth.values()[p];
      if (!std::isfinite(d_true) || d_true <= 0.0) continue;
      mu.push_back(pred.mu[p]);
      b.push_back(bdbf::laplace_scale(pred.var[p]));
      z.push_back(bdbf::depth_to_latent(d_true));
    }
    state = bdbf::merge(state, bdbf::measure_nees(mu, b, z));
  }
  if (state.n_pixels == 0) {
    throw bdbf::Error(bdbf::ErrorCode::kEmptySet, "calibration batch has no usable pixels");
  }

  const fs::path calib_path = fs::path(a.out) / "calib.json";
  bdbf::write_calibration(state, calib_path);
  std::printf("wrote %s mean_nees=%s n_pixels=%ld n_skipped=%ld\n",
              calib_path.string().c_str(), fmt17(state.mean_nees).c_str(), state.n_pixels,
              state.n_skipped);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string out, prior_path, config_path;
  std::vector<long> levels;
  long seeds = 5;
  long seed_base = 0;
  long prior_scenes = 0;  // 0 resolves to max(10, m + 2)
  SynthArgs scene;  // reuses the scene knobs; its out/seed/count/sparsity unused
  long em_max_iters = 8;
  double em_tol = 0.01;
  double alpha0 = 1.0;
  double beta0 = 0.0;
  double step = 0.01;
  std::string ause_space = "latent";
  std::string ause_metric = "mae";
  long auce_grid = 100;
};

void add_sweep(CLI::App& app, SweepArgs& a) {
  CLI::App* cmd =
      app.add_subcommand("sweep", "Nested sparsity sweep across seeds, CSV output");
  cmd->set_help_flag("--help", "Print help");  // frees -h for the --h option
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--config", a.config_path, "JSON config file (flags override)");
  cmd->add_option("--levels", a.levels, "Measurement counts, e.g. 500 250 50 0")
      ->expected(-1);
  cmd->add_option("--seeds", a.seeds, "Number of scene seeds");
  cmd->add_option("--seed-base", a.seed_base, "First scene seed");
  cmd->add_option("--prior", a.prior_path, "Fitting prior JSON (default: estimate)");
  cmd->add_option("--prior-scenes", a.prior_scenes,
                  "Scenes for prior estimation (0 = max(10, m + 2))");
  cmd->add_option("--h", a.scene.h, "Image height");
  cmd->add_option("--w", a.scene.w, "Image width");
  cmd->add_option("--m", a.scene.m, "Number of basis channels");
  cmd->add_flag("--no-bias", a.scene.no_bias, "Disable the constant-one bias channel");
  cmd->add_option("--beta-true", a.scene.beta_true, "Latent noise precision");
  cmd->add_option("--alpha-true", a.scene.alpha_true, "Prior precision scale for w_true");
  cmd->add_option("--smoothness", a.scene.smoothness, "Basis correlation length");
  cmd->add_option("--noise", a.scene.noise, "Noise family: gaussian | laplace");
  cmd->add_option("--depth-cap", a.scene.depth_cap, "Sampling depth cap, meters");
  cmd->add_option("--em-max-iters", a.em_max_iters, "EM iteration budget");
  cmd->add_option("--em-tol", a.em_tol, "EM relative-beta convergence tolerance");
  cmd->add_option("--alpha0", a.alpha0, "EM initial prior precision");
  cmd->add_option("--beta0", a.beta0, "EM initial noise precision (0 = sqrt(N))");
  cmd->add_option("--step", a.step, "Sparsification step fraction");
  cmd->add_option("--ause-space", a.ause_space, "Sparsification error space");
  cmd->add_option("--ause-metric", a.ause_metric, "Sparsification base metric");
  cmd->add_option("--auce-grid", a.auce_grid, "Calibration-curve grid size");
}

void apply_sweep_config(const CLI::App* cmd, SweepArgs& a) {
  if (a.config_path.empty()) return;
  ConfigFile cfg;
  cfg.load(a.config_path);
  cfg.apply(cmd, "--out", "out", a.out);
  cfg.apply(cmd, "--levels", "levels", a.levels);
  cfg.apply(cmd, "--seeds", "seeds", a.seeds);
  cfg.apply(cmd, "--seed-base", "seed_base", a.seed_base);
  cfg.apply(cmd, "--prior", "prior", a.prior_path);
  cfg.apply(cmd, "--prior-scenes", "prior_scenes", a.prior_scenes);
  cfg.apply(cmd, "--h", "h", a.scene.h);
  cfg.apply(cmd, "--w", "w", a.scene.w);
  cfg.apply(cmd, "--m", "m", a.scene.m);
  cfg.apply(cmd, "--no-bias", "no_bias", a.scene.no_bias);
  cfg.apply(cmd, "--beta-true", "beta_true", a.scene.beta_true);
  cfg.apply(cmd, "--alpha-true", "alpha_true", a.scene.alpha_true);
  cfg.apply(cmd, "--smoothness", "smoothness", a.scene.smoothness);
  cfg.apply(cmd, "--noise", "noise", a.scene.noise);
  cfg.apply(cmd, "--depth-cap", "depth_cap", a.scene.depth_cap);
  cfg.apply(cmd, "--em-max-iters", "em_max_iters", a.em_max_iters);
  cfg.apply(cmd, "--em-tol", "em_tol", a.em_tol);
  cfg.apply(cmd, "--alpha0", "alpha0", a.alpha0);
  cfg.apply(cmd, "--beta0", "beta0", a.beta0);
  cfg.apply(cmd, "--step", "step", a.step);
  cfg.apply(cmd, "--ause-space", "ause_space", a.ause_space);
  cfg.apply(cmd, "--ause-metric", "ause_metric", a.ause_metric);
  cfg.apply(cmd, "--auce-grid", "auce_grid", a.auce_grid);
  cfg.finish();
}

// Shared prior estimated the training-path way: ML weight solutions across a
// batch of scenes, accumulated and finalized.
bdbf::GaussianPrior estimate_sweep_prior(const SweepArgs& a, long n_scenes) {
  bdbf::PriorAccumulator acc(static_cast<int>(a.scene.m));
  const long want = std::min(static_cast<long>(a.scene.h) * a.scene.w / 4,
                             std::max(2 * a.scene.m, 500L));
  for (long j = 0; j < n_scenes; ++j) {
    SynthArgs scene_args = a.scene;
    scene_args.sparsity = static_cast<double>(want);
    const bdbf::SynthConfig cfg =
        to_synth_config(scene_args, a.seed_base + 100000 + j, std::nullopt);
    const bdbf::SynthScene scene = bdbf::generate(cfg);
    const bdbf::RegressionSystem sys = bdbf::assemble(scene.basis, scene.sparse);
    acc.accumulate(bdbf::fit_ml(sys).w_ml);
  }
  return bdbf::finalize(acc);
}

struct SweepRow {
  long seed = 0;
  long level = 0;
  std::string text;
};

int run_sweep(const SweepArgs& a) {
  if (a.levels.empty()) usage_error("--levels is required");
  for (const long level : a.levels) {
    if (level < 0) usage_error("--levels entries must be >= 0");
    if (level > static_cast<long>(a.scene.h) * a.scene.w) {
      usage_error("--levels entry exceeds the pixel count");
    }
  }
  if (a.seeds < 1) usage_error("--seeds must be >= 1");
  // A full-rank sample covariance over M-dimensional weights needs at least
  // M + 2 solutions (one lost to the mean, one of slack).
  const long prior_scenes =
      a.prior_scenes == 0 ? std::max(10L, a.scene.m + 2) : a.prior_scenes;
  if (a.prior_path.empty() && prior_scenes < a.scene.m + 2) {
    usage_error("--prior-scenes must be >= m + 2 for a full-rank prior covariance");
  }
  if (!(a.step > 0.0) || a.step > 1.0) usage_error("--step must lie in (0, 1]");
  if (a.auce_grid < 2) usage_error("--auce-grid must be >= 2");
  if (a.em_max_iters < 1) usage_error("--em-max-iters must be >= 1");
  if (!(a.em_tol > 0.0)) usage_error("--em-tol must be positive");
  if (!(a.alpha0 > 0.0)) usage_error("--alpha0 must be positive");
  if (a.beta0 < 0.0) usage_error("--beta0 must be >= 0");
  to_space(a.ause_space);
  to_base_metric(a.ause_metric);
  validate_scene_args(a.scene);
  ensure_out_dir(a.out);

  const bdbf::GaussianPrior fit_prior = a.prior_path.empty()
                                            ? estimate_sweep_prior(a, prior_scenes)
                                            : bdbf::read_prior(a.prior_path);
  if (fit_prior.num_bases() != a.scene.m) {
    usage_error("prior dimension does not match --m");
  }

  const long max_level = *std::max_element(a.levels.begin(), a.levels.end());
  bdbf::EmOptions opts;
  opts.alpha0 = a.alpha0;
  opts.beta0 = a.beta0;
  opts.max_iters = static_cast<int>(a.em_max_iters);
  opts.tol = a.em_tol;

  // One row of metrics per (seed, level), seeds in order, levels as given.
  std::vector<std::string> per_seed(a.seeds);
  std::vector<std::exception_ptr> failures(a.seeds);
  auto worker = [&](long idx) {
    try {
      const long seed = a.seed_base + idx;
      SynthArgs scene_args = a.scene;
      scene_args.sparsity = static_cast<double>(max_level);
      const bdbf::SynthScene scene =
          bdbf::generate(to_synth_config(scene_args, seed, std::nullopt));
      const std::vector<bdbf::SparseDepthSet> sets =
          bdbf::sample_sparsity_sweep(scene, a.levels);
      std::string rows;
      for (std::size_t li = 0; li < a.levels.size(); ++li) {
        const long level = a.levels[li];
        DenseMaps maps;
        double alpha = 1.0, beta = 0.0;
        long em_iters = 0;
        bool converged = true, prior_only = false;
        if (level == 0) {
          prior_only = true;
          maps = predict_dense(scene.basis, [&](const Eigen::VectorXd& phi) {
            return bdbf::predict_prior(fit_prior, phi);
          });
        } else {
          const bdbf::RegressionSystem sys = bdbf::assemble(scene.basis, sets[li]);
          const bdbf::PosteriorFit fit = bdbf::fit_em(sys, fit_prior, opts);
          alpha = fit.alpha;
          beta = fit.beta;
          em_iters = fit.em_iters;
          converged = fit.converged;
          maps = predict_dense(scene.basis, [&](const Eigen::VectorXd& phi) {
            return bdbf::predict(fit, phi);
          });
        }
        const bdbf::EvalSet set = eval_set_from_scene(maps, scene.depth_true);
        const bdbf::DepthMetrics dm = bdbf::depth_metrics(set);
        const bdbf::AuseResult ar = bdbf::ause(set, to_base_metric(a.ause_metric),
                                               a.step, to_space(a.ause_space));
        const bdbf::AuceResult cr = bdbf::auce(set, static_cast<int>(a.auce_grid));
        const double nll_value = bdbf::nll(set);
        rows += std::to_string(seed) + "," + std::to_string(level) + "," +
                std::to_string(sets[li].size()) + "," + (prior_only ? "1" : "0") + "," +
                fmt17(alpha) + "," + fmt17(beta) + "," + std::to_string(em_iters) + "," +
                (converged ? "1" : "0") + "," + fmt17(dm.mae) + "," + fmt17(dm.rmse) +
                "," + fmt17(dm.delta1) + "," + fmt17(ar.value) + "," + fmt17(cr.value) +
                "," + fmt17(nll_value) + "\n";
      }
      per_seed[idx] = std::move(rows);
    } catch (...) {
      failures[idx] = std::current_exception();
    }
  };

  const long cap = std::min<long>(thread_cap(), a.seeds);
  for (long base = 0; base < a.seeds; base += cap) {
    std::vector<std::thread> pool;
    for (long idx = base; idx < std::min(base + cap, a.seeds); ++idx) {
      pool.emplace_back(worker, idx);
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  std::string csv =
      "seed,level,n,prior_only,alpha,beta,em_iters,converged,mae,rmse,delta1,ause,auce,"
      "nll\n";
  for (const std::string& rows : per_seed) csv += rows;
  const fs::path csv_path = fs::path(a.out) / "sweep.csv";
  bdbf::detail::atomic_write(csv_path, csv);

  json report;
  report["command"] = "sweep";
  report["config"] = json{{"out", a.out},
                          {"levels", a.levels},
                          {"seeds", a.seeds},
                          {"seed_base", a.seed_base},
                          {"prior", a.prior_path},
                          {"prior_scenes", prior_scenes},
                          {"h", a.scene.h},
                          {"w", a.scene.w},
                          {"m", a.scene.m},
                          {"no_bias", a.scene.no_bias},
                          {"beta_true", a.scene.beta_true},
                          {"alpha_true", a.scene.alpha_true},
                          {"smoothness", a.scene.smoothness},
                          {"noise", a.scene.noise},
                          {"depth_cap", a.scene.depth_cap},
                          {"em_max_iters", a.em_max_iters},
                          {"em_tol", a.em_tol},
                          {"alpha0", a.alpha0},
                          {"beta0", a.beta0},
                          {"step", a.step},
                          {"ause_space", a.ause_space},
                          {"ause_metric", a.ause_metric},
                          {"auce_grid", a.auce_grid}};
  report["prior_estimated"] = a.prior_path.empty();
  report["files"] = json{{"csv", csv_path.string()}};
  const fs::path report_path = fs::path(a.out) / "report.json";
  bdbf::write_json(report, report_path);
  std::printf("wrote %s rows=%zu\nwrote %s\n", csv_path.string().c_str(),
              static_cast<std::size_t>(a.seeds) * a.levels.size(),
              report_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian deep basis fitting toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  FitArgs fit_args;
  EvalArgs eval_args;
  CalibrateArgs calibrate_args;
  SweepArgs sweep_args;
  add_synth(app, synth_args);
  add_fit(app, fit_args);
  add_eval(app, eval_args);
  add_calibrate(app, calibrate_args);
  add_sweep(app, sweep_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (const CLI::App* cmd = app.get_subcommand("synth"); cmd->parsed()) {
      apply_synth_config(cmd, synth_args);
      return run_synth(synth_args);
    }
    if (const CLI::App* cmd = app.get_subcommand("fit"); cmd->parsed()) {
      apply_fit_config(cmd, fit_args);
      return run_fit(fit_args);
    }
    if (const CLI::App* cmd = app.get_subcommand("eval"); cmd->parsed()) {
      apply_eval_config(cmd, eval_args);
      return run_eval(eval_args);
    }
    if (const CLI::App* cmd = app.get_subcommand("calibrate"); cmd->parsed()) {
      apply_calibrate_config(cmd, calibrate_args);
      return run_calibrate(calibrate_args);
    }
    if (const CLI::App* cmd = app.get_subcommand("sweep"); cmd->parsed()) {
      apply_sweep_config(cmd, sweep_args);
      return run_sweep(sweep_args);
    }
  } catch (const bdbf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
