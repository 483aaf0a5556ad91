// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "spinprobe/constants.hpp"
#include "spinprobe/errors.hpp"
#include "spinprobe/hash.hpp"
#include "spinprobe/rng.hpp"

namespace spinprobe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLn10 = 2.302585092994045684;
constexpr const char* kCheckpointFormat = "spinprobe.checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<std::size_t> order_by_coupling(const CandidateConfiguration& c) {
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(c.couplings[a]) > std::abs(c.couplings[b]); });
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------------------

double SlabGeometry::lateral_radius_nm() const {
  // |a| <= 2 * prefactor / r^3 for any orientation
  return std::cbrt(2.0 * constants::dipolar_prefactor_hz_nm3 / coupling_cutoff_hz);
}

double SlabGeometry::volume_nm3() const {
  const double r = lateral_radius_nm();
  return constants::pi * r * r * thickness_nm;
}

bool SlabGeometry::contains(const Vec3& r) const {
  const double radius = lateral_radius_nm();
  return std::abs(r.z()) <= 0.5 * thickness_nm && r.x() * r.x() + r.y() * r.y() <= radius * radius &&
         r.norm() >= min_distance_nm;
}

void SlabGeometry::validate() const {
  if (!(thickness_nm > 0.0) || !std::isfinite(thickness_nm)) throw DomainError("slab thickness must be positive");
  if (!(coupling_cutoff_hz > 0.0)) throw DomainError("coupling cutoff must be positive");
  if (!(min_distance_nm > 0.0) || min_distance_nm >= 0.5 * lateral_radius_nm())
    throw DomainError("minimum distance must be positive and well inside the slab");
}

double ConfigurationPrior::expected_count() const {
  return density_ppm * 1e-6 * constants::diamond_atom_density_nm3 * slab.volume_nm3();
}

void ConfigurationPrior::validate() const {
  if (!(density_ppm > 0.0) || !std::isfinite(density_ppm)) throw DomainError("defect density must be positive");
  slab.validate();
  if (!(quant_axis.norm() > 0.0)) throw DomainError("quantization axis must be nonzero");
  const double lambda = expected_count();
  if (lambda > kMaxExpectedDefects)
    throw CapacityError("density " + std::to_string(density_ppm) + " ppm gives " + std::to_string(lambda) +
                        " expected defects per candidate, above the limit of " +
                        std::to_string(static_cast<int>(kMaxExpectedDefects)));
}

std::vector<NsDefect> CandidateConfiguration::defects() const {
  std::vector<NsDefect> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    NsDefect d;
    d.rho = rho[i];
    d.a_dipolar = couplings[i];
    if (i < positions.size()) d.position = positions[i];
    out.push_back(d);
  }
  return out;
}

CandidateConfiguration sample_configuration(const ConfigurationPrior& prior, std::uint64_t seed, std::uint64_t index) {
  prior.validate();
  CounterRng rng(seed, index);
  const double radius = prior.slab.lateral_radius_nm();
  const double half = 0.5 * prior.slab.thickness_nm;
  const Vec3 axis = prior.quant_axis.normalized();
  const auto n = rng.poisson(prior.expected_count());

  std::vector<Vec3> pos;
  pos.reserve(n);
  while (pos.size() < n) {
    const Vec3 r((2.0 * rng.uniform() - 1.0) * radius, (2.0 * rng.uniform() - 1.0) * radius,
                 (2.0 * rng.uniform() - 1.0) * half);
    if (prior.slab.contains(r)) pos.push_back(r);
  }
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = dipolar_coupling(pos[i], axis);

  CandidateConfiguration c;
  c.index = index;
  c.couplings = a;
  const auto order = order_by_coupling(c);
  c.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.positions[i] = pos[order[i]];
    c.couplings[i] = a[order[i]];
  }
  c.rho.assign(n, 1.0);
  return c;
}

std::vector<CandidateConfiguration> sample_configurations(std::uint64_t count, const ConfigurationPrior& prior,
                                                          std::uint64_t seed, std::uint64_t first_index) {
  if (count < 1) throw DomainError("sample count must be at least 1");
  std::vector<CandidateConfiguration> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(sample_configuration(prior, seed, first_index + i));
  return out;
}

// ---------------------------------------------------------------------------------------

void DeerDataset::validate() const {
  // measured curves may exceed |S| = 1 through noise, so only the shape is checked here
  if (curve.tau.size() != curve.signal.size()) throw DomainError("DEER dataset: tau and signal lengths differ");
  for (std::size_t i = 1; i < curve.tau.size(); ++i)
    if (!(curve.tau[i] > curve.tau[i - 1])) throw DomainError("DEER delays must be strictly increasing");
  for (const auto& s : curve.signal)
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) throw DomainError("DEER signal must be finite");
  if (curve.tau.empty()) throw DomainError("DEER dataset is empty");
  if (curve.tau.front() < 0.0) throw DomainError("DEER delays must be non-negative");
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
  if (!weights.empty()) {
    if (weights.size() != curve.tau.size()) throw DomainError("one weight per DEER point required");
    for (double w : weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be finite and non-negative");
  }
}

void ScoringOptions::validate() const {
  if (!(resolved_coupling_hz >= 0.0)) throw DomainError("resolved coupling threshold must be non-negative");
  if (max_fitted_defects > 16) throw CapacityError("at most 16 defects can be fitted per candidate");
  if (!(log10_gamma_min <= log10_gamma_max) || !(stretch_min <= stretch_max) || stretch_min < 0.5 || stretch_max > 3.0)
    throw DomainError("invalid background bounds");
}

ConfigurationScorer::ConfigurationScorer(std::span<const DeerDataset> datasets, ScoringOptions options)
    : options_(std::move(options)) {
  if (datasets.empty()) throw DomainError("reconstruction needs at least one dataset");
  options_.validate();
  double latest_start = -kInf, earliest_end = kInf;
  for (const auto& d : datasets) {
    d.validate();
    Block b;
    const auto m = static_cast<Eigen::Index>(d.curve.tau.size());
    b.tau = Eigen::Map<const Eigen::ArrayXd>(d.curve.tau.data(), m);
    b.log_tau = b.tau.log();
    b.y.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) b.y(j) = d.curve.signal[static_cast<std::size_t>(j)].real();
    b.sqrt_w = d.weights.empty() ? Eigen::ArrayXd::Ones(m)
                                 : Eigen::Map<const Eigen::ArrayXd>(d.weights.data(), m).sqrt().eval();
    b.eta = d.eta;
    n_points_ += m;
    blocks_.push_back(std::move(b));
    latest_start = std::max(latest_start, d.curve.tau.front());
    earliest_end = std::min(earliest_end, d.curve.tau.back());
  }
  if (datasets.size() > 1 && !(latest_start < earliest_end)) throw DomainError("datasets must share a delay range");

  // background-only fit; its optimum seeds every candidate
  LeastSquaresProblem p;
  p.n_residuals = static_cast<int>(n_points_);
  p.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    Eigen::Index off = 0;
    for (const auto& b : blocks_) {
      const Eigen::ArrayXd u = (x(1) * (x(0) * kLn10 + b.log_tau)).exp();
      r.segment(off, b.tau.size()) = (b.sqrt_w * ((-u).exp() - b.y)).matrix();
      off += b.tau.size();
    }
  };
  p.lower = Eigen::Vector2d(options_.log10_gamma_min, options_.stretch_min);
  p.upper = Eigen::Vector2d(options_.log10_gamma_max, options_.stretch_max);
  Eigen::Vector2d best(0.5 * (p.lower(0) + p.upper(0)), 1.0);
  double best_cost = kInf;
  Eigen::VectorXd r(n_points_);
  for (int i = 0; i <= 20; ++i) {
    for (int k = 0; k <= 5; ++k) {
      const Eigen::Vector2d x(p.lower(0) + (p.upper(0) - p.lower(0)) * i / 20.0,
                              p.lower(1) + (p.upper(1) - p.lower(1)) * k / 5.0);
      p.residual(x, r);
      const double c = r.squaredNorm();
      if (c < best_cost) {
        best_cost = c;
        best = x;
      }
    }
  }
  const auto outcome = levenberg_marquardt(p, best, options_.lm);
  background_.gamma = std::pow(10.0, outcome.x(0));
  background_.stretch_n = outcome.x(1);
  background_.fit = to_fit_result(outcome, {"log10_gamma", "stretch_n"});
}

ScoredCandidate ConfigurationScorer::score(const CandidateConfiguration& config, bool with_fit) const {
  if (config.rho.size() != config.size() || (!config.positions.empty() && config.positions.size() != config.size()))
    throw DomainError("candidate fields have inconsistent lengths");
  const auto order = order_by_coupling(config);
  std::size_t k = 0;
  while (k < order.size() && k < options_.max_fitted_defects &&
         std::abs(config.couplings[order[k]]) >= options_.resolved_coupling_hz)
    ++k;
  const auto kk = static_cast<Eigen::Index>(k);

  std::vector<Eigen::ArrayXXd> c(blocks_.size());
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& b = blocks_[bi];
    c[bi].resize(b.tau.size(), kk);
    for (Eigen::Index i = 0; i < kk; ++i)
      c[bi].col(i) = 1.0 - (constants::pi * config.couplings[order[static_cast<std::size_t>(i)]] * b.tau).cos();
  }

  LeastSquaresProblem p;
  p.n_residuals = static_cast<int>(n_points_);
  p.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    Eigen::Index off = 0;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const auto& b = blocks_[bi];
      Eigen::ArrayXd m = (-(x(kk + 1) * (x(kk) * kLn10 + b.log_tau)).exp()).exp();
      for (Eigen::Index i = 0; i < kk; ++i) m *= 1.0 - b.eta * x(i) * c[bi].col(i);
      r.segment(off, b.tau.size()) = (b.sqrt_w * (m - b.y)).matrix();
      off += b.tau.size();
    }
  };
  p.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
    Eigen::Index off = 0;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const auto& b = blocks_[bi];
      const Eigen::Index m = b.tau.size();
      const Eigen::ArrayXd log_gt = x(kk) * kLn10 + b.log_tau;
      const Eigen::ArrayXd u = (x(kk + 1) * log_gt).exp();
      const Eigen::ArrayXd bg = b.sqrt_w * (-u).exp();
      Eigen::ArrayXXd f(m, kk);
      for (Eigen::Index i = 0; i < kk; ++i) f.col(i) = 1.0 - b.eta * x(i) * c[bi].col(i);
      // prefix/suffix products avoid dividing by factors that may vanish
      Eigen::ArrayXXd suffix(m, kk + 1);
      suffix.col(kk).setOnes();
      for (Eigen::Index i = kk - 1; i >= 0; --i) suffix.col(i) = suffix.col(i + 1) * f.col(i);
      Eigen::ArrayXd prefix = bg;
      for (Eigen::Index i = 0; i < kk; ++i) {
        j.block(off, i, m, 1) = (-b.eta * c[bi].col(i) * prefix * suffix.col(i + 1)).matrix();
        prefix *= f.col(i);
      }
      // prefix now holds the weighted model
      j.block(off, kk, m, 1) = (-prefix * u * x(kk + 1) * kLn10).matrix();
      j.block(off, kk + 1, m, 1) = (-prefix * (u * log_gt).unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; })).matrix();
      off += m;
    }
  };
  p.lower = Eigen::VectorXd::Zero(kk + 2);
  p.upper = Eigen::VectorXd::Ones(kk + 2);
  p.lower(kk) = options_.log10_gamma_min;
  p.upper(kk) = options_.log10_gamma_max;
  p.lower(kk + 1) = options_.stretch_min;
  p.upper(kk + 1) = options_.stretch_max;
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(kk + 2, 0.5);
  x0(kk) = std::log10(background_.gamma);
  x0(kk + 1) = background_.stretch_n;
  const auto outcome = levenberg_marquardt(p, x0, options_.lm);

  ScoredCandidate out;
  out.config = config;
  out.n_defects = k;
  out.score = std::isfinite(outcome.cost) ? 2.0 * outcome.cost : kInf;
  out.gamma = std::pow(10.0, outcome.x(kk));
  out.stretch_n = outcome.x(kk + 1);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    out.config.rho[order[i]] = outcome.x(static_cast<Eigen::Index>(i));
    names.push_back("rho_" + std::to_string(i));
  }
  names.push_back("log10_gamma");
  names.push_back("stretch_n");
  if (with_fit) {
    out.fit = to_fit_result(outcome, names);
  } else {
    out.fit.residual_norm = outcome.residual.norm();
    out.fit.n_evals = outcome.n_evals;
    out.fit.converged = outcome.converged;
  }
  return out;
}

double score_configuration(const CandidateConfiguration& config, std::span<const DeerDataset> datasets,
                           const ScoringOptions& options) {
  return ConfigurationScorer(datasets, options).score(config).score;
}

// ---------------------------------------------------------------------------------------

void ReconstructionOptions::validate() const {
  if (budget < 1) throw DomainError("reconstruction budget must be at least 1");
  if (top_k < 1) throw DomainError("top_k must be at least 1");
  if (block_size < 1 || checkpoint_every < 1) throw DomainError("block and checkpoint sizes must be positive");
  if (resume && !checkpoint_path) throw CheckpointError("resume requested without a checkpoint path");
  prior.validate();
  scoring.validate();
}

std::string reconstruction_hash(std::span<const DeerDataset> datasets, const ReconstructionOptions& o) {
  // hexfloat keeps every bit of every value
  std::ostringstream s;
  s << std::hexfloat;
  s << "datasets " << datasets.size() << '\n';
  for (const auto& d : datasets) {
    s << "eta " << d.eta << " n " << d.curve.tau.size() << '\n';
    for (std::size_t i = 0; i < d.curve.tau.size(); ++i) s << d.curve.tau[i] << ' ' << d.curve.signal[i].real() << '\n';
    for (double w : d.weights) s << w << ' ';
    s << '\n';
  }
  s << "seed " << o.seed << " top_k " << o.top_k << '\n';
  s << "prior " << o.prior.density_ppm << ' ' << o.prior.slab.thickness_nm << ' ' << o.prior.slab.coupling_cutoff_hz << ' '
    << o.prior.slab.min_distance_nm << ' ' << o.prior.quant_axis.x() << ' ' << o.prior.quant_axis.y() << ' '
    << o.prior.quant_axis.z() << '\n';
  const auto& sc = o.scoring;
  s << "scoring " << sc.resolved_coupling_hz << ' ' << sc.max_fitted_defects << ' ' << sc.log10_gamma_min << ' '
    << sc.log10_gamma_max << ' ' << sc.stretch_min << ' ' << sc.stretch_max << ' ' << sc.lm.max_iterations << ' '
    << sc.lm.ftol << ' ' << sc.lm.xtol << ' ' << sc.lm.gtol << ' ' << sc.lm.initial_lambda << ' ' << sc.lm.fd_step << '\n';
  return hex64(fnv1a64(s.str()));
}

namespace {

struct CheckpointState {
  std::uint64_t evaluated = 0;
  std::uint64_t rejected = 0;
  std::vector<RankKey> top;
};

void write_checkpoint(const std::string& path, const std::string& hash, const ReconstructionOptions& o,
                      const CheckpointState& st) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config_hash"] = hash;
  j["seed"] = o.seed;
  j["evaluated"] = st.evaluated;
  j["rejected"] = st.rejected;
  j["top_k"] = o.top_k;
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : st.top) entries.push_back({{"index", e.index}, {"score", e.score}, {"n_defects", e.n_defects}});
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp);
    f << j.dump() << '\n';
    if (!f) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

CheckpointState read_checkpoint(const std::string& path, const std::string& hash) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("no checkpoint at " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unreadable checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format in " + path);
  if (j.value("config_hash", "") != hash)
    throw CheckpointError("checkpoint " + path + " was written for configuration " + j.value("config_hash", "?") +
                          ", current configuration is " + hash);
  CheckpointState st;
  st.evaluated = j.at("evaluated").get<std::uint64_t>();
  st.rejected = j.at("rejected").get<std::uint64_t>();
  for (const auto& e : j.at("entries"))
    st.top.push_back({e.at("score").get<double>(), e.at("n_defects").get<std::size_t>(), e.at("index").get<std::uint64_t>()});
  std::sort(st.top.begin(), st.top.end());
  return st;
}

void merge_top(std::vector<RankKey>& top, std::vector<RankKey>& incoming, std::size_t k) {
  top.insert(top.end(), incoming.begin(), incoming.end());
  const auto keep = std::min(k, top.size());
  std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(keep), top.end());
  top.resize(keep);
}

}  // namespace

ReconstructionResult reconstruct(std::span<const DeerDataset> datasets, const ReconstructionOptions& options,
                                 const Executor& executor) {
  options.validate();
  const ConfigurationScorer scorer(datasets, options.scoring);
  ReconstructionResult result;
  result.config_hash = reconstruction_hash(datasets, options);
  result.background = scorer.background();

  CheckpointState st;
  if (options.resume) st = read_checkpoint(*options.checkpoint_path, result.config_hash);

  const std::uint64_t session_end =
      options.stop_after ? std::min(options.budget, st.evaluated + *options.stop_after) : options.budget;
  std::uint64_t since_checkpoint = 0;
  std::vector<RankKey> block;
  while (st.evaluated < session_end) {
    const std::uint64_t begin = st.evaluated;
    const std::uint64_t n = std::min(options.block_size, session_end - begin);
    block.assign(n, RankKey{});
    executor.parallel_for(n, [&](std::size_t lo, std::size_t hi, unsigned) {
      for (std::size_t i = lo; i < hi; ++i) {
        const auto cand = sample_configuration(options.prior, options.seed, begin + i);
        const auto scored = scorer.score(cand, false);
        block[i] = {scored.score, scored.n_defects, begin + i};
      }
    });
    const auto finite_end = std::partition(block.begin(), block.end(), [](const RankKey& k) { return std::isfinite(k.score); });
    st.rejected += static_cast<std::uint64_t>(block.end() - finite_end);
    block.erase(finite_end, block.end());
    merge_top(st.top, block, options.top_k);
    st.evaluated += n;
    since_checkpoint += n;
    if (options.checkpoint_path && (since_checkpoint >= options.checkpoint_every || st.evaluated == session_end)) {
      write_checkpoint(*options.checkpoint_path, result.config_hash, options, st);
      since_checkpoint = 0;
    }
  }

  result.evaluated = st.evaluated;
  result.rejected = st.rejected;
  result.complete = st.evaluated >= options.budget;
  result.ranked.resize(st.top.size());
  executor.parallel_for(st.top.size(), [&](std::size_t lo, std::size_t hi, unsigned) {
    for (std::size_t i = lo; i < hi; ++i)
      result.ranked[i] = scorer.score(sample_configuration(options.prior, options.seed, st.top[i].index));
  });
  return result;
}

}  // namespace spinprobe
