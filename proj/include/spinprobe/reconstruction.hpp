// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spinprobe/coherence.hpp"
#include "spinprobe/least_squares.hpp"
#include "spinprobe/parallel.hpp"

namespace spinprobe {

/// Doped layer around the probe. Coordinates are relative to the probe, which sits at the
/// slab mid-plane; the slab normal is [001].
struct SlabGeometry {
  double thickness_nm = 4.0;
  /// Lateral extent is chosen so that no defect beyond it can couple more strongly than this.
  double coupling_cutoff_hz = 1e3;
  /// Positions closer than this to the probe are redrawn.
  double min_distance_nm = 0.5;

  double lateral_radius_nm() const;
  double volume_nm3() const;
  bool contains(const Vec3& r_nm) const;
  void validate() const;
};

inline constexpr double kMaxExpectedDefects = 32.0;

struct ConfigurationPrior {
  double density_ppm = 5.0;
  SlabGeometry slab;
  Vec3 quant_axis = default_quant_axis();

  /// Poisson mean of the defect count per candidate.
  double expected_count() const;
  /// Throws CapacityError when the expected count exceeds kMaxExpectedDefects.
  void validate() const;
};

/// One random arrangement. Defects are sorted by decreasing |coupling|.
struct CandidateConfiguration {
  std::uint64_t index = 0;
  std::vector<Vec3> positions;   ///< nm
  std::vector<double> couplings; ///< Hz
  std::vector<double> rho;       ///< fitted for resolved defects, 1 otherwise

  std::size_t size() const { return couplings.size(); }
  std::vector<NsDefect> defects() const;
};

/// Candidate `index` is a pure function of (prior, seed, index).
CandidateConfiguration sample_configuration(const ConfigurationPrior& prior, std::uint64_t seed, std::uint64_t index);
std::vector<CandidateConfiguration> sample_configurations(std::uint64_t count, const ConfigurationPrior& prior,
                                                          std::uint64_t seed, std::uint64_t first_index = 0);

/// DEER data for unpolarized dark spins: only the in-phase part enters the fit.
struct DeerDataset {
  CoherenceCurve curve;
  double eta = eta_two_tone;
  std::vector<double> weights;  ///< optional per-point weights on the residuals

  void validate() const;
};

struct ScoringOptions {
  /// Defects weaker than this are left to the background decay.
  double resolved_coupling_hz = 5e3;
  std::size_t max_fitted_defects = 8;
  double log10_gamma_min = 2.0;
  double log10_gamma_max = 7.0;
  double stretch_min = 0.5;
  double stretch_max = 3.0;
  LmOptions lm{.max_iterations = 100, .ftol = 1e-8, .xtol = 1e-8, .gtol = 1e-8};

  void validate() const;
};

struct BackgroundFit {
  double gamma = 0.0;
  double stretch_n = 1.0;
  FitResult fit;
};

struct ScoredCandidate {
  CandidateConfiguration config;
  double score = 0.0;         ///< weighted sum of squared residuals over all datasets
  std::size_t n_defects = 0;  ///< defects fitted explicitly
  double gamma = 0.0;
  double stretch_n = 1.0;
  FitResult fit;              ///< params "rho_0".., "log10_gamma", "stretch_n"
};

/// Fits rho_i of the resolved defects together with a shared background (Gamma, n) to all
/// datasets. A non-finite model yields score = +inf.
class ConfigurationScorer {
 public:
  ConfigurationScorer(std::span<const DeerDataset> datasets, ScoringOptions options = {});

  /// Without `with_fit` the result carries the score and fitted values but no standard
  /// errors or rank check, which is all the ranking needs.
  ScoredCandidate score(const CandidateConfiguration& config, bool with_fit = true) const;
  const BackgroundFit& background() const { return background_; }
  const ScoringOptions& options() const { return options_; }

 private:
  struct Block {
    Eigen::ArrayXd tau, log_tau, y, sqrt_w;
    double eta;
  };
  std::vector<Block> blocks_;
  Eigen::Index n_points_ = 0;
  ScoringOptions options_;
  BackgroundFit background_;
};

double score_configuration(const CandidateConfiguration& config, std::span<const DeerDataset> datasets,
                           const ScoringOptions& options = {});

/// Total order used for ranking: score, then fewer fitted defects, then lower index.
struct RankKey {
  double score = 0.0;
  std::size_t n_defects = 0;
  std::uint64_t index = 0;

  friend bool operator<(const RankKey& a, const RankKey& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.n_defects != b.n_defects) return a.n_defects < b.n_defects;
    return a.index < b.index;
  }
  friend bool operator==(const RankKey&, const RankKey&) = default;
};

struct ReconstructionOptions {
  std::uint64_t budget = 1;
  std::size_t top_k = 100;
  std::uint64_t seed = 0;
  ConfigurationPrior prior;
  ScoringOptions scoring;
  std::optional<std::string> checkpoint_path;
  bool resume = false;
  std::uint64_t block_size = 4096;
  std::uint64_t checkpoint_every = 65536;  ///< candidates between checkpoint writes
  /// Stops after this many evaluations in the current session, leaving a checkpoint.
  std::optional<std::uint64_t> stop_after;

  void validate() const;
};

struct ReconstructionResult {
  std::vector<ScoredCandidate> ranked;
  std::uint64_t evaluated = 0;
  std::uint64_t rejected = 0;  ///< non-finite scores
  bool complete = false;
  std::string config_hash;
  BackgroundFit background;
};

/// Fingerprint of everything that determines the ranking except the budget.
std::string reconstruction_hash(std::span<const DeerDataset> datasets, const ReconstructionOptions& options);

/// Scores candidates 0..budget-1 and keeps the best top_k. The ranking does not depend on
/// the worker count. With a checkpoint path the state is written atomically every
/// checkpoint_every candidates; resume continues from it and throws CheckpointError if the
/// file belongs to a different configuration.
ReconstructionResult reconstruct(std::span<const DeerDataset> datasets, const ReconstructionOptions& options,
                                 const Executor& executor = Executor(1));

}  // namespace spinprobe
