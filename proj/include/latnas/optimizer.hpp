#pragma once

// Proposal engine for one latency bucket: an LA-MCTS partition tree picks a
// promising region, and a GP with expected improvement picks the next
// encoding inside it. Proposals always satisfy the bucket bounds and never
// repeat an evaluated or in-flight encoding.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latnas/gaussian_process.hpp"
#include "latnas/latency_model.hpp"
#include "latnas/search_space.hpp"
#include "latnas/search_tree.hpp"

namespace latnas {

struct EvaluationMeta {
  std::string job_id;
  std::string client_id;
  double wall_time_s = 0.0;
  int epochs_completed = 0;

  friend bool operator==(const EvaluationMeta&, const EvaluationMeta&) = default;
};

struct CandidateRecord {
  NetworkEncoding encoding;
  double estimated_latency_us = 0.0;
  std::optional<double> objective;  // unset while pending
  EvaluationMeta meta;

  bool completed() const noexcept { return objective.has_value(); }
  friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

struct OptimizerConfig {
  double cp_factor = 0.1;        // cp = cp_factor * (max - min objective)
  std::size_t min_samples = 20;  // leaf split threshold
  double objective_weight = 1.0; // lambda in the clustering feature
  int max_tree_depth = 8;
  std::size_t initial_samples = 10;   // Sobol cold-start proposals
  std::size_t pool_size = 512;        // Sobol candidates per proposal
  std::size_t rejection_budget = 10000;
  std::size_t local_pool_size = 256;  // perturbations of the region's best samples
  std::size_t local_parents = 5;
  int refine_steps = 16;              // greedy EI ascent over single-digit moves
  GpOptions gp;

  friend bool operator==(const OptimizerConfig& a, const OptimizerConfig& b) {
    return a.cp_factor == b.cp_factor && a.min_samples == b.min_samples &&
           a.objective_weight == b.objective_weight && a.max_tree_depth == b.max_tree_depth &&
           a.initial_samples == b.initial_samples && a.pool_size == b.pool_size &&
           a.rejection_budget == b.rejection_budget && a.local_pool_size == b.local_pool_size &&
           a.local_parents == b.local_parents && a.refine_steps == b.refine_steps &&
           a.gp.length_scales == b.gp.length_scales && a.gp.noise == b.gp.noise && a.gp.jitter == b.gp.jitter;
  }
};

/// Per-digit choice index scaled to [0, 1]; single-choice digits map to 0.
std::vector<double> normalize(const NetworkEncoding& encoding, const SearchSpaceSpec& space);

struct Proposal {
  NetworkEncoding encoding;
  double latency_us = 0.0;
  double acquisition = 0.0;  // EI under the fitted surrogate; 0 on cold start
  bool cold_start = false;
  int widened_levels = 0;    // path constraints dropped to find candidates
  std::vector<int> path;     // sides taken from the root
};

/// Everything propose() reads besides history and seed.
struct ProposalContext {
  const SearchSpaceSpec& space;
  LatencyBounds bounds;
  const LatencyFunction& estimator;
  OptimizerConfig config;
};

/// Deterministic in (history order, exclusions, seed). `exclude` lists
/// in-flight encodings that must not be proposed again.
Proposal propose_detailed(const std::vector<CandidateRecord>& history,
                          const std::vector<NetworkEncoding>& exclude, const ProposalContext& ctx,
                          std::uint64_t seed);

NetworkEncoding propose(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                        const LatencyBounds& bounds, const LatencyFunction& estimator, std::uint64_t seed,
                        const OptimizerConfig& config = {});

/// Uniform per-digit draw, rejection-sampled into the bounds.
NetworkEncoding random_propose(const SearchSpaceSpec& space, const LatencyBounds& bounds,
                               const LatencyFunction& estimator, std::uint64_t seed,
                               std::size_t rejection_budget = 10000);

/// The surrogate fitted exactly as propose_detailed() fits it.
SurrogateModel fit_history_surrogate(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                                     const GpOptions& options = {});

/// The partition tree propose_detailed() builds from this history.
SearchTreeNode build_history_tree(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                                  const OptimizerConfig& config = {});

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace latnas
