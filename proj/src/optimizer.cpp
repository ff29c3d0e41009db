#include "latnas/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include "latnas/errors.hpp"
#include "latnas/sampler.hpp"
#include "latnas/sobol.hpp"

namespace latnas {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t index_draw(std::mt19937_64& rng, std::size_t k) {
  return std::min(k - 1, static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(k)));
}

struct Candidate {
  NetworkEncoding encoding;
  std::vector<double> x;
  double latency_us = 0.0;
};

class CandidateFilter {
 public:
  CandidateFilter(const ProposalContext& ctx, std::unordered_set<std::string> excluded)
      : ctx_(ctx), excluded_(std::move(excluded)) {}

  /// Returns the candidate when it lies in the region, is new, and fits the bucket.
  std::optional<Candidate> admit(NetworkEncoding enc, const std::vector<PathStep>& path) {
    std::vector<double> x = normalize(enc, ctx_.space);
    if (!satisfies(path, x)) return std::nullopt;
    std::string key = enc.to_string();
    if (excluded_.count(key) || taken_.count(key)) return std::nullopt;
    const double lat = ctx_.estimator(enc);
    if (!ctx_.bounds.contains_us(lat)) return std::nullopt;
    return Candidate{std::move(enc), std::move(x), lat};
  }

  void take(const NetworkEncoding& enc) { taken_.insert(enc.to_string()); }
  void reset_taken() { taken_.clear(); }

 private:
  const ProposalContext& ctx_;
  std::unordered_set<std::string> excluded_;
  std::unordered_set<std::string> taken_;
};

/// Walks from `start` by single-digit steps that shrink the distance to the
/// bucket until a new admissible encoding is reached. Used when the bucket is
/// too sparse for rejection sampling.
std::optional<Candidate> repair_into_bucket(NetworkEncoding start, const ProposalContext& ctx,
                                            CandidateFilter& filter, const std::vector<PathStep>& path) {
  const double lo = ctx.bounds.lower_ms * 1000.0;
  const double hi = ctx.bounds.upper_ms * 1000.0;
  auto distance = [&](double lat) { return lat >= hi ? lat - hi + 1e-9 : (lat < lo ? lo - lat : 0.0); };
  NetworkEncoding cur = std::move(start);
  double cur_d = distance(ctx.estimator(cur));
  for (std::size_t step = 0; step < 4 * cur.size() * 16 && cur_d > 0.0; ++step) {
    std::optional<NetworkEncoding> best;
    double best_d = cur_d;
    for (std::size_t digit = 0; digit < cur.size(); ++digit) {
      const std::size_t k = ctx.space.choice_count(digit);
      const std::size_t idx = *ctx.space.choice_index(digit, cur[digit]);
      for (int delta : {-1, 1}) {
        if ((delta < 0 && idx == 0) || (delta > 0 && idx + 1 >= k)) continue;
        NetworkEncoding next = cur;
        next[digit] = ctx.space.value_at(digit, delta < 0 ? idx - 1 : idx + 1);
        const double d = distance(ctx.estimator(next));
        if (d < best_d) {
          best_d = d;
          best = std::move(next);
        }
      }
    }
    if (!best) break;
    cur = std::move(*best);
    cur_d = best_d;
  }
  if (cur_d > 0.0) return std::nullopt;
  return filter.admit(std::move(cur), path);
}

std::vector<Candidate> gather_candidates(const ProposalContext& ctx, CandidateFilter& filter,
                                         const std::vector<PathStep>& path,
                                         const std::vector<std::size_t>& region_samples,
                                         const std::vector<CandidateRecord>& history,
                                         std::uint64_t call_seed) {
  const auto& cfg = ctx.config;
  const std::size_t dim = ctx.space.digits().size();
  std::vector<Candidate> pool;
  filter.reset_taken();

  SobolStream sobol(dim, 1 + call_seed % (1ULL << 24));
  for (std::size_t draws = 0; draws < cfg.rejection_budget && pool.size() < cfg.pool_size; ++draws) {
    if (auto c = filter.admit(quantize(sobol.next(), ctx.space), path)) {
      filter.take(c->encoding);
      pool.push_back(std::move(*c));
    }
  }

  // Perturbations of the best samples in the region.
  std::vector<std::size_t> parents = region_samples;
  std::stable_sort(parents.begin(), parents.end(), [&](std::size_t a, std::size_t b) {
    return *history[a].objective > *history[b].objective;
  });
  if (parents.size() > cfg.local_parents) parents.resize(cfg.local_parents);
  if (parents.empty() || cfg.local_pool_size == 0) return pool;

  std::mt19937_64 rng(splitmix64(call_seed ^ 0x6a09e667f3bcc909ULL));
  std::size_t local = 0;
  for (std::size_t attempt = 0; attempt < cfg.local_pool_size * 8 && local < cfg.local_pool_size; ++attempt) {
    NetworkEncoding child = history[parents[attempt % parents.size()]].encoding;
    const std::size_t moves = 1 + static_cast<std::size_t>(rng() % 3);
    for (std::size_t m = 0; m < moves; ++m) {
      const std::size_t digit = static_cast<std::size_t>(rng() % dim);
      const std::size_t k = ctx.space.choice_count(digit);
      if (k <= 1) continue;
      const std::size_t cur = *ctx.space.choice_index(digit, child[digit]);
      std::size_t next = cur;
      if (rng() & 1u) {
        next = cur == 0 ? 1 : (cur + 1 == k ? cur - 1 : ((rng() & 1u) ? cur + 1 : cur - 1));
      } else {
        next = index_draw(rng, k);
      }
      child[digit] = ctx.space.value_at(digit, next);
    }
    if (auto c = filter.admit(std::move(child), path)) {
      filter.take(c->encoding);
      pool.push_back(std::move(*c));
      ++local;
    }
  }
  return pool;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

std::vector<double> normalize(const NetworkEncoding& encoding, const SearchSpaceSpec& space) {
  const auto& digits = space.digits();
  if (encoding.size() != digits.size()) throw InvalidEncoding(0, "length mismatch");
  std::vector<double> x(digits.size(), 0.0);
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const auto k = digits[i].values.size();
    auto idx = space.choice_index(i, encoding[i]);
    if (!idx) throw InvalidEncoding(i, "value " + std::to_string(encoding[i]) + " not in the space");
    if (k > 1) x[i] = static_cast<double>(*idx) / static_cast<double>(k - 1);
  }
  return x;
}

SurrogateModel fit_history_surrogate(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                                     const GpOptions& options) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : history) {
    if (!r.completed()) throw Error("history contains a pending record");
    x.push_back(normalize(r.encoding, space));
    y.push_back(*r.objective);
  }
  return fit_surrogate(x, y, options);
}

namespace {

SampleSet history_samples(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space) {
  SampleSet data;
  for (const auto& r : history) {
    if (!r.completed()) throw Error("history contains a pending record");
    data.x.push_back(normalize(r.encoding, space));
    data.y.push_back(*r.objective);
  }
  return data;
}

TreeConfig tree_config(const OptimizerConfig& c) {
  TreeConfig t;
  t.min_samples = c.min_samples;
  t.objective_weight = c.objective_weight;
  t.max_depth = c.max_tree_depth;
  return t;
}

}  // namespace

SearchTreeNode build_history_tree(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                                  const OptimizerConfig& config) {
  return build_tree(history_samples(history, space), tree_config(config));
}

Proposal propose_detailed(const std::vector<CandidateRecord>& history,
                          const std::vector<NetworkEncoding>& exclude, const ProposalContext& ctx,
                          std::uint64_t seed) {
  const auto& cfg = ctx.config;
  const std::size_t dim = ctx.space.digits().size();
  std::unordered_set<std::string> excluded;
  for (const auto& r : history) excluded.insert(r.encoding.to_string());
  for (const auto& e : exclude) excluded.insert(e.to_string());
  CandidateFilter filter(ctx, std::move(excluded));

  if (history.size() < std::max<std::size_t>(2, cfg.initial_samples)) {
    for (const auto& r : history) {
      if (!r.completed()) throw Error("history contains a pending record");
    }
    SobolStream sobol(dim, 1 + mix_seed(seed, 0) % (1ULL << 20));
    for (std::size_t draws = 0; draws < cfg.rejection_budget * 4; ++draws) {
      if (auto c = filter.admit(quantize(sobol.next(), ctx.space), {})) {
        Proposal p;
        p.encoding = std::move(c->encoding);
        p.latency_us = c->latency_us;
        p.cold_start = true;
        return p;
      }
    }
    SobolStream starts(dim, 1 + mix_seed(seed, history.size() + 1) % (1ULL << 20));
    for (std::size_t t = 0; t < 64; ++t) {
      if (auto c = repair_into_bucket(quantize(starts.next(), ctx.space), ctx, filter, {})) {
        Proposal p;
        p.encoding = std::move(c->encoding);
        p.latency_us = c->latency_us;
        p.cold_start = true;
        return p;
      }
    }
    throw ExhaustedRegion("no new bucket-feasible Sobol point within the rejection budget");
  }

  const SampleSet data = history_samples(history, ctx.space);
  const SearchTreeNode tree = build_tree(data, tree_config(cfg));
  const auto [ymin_it, ymax_it] = std::minmax_element(data.y.begin(), data.y.end());
  const double best = *ymax_it;
  const double cp = cfg.cp_factor * (best - *ymin_it);
  const Selection sel = mcts_select(tree, cp);
  const SurrogateModel model = fit_surrogate(data.x, data.y, cfg.gp);
  const std::uint64_t call_seed = mix_seed(seed, history.size() * 1000003ULL + exclude.size());

  // Nodes along the selected path, root first.
  std::vector<const SearchTreeNode*> nodes{&tree};
  for (int side : sel.sides) nodes.push_back(&nodes.back()->children[static_cast<std::size_t>(side)]);

  std::vector<Candidate> pool;
  std::vector<PathStep> path;
  int widened = 0;
  for (std::size_t keep = sel.path.size() + 1; keep-- > 0; ++widened) {
    path.assign(sel.path.begin(), sel.path.begin() + static_cast<std::ptrdiff_t>(keep));
    pool = gather_candidates(ctx, filter, path, nodes[keep]->samples, history, call_seed);
    if (!pool.empty()) break;
  }
  if (pool.empty()) {
    filter.reset_taken();
    SobolStream starts(dim, 1 + call_seed % (1ULL << 24));
    for (std::size_t t = 0; t < 64 && pool.empty(); ++t) {
      if (auto c = repair_into_bucket(quantize(starts.next(), ctx.space), ctx, filter, {})) {
        pool.push_back(std::move(*c));
      }
    }
  }
  if (pool.empty()) throw ExhaustedRegion("no new bucket-feasible candidate even without region constraints");

  std::size_t arg = 0;
  double arg_ei = -1.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double ei = acquisition_ei(model, pool[i].x, best);
    if (ei > arg_ei) {
      arg_ei = ei;
      arg = i;
    }
  }
  Candidate current = std::move(pool[arg]);
  double current_ei = arg_ei;

  // Greedy ascent on EI over single-digit neighbours inside the same region.
  filter.reset_taken();
  for (int step = 0; step < cfg.refine_steps; ++step) {
    std::optional<Candidate> best_move;
    double best_move_ei = current_ei;
    for (std::size_t digit = 0; digit < dim; ++digit) {
      const std::size_t k = ctx.space.choice_count(digit);
      if (k <= 1) continue;
      const std::size_t cur = *ctx.space.choice_index(digit, current.encoding[digit]);
      for (int delta : {-1, 1}) {
        if ((delta < 0 && cur == 0) || (delta > 0 && cur + 1 >= k)) continue;
        NetworkEncoding next = current.encoding;
        next[digit] = ctx.space.value_at(digit, delta < 0 ? cur - 1 : cur + 1);
        auto c = filter.admit(std::move(next), path);
        if (!c) continue;
        const double ei = acquisition_ei(model, c->x, best);
        if (ei > best_move_ei) {
          best_move_ei = ei;
          best_move = std::move(c);
        }
      }
    }
    if (!best_move) break;
    current = std::move(*best_move);
    current_ei = best_move_ei;
  }

  Proposal p;
  p.encoding = std::move(current.encoding);
  p.latency_us = current.latency_us;
  p.acquisition = current_ei;
  p.widened_levels = widened;
  p.path = sel.sides;
  p.path.resize(path.size());
  return p;
}

NetworkEncoding propose(const std::vector<CandidateRecord>& history, const SearchSpaceSpec& space,
                        const LatencyBounds& bounds, const LatencyFunction& estimator, std::uint64_t seed,
                        const OptimizerConfig& config) {
  ProposalContext ctx{space, bounds, estimator, config};
  return propose_detailed(history, {}, ctx, seed).encoding;
}

NetworkEncoding random_propose(const SearchSpaceSpec& space, const LatencyBounds& bounds,
                               const LatencyFunction& estimator, std::uint64_t seed,
                               std::size_t rejection_budget) {
  std::mt19937_64 rng(seed);
  const auto& digits = space.digits();
  for (std::size_t t = 0; t < rejection_budget; ++t) {
    NetworkEncoding enc;
    enc.digits.resize(digits.size());
    for (std::size_t i = 0; i < digits.size(); ++i) enc[i] = digits[i].values[index_draw(rng, digits[i].values.size())];
    if (bounds.contains_us(estimator(enc))) return enc;
  }
  throw ExhaustedRegion("random_propose found no bucket-feasible draw within the rejection budget");
}

}  // namespace latnas
