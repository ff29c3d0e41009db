#pragma once

// Latent-action partition tree: each internal node splits its samples into a
// better (left) and worse (right) region with a nearest-centroid rule over
// normalized encodings; leaves are chosen by UCB.

#include <cstddef>
#include <vector>

namespace latnas {

/// Samples in normalized digit space with their objectives.
struct SampleSet {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
};

/// Nearest-centroid rule over encoding digits. Equidistant points go to tie_side.
struct RegionClassifier {
  std::vector<double> left_centroid;
  std::vector<double> right_centroid;
  int tie_side = 0;

  /// 0 for left, 1 for right.
  int side(const std::vector<double>& x) const;
};

struct SearchTreeNode {
  std::vector<std::size_t> samples;  // indices into the SampleSet
  std::vector<SearchTreeNode> children;  // empty or exactly two: [left, right]
  RegionClassifier classifier;       // meaningful iff children.size() == 2
  int visit_count = 0;
  double mean_objective = 0.0;

  bool is_leaf() const noexcept { return children.empty(); }
};

struct TreeConfig {
  std::size_t min_samples = 20;
  double objective_weight = 1.0;  // lambda in the clustering feature
  int max_depth = 8;
  int kmeans_iterations = 50;
};

/// One step of the constraint path: the classifier and the side taken.
struct PathStep {
  RegionClassifier classifier;
  int side = 0;
};

/// Region membership: x satisfies every step of `path`.
bool satisfies(const std::vector<PathStep>& path, const std::vector<double>& x);

SearchTreeNode make_leaf(const SampleSet& data, std::vector<std::size_t> samples);

enum class SplitOutcome { Split, BelowThreshold };

/// Splits a leaf by 2-means on [digits, lambda * normalized objective] when it
/// holds at least min_samples samples. The child with the higher mean
/// objective becomes the left child. Throws DegenerateSplit when the digit
/// centroids coincide or the classifier routes every sample to one side.
SplitOutcome split_node(SearchTreeNode& node, const SampleSet& data, const TreeConfig& config);

/// Root holding every sample, split recursively; degenerate splits stay leaves.
SearchTreeNode build_tree(const SampleSet& data, const TreeConfig& config);

struct Selection {
  const SearchTreeNode* leaf = nullptr;
  std::vector<PathStep> path;
  std::vector<int> sides;
};

/// Descends by UCB = mean + cp * sqrt(2 ln(parent visits) / visits); ties go
/// to the higher mean, then the lower index.
Selection mcts_select(const SearchTreeNode& root, double cp);

double ucb(const SearchTreeNode& node, int parent_visits, double cp);

std::size_t count_nodes(const SearchTreeNode& root);
int tree_depth(const SearchTreeNode& root);

}  // namespace latnas
