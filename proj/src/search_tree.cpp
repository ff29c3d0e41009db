#include "latnas/search_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latnas/errors.hpp"

namespace latnas {

namespace {

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void refresh_stats(SearchTreeNode& node, const SampleSet& data) {
  node.visit_count = static_cast<int>(node.samples.size());
  double sum = 0.0;
  for (auto i : node.samples) sum += data.y[i];
  node.mean_objective = node.samples.empty() ? 0.0 : sum / static_cast<double>(node.samples.size());
}

void grow(SearchTreeNode& node, const SampleSet& data, const TreeConfig& config, int depth) {
  if (depth >= config.max_depth) return;
  try {
    if (split_node(node, data, config) == SplitOutcome::BelowThreshold) return;
  } catch (const DegenerateSplit&) {
    return;
  }
  for (auto& child : node.children) grow(child, data, config, depth + 1);
}

}  // namespace

int RegionClassifier::side(const std::vector<double>& x) const {
  const double l = dist2(x, left_centroid);
  const double r = dist2(x, right_centroid);
  if (l == r) return tie_side;
  return r < l ? 1 : 0;
}

bool satisfies(const std::vector<PathStep>& path, const std::vector<double>& x) {
  for (const auto& step : path) {
    if (step.classifier.side(x) != step.side) return false;
  }
  return true;
}

SearchTreeNode make_leaf(const SampleSet& data, std::vector<std::size_t> samples) {
  SearchTreeNode node;
  node.samples = std::move(samples);
  refresh_stats(node, data);
  return node;
}

SplitOutcome split_node(SearchTreeNode& node, const SampleSet& data, const TreeConfig& config) {
  if (!node.is_leaf()) throw Error("split_node requires a leaf");
  const std::size_t n = node.samples.size();
  if (n < config.min_samples || n < 2) return SplitOutcome::BelowThreshold;
  const std::size_t d = data.x[node.samples.front()].size();

  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -std::numeric_limits<double>::infinity();
  for (auto i : node.samples) {
    ymin = std::min(ymin, data.y[i]);
    ymax = std::max(ymax, data.y[i]);
  }
  const double yrange = ymax - ymin;

  // Clustering feature: digits followed by the weighted, range-normalized objective.
  std::vector<std::vector<double>> feat(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto idx = node.samples[s];
    feat[s] = data.x[idx];
    feat[s].push_back(config.objective_weight * (yrange > 0 ? (data.y[idx] - ymin) / yrange : 0.0));
  }

  // Seeds: the best sample, and the worst sample (or the farthest one if they coincide).
  std::size_t best = 0;
  std::size_t worst = 0;
  for (std::size_t s = 1; s < n; ++s) {
    if (data.y[node.samples[s]] > data.y[node.samples[best]]) best = s;
    if (data.y[node.samples[s]] < data.y[node.samples[worst]]) worst = s;
  }
  if (dist2(feat[best], feat[worst]) == 0.0) {
    double far = -1.0;
    for (std::size_t s = 0; s < n; ++s) {
      double dd = dist2(feat[s], feat[best]);
      if (dd > far) {
        far = dd;
        worst = s;
      }
    }
  }
  std::vector<std::vector<double>> centroid{feat[best], feat[worst]};
  std::vector<int> assign(n, -1);
  for (int it = 0; it < config.kmeans_iterations; ++it) {
    bool changed = false;
    for (std::size_t s = 0; s < n; ++s) {
      int a = dist2(feat[s], centroid[1]) < dist2(feat[s], centroid[0]) ? 1 : 0;
      if (a != assign[s]) {
        assign[s] = a;
        changed = true;
      }
    }
    if (!changed) break;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> sum(d + 1, 0.0);
      std::size_t count = 0;
      for (std::size_t s = 0; s < n; ++s) {
        if (assign[s] != c) continue;
        for (std::size_t j = 0; j <= d; ++j) sum[j] += feat[s][j];
        ++count;
      }
      if (count == 0) continue;
      for (auto& v : sum) v /= static_cast<double>(count);
      centroid[c] = std::move(sum);
    }
  }

  RegionClassifier cls;
  cls.left_centroid.assign(centroid[0].begin(), centroid[0].begin() + static_cast<std::ptrdiff_t>(d));
  cls.right_centroid.assign(centroid[1].begin(), centroid[1].begin() + static_cast<std::ptrdiff_t>(d));
  if (cls.left_centroid == cls.right_centroid) throw DegenerateSplit("cluster centroids coincide on encoding digits");

  std::vector<std::size_t> sides[2];
  for (auto idx : node.samples) sides[cls.side(data.x[idx])].push_back(idx);
  if (sides[0].empty() || sides[1].empty()) throw DegenerateSplit("classifier routes every sample to one side");

  SearchTreeNode left = make_leaf(data, std::move(sides[0]));
  SearchTreeNode right = make_leaf(data, std::move(sides[1]));
  if (right.mean_objective > left.mean_objective) {
    std::swap(left, right);
    std::swap(cls.left_centroid, cls.right_centroid);
    cls.tie_side = 1 - cls.tie_side;
  }
  node.classifier = std::move(cls);
  node.children.clear();
  node.children.push_back(std::move(left));
  node.children.push_back(std::move(right));
  return SplitOutcome::Split;
}

SearchTreeNode build_tree(const SampleSet& data, const TreeConfig& config) {
  std::vector<std::size_t> all(data.y.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  SearchTreeNode root = make_leaf(data, std::move(all));
  grow(root, data, config, 0);
  return root;
}

double ucb(const SearchTreeNode& node, int parent_visits, double cp) {
  if (node.visit_count <= 0) return std::numeric_limits<double>::infinity();
  return node.mean_objective +
         cp * std::sqrt(2.0 * std::log(static_cast<double>(parent_visits)) / static_cast<double>(node.visit_count));
}

Selection mcts_select(const SearchTreeNode& root, double cp) {
  Selection sel;
  const SearchTreeNode* node = &root;
  while (!node->is_leaf()) {
    int pick = 0;
    double best = ucb(node->children[0], node->visit_count, cp);
    const double other = ucb(node->children[1], node->visit_count, cp);
    if (other > best ||
        (other == best && node->children[1].mean_objective > node->children[0].mean_objective)) {
      pick = 1;
    }
    sel.path.push_back({node->classifier, pick});
    sel.sides.push_back(pick);
    node = &node->children[static_cast<std::size_t>(pick)];
  }
  sel.leaf = node;
  return sel;
}

std::size_t count_nodes(const SearchTreeNode& root) {
  std::size_t n = 1;
  for (const auto& c : root.children) n += count_nodes(c);
  return n;
}

int tree_depth(const SearchTreeNode& root) {
  int d = 0;
  for (const auto& c : root.children) d = std::max(d, 1 + tree_depth(c));
  return d;
}

}  // namespace latnas
