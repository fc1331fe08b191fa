#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "durastack/errors.hpp"
#include "durastack/learners.hpp"
#include "durastack/parallel.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

// Each feature coded by the rank of its value among the distinct training values.
struct RankedMatrix {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<std::vector<double>> levels;
  std::vector<std::uint32_t> codes;  // column-major

  std::uint32_t code(std::size_t i, std::size_t f) const { return codes[f * n + i]; }
};

RankedMatrix rank_matrix(const Eigen::MatrixXd& X) {
  RankedMatrix r;
  r.n = static_cast<std::size_t>(X.rows());
  r.p = static_cast<std::size_t>(X.cols());
  r.levels.resize(r.p);
  r.codes.resize(r.n * r.p);
  std::vector<std::size_t> order(r.n);
  for (std::size_t f = 0; f < r.p; ++f) {
    const auto col = X.col(static_cast<Eigen::Index>(f));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return col(static_cast<Eigen::Index>(a)) < col(static_cast<Eigen::Index>(b));
    });
    auto& lv = r.levels[f];
    for (auto i : order) {
      const double v = col(static_cast<Eigen::Index>(i));
      if (lv.empty() || v != lv.back()) lv.push_back(v);
      r.codes[f * r.n + i] = static_cast<std::uint32_t>(lv.size() - 1);
    }
  }
  return r;
}

// Rows sorted lexicographically by (x, y): every draw and every accumulation
// runs in this order, so a fit depends on the multiset of rows only.
std::vector<std::uint32_t> canonical_order(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  std::vector<std::uint32_t> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double va = X(a, j), vb = X(b, j);
      if (va != vb) return va < vb;
    }
    return y(a) < y(b);
  });
  return order;
}

struct BuildParams {
  std::size_t mtry = 0;
  double min_leaf = 1.0;
  std::size_t max_depth = 64;
};

struct Split {
  std::size_t feature = 0;
  std::uint32_t cut = 0;  // codes <= cut go left
  double threshold = 0.0;
  double gain = 0.0;
  bool found = false;
};

class TreeBuilder {
 public:
  TreeBuilder(const RankedMatrix& data, const double* y, BuildParams params)
      : data_(data), y_(y), params_(params) {
    std::size_t widest = 0;
    for (const auto& lv : data_.levels) widest = std::max(widest, lv.size());
    hist_w_.assign(widest, 0.0);
    hist_s_.assign(widest, 0.0);
    features_.resize(data_.p);
  }

  // rows in canonical order; weights aligned with rows.
  Tree build(std::vector<std::uint32_t> rows, std::vector<double> weights, Rng& rng) {
    rows_ = std::move(rows);
    weights_ = std::move(weights);
    Tree tree;
    tree.nodes.emplace_back();
    struct Pending {
      std::uint32_t node;
      std::size_t begin, end, depth;
    };
    std::vector<Pending> stack{{0, 0, rows_.size(), 0}};
    while (!stack.empty()) {
      auto [node, begin, end, depth] = stack.back();
      stack.pop_back();

      double W = 0.0, mean = 0.0, lo = y_[rows_[begin]], hi = lo;
      for (std::size_t k = begin; k < end; ++k) {
        const double w = weights_[k], v = y_[rows_[k]];
        W += w;
        mean += w / W * (v - mean);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      tree.nodes[node].value = mean;
      if (lo == hi || depth >= params_.max_depth || W < 2.0 * params_.min_leaf) continue;

      Split best = find_split(begin, end, mean, rng);
      if (!best.found) continue;

      apply_partition(begin, end, best);

      const auto left = static_cast<std::uint32_t>(tree.nodes.size());
      tree.nodes[node].feature = static_cast<std::uint32_t>(best.feature);
      tree.nodes[node].left = left;
      tree.nodes[node].value = best.threshold;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      const std::size_t mid = begin + left_count_;
      stack.push_back({left + 1, mid, end, depth + 1});
      stack.push_back({left, begin, mid, depth + 1});
    }
    return tree;
  }

 private:
  Split find_split(std::size_t begin, std::size_t end, double mean, Rng& rng) {
    std::size_t m = data_.p;
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    if (params_.mtry < data_.p) {
      for (std::size_t k = 0; k < params_.mtry; ++k) {
        std::swap(features_[k], features_[k + uniform_index(rng, data_.p - k)]);
      }
      m = params_.mtry;
      std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(m));
    }

    Split best;
    const std::size_t count = end - begin;
    for (std::size_t fi = 0; fi < m; ++fi) {
      const std::size_t f = features_[fi];
      const auto& lv = data_.levels[f];
      if (lv.size() < 2) continue;
      if (count * 4 >= lv.size()) {
        scan_histogram(f, begin, end, mean, best);
      } else {
        scan_sorted(f, begin, end, mean, best);
      }
    }
    return best;
  }

  void consider(std::size_t f, std::uint32_t left_code, std::uint32_t right_code, double wl, double sl,
                double W, double S, Split& best) const {
    const double wr = W - wl;
    if (wl < params_.min_leaf || wr < params_.min_leaf) return;
    const double sr = S - sl;
    const double gain = sl * sl / wl + sr * sr / wr - S * S / W;
    if (gain > best.gain) {
      const auto& lv = data_.levels[f];
      best.found = true;
      best.gain = gain;
      best.feature = f;
      best.cut = left_code;
      best.threshold = lv[left_code] + (lv[right_code] - lv[left_code]) / 2.0;
    }
  }

  void scan_histogram(std::size_t f, std::size_t begin, std::size_t end, double mean, Split& best) {
    const std::size_t nb = data_.levels[f].size();
    std::fill_n(hist_w_.begin(), nb, 0.0);
    std::fill_n(hist_s_.begin(), nb, 0.0);
    double W = 0.0, S = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto c = data_.code(rows_[k], f);
      const double w = weights_[k], s = w * (y_[rows_[k]] - mean);
      hist_w_[c] += w;
      hist_s_[c] += s;
      W += w;
      S += s;
    }
    double wl = 0.0, sl = 0.0;
    std::uint32_t prev = 0;
    bool have_prev = false;
    for (std::uint32_t c = 0; c < nb; ++c) {
      if (hist_w_[c] == 0.0) continue;
      if (have_prev) consider(f, prev, c, wl, sl, W, S, best);
      wl += hist_w_[c];
      sl += hist_s_[c];
      prev = c;
      have_prev = true;
    }
  }

  void scan_sorted(std::size_t f, std::size_t begin, std::size_t end, double mean, Split& best) {
    sorted_.clear();
    for (std::size_t k = begin; k < end; ++k) sorted_.push_back({data_.code(rows_[k], f), k});
    std::stable_sort(sorted_.begin(), sorted_.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    double W = 0.0, S = 0.0;
    for (const auto& [c, k] : sorted_) {
      W += weights_[k];
      S += weights_[k] * (y_[rows_[k]] - mean);
    }
    double wl = 0.0, sl = 0.0;
    for (std::size_t a = 0; a < sorted_.size();) {
      const auto c = sorted_[a].first;
      std::size_t b = a;
      double bw = 0.0, bs = 0.0;
      for (; b < sorted_.size() && sorted_[b].first == c; ++b) {
        const auto k = sorted_[b].second;
        bw += weights_[k];
        bs += weights_[k] * (y_[rows_[k]] - mean);
      }
      wl += bw;
      sl += bs;
      if (b < sorted_.size()) consider(f, c, sorted_[b].first, wl, sl, W, S, best);
      a = b;
    }
  }

  // Stable partition of rows_/weights_ in [begin, end) by the split.
  void apply_partition(std::size_t begin, std::size_t end, const Split& s) {
    tmp_rows_.clear();
    tmp_weights_.clear();
    std::size_t write = begin;
    for (std::size_t k = begin; k < end; ++k) {
      if (data_.code(rows_[k], s.feature) <= s.cut) {
        rows_[write] = rows_[k];
        weights_[write] = weights_[k];
        ++write;
      } else {
        tmp_rows_.push_back(rows_[k]);
        tmp_weights_.push_back(weights_[k]);
      }
    }
    left_count_ = write - begin;
    std::copy(tmp_rows_.begin(), tmp_rows_.end(), rows_.begin() + static_cast<std::ptrdiff_t>(write));
    std::copy(tmp_weights_.begin(), tmp_weights_.end(), weights_.begin() + static_cast<std::ptrdiff_t>(write));
  }

  const RankedMatrix& data_;
  const double* y_;
  BuildParams params_;
  std::vector<std::uint32_t> rows_;
  std::vector<double> weights_;
  std::vector<std::size_t> features_;
  std::vector<double> hist_w_, hist_s_;
  std::vector<std::pair<std::uint32_t, std::size_t>> sorted_;
  std::vector<std::uint32_t> tmp_rows_;
  std::vector<double> tmp_weights_;
  std::size_t left_count_ = 0;
};

void check_tree_input(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::string_view who) {
  if (X.rows() < 1 || y.size() != X.rows()) {
    throw DataError(fmt::format("{}: outcome length does not match design rows", who));
  }
  if (X.rows() > 0xFFFFFFF0) throw DataError(fmt::format("{}: too many rows", who));
  if (!X.allFinite() || !y.allFinite()) throw NumericError(fmt::format("{}: non-finite input", who));
}

}  // namespace

double Tree::predict(const ConstRowRef& x) const {
  std::uint32_t k = 0;
  while (nodes[k].feature != kLeaf) {
    const auto& n = nodes[k];
    k = x(static_cast<Eigen::Index>(n.feature)) <= n.value ? n.left : n.left + 1;
  }
  return nodes[k].value;
}

std::size_t Tree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.feature == kLeaf; }));
}

double TreeEnsemble::predict(const ConstRowRef& x) const {
  if (average) {
    double mean = 0.0;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      mean += (trees[t].predict(x) - mean) / static_cast<double>(t + 1);
    }
    return mean;
  }
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return base + learning_rate * sum;
}

TreeEnsemble fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_trees,
                               std::size_t mtry, std::size_t min_node, std::uint64_t seed) {
  check_tree_input(X, y, "random forest");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  if (n_trees < 1) throw UsageError("random forest needs at least one tree");
  if (mtry < 1 || mtry > p) throw UsageError(fmt::format("random forest: mtry={} outside 1..{}", mtry, p));
  if (min_node < 1 || min_node > n) {
    throw UsageError(fmt::format("random forest: min_node={} outside 1..{}", min_node, n));
  }

  const auto ranked = rank_matrix(X);
  const auto order = canonical_order(X, y);
  TreeEnsemble forest;
  forest.average = true;
  forest.trees.resize(n_trees);
  parallel_for(n_trees, [&](std::size_t t) {
    Rng rng(derive_seed(seed, "tree", t));
    std::vector<std::uint32_t> counts(n, 0);
    for (std::size_t k = 0; k < n; ++k) ++counts[uniform_index(rng, n)];
    std::vector<std::uint32_t> rows;
    std::vector<double> weights;
    rows.reserve(n);
    weights.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (counts[k] == 0) continue;
      rows.push_back(order[k]);
      weights.push_back(counts[k]);
    }
    TreeBuilder builder(ranked, y.data(), {mtry, static_cast<double>(min_node), 1000});
    forest.trees[t] = builder.build(std::move(rows), std::move(weights), rng);
  });
  return forest;
}

TreeEnsemble fit_gbt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_rounds,
                     std::size_t depth, double learning_rate, double subsample, std::uint64_t seed) {
  check_tree_input(X, y, "gbt");
  if (!(learning_rate > 0.0)) throw UsageError(fmt::format("gbt: learning_rate must be > 0, got {}", learning_rate));
  if (depth < 1) throw UsageError("gbt: depth must be >= 1");
  if (!(subsample > 0.0 && subsample <= 1.0)) throw UsageError(fmt::format("gbt: subsample {} outside (0, 1]", subsample));
  const auto n = static_cast<std::size_t>(X.rows());
  const auto ranked = rank_matrix(X);
  const auto order = canonical_order(X, y);

  TreeEnsemble model;
  model.learning_rate = learning_rate;
  for (std::size_t k = 0; k < n; ++k) model.base += (y(order[k]) - model.base) / static_cast<double>(k + 1);

  Eigen::VectorXd fitted = Eigen::VectorXd::Constant(X.rows(), model.base);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(X.rows());
  Eigen::VectorXd residual(X.rows());
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(subsample * static_cast<double>(n))));
  std::vector<std::size_t> slots(n);
  Rng rng(derive_seed(seed, "gbt"));
  TreeBuilder builder(ranked, residual.data(), {ranked.p, 1.0, depth});

  model.trees.reserve(n_rounds);
  for (std::size_t round = 0; round < n_rounds; ++round) {
    residual = y - fitted;
    std::vector<std::uint32_t> rows;
    if (take < n) {
      std::iota(slots.begin(), slots.end(), std::size_t{0});
      for (std::size_t k = 0; k < take; ++k) {
        std::swap(slots[k], slots[k + uniform_index(rng, n - k)]);
      }
      std::sort(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(take));
      rows.reserve(take);
      for (std::size_t k = 0; k < take; ++k) rows.push_back(order[slots[k]]);
    } else {
      rows = order;
    }
    Tree tree = builder.build(std::move(rows), std::vector<double>(take < n ? take : n, 1.0), rng);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      sum(i) += tree.predict(X.row(i));
      fitted(i) = model.base + learning_rate * sum(i);
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

}  // namespace durastack
