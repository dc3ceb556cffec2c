#pragma once

// Treed GP LLM: axis-aligned binary partitions with an independent GP LLM in
// each leaf, sampled by reversible-jump grow/prune/change/swap moves.

#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/predict.hpp"
#include "gpllm/prior.hpp"
#include "gpllm/random.hpp"
#include "gpllm/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace gpllm {

struct TreePriorParams {
  double alpha = 0.5;
  double beta = 2.0;
  int min_leaf = 10;     // n_min; 0 lets leaves go empty
  int max_depth = 12;    // nodes at this depth never split

  double split_prob(int depth) const {
    if (depth >= max_depth) return 0.0;
    return alpha * std::pow(1.0 + depth, -beta);
  }

  static TreePriorParams defaults(Eigen::Index m) {
    TreePriorParams tp;
    tp.min_leaf = std::max(static_cast<int>(m) + 2, 10);
    return tp;
  }

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("TreePriorParams: alpha in (0, 1)");
    if (!(beta >= 0.0)) throw std::invalid_argument("TreePriorParams: beta must be >= 0");
    if (min_leaf < 0) throw std::invalid_argument("TreePriorParams: min_leaf must be >= 0");
    if (max_depth < 0) throw std::invalid_argument("TreePriorParams: max_depth must be >= 0");
  }
};

struct TreeNode {
  int depth = 0;
  int split_dim = -1;       // 0-based
  double split_value = 0.0;
  std::unique_ptr<TreeNode> left, right;

  GPState leaf;                  // meaningful for leaves only
  std::vector<int> points;       // training rows routed here (leaves)
  std::shared_ptr<const RegressionData> data;
  std::shared_ptr<const CovarianceSummary> summary;

  bool is_leaf() const { return !left; }

  std::unique_ptr<TreeNode> clone() const {
    auto out = std::make_unique<TreeNode>();
    out->depth = depth;
    out->split_dim = split_dim;
    out->split_value = split_value;
    out->leaf = leaf;
    out->points = points;
    out->data = data;
    out->summary = summary;
    if (left) {
      out->left = left->clone();
      out->right = right->clone();
    }
    return out;
  }

  void invalidate() {
    data.reset();
    summary.reset();
  }
};

class TreedModel {
public:
  std::unique_ptr<TreeNode> root;
  SharedState shared;

  TreedModel() = default;
  TreedModel(const TreedModel &o) : root(o.root ? o.root->clone() : nullptr), shared(o.shared) {}
  TreedModel &operator=(const TreedModel &o) {
    if (this != &o) {
      root = o.root ? o.root->clone() : nullptr;
      shared = o.shared;
    }
    return *this;
  }
  TreedModel(TreedModel &&) noexcept = default;
  TreedModel &operator=(TreedModel &&) noexcept = default;

  template <class Node, class Fn> static void visit(Node *node, Fn &&fn) {
    if (!node) return;
    fn(*node);
    visit(node->left.get(), fn);
    visit(node->right.get(), fn);
  }

  std::vector<TreeNode *> leaves() {
    std::vector<TreeNode *> out;
    visit(root.get(), [&](TreeNode &n) { if (n.is_leaf()) out.push_back(&n); });
    return out;
  }
  std::vector<const TreeNode *> leaves() const {
    std::vector<const TreeNode *> out;
    visit(static_cast<const TreeNode *>(root.get()),
          [&](const TreeNode &n) { if (n.is_leaf()) out.push_back(&n); });
    return out;
  }
  std::vector<TreeNode *> internals() {
    std::vector<TreeNode *> out;
    visit(root.get(), [&](TreeNode &n) { if (!n.is_leaf()) out.push_back(&n); });
    return out;
  }
  /// Internal nodes whose children are both leaves.
  std::vector<TreeNode *> prunable() {
    std::vector<TreeNode *> out;
    visit(root.get(), [&](TreeNode &n) {
      if (!n.is_leaf() && n.left->is_leaf() && n.right->is_leaf()) out.push_back(&n);
    });
    return out;
  }
  /// (parent, child) pairs where both are internal.
  std::vector<std::pair<TreeNode *, TreeNode *>> swappable() {
    std::vector<std::pair<TreeNode *, TreeNode *>> out;
    visit(root.get(), [&](TreeNode &n) {
      if (n.is_leaf()) return;
      if (!n.left->is_leaf()) out.emplace_back(&n, n.left.get());
      if (!n.right->is_leaf()) out.emplace_back(&n, n.right.get());
    });
    return out;
  }

  int leaf_count() const { return static_cast<int>(leaves().size()); }

  /// Leaf containing x (scaled inputs); left when x_dim < split_value.
  const TreeNode &route(const Eigen::Ref<const Eigen::VectorXd> &x) const {
    const TreeNode *n = root.get();
    while (!n->is_leaf())
      n = x(n->split_dim) < n->split_value ? n->left.get() : n->right.get();
    return *n;
  }
};

/// Axis-aligned box; the default is the scaled unit cube.
struct Box {
  Eigen::VectorXd lo, hi;

  static Box unit(Eigen::Index dims) {
    return {Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)};
  }
  double volume() const { return (hi - lo).cwiseMax(0.0).prod(); }
  void validate() const {
    if (lo.size() != hi.size() || lo.size() == 0)
      throw std::invalid_argument("Box: bad dimensions");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!std::isfinite(lo(i)) || !std::isfinite(hi(i)) || !(hi(i) > lo(i)))
        throw std::invalid_argument("Box: domain must be bounded with hi > lo");
  }
};

/// Fraction of the domain covered by leaves whose indicators are all zero.
inline double llm_area(const TreedModel &model, const Box &domain) {
  domain.validate();
  double covered = 0.0;
  std::function<void(const TreeNode &, Box)> walk = [&](const TreeNode &n, Box box) {
    if (n.is_leaf()) {
      if (n.leaf.corr.is_linear()) covered += box.volume();
      return;
    }
    Box l = box, r = box;
    const double v = std::clamp(n.split_value, box.lo(n.split_dim), box.hi(n.split_dim));
    l.hi(n.split_dim) = v;
    r.lo(n.split_dim) = v;
    walk(*n.left, l);
    walk(*n.right, r);
  };
  walk(*model.root, domain);
  return covered / domain.volume();
}

struct TreeMoveStats {
  MoveStats grow, prune, change, swap;
};

struct TreedChainStats {
  MoveStats range, nugget, boolean;
  TreeMoveStats tree;
  std::size_t kept = 0;
  std::size_t dense_factorizations = 0;
};

struct TreedRecord {
  long iteration = 0;
  TreedModel model;
  double log_posterior = 0.0;
  int leaves = 1;
  double llm_area = 0.0;
};

struct TreedChainResult {
  std::vector<TreedRecord> trace;
  TreedChainStats stats;
  int init_leaves = 1;
  long init_iterations = 0;
};

struct LlmAreaSummary {
  double mean = 0.0;
  std::vector<double> per_sample;
};

inline LlmAreaSummary llm_area(std::span<const TreedRecord> trace, const Box &domain) {
  if (trace.empty()) throw std::invalid_argument("llm_area: empty trace");
  LlmAreaSummary out;
  for (const auto &r : trace) out.per_sample.push_back(llm_area(r.model, domain));
  double s = 0.0;
  for (double a : out.per_sample) s += a;
  out.mean = s / static_cast<double>(out.per_sample.size());
  return out;
}

/// Recomputes leaf point sets by routing every training row. Returns false
/// when some leaf of a multi-leaf tree falls below min_leaf.
inline bool route_points(TreeNode &node, std::vector<int> pts, const Eigen::MatrixXd &X,
                         int min_leaf) {
  if (node.is_leaf()) {
    if (pts != node.points) {
      node.points = std::move(pts);
      node.invalidate();
    }
    return node.depth == 0 || static_cast<int>(node.points.size()) >= min_leaf;
  }
  std::vector<int> l, r;
  for (int p : pts) (X(p, node.split_dim) < node.split_value ? l : r).push_back(p);
  const bool ok_l = route_points(*node.left, std::move(l), X, min_leaf);
  const bool ok_r = route_points(*node.right, std::move(r), X, min_leaf);
  return ok_l && ok_r;
}

/// Rebuilds leaf data and summaries for a model read back from a trace.
inline void attach_data(TreedModel &model, const RegressionData &full, int min_leaf = 1) {
  std::vector<int> all(static_cast<std::size_t>(full.n()));
  for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
  route_points(*model.root, std::move(all), full.X, min_leaf);
  for (TreeNode *leaf : model.leaves())
    if (!leaf->data) leaf->data = std::make_shared<const RegressionData>(full.subset(leaf->points));
}

/// Treed chain state and moves.
class TreedSampler {
public:
  TreedSampler(const RegressionData &data, HyperParams hyper, LLMPriorParams prior,
               TreePriorParams tree_prior, McmcConfig cfg, BooleanMode mode = BooleanMode::Free)
      : full_(data), hyper_(std::move(hyper)), prior_(prior), tp_(tree_prior),
        cfg_(std::move(cfg)), mode_(mode), rng_(make_stream(cfg_.seed, 7)) {
    hyper_.validate();
    prior_.validate();
    tp_.validate();
    cfg_.validate();
    if (hyper_.m() != full_.m())
      throw std::invalid_argument("TreedSampler: hyperparameter size does not match design");
    const Eigen::Index dims = full_.input_dims();
    candidates_.resize(static_cast<std::size_t>(dims));
    for (Eigen::Index i = 0; i < dims; ++i) {
      auto &c = candidates_[static_cast<std::size_t>(i)];
      for (Eigen::Index r = 0; r < full_.n(); ++r) c.push_back(full_.X(r, i));
      std::sort(c.begin(), c.end());
      c.erase(std::unique(c.begin(), c.end()), c.end());
      // The smallest value would send nothing left.
      if (!c.empty()) c.erase(c.begin());
    }
    range_scale_ = Eigen::VectorXd::Constant(dims, cfg_.rw_scale_d);
    nugget_scale_ = cfg_.rw_scale_g;
    range_window_.assign(static_cast<std::size_t>(dims), MoveStats{});

    TreedModel init;
    init.root = std::make_unique<TreeNode>();
    init.root->leaf = initial_state(full_, hyper_, mode_);
    init.shared = SharedState::initial(hyper_);
    set_model(std::move(init));
  }

  /// Installs a tree (e.g. from treed_lm_init). Leaf indicators are forced
  /// to agree with the sampler's mode.
  void set_model(TreedModel model) {
    model_ = std::move(model);
    std::vector<int> all(static_cast<std::size_t>(full_.n()));
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
    route_points(*model_.root, std::move(all), full_.X, tp_.min_leaf);
    for (TreeNode *leaf : model_.leaves()) {
      conform_mode(leaf->leaf.corr);
      leaf->invalidate();
      for (int attempt = 0; attempt < 10 && !ensure_leaf(*leaf); ++attempt)
        leaf->leaf.corr.nugget *= 2.0;
      if (!leaf->summary) throw std::runtime_error("TreedSampler: singular leaf covariance");
    }
    model_.shared.leaf_count = model_.leaf_count();
  }

  void iterate(bool adapting, bool tree_moves = true) {
    if (tree_moves) tree_move();
    update_leaves();
    ++iteration_;
    if (adapting && cfg_.adapt && iteration_ % 50 == 0) adapt_scales();
  }

  /// One reversible-jump proposal, type chosen uniformly among feasible ones.
  void tree_move() {
    const auto feasible = feasible_moves(model_);
    const int k = static_cast<int>(draw_index(feasible.size(), rng_));
    switch (feasible[static_cast<std::size_t>(k)]) {
    case Move::Grow: grow(); break;
    case Move::Prune: prune(); break;
    case Move::Change: change(); break;
    case Move::Swap: swap(); break;
    }
  }

  /// Per-leaf covariance moves and linear draws, then the shared parameters.
  void update_leaves() {
    auto leaves = model_.leaves();
    std::vector<LeafCoefficients> coeffs;
    coeffs.reserve(leaves.size());
    for (TreeNode *leaf : leaves) {
      ensure_leaf(*leaf);
      const LeafContext ctx{*leaf->data, model_.shared, hyper_, prior_, mode_};
      GPState &st = leaf->leaf;
      LeafCovariance cur{*leaf->summary, 0.0};
      cur.log_ml = leaf_log_ml(ctx, cur.summary, st.tau2);
      mh_update_range(ctx, st, cur, range_scale_, rng_, stats_.range, &range_window_);
      const auto before = stats_.nugget.accepted;
      mh_update_nugget(ctx, st, cur, nugget_scale_, rng_, stats_.nugget);
      ++nugget_window_.proposed;
      nugget_window_.accepted += stats_.nugget.accepted - before;
      boolean_jump(ctx, st, cur, rng_, stats_.boolean);
      draw_leaf_linear(ctx, st, cur.summary, rng_);
      leaf->summary = std::make_shared<const CovarianceSummary>(std::move(cur.summary));
      coeffs.push_back({st.beta, st.sigma2, st.tau2});
    }
    draw_shared(model_.shared, coeffs, hyper_, rng_);
  }

  /// Log of the collapsed target: per-leaf marginal likelihoods and
  /// correlation/tau^2 priors, plus the tree prior.
  double log_target(TreedModel &model) {
    double lp = log_tree_prior(model);
    for (TreeNode *leaf : model.leaves()) {
      if (!ensure_leaf(*leaf)) return -std::numeric_limits<double>::infinity();
      lp += leaf_term(*leaf, model.shared);
    }
    return lp;
  }

  double log_tree_prior(const TreedModel &model) const {
    double lp = 0.0;
    TreedModel::visit(static_cast<const TreeNode *>(model.root.get()), [&](const TreeNode &n) {
      const double ps = tp_.split_prob(n.depth);
      if (n.is_leaf()) {
        lp += std::log1p(-ps);
      } else {
        const auto nv = candidates_[static_cast<std::size_t>(n.split_dim)].size();
        lp += std::log(ps) - std::log(static_cast<double>(full_.input_dims())) -
              std::log(static_cast<double>(nv));
      }
    });
    return lp;
  }

  TreedRecord record() {
    TreedRecord r;
    r.iteration = iteration_;
    r.log_posterior = log_target(model_);
    r.model = model_;
    r.leaves = model_.leaf_count();
    r.llm_area = llm_area(model_, Box::unit(full_.input_dims()));
    return r;
  }

  TreedModel &model() { return model_; }
  const TreedChainStats &stats() const { return stats_; }
  Rng &rng() { return rng_; }
  long iteration() const { return iteration_; }
  const TreePriorParams &tree_prior() const { return tp_; }

  enum class Move { Grow, Prune, Change, Swap };

  static std::vector<Move> feasible_moves(TreedModel &m) {
    std::vector<Move> out{Move::Grow};
    if (!m.root->is_leaf()) {
      out.push_back(Move::Prune);
      out.push_back(Move::Change);
    }
    if (!m.swappable().empty()) out.push_back(Move::Swap);
    return out;
  }

  void conform_mode(CorrelationState &cs) const {
    if (mode_ == BooleanMode::AllActive) cs.active.assign(cs.active.size(), true);
    if (mode_ == BooleanMode::AllLinear) cs.active.assign(cs.active.size(), false);
  }

  bool ensure_leaf(TreeNode &leaf) const {
    if (!leaf.data) {
      leaf.data = std::make_shared<const RegressionData>(
          cfg_.ignore_likelihood ? RegressionData::empty(full_.input_dims())
                                 : full_.subset(leaf.points));
      leaf.summary.reset();
    }
    if (!leaf.summary) {
      auto s = try_summarize(*leaf.data, leaf.leaf.corr);
      if (!s) return false;
      leaf.summary = std::make_shared<const CovarianceSummary>(std::move(*s));
    }
    return true;
  }

  double log_prior_tau2(double tau2) const {
    return log_inverse_gamma_pdf(tau2, 0.5 * hyper_.alpha_tau, 0.5 * hyper_.q_tau);
  }

  /// Prior density of the parameters a new leaf draws.
  double log_new_leaf_density(const GPState &s) const {
    return log_prior_corr(s.corr, prior_, mode_) + log_prior_tau2(s.tau2);
  }

  double leaf_term(const TreeNode &leaf, const SharedState &shared) const {
    return log_marginal_likelihood(*leaf.summary, shared, leaf.leaf.tau2, hyper_) +
           log_new_leaf_density(leaf.leaf);
  }

  GPState draw_new_leaf(const GPState &sibling) {
    GPState s = sibling;
    s.corr = sample_corr_prior(full_.input_dims(), prior_, mode_, rng_);
    s.corr.power = sibling.corr.power;
    s.tau2 = draw_inverse_gamma(0.5 * hyper_.alpha_tau, 0.5 * hyper_.q_tau, rng_);
    return s;
  }

  double log_move_prob(TreedModel &m) const {
    return -std::log(static_cast<double>(feasible_moves(m).size()));
  }

  bool reroute(TreedModel &m) const {
    std::vector<int> all(static_cast<std::size_t>(full_.n()));
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
    return route_points(*m.root, std::move(all), full_.X, tp_.min_leaf);
  }

  void accept(TreedModel proposal) {
    model_ = std::move(proposal);
    model_.shared.leaf_count = model_.leaf_count();
  }

  bool grow() {
    ++stats_.tree.grow.proposed;
    const auto leaves = model_.leaves();
    const std::size_t li = draw_index(leaves.size(), rng_);
    const TreeNode &chosen = *leaves[li];
    const double ps = tp_.split_prob(chosen.depth);
    if (ps <= 0.0) return false;
    const Eigen::Index dims = full_.input_dims();
    const int dim = static_cast<int>(draw_index(static_cast<std::size_t>(dims), rng_));
    const auto &cand = candidates_[static_cast<std::size_t>(dim)];
    if (cand.empty()) return false;
    const double value = cand[draw_index(cand.size(), rng_)];
    const int keep = static_cast<int>(draw_index(2, rng_));

    const double log_q_move = log_move_prob(model_);
    const double cur = log_target(model_);

    TreedModel prop = model_;
    TreeNode *node = prop.leaves()[li];
    const GPState parent = node->leaf;
    node->split_dim = dim;
    node->split_value = value;
    node->left = std::make_unique<TreeNode>();
    node->right = std::make_unique<TreeNode>();
    node->left->depth = node->right->depth = node->depth + 1;
    TreeNode *kept = keep == 0 ? node->left.get() : node->right.get();
    TreeNode *fresh = keep == 0 ? node->right.get() : node->left.get();
    kept->leaf = parent;
    fresh->leaf = draw_new_leaf(parent);
    node->invalidate();
    node->points.clear();
    if (!reroute(prop)) return false;
    const double next = log_target(prop);
    if (!std::isfinite(next)) return false;

    const double log_fwd = log_q_move - std::log(static_cast<double>(leaves.size())) -
                           std::log(static_cast<double>(dims)) -
                           std::log(static_cast<double>(cand.size())) - std::log(2.0) +
                           log_new_leaf_density(fresh->leaf);
    const double log_rev = log_move_prob(prop) -
                           std::log(static_cast<double>(prop.prunable().size())) -
                           std::log(2.0);
    if (mh_accept(next - cur + log_rev - log_fwd, rng_)) {
      accept(std::move(prop));
      ++stats_.tree.grow.accepted;
      return true;
    }
    return false;
  }

  bool prune() {
    ++stats_.tree.prune.proposed;
    const auto nodes = model_.prunable();
    if (nodes.empty()) return false;
    const std::size_t pi = draw_index(nodes.size(), rng_);
    const int keep = static_cast<int>(draw_index(2, rng_));
    const double log_q_move = log_move_prob(model_);
    const double cur = log_target(model_);

    TreedModel prop = model_;
    TreeNode *node = prop.prunable()[pi];
    const int dim = node->split_dim;
    const GPState kept = (keep == 0 ? node->left : node->right)->leaf;
    const GPState dropped = (keep == 0 ? node->right : node->left)->leaf;
    node->left.reset();
    node->right.reset();
    node->split_dim = -1;
    node->leaf = kept;
    node->invalidate();
    node->points.clear();
    if (!reroute(prop)) return false;
    const double next = log_target(prop);
    if (!std::isfinite(next)) return false;

    const auto &cand = candidates_[static_cast<std::size_t>(dim)];
    const double log_fwd =
        log_q_move - std::log(static_cast<double>(nodes.size())) - std::log(2.0);
    const double log_rev = log_move_prob(prop) -
                           std::log(static_cast<double>(prop.leaves().size())) -
                           std::log(static_cast<double>(full_.input_dims())) -
                           std::log(static_cast<double>(cand.size())) - std::log(2.0) +
                           log_new_leaf_density(dropped);
    if (mh_accept(next - cur + log_rev - log_fwd, rng_)) {
      accept(std::move(prop));
      ++stats_.tree.prune.accepted;
      return true;
    }
    return false;
  }

  bool change() {
    ++stats_.tree.change.proposed;
    const auto nodes = model_.internals();
    if (nodes.empty()) return false;
    const std::size_t ni = draw_index(nodes.size(), rng_);
    const int dim = static_cast<int>(
        draw_index(static_cast<std::size_t>(full_.input_dims()), rng_));
    const auto &cand = candidates_[static_cast<std::size_t>(dim)];
    if (cand.empty()) return false;
    const double value = cand[draw_index(cand.size(), rng_)];
    const int old_dim = nodes[ni]->split_dim;
    if (old_dim == dim && nodes[ni]->split_value == value) {
      ++stats_.tree.change.accepted;
      return true;
    }
    const double cur = log_target(model_);
    TreedModel prop = model_;
    TreeNode *node = prop.internals()[ni];
    node->split_dim = dim;
    node->split_value = value;
    if (!reroute(prop)) return false;
    const double next = log_target(prop);
    if (!std::isfinite(next)) return false;
    // Rule proposals are uniform over the same sets both ways except for the
    // candidate count in the chosen dimension.
    const double log_fwd = -std::log(static_cast<double>(cand.size()));
    const double log_rev =
        -std::log(static_cast<double>(candidates_[static_cast<std::size_t>(old_dim)].size()));
    if (mh_accept(next - cur + log_rev - log_fwd, rng_)) {
      accept(std::move(prop));
      ++stats_.tree.change.accepted;
      return true;
    }
    return false;
  }

  bool swap() {
    ++stats_.tree.swap.proposed;
    const auto pairs = model_.swappable();
    if (pairs.empty()) return false;
    const std::size_t si = draw_index(pairs.size(), rng_);
    const double log_q_move = log_move_prob(model_);
    const double cur = log_target(model_);
    TreedModel prop = model_;
    auto [parent, child] = prop.swappable()[si];
    std::swap(parent->split_dim, child->split_dim);
    std::swap(parent->split_value, child->split_value);
    if (!reroute(prop)) return false;
    const double next = log_target(prop);
    if (!std::isfinite(next)) return false;
    const auto rev_pairs = prop.swappable().size();
    const double log_fwd = log_q_move - std::log(static_cast<double>(pairs.size()));
    const double log_rev = log_move_prob(prop) - std::log(static_cast<double>(rev_pairs));
    if (mh_accept(next - cur + log_rev - log_fwd, rng_)) {
      accept(std::move(prop));
      ++stats_.tree.swap.accepted;
      return true;
    }
    return false;
  }

private:
  static double adapt_one(double scale, const MoveStats &w) {
    if (w.proposed < 10) return scale;
    const double r = w.rate();
    if (r < 0.2) return scale * 0.8;
    if (r > 0.4) return scale * 1.25;
    return scale;
  }

  void adapt_scales() {
    for (Eigen::Index i = 0; i < range_scale_.size(); ++i) {
      auto &w = range_window_[static_cast<std::size_t>(i)];
      range_scale_(i) = adapt_one(range_scale_(i), w);
      if (w.proposed >= 10) w = MoveStats{};
    }
    nugget_scale_ = adapt_one(nugget_scale_, nugget_window_);
    if (nugget_window_.proposed >= 10) nugget_window_ = MoveStats{};
  }

  const RegressionData &full_;
  HyperParams hyper_;
  LLMPriorParams prior_;
  TreePriorParams tp_;
  McmcConfig cfg_;
  BooleanMode mode_;
  Rng rng_;
  TreedModel model_;
  std::vector<std::vector<double>> candidates_;
  TreedChainStats stats_;
  Eigen::VectorXd range_scale_;
  double nugget_scale_ = 0.5;
  std::vector<MoveStats> range_window_;
  MoveStats nugget_window_;
  long iteration_ = 0;
};

struct LmInitOptions {
  int stable_window = 500;
  int max_iterations = 20000;
};

struct LmInitResult {
  TreedModel model;
  long iterations = 0;
};

/// Treed limiting linear model run until the leaf count has not changed for
/// `stable_window` consecutive iterations.
inline LmInitResult treed_lm_init(const RegressionData &data, const HyperParams &hyper,
                                  const LLMPriorParams &prior, const TreePriorParams &tp,
                                  McmcConfig cfg, const LmInitOptions &opt = {}) {
  cfg.seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
  TreedSampler sampler(data, hyper, prior, tp, cfg, BooleanMode::AllLinear);
  int last = sampler.model().leaf_count();
  int stable = 0;
  long it = 0;
  while (it < opt.max_iterations && stable < opt.stable_window) {
    sampler.iterate(true);
    ++it;
    const int now = sampler.model().leaf_count();
    stable = now == last ? stable + 1 : 0;
    last = now;
  }
  return {sampler.model(), it};
}

/// Burn-in and sampling for the treed model. With lm_init the chain starts
/// from the treed linear-model fit.
inline TreedChainResult run_treed_chain(const RegressionData &data, const HyperParams &hyper,
                                        const LLMPriorParams &prior, const TreePriorParams &tp,
                                        const McmcConfig &cfg,
                                        BooleanMode mode = BooleanMode::Free,
                                        bool lm_init = true, const LmInitOptions &opt = {}) {
  const auto dense_before = op_counters().dense_factorizations;
  TreedChainResult out;
  TreedSampler sampler(data, hyper, prior, tp, cfg, mode);
  if (lm_init) {
    auto init = treed_lm_init(data, hyper, prior, tp, cfg, opt);
    out.init_leaves = init.model.leaf_count();
    out.init_iterations = init.iterations;
    sampler.set_model(std::move(init.model));
  }
  for (int it = 0; it < cfg.n_burn; ++it) sampler.iterate(true);
  out.trace.reserve(static_cast<std::size_t>(cfg.n_keep));
  for (int k = 0; k < cfg.n_keep; ++k) {
    for (int t = 0; t < cfg.thin; ++t) sampler.iterate(false);
    out.trace.push_back(sampler.record());
  }
  out.stats = sampler.stats();
  out.stats.kept = out.trace.size();
  out.stats.dense_factorizations = op_counters().dense_factorizations - dense_before;
  return out;
}

/// Predictive moments: every query uses its own leaf's predictor in each
/// sample. Records must carry leaf data (see attach_data).
inline PredictiveMoments treed_predict(std::span<const TreedRecord> trace,
                                       const Eigen::MatrixXd &queries) {
  if (trace.empty()) throw std::invalid_argument("treed_predict: empty trace");
  const Eigen::Index nq = queries.rows();
  MomentAccumulator acc(nq);
  Eigen::VectorXd mean(nq), var(nq), m, v;
  for (const auto &rec : trace) {
    const auto leaves = rec.model.leaves();
    std::vector<std::vector<Eigen::Index>> rows(leaves.size());
    for (Eigen::Index q = 0; q < nq; ++q) {
      const TreeNode *leaf = &rec.model.route(queries.row(q).transpose());
      const auto pos = std::find(leaves.begin(), leaves.end(), leaf) - leaves.begin();
      rows[static_cast<std::size_t>(pos)].push_back(q);
    }
    std::size_t linear_queries = 0;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      if (rows[l].empty()) continue;
      if (!leaves[l]->data) throw std::invalid_argument("treed_predict: leaf without data");
      Eigen::MatrixXd Xq(static_cast<Eigen::Index>(rows[l].size()), queries.cols());
      for (std::size_t r = 0; r < rows[l].size(); ++r)
        Xq.row(static_cast<Eigen::Index>(r)) = queries.row(rows[l][r]);
      const SamplePredictor pred(leaves[l]->leaf, rec.model.shared, *leaves[l]->data);
      pred.predict(Xq, m, v);
      for (std::size_t r = 0; r < rows[l].size(); ++r) {
        mean(rows[l][r]) = m(static_cast<Eigen::Index>(r));
        var(rows[l][r]) = v(static_cast<Eigen::Index>(r));
      }
      if (pred.linear_path()) linear_queries += rows[l].size();
    }
    acc.add_mixed(mean, var, nq ? static_cast<double>(linear_queries) / static_cast<double>(nq) : 0.0);
  }
  return acc.finish();
}

} // namespace gpllm
