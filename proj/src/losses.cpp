#include "pauc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pauc {

namespace {

void require_unit_rows(const Eigen::Ref<const Matrix>& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).norm() - 1.0) > 1e-4) {
      throw NonUnitNormError(std::string(what) + ": row " + std::to_string(i) +
                             " is not unit norm");
    }
  }
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NonFiniteEvaluationError(std::string(what) + ": non-finite loss value");
  }
}

// Unranks a combination index into the pair (a, b), a < b < k, ordered
// (0,1), (0,2), ..., (1,2), ...
std::pair<int, int> decode_pair(int k, int64_t t) {
  for (int a = 0; a < k - 1; ++a) {
    int64_t row = k - 1 - a;
    if (t < row) return {a, a + 1 + static_cast<int>(t)};
    t -= row;
  }
  throw Error("decode_pair: index out of range");
}

}  // namespace

InfoNceResult info_nce(const Eigen::Ref<const Matrix>& anchors,
                       const Eigen::Ref<const Matrix>& positives,
                       const Eigen::Ref<const Matrix>& negatives, double tau) {
  Eigen::Index n = anchors.rows();
  Eigen::Index d = anchors.cols();
  if (n == 0) throw ShapeMismatchError("info_nce: no anchors");
  if (positives.rows() != n || positives.cols() != d) {
    throw ShapeMismatchError("info_nce: positives shape mismatch");
  }
  if (negatives.cols() != d || negatives.rows() % n != 0 || negatives.rows() == 0) {
    throw ShapeMismatchError("info_nce: negatives must stack r rows per anchor");
  }
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be > 0");
  require_unit_rows(anchors, "info_nce anchors");
  require_unit_rows(positives, "info_nce positives");
  require_unit_rows(negatives, "info_nce negatives");

  Eigen::Index r = negatives.rows() / n;
  InfoNceResult out;
  out.grad_anchors = Matrix::Zero(n, d);
  out.grad_positives = Matrix::Zero(n, d);

  Vector logits(r + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto block = negatives.middleRows(i * r, r);
    logits(0) = anchors.row(i).dot(positives.row(i)) / tau;
    logits.tail(r) = block * anchors.row(i).transpose() / tau;
    double lse = logsumexp(logits);
    out.loss += -logits(0) + lse;

    Vector w = (logits.array() - lse).exp();
    out.grad_anchors.row(i) =
        ((w(0) - 1.0) * positives.row(i) + w.tail(r).transpose() * block) / tau;
    out.grad_positives.row(i) = (w(0) - 1.0) * anchors.row(i) / tau;
  }
  require_finite(out.loss, "info_nce");
  return out;
}

ProtoNceResult proto_nce_term(const Eigen::Ref<const Matrix>& anchors,
                              const std::vector<int32_t>& anchor_ids,
                              const PrototypeSet& protos, int r, RngStream& rng) {
  Eigen::Index n = anchors.rows();
  if (anchor_ids.size() != static_cast<size_t>(n)) {
    throw ShapeMismatchError("proto_nce_term: one id per anchor required");
  }
  if (protos.num_levels() == 0) throw ConfigError("proto_nce_term: empty prototype set");
  if (anchors.cols() != protos.dim()) {
    throw DimMismatchError("proto_nce_term: anchor and centroid dims differ");
  }
  if (r < 1) throw ConfigError("proto_nce_term: r must be >= 1");
  require_unit_rows(anchors, "proto_nce_term anchors");

  int levels = protos.num_levels();
  ProtoNceResult out;
  out.grad_anchors = Matrix::Zero(n, anchors.cols());

  std::vector<int> pool;
  for (int m = 0; m < levels; ++m) {
    const PrototypeLevel& level = protos.levels[static_cast<size_t>(m)];
    int k = level.k;
    bool sample = (k - 1) > r;
    int cand = sample ? r + 1 : k;

    // Logits against every centroid at once; the candidate subset indexes in.
    Matrix scores = anchors * level.centroids.transpose();
    Vector logits(cand);
    std::vector<int> idx(static_cast<size_t>(cand));

    for (Eigen::Index i = 0; i < n; ++i) {
      int64_t id = anchor_ids[static_cast<size_t>(i)];
      if (id < 0 || id >= static_cast<int64_t>(level.assignments.size())) {
        throw MissingAssignmentError("proto_nce_term: anchor id " + std::to_string(id) +
                                     " has no assignment");
      }
      int assigned = level.assignments[static_cast<size_t>(id)];
      idx[0] = assigned;
      if (sample) {
        pool.clear();
        for (int c = 0; c < k; ++c) {
          if (c != assigned) pool.push_back(c);
        }
        for (int t = 0; t < r; ++t) {
          size_t j = static_cast<size_t>(t) +
                     static_cast<size_t>(rng.uniform_int(pool.size() - static_cast<size_t>(t)));
          std::swap(pool[static_cast<size_t>(t)], pool[j]);
          idx[static_cast<size_t>(t) + 1] = pool[static_cast<size_t>(t)];
        }
      } else {
        int w = 1;
        for (int c = 0; c < k; ++c) {
          if (c != assigned) idx[static_cast<size_t>(w++)] = c;
        }
      }
      for (int c = 0; c < cand; ++c) {
        logits(c) = scores(i, idx[static_cast<size_t>(c)]) / level.phi(idx[static_cast<size_t>(c)]);
      }
      double lse = logsumexp(logits.head(cand));
      out.loss += (-logits(0) + lse) / levels;

      Vector w = (logits.head(cand).array() - lse).exp();
      for (int c = 0; c < cand; ++c) {
        double coeff = (w(c) - (c == 0 ? 1.0 : 0.0)) /
                       (level.phi(idx[static_cast<size_t>(c)]) * levels);
        out.grad_anchors.row(i) += coeff * level.centroids.row(idx[static_cast<size_t>(c)]);
      }
    }
  }
  require_finite(out.loss, "proto_nce_term");
  return out;
}

PrototypePairs sample_pairs(const PrototypeSet& protos, int budget, RngStream& rng,
                            bool want_positives) {
  if (budget < 1) throw ConfigError("sample_pairs: budget must be >= 1");
  int levels = protos.num_levels();
  int n = protos.num_samples();
  PrototypePairs out;

  if (want_positives) {
    if (levels < 2) {
      throw SingleGranularityError("sample_pairs: positives need at least two levels");
    }
    auto assigned = [&](int level, int i) {
      return protos.levels[static_cast<size_t>(level)].assignments[static_cast<size_t>(i)];
    };
    int64_t combos = static_cast<int64_t>(levels) * (levels - 1) / 2;
    int64_t total = static_cast<int64_t>(n) * combos;
    if (total <= budget) {
      for (int i = 0; i < n; ++i) {
        for (int ma = 0; ma < levels; ++ma) {
          for (int mb = ma + 1; mb < levels; ++mb) {
            int pa = assigned(ma, i);
            int pb = assigned(mb, i);
            if (pa < 0 || pb < 0) continue;
            out.positives.push_back({ma, pa, mb, pb});
          }
        }
      }
    } else {
      int attempts = 0;
      int cap = budget * 64;
      while (static_cast<int>(out.positives.size()) < budget && attempts++ < cap) {
        int i = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        auto [ma, mb] = decode_pair(levels, static_cast<int64_t>(
                                                rng.uniform_int(static_cast<uint64_t>(combos))));
        int pa = assigned(ma, i);
        int pb = assigned(mb, i);
        if (pa < 0 || pb < 0) continue;
        out.positives.push_back({ma, pa, mb, pb});
      }
    }
  }

  std::vector<int64_t> per_level(static_cast<size_t>(levels), 0);
  int64_t total_within = 0;
  for (int m = 0; m < levels; ++m) {
    int64_t k = protos.levels[static_cast<size_t>(m)].k;
    per_level[static_cast<size_t>(m)] = k * (k - 1) / 2;
    total_within += per_level[static_cast<size_t>(m)];
  }
  if (total_within <= budget) {
    for (int m = 0; m < levels; ++m) {
      int k = protos.levels[static_cast<size_t>(m)].k;
      for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) out.within.push_back({m, a, b});
      }
    }
  } else {
    for (int t = 0; t < budget; ++t) {
      int64_t x = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(total_within)));
      int m = 0;
      while (x >= per_level[static_cast<size_t>(m)]) {
        x -= per_level[static_cast<size_t>(m)];
        ++m;
      }
      auto [a, b] = decode_pair(protos.levels[static_cast<size_t>(m)].k, x);
      out.within.push_back({m, a, b});
    }
  }
  return out;
}

namespace {

std::vector<Matrix> zero_like(const std::vector<Matrix>& centroids) {
  std::vector<Matrix> g;
  g.reserve(centroids.size());
  for (const auto& c : centroids) g.push_back(Matrix::Zero(c.rows(), c.cols()));
  return g;
}

}  // namespace

CentroidLossResult p_align(const std::vector<Matrix>& centroids,
                           const std::vector<PositivePair>& pairs, double s) {
  if (!(s >= 1.0)) throw ConfigError("p_align: s must be >= 1");
  CentroidLossResult out;
  out.grad_centroids = zero_like(centroids);
  if (pairs.empty()) return out;
  double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pr : pairs) {
    const auto ca = centroids[static_cast<size_t>(pr.level_a)].row(pr.proto_a);
    const auto cb = centroids[static_cast<size_t>(pr.level_b)].row(pr.proto_b);
    Eigen::RowVectorXd delta = ca - cb;
    double nd = delta.norm();
    out.loss += std::pow(nd, s) * inv;
    if (nd < 1e-30) continue;  // flat minimum of the power kernel
    double coeff = s * std::pow(nd, s - 2.0) * inv;
    out.grad_centroids[static_cast<size_t>(pr.level_a)].row(pr.proto_a) += coeff * delta;
    out.grad_centroids[static_cast<size_t>(pr.level_b)].row(pr.proto_b) -= coeff * delta;
  }
  require_finite(out.loss, "p_align");
  return out;
}

CentroidLossResult p_uniform(const std::vector<Matrix>& centroids,
                             const std::vector<LevelPair>& pairs, double t) {
  if (!(t > 0.0)) throw ConfigError("p_uniform: t must be > 0");
  CentroidLossResult out;
  out.grad_centroids = zero_like(centroids);
  if (pairs.empty()) return out;
  double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pr : pairs) {
    const auto ca = centroids[static_cast<size_t>(pr.level)].row(pr.proto_a);
    const auto cb = centroids[static_cast<size_t>(pr.level)].row(pr.proto_b);
    Eigen::RowVectorXd delta = ca - cb;
    double e = std::exp(-t * delta.squaredNorm());
    out.loss += e * inv;
    double coeff = -2.0 * t * e * inv;
    out.grad_centroids[static_cast<size_t>(pr.level)].row(pr.proto_a) += coeff * delta;
    out.grad_centroids[static_cast<size_t>(pr.level)].row(pr.proto_b) -= coeff * delta;
  }
  require_finite(out.loss, "p_uniform");
  return out;
}

CentroidLossResult p_corr(const std::vector<Matrix>& centroids,
                          const std::vector<LevelPair>& pairs) {
  CentroidLossResult out;
  out.grad_centroids = zero_like(centroids);
  if (pairs.empty()) return out;
  double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pr : pairs) {
    const auto ca = centroids[static_cast<size_t>(pr.level)].row(pr.proto_a);
    const auto cb = centroids[static_cast<size_t>(pr.level)].row(pr.proto_b);
    Vector la = ca.transpose();
    Vector lb = cb.transpose();
    la.array() -= logsumexp(la);
    lb.array() -= logsumexp(lb);
    Vector p = la.array().exp();
    Vector q = lb.array().exp();
    // -KL(p||q) = sum p (log q - log p)
    out.loss += p.dot(lb - la) * inv;

    Vector g = lb - la - Vector::Ones(la.size());
    Vector da = p.array() * (g.array() - p.dot(g));
    Vector db = p - q;
    out.grad_centroids[static_cast<size_t>(pr.level)].row(pr.proto_a) += inv * da.transpose();
    out.grad_centroids[static_cast<size_t>(pr.level)].row(pr.proto_b) += inv * db.transpose();
  }
  require_finite(out.loss, "p_corr");
  return out;
}

SoftPrototypes build_soft_prototypes(const Eigen::Ref<const Matrix>& anchors,
                                     const std::vector<int32_t>& anchor_ids,
                                     const PrototypeSet& global) {
  Eigen::Index n = anchors.rows();
  if (anchor_ids.size() != static_cast<size_t>(n)) {
    throw ShapeMismatchError("build_soft_prototypes: one id per anchor required");
  }
  SoftPrototypes soft;
  for (const auto& glevel : global.levels) {
    // Stable local ids: ascending order of the global cluster ids present.
    std::map<int32_t, std::vector<int>> by_cluster;
    for (Eigen::Index i = 0; i < n; ++i) {
      int64_t id = anchor_ids[static_cast<size_t>(i)];
      if (id < 0 || id >= static_cast<int64_t>(glevel.assignments.size())) {
        throw MissingAssignmentError("build_soft_prototypes: anchor id " +
                                     std::to_string(id) + " has no assignment");
      }
      by_cluster[glevel.assignments[static_cast<size_t>(id)]].push_back(static_cast<int>(i));
    }

    PrototypeLevel local;
    std::vector<std::vector<int>> members;
    std::vector<double> norms;
    std::vector<int32_t> assign(static_cast<size_t>(n), -1);
    std::vector<Eigen::RowVectorXd> rows;
    for (const auto& [gid, batch_rows] : by_cluster) {
      Eigen::RowVectorXd u = Eigen::RowVectorXd::Zero(anchors.cols());
      for (int i : batch_rows) u += anchors.row(i);
      double norm = u.norm();
      if (norm < 1e-12) continue;  // degenerate sum, drop the cluster
      int local_id = static_cast<int>(rows.size());
      rows.push_back(u / norm);
      norms.push_back(norm);
      members.push_back(batch_rows);
      for (int i : batch_rows) assign[static_cast<size_t>(i)] = local_id;
    }

    local.k = static_cast<int>(rows.size());
    local.centroids.resize(local.k, anchors.cols());
    for (int j = 0; j < local.k; ++j) local.centroids.row(j) = rows[static_cast<size_t>(j)];
    local.assignments = std::move(assign);
    local.phi = Vector::Ones(local.k);

    soft.set.levels.push_back(std::move(local));
    soft.members.push_back(std::move(members));
    soft.sum_norms.push_back(Eigen::Map<Vector>(norms.data(), static_cast<Eigen::Index>(norms.size())));
  }
  return soft;
}

void add_soft_centroid_grad(const SoftPrototypes& soft,
                            const std::vector<Matrix>& grad_centroids,
                            Matrix& grad_anchors) {
  if (grad_centroids.size() != soft.set.levels.size()) {
    throw ShapeMismatchError("add_soft_centroid_grad: level count mismatch");
  }
  for (size_t m = 0; m < grad_centroids.size(); ++m) {
    const PrototypeLevel& level = soft.set.levels[m];
    for (int j = 0; j < level.k; ++j) {
      const auto g = grad_centroids[m].row(j);
      if (g.isZero(0.0)) continue;
      const auto c = level.centroids.row(j);
      Eigen::RowVectorXd du = (g - c * c.dot(g)) / soft.sum_norms[m](j);
      for (int i : soft.members[m][static_cast<size_t>(j)]) {
        grad_anchors.row(i) += du;
      }
    }
  }
}

TotalLossResult total_loss(const Eigen::Ref<const Matrix>& anchors,
                           const Eigen::Ref<const Matrix>& positives,
                           const Eigen::Ref<const Matrix>& negatives,
                           const std::vector<int32_t>& anchor_ids,
                           const PrototypeSet* protos, const LossConfig& cfg,
                           RngStream& pair_rng, RngStream& neg_rng) {
  TotalLossResult out;
  InfoNceResult inst = info_nce(anchors, positives, negatives, cfg.tau);
  out.info_nce = inst.loss;
  out.grad_anchors = std::move(inst.grad_anchors);
  out.grad_positives = std::move(inst.grad_positives);

  if (protos != nullptr) {
    ProtoNceResult proto = proto_nce_term(anchors, anchor_ids, *protos, cfg.r, neg_rng);
    out.proto_nce = proto.loss;
    out.grad_anchors += proto.grad_anchors;

    bool any_pair_term = cfg.alpha != 0.0 || cfg.beta != 0.0 || cfg.gamma != 0.0;
    if (any_pair_term) {
      if (cfg.soft_centroids) {
        SoftPrototypes soft = build_soft_prototypes(anchors, anchor_ids, *protos);
        PrototypePairs pairs =
            sample_pairs(soft.set, cfg.pair_budget, pair_rng, cfg.alpha != 0.0);
        std::vector<Matrix> cents;
        for (const auto& level : soft.set.levels) cents.push_back(level.centroids);
        if (cfg.alpha != 0.0) {
          CentroidLossResult a = p_align(cents, pairs.positives, cfg.s);
          out.align = a.loss;
          for (auto& g : a.grad_centroids) g *= cfg.alpha;
          add_soft_centroid_grad(soft, a.grad_centroids, out.grad_anchors);
        }
        if (cfg.beta != 0.0) {
          CentroidLossResult u = p_uniform(cents, pairs.within, cfg.t);
          out.uniform = u.loss;
          for (auto& g : u.grad_centroids) g *= cfg.beta;
          add_soft_centroid_grad(soft, u.grad_centroids, out.grad_anchors);
        }
        if (cfg.gamma != 0.0) {
          CentroidLossResult c = p_corr(cents, pairs.within);
          out.corr = c.loss;
          for (auto& g : c.grad_centroids) g *= cfg.gamma;
          add_soft_centroid_grad(soft, c.grad_centroids, out.grad_anchors);
        }
      } else {
        PrototypePairs pairs = sample_pairs(*protos, cfg.pair_budget, pair_rng,
                                            cfg.alpha != 0.0);
        std::vector<Matrix> cents;
        for (const auto& level : protos->levels) cents.push_back(level.centroids);
        if (cfg.alpha != 0.0) out.align = p_align(cents, pairs.positives, cfg.s).loss;
        if (cfg.beta != 0.0) out.uniform = p_uniform(cents, pairs.within, cfg.t).loss;
        if (cfg.gamma != 0.0) out.corr = p_corr(cents, pairs.within).loss;
      }
    }
  }

  out.total = out.info_nce + out.proto_nce;
  if (cfg.alpha != 0.0) out.total += cfg.alpha * out.align;
  if (cfg.beta != 0.0) out.total += cfg.beta * out.uniform;
  if (cfg.gamma != 0.0) out.total += cfg.gamma * out.corr;
  require_finite(out.total, "total_loss");
  return out;
}

}  // namespace pauc
