#include "pauc/nemd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace pauc {

namespace {

void validate_problem(const TransportProblem& pb) {
  Eigen::Index np = pb.source.rows();
  Eigen::Index nq = pb.target.rows();
  if (np == 0 || nq == 0) throw TooFewPointsError("transport: empty point cloud");
  if (pb.source.cols() != pb.target.cols()) {
    throw DimMismatchError("transport: cloud dims differ");
  }
  if (pb.source_weights.size() != np || pb.target_weights.size() != nq) {
    throw ShapeMismatchError("transport: weight lengths do not match clouds");
  }
  if (pb.cost.rows() != np || pb.cost.cols() != nq) {
    throw ShapeMismatchError("transport: cost shape mismatch");
  }
  if (!pb.cost.allFinite()) throw NonFiniteEvaluationError("transport: non-finite cost");
  for (const Vector* w : {&pb.source_weights, &pb.target_weights}) {
    if ((w->array() <= 0.0).any()) throw Error("transport: weights must be positive");
    if (std::abs(w->sum() - 1.0) > 1e-9) throw Error("transport: weights must sum to 1");
  }
}

Matrix pairwise_euclidean(const Eigen::Ref<const Matrix>& a,
                          const Eigen::Ref<const Matrix>& b) {
  Matrix c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    c.row(i) = (b.rowwise() - a.row(i)).rowwise().norm().transpose();
  }
  return c;
}

double median_cost(const Matrix& c) {
  std::vector<double> v(c.data(), c.data() + c.size());
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

}  // namespace

TransportProblem make_problem(const Eigen::Ref<const Matrix>& a,
                              const Eigen::Ref<const Matrix>& b) {
  TransportProblem pb;
  pb.source = a;
  pb.target = b;
  pb.source_weights = Vector::Constant(a.rows(), 1.0 / static_cast<double>(a.rows()));
  pb.target_weights = Vector::Constant(b.rows(), 1.0 / static_cast<double>(b.rows()));
  pb.cost = pairwise_euclidean(a, b);
  validate_problem(pb);
  return pb;
}

TransportProblem build_problem(const PrototypeSet& protos,
                               const Eigen::Ref<const Matrix>& embeddings, int level,
                               int proto_p, int proto_q, int subsample, RngStream& rng) {
  if (level < 0 || level >= protos.num_levels()) {
    throw ConfigError("build_problem: level out of range");
  }
  if (subsample < 1) throw ConfigError("build_problem: subsample must be >= 1");
  const PrototypeLevel& lv = protos.levels[static_cast<size_t>(level)];
  if (static_cast<Eigen::Index>(lv.assignments.size()) != embeddings.rows()) {
    throw ShapeMismatchError("build_problem: assignments do not match embeddings");
  }
  auto collect = [&](int proto) {
    std::vector<int> rows;
    for (size_t i = 0; i < lv.assignments.size(); ++i) {
      if (lv.assignments[i] == proto) rows.push_back(static_cast<int>(i));
    }
    if (rows.empty()) {
      throw EmptyPrototypeError("build_problem: prototype " + std::to_string(proto) +
                                " has no members");
    }
    if (static_cast<int>(rows.size()) > subsample) {
      for (int t = 0; t < subsample; ++t) {
        size_t j = static_cast<size_t>(t) +
                   static_cast<size_t>(rng.uniform_int(rows.size() - static_cast<size_t>(t)));
        std::swap(rows[static_cast<size_t>(t)], rows[j]);
      }
      rows.resize(static_cast<size_t>(subsample));
    }
    Matrix cloud(static_cast<Eigen::Index>(rows.size()), embeddings.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
      cloud.row(static_cast<Eigen::Index>(i)) = embeddings.row(rows[i]);
    }
    return cloud;
  };
  Matrix a = collect(proto_p);
  Matrix b = collect(proto_q);
  return make_problem(a, b);
}

TransportResult sinkhorn(const TransportProblem& pb, const SinkhornOptions& opt) {
  Vector f = Vector::Zero(pb.source.rows());
  Vector g = Vector::Zero(pb.target.rows());
  return sinkhorn(pb, opt, f, g);
}

TransportResult sinkhorn(const TransportProblem& pb, const SinkhornOptions& opt,
                         Vector& f, Vector& g) {
  validate_problem(pb);
  if (!(opt.eps > 0.0)) throw ConfigError("sinkhorn: eps must be > 0");
  if (opt.max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
  Eigen::Index np = pb.source.rows();
  Eigen::Index nq = pb.target.rows();
  Vector la = pb.source_weights.array().log();
  Vector lb = pb.target_weights.array().log();
  double eps = opt.eps;

  TransportResult res;
  res.eps_final = eps;
  Matrix plan(np, nq);
  auto rebuild_plan = [&]() {
    for (Eigen::Index i = 0; i < np; ++i) {
      plan.row(i) =
          ((f(i) + g.array() - pb.cost.row(i).transpose().array()) / eps).exp();
    }
  };

  for (int it = 0; it < opt.max_iters; ++it) {
    // f update: f_i = eps la_i - eps lse_j((g_j - C_ij) / eps)
    for (Eigen::Index i = 0; i < np; ++i) {
      Vector v = (g.array() - pb.cost.row(i).transpose().array()) / eps;
      f(i) = eps * la(i) - eps * logsumexp(v);
    }
    for (Eigen::Index j = 0; j < nq; ++j) {
      Vector v = (f.array() - pb.cost.col(j).array()) / eps;
      g(j) = eps * lb(j) - eps * logsumexp(v);
    }
    rebuild_plan();
    double row_err = (plan.rowwise().sum() - pb.source_weights).cwiseAbs().maxCoeff();
    double col_err = (plan.colwise().sum().transpose() - pb.target_weights).cwiseAbs().maxCoeff();
    res.marginal_error = std::max(row_err, col_err);
    res.iterations = it + 1;
    if (res.marginal_error < opt.tol) {
      res.converged = true;
      break;
    }
  }
  res.plan = std::move(plan);
  res.cost = (res.plan.array() * pb.cost.array()).sum();
  if (!std::isfinite(res.cost)) {
    throw NonFiniteEvaluationError("sinkhorn: non-finite transport cost");
  }
  return res;
}

TransportResult sinkhorn_annealed(const TransportProblem& pb, const AnnealOptions& opt) {
  validate_problem(pb);
  if (!(opt.start_scale > 0.0) || !(opt.factor > 0.0) || opt.factor >= 1.0) {
    throw ConfigError("sinkhorn_annealed: need start_scale > 0 and factor in (0, 1)");
  }
  if (!(opt.floor_scale > 0.0) || opt.floor_scale > opt.start_scale) {
    throw ConfigError("sinkhorn_annealed: floor_scale must be in (0, start_scale]");
  }

  double med = median_cost(pb.cost);
  if (med <= 0.0) med = pb.cost.maxCoeff();
  if (med <= 0.0) {
    // All distances are zero; the product coupling is optimal at cost zero.
    TransportResult res;
    res.plan = pb.source_weights * pb.target_weights.transpose();
    res.converged = true;
    return res;
  }

  double eps = opt.start_scale * med;
  double floor = opt.floor_scale * med;
  Vector f = Vector::Zero(pb.source.rows());
  Vector g = Vector::Zero(pb.target.rows());
  SinkhornOptions level{eps, opt.level_iters, opt.tol};
  TransportResult res;
  for (;;) {
    level.eps = eps;
    res = sinkhorn(pb, level, f, g);
    res.eps_final = eps;
    if (eps <= floor) break;
    eps = std::max(eps * opt.factor, floor);
  }
  return res;
}

namespace {

// Assignment by shortest augmenting paths with potentials, O(n^3).
double hungarian_cost(const Matrix& cost) {
  int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[static_cast<size_t>(j)] - 1, j - 1);
  return total;
}

}  // namespace

double exact_emd(const TransportProblem& pb) {
  validate_problem(pb);
  Eigen::Index n = pb.source.rows();
  if (pb.target.rows() != n) {
    throw UnsupportedInstanceError("exact_emd: clouds must be the same size");
  }
  if (n > 64) throw UnsupportedInstanceError("exact_emd: instance too large");
  double uniform = 1.0 / static_cast<double>(n);
  for (const Vector* w : {&pb.source_weights, &pb.target_weights}) {
    if (((w->array() - uniform).abs() > 1e-9).any()) {
      throw UnsupportedInstanceError("exact_emd: weights must be uniform");
    }
  }
  return hungarian_cost(pb.cost) / static_cast<double>(n);
}

NemdStats nemd_stats(const PrototypeSet& protos,
                     const Eigen::Ref<const Matrix>& embeddings, int level,
                     const AnnealOptions& opt, int pair_budget, int subsample,
                     RngStream& rng) {
  if (level < 0 || level >= protos.num_levels()) {
    throw ConfigError("nemd_stats: level out of range");
  }
  if (pair_budget < 1) throw ConfigError("nemd_stats: pair_budget must be >= 1");
  const PrototypeLevel& lv = protos.levels[static_cast<size_t>(level)];

  std::vector<char> has_members(static_cast<size_t>(lv.k), 0);
  for (int32_t a : lv.assignments) has_members[static_cast<size_t>(a)] = 1;
  std::vector<int> alive;
  for (int j = 0; j < lv.k; ++j) {
    if (has_members[static_cast<size_t>(j)]) alive.push_back(j);
  }
  int ka = static_cast<int>(alive.size());
  if (ka < 2) {
    throw TooFewPointsError("nemd_stats: need at least two non-empty prototypes");
  }

  std::vector<std::pair<int, int>> chosen;
  int64_t total = static_cast<int64_t>(ka) * (ka - 1) / 2;
  if (total <= pair_budget) {
    for (int a = 0; a < ka; ++a) {
      for (int b = a + 1; b < ka; ++b) chosen.push_back({alive[static_cast<size_t>(a)], alive[static_cast<size_t>(b)]});
    }
  } else {
    std::set<std::pair<int, int>> seen;
    int attempts = 0;
    int cap = pair_budget * 64;
    while (static_cast<int>(chosen.size()) < pair_budget && attempts++ < cap) {
      int a = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(ka)));
      int b = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(ka)));
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      auto pr = std::make_pair(alive[static_cast<size_t>(a)], alive[static_cast<size_t>(b)]);
      if (seen.insert(pr).second) chosen.push_back(pr);
    }
  }

  NemdStats stats;
  double sum = 0.0, sum2 = 0.0, eps_sum = 0.0;
  int converged = 0;
  for (const auto& [p, q] : chosen) {
    TransportProblem pb = build_problem(protos, embeddings, level, p, q, subsample, rng);
    TransportResult res = sinkhorn_annealed(pb, opt);
    sum += res.cost;
    sum2 += res.cost * res.cost;
    eps_sum += res.eps_final;
    if (res.converged) converged++;
  }
  int count = static_cast<int>(chosen.size());
  stats.pairs_evaluated = count;
  stats.mean = sum / count;
  stats.stddev = std::sqrt(std::max(0.0, sum2 / count - stats.mean * stats.mean));
  stats.eps_final = eps_sum / count;
  stats.converged_fraction = static_cast<double>(converged) / count;
  return stats;
}

double nemd_score(const PrototypeSet& protos,
                  const Eigen::Ref<const Matrix>& embeddings, int level,
                  const AnnealOptions& opt, int pair_budget, int subsample,
                  RngStream& rng) {
  return nemd_stats(protos, embeddings, level, opt, pair_budget, subsample, rng).mean;
}

}  // namespace pauc
