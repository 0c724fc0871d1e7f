#include "pauc/protoclust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "binio.hpp"

namespace pauc {

namespace {

constexpr uint64_t kKmeansStream = 0x6b6d65616e73ull;
constexpr uint64_t kLevelStream = 0x70726f746full;

// Lexicographic row order with index tiebreak. Clustering runs over rows in
// this order so results do not depend on how the caller permuted its data.
std::vector<int> canonical_order(const Eigen::Ref<const Matrix>& pts) {
  std::vector<int> order(static_cast<size_t>(pts.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      if (pts(a, j) < pts(b, j)) return true;
      if (pts(a, j) > pts(b, j)) return false;
    }
    return a < b;
  });
  return order;
}

struct AssignResult {
  std::vector<int32_t> assign;
  Vector dist2;  // squared distance to the assigned centroid
  double inertia = 0.0;
};

// Argmin by the gram expansion, distances recomputed directly for the chosen
// centroid so the reported objective is exact and comparison-stable.
AssignResult assign_points(const Matrix& p, const Matrix& c) {
  Eigen::Index n = p.rows();
  Eigen::Index k = c.rows();
  Matrix g = p * c.transpose();
  Vector cn2 = c.rowwise().squaredNorm();
  AssignResult out;
  out.assign.resize(static_cast<size_t>(n));
  out.dist2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double bestv = cn2(0) - 2.0 * g(i, 0);
    for (Eigen::Index j = 1; j < k; ++j) {
      double v = cn2(j) - 2.0 * g(i, j);
      if (v < bestv) {
        bestv = v;
        best = static_cast<int>(j);
      }
    }
    out.assign[static_cast<size_t>(i)] = best;
    out.dist2(i) = (p.row(i) - c.row(best)).squaredNorm();
    out.inertia += out.dist2(i);
  }
  return out;
}

Matrix kmeanspp_init(const Matrix& p, int k, RngStream& rng) {
  Eigen::Index n = p.rows();
  Matrix c(k, p.cols());
  std::vector<char> chosen(static_cast<size_t>(n), 0);

  Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_int(static_cast<uint64_t>(n)));
  c.row(0) = p.row(first);
  chosen[static_cast<size_t>(first)] = 1;
  Vector d2 = (p.rowwise() - c.row(0)).rowwise().squaredNorm();

  for (int t = 1; t < k; ++t) {
    double total = d2.sum();
    Eigen::Index idx = -1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double cum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2(i);
        if (cum > u) {
          idx = i;
          break;
        }
      }
      if (idx < 0) idx = n - 1;
    }
    if (idx < 0 || chosen[static_cast<size_t>(idx)]) {
      // All remaining mass sits on duplicates; take the lowest unchosen row.
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!chosen[static_cast<size_t>(i)]) {
          idx = i;
          break;
        }
      }
    }
    chosen[static_cast<size_t>(idx)] = 1;
    c.row(t) = p.row(idx);
    d2 = d2.cwiseMin((p.rowwise() - c.row(t)).rowwise().squaredNorm());
  }
  return c;
}

void check_monotone(double current, double previous) {
  if (current > previous * (1.0 + 1e-12) + 1e-12) {
    throw Error("kmeans: objective increased from " + std::to_string(previous) +
                " to " + std::to_string(current));
  }
}

}  // namespace

KmeansResult kmeans(const Eigen::Ref<const Matrix>& points, int k, uint64_t seed,
                    int max_iters) {
  Eigen::Index n = points.rows();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k) {
    throw TooFewPointsError("kmeans: " + std::to_string(n) + " points for k = " +
                            std::to_string(k));
  }
  if (max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");

  std::vector<int> order = canonical_order(points);
  Matrix p(n, points.cols());
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) = points.row(order[static_cast<size_t>(i)]);

  RngStream rng(seed, kKmeansStream);
  Matrix c = kmeanspp_init(p, k, rng);

  double prev_inertia = std::numeric_limits<double>::infinity();
  std::vector<int32_t> prev_assign;
  AssignResult cur;
  int iterations = 0;

  for (int iter = 0; iter < max_iters; ++iter) {
    cur = assign_points(p, c);
    check_monotone(cur.inertia, prev_inertia);
    prev_inertia = cur.inertia;
    iterations = iter + 1;
    if (iter > 0 && cur.assign == prev_assign) break;
    prev_assign = cur.assign;

    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int32_t a : cur.assign) counts[static_cast<size_t>(a)]++;
    Matrix sums = Matrix::Zero(k, p.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(cur.assign[static_cast<size_t>(i)]) += p.row(i);
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] > 0) {
        c.row(j) = sums.row(j) / counts[static_cast<size_t>(j)];
      }
    }

    // Reseed empty clusters from the point farthest to its own new centroid.
    // Recomputing the distances after every theft keeps the repair exact;
    // empties are rare so the extra passes cost little.
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] > 0) continue;
      Eigen::Index far = 0;
      double fard = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int owner = cur.assign[static_cast<size_t>(i)];
        if (counts[static_cast<size_t>(owner)] <= 1) continue;
        double d = (p.row(i) - c.row(owner)).squaredNorm();
        if (d > fard) {
          fard = d;
          far = i;
        }
      }
      if (fard < 0.0) break;  // nothing stealable, leave centroid in place
      int old = cur.assign[static_cast<size_t>(far)];
      cur.assign[static_cast<size_t>(far)] = static_cast<int32_t>(j);
      counts[static_cast<size_t>(old)]--;
      counts[static_cast<size_t>(j)] = 1;
      sums.row(old) -= p.row(far);
      c.row(old) = sums.row(old) / counts[static_cast<size_t>(old)];
      c.row(j) = p.row(far);
      prev_assign = cur.assign;
    }
  }

  // Final pass keeps the nearest-centroid invariant after the last update.
  AssignResult fin = assign_points(p, c);
  check_monotone(fin.inertia, prev_inertia);

  KmeansResult result;
  result.centroids = std::move(c);
  result.assignments.resize(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    result.assignments[static_cast<size_t>(order[static_cast<size_t>(i)])] =
        fin.assign[static_cast<size_t>(i)];
  }
  result.inertia = fin.inertia;
  result.iterations = iterations;
  return result;
}

double concentration(const Eigen::Ref<const Matrix>& members,
                     const Eigen::Ref<const Vector>& centroid) {
  if (members.rows() == 0) throw EmptyPrototypeError("concentration: no members");
  if (members.cols() != centroid.size()) {
    throw DimMismatchError("concentration: member and centroid dims differ");
  }
  double z = static_cast<double>(members.rows());
  double total = (members.rowwise() - centroid.transpose()).rowwise().norm().sum();
  return total / (z * std::log(z + 10.0));
}

PrototypeSet spawn_prototypes(const Eigen::Ref<const Matrix>& embeddings,
                              const ClusterSpec& spec, double phi_target) {
  if (spec.granularities.empty()) throw ConfigError("spawn_prototypes: no granularities");
  if (!(phi_target > 0.0)) throw ConfigError("spawn_prototypes: phi_target must be > 0");
  std::set<int> uniq(spec.granularities.begin(), spec.granularities.end());
  if (uniq.size() != spec.granularities.size()) {
    throw ConfigError("spawn_prototypes: granularities must be distinct");
  }
  Eigen::Index n = embeddings.rows();
  for (int k : spec.granularities) {
    if (k < 2 || k > n) {
      throw ConfigError("spawn_prototypes: granularity " + std::to_string(k) +
                        " outside [2, " + std::to_string(n) + "]");
    }
  }

  PrototypeSet set;
  for (size_t m = 0; m < spec.granularities.size(); ++m) {
    int k = spec.granularities[m];
    uint64_t level_seed = derive_seed(spec.seed, kLevelStream, m);
    KmeansResult km = kmeans(embeddings, k, level_seed, spec.max_iters);

    PrototypeLevel level;
    level.k = k;
    level.assignments = km.assignments;
    level.centroids.resize(k, embeddings.cols());
    level.phi.resize(k);

    std::vector<std::vector<int>> members(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
      members[static_cast<size_t>(km.assignments[static_cast<size_t>(i)])].push_back(
          static_cast<int>(i));
    }

    Vector raw = Vector::Zero(k);
    for (int j = 0; j < k; ++j) {
      const auto& rows = members[static_cast<size_t>(j)];
      Eigen::RowVectorXd cen = km.centroids.row(j);
      double norm = cen.norm();
      if (norm < 1e-12) {
        // Mean of antipodal members collapsed; fall back to a member point.
        if (!rows.empty()) {
          cen = embeddings.row(rows.front());
        } else {
          cen.setZero();
          cen(0) = 1.0;
        }
        norm = cen.norm();
      }
      level.centroids.row(j) = cen / norm;
      if (!rows.empty()) {
        Matrix mem(static_cast<Eigen::Index>(rows.size()), embeddings.cols());
        for (size_t t = 0; t < rows.size(); ++t) mem.row(static_cast<Eigen::Index>(t)) = embeddings.row(rows[t]);
        raw(j) = concentration(mem, level.centroids.row(j).transpose());
      }
    }

    double mean = raw.mean();
    double scale = mean > 0.0 ? phi_target / mean : 1.0;
    double lo = phi_target / 3.0;
    double hi = 3.0 * phi_target;
    for (int j = 0; j < k; ++j) {
      level.phi(j) = std::clamp(raw(j) * scale, lo, hi);
    }
    set.levels.push_back(std::move(level));
  }
  return set;
}

void save_prototypes(const PrototypeSet& set, const std::string& path) {
  binio::Writer w(path);
  w.magic("PPRT");
  w.u8(1);
  w.u32(static_cast<uint32_t>(set.levels.size()));
  for (const auto& level : set.levels) {
    w.u32(static_cast<uint32_t>(level.k));
    w.u32(static_cast<uint32_t>(level.centroids.cols()));
    for (Eigen::Index i = 0; i < level.centroids.rows(); ++i) {
      for (Eigen::Index j = 0; j < level.centroids.cols(); ++j) {
        w.f32(static_cast<float>(level.centroids(i, j)));
      }
    }
    w.u32(static_cast<uint32_t>(level.assignments.size()));
    for (int32_t a : level.assignments) w.u32(static_cast<uint32_t>(a));
    for (Eigen::Index j = 0; j < level.phi.size(); ++j) {
      w.f32(static_cast<float>(level.phi(j)));
    }
  }
  w.close();
}

PrototypeSet load_prototypes(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("PPRT");
  uint8_t version = r.u8();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  uint32_t num_levels = r.u32();
  if (num_levels == 0 || num_levels > 1024) {
    throw FormatError(path + ": implausible level count " + std::to_string(num_levels));
  }
  PrototypeSet set;
  int64_t expected_n = -1;
  for (uint32_t m = 0; m < num_levels; ++m) {
    uint64_t k = r.u32();
    uint64_t d = r.u32();
    r.checked_count(k, d);
    PrototypeLevel level;
    level.k = static_cast<int>(k);
    level.centroids.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
    for (uint64_t i = 0; i < k; ++i) {
      for (uint64_t j = 0; j < d; ++j) {
        level.centroids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f32();
      }
    }
    uint32_t n = r.u32();
    if (expected_n < 0) expected_n = n;
    if (expected_n != n) throw FormatError(path + ": levels disagree on sample count");
    level.assignments.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
      uint32_t a = r.u32();
      if (a >= k) throw FormatError(path + ": assignment out of range");
      level.assignments[i] = static_cast<int32_t>(a);
    }
    level.phi.resize(static_cast<Eigen::Index>(k));
    for (uint64_t j = 0; j < k; ++j) level.phi(static_cast<Eigen::Index>(j)) = r.f32();
    set.levels.push_back(std::move(level));
  }
  r.expect_eof();
  return set;
}

}  // namespace pauc
