#include "tenslink/two_way.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tenslink {

namespace {

constexpr double kSmoothEps = 1e-12;  // smoothing of the group-l2 penalty

void check_two_way_args(const Eigen::MatrixXd& x, std::size_t r) {
  if (r < 1) throw std::invalid_argument("component count must be at least 1");
  if (static_cast<Eigen::Index>(r) > std::min(x.rows(), x.cols()))
    throw std::invalid_argument("component count exceeds matrix rank bound");
}

// Orders components by descending source-column energy, in place.
void order_by_energy(Eigen::MatrixXd& mixing, Eigen::MatrixXd& sources) {
  const Eigen::Index r = mixing.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd energy(r);
  for (Eigen::Index c = 0; c < r; ++c)
    energy(c) = mixing.col(c).squaredNorm() * sources.col(c).squaredNorm();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return energy(a) > energy(b); });
  Eigen::MatrixXd m2(mixing.rows(), r), s2(sources.rows(), r);
  for (Eigen::Index c = 0; c < r; ++c) {
    m2.col(c) = mixing.col(order[static_cast<std::size_t>(c)]);
    s2.col(c) = sources.col(order[static_cast<std::size_t>(c)]);
  }
  mixing = std::move(m2);
  sources = std::move(s2);
}

void canonical_column_signs(Eigen::MatrixXd& primary, Eigen::MatrixXd& compensated) {
  for (Eigen::Index c = 0; c < primary.cols(); ++c) {
    Eigen::Index imax;
    primary.col(c).cwiseAbs().maxCoeff(&imax);
    if (primary(imax, c) < 0) {
      primary.col(c) = -primary.col(c);
      compensated.col(c) = -compensated.col(c);
    }
  }
}

// Joint approximate diagonalization of symmetric matrices by Givens sweeps.
Eigen::MatrixXd joint_diagonalize(std::vector<Eigen::MatrixXd>& ms) {
  const Eigen::Index n = ms.front().rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    double max_sin = 0.0;
    for (Eigen::Index p = 0; p < n - 1; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        // 2x2 subproblem: the rotation comes from the dominant eigenvector of
        // G = Σ_k h_k h_kᵀ with h_k = (m_pp - m_qq, m_pq + m_qp).
        double g11 = 0, g12 = 0, g22 = 0;
        for (const auto& m : ms) {
          double hu = m(p, p) - m(q, q);
          double hv = m(p, q) + m(q, p);
          g11 += hu * hu;
          g12 += hu * hv;
          g22 += hv * hv;
        }
        double diff = g11 - g22;
        double root = std::sqrt(diff * diff + 4.0 * g12 * g12);
        double xx = diff + root;
        double yy = 2.0 * g12;
        double norm = std::sqrt(xx * xx + yy * yy);
        if (norm < 1e-300) continue;
        double rr = norm;  // |(x, y)|
        double c = std::sqrt((xx + rr) / (2.0 * rr));
        double s = yy / std::sqrt(2.0 * rr * (xx + rr));
        if (std::abs(s) <= 1e-12) continue;
        max_sin = std::max(max_sin, std::abs(s));
        for (auto& m : ms) {
          // M <- GᵀMG for the Givens rotation G over (p, q).
          Eigen::VectorXd mp = m.col(p), mq = m.col(q);
          m.col(p) = c * mp + s * mq;
          m.col(q) = -s * mp + c * mq;
          Eigen::RowVectorXd rp = m.row(p), rq = m.row(q);
          m.row(p) = c * rp + s * rq;
          m.row(q) = -s * rp + c * rq;
        }
        Eigen::VectorXd vp = v.col(p), vq = v.col(q);
        v.col(p) = c * vp + s * vq;
        v.col(q) = -s * vp + c * vq;
      }
    if (max_sin < 1e-12) break;
  }
  return v;
}

}  // namespace

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double cutoff) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  if (sv.size() == 0) return m.transpose();
  double threshold = cutoff * sv(0);
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > threshold) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

TwoWayFactorization pca(const Eigen::MatrixXd& x, std::size_t r) {
  check_two_way_args(x, r);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index rr = static_cast<Eigen::Index>(r);

  TwoWayFactorization out;
  out.method = "pca";
  out.mixing = svd.matrixU().leftCols(rr);
  out.sources = svd.matrixV().leftCols(rr) *
                svd.singularValues().head(rr).asDiagonal();
  canonical_column_signs(out.mixing, out.sources);
  out.objective_trace.push_back(
      (x - out.mixing * out.sources.transpose()).squaredNorm());
  return out;
}

TwoWayFactorization nmf(const Eigen::MatrixXd& x, std::size_t r,
                        const NmfOptions& options) {
  check_two_way_args(x, r);
  if (x.minCoeff() < 0)
    throw std::invalid_argument("nonnegative factorization needs nonnegative input");
  if (options.sparsity < 0)
    throw std::invalid_argument("sparsity weight must be nonnegative");

  const Eigen::Index rows = x.rows(), cols = x.cols(),
                     rr = static_cast<Eigen::Index>(r);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> uni(0.5, 1.5);

  // Nonnegative spectral init: per component keep the dominant sign pattern
  // of the singular pair, then lift exact zeros to break support lock-in.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::MatrixXd a(rows, rr), b(cols, rr);
  const double fill = std::max(x.mean(), 1e-12) / 100.0;
  for (Eigen::Index c = 0; c < rr; ++c) {
    if (c < svd.singularValues().size() && svd.singularValues()(c) > 0) {
      Eigen::VectorXd u = svd.matrixU().col(c), v = svd.matrixV().col(c);
      Eigen::VectorXd up = u.cwiseMax(0.0), un = (-u).cwiseMax(0.0);
      Eigen::VectorXd vp = v.cwiseMax(0.0), vn = (-v).cwiseMax(0.0);
      double pos = up.norm() * vp.norm(), neg = un.norm() * vn.norm();
      Eigen::VectorXd ua = pos >= neg ? up : un;
      Eigen::VectorXd va = pos >= neg ? vp : vn;
      double mass = std::max(pos, neg);
      if (mass > 0) {
        double s = std::sqrt(svd.singularValues()(c) * mass);
        a.col(c) = s * ua / ua.norm();
        b.col(c) = s * va / va.norm();
      } else {
        a.col(c).setZero();
        b.col(c).setZero();
      }
    } else {
      a.col(c).setZero();
      b.col(c).setZero();
    }
    for (Eigen::Index i = 0; i < rows; ++i)
      if (a(i, c) <= 0) a(i, c) = fill * uni(rng);
    for (Eigen::Index i = 0; i < cols; ++i)
      if (b(i, c) <= 0) b(i, c) = fill * uni(rng);
  }

  // Column-orthogonality penalty weight on the same scale as the data energy.
  const double mu = options.orthogonal
                        ? x.squaredNorm() / (static_cast<double>(r) *
                                             static_cast<double>(cols))
                        : 0.0;
  const double lambda = options.sparsity;

  auto objective = [&]() {
    double obj = (x - a * b.transpose()).squaredNorm() + lambda * b.sum();
    if (mu > 0) {
      Eigen::MatrixXd g = b.transpose() * b;
      obj += mu * (g.squaredNorm() - g.diagonal().squaredNorm()) / 2.0;
    }
    return obj;
  };

  TwoWayFactorization out;
  out.method = options.orthogonal  ? "nmf-orthogonal"
               : lambda > 0        ? "nmf-sparse"
                                   : "nmf";
  out.objective_trace.push_back(objective());

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    // Mixing columns: exact nonnegative coordinate updates.
    Eigen::MatrixXd gram_b = b.transpose() * b;
    Eigen::MatrixXd xb = x * b;
    for (Eigen::Index c = 0; c < rr; ++c) {
      double d = gram_b(c, c);
      if (d < 1e-300) continue;
      a.col(c) = (a.col(c) + (xb.col(c) - a * gram_b.col(c)) / d).cwiseMax(0.0);
    }

    // Source columns: majorized step handling sparsity and orthogonality.
    Eigen::MatrixXd gram_a = a.transpose() * a;
    Eigen::MatrixXd xta = x.transpose() * a;
    for (Eigen::Index c = 0; c < rr; ++c) {
      double d = gram_a(c, c);
      if (d < 1e-300) continue;
      Eigen::VectorXd grad = 2.0 * (b * gram_a.col(c) - xta.col(c));
      double lip = d;
      if (mu > 0) {
        double others = 0.0;
        Eigen::VectorXd cross = Eigen::VectorXd::Zero(cols);
        for (Eigen::Index s = 0; s < rr; ++s) {
          if (s == c) continue;
          cross += (b.col(s).dot(b.col(c))) * b.col(s);
          others += b.col(s).squaredNorm();
        }
        grad += 2.0 * mu * cross;
        lip += mu * others;
      }
      b.col(c) =
          (b.col(c) - (grad.array() / (2.0 * lip)).matrix() -
           Eigen::VectorXd::Constant(cols, lambda / (2.0 * lip)))
              .cwiseMax(0.0);
    }

    double obj = objective();
    double prev = out.objective_trace.back();
    out.objective_trace.push_back(obj);
    if (std::abs(prev - obj) <= options.tol * std::max(prev, 1.0)) break;
  }

  out.mixing = std::move(a);
  out.sources = std::move(b);
  order_by_energy(out.mixing, out.sources);
  return out;
}

Eigen::MatrixXd first_difference(std::size_t n) {
  if (n == 0) throw std::invalid_argument("difference operator needs n >= 1");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) - 1,
                                            static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i + 1 < static_cast<Eigen::Index>(n); ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -1.0;
  }
  return d;
}

TwoWayFactorization smca(const Eigen::MatrixXd& x, std::size_t r, double gamma1,
                         double gamma2, std::size_t max_iter, double tol) {
  check_two_way_args(x, r);
  if (gamma1 < 0 || gamma2 < 0)
    throw std::invalid_argument("smoothness penalties must be nonnegative");

  const Eigen::Index rows = x.rows(), cols = x.cols(),
                     rr = static_cast<Eigen::Index>(r);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sqrt_sv = svd.singularValues().head(rr).cwiseSqrt();
  Eigen::MatrixXd a = svd.matrixU().leftCols(rr) * sqrt_sv.asDiagonal();
  Eigen::MatrixXd b = svd.matrixV().leftCols(rr) * sqrt_sv.asDiagonal();

  Eigen::MatrixXd l1 = first_difference(static_cast<std::size_t>(rows));
  Eigen::MatrixXd l2 = first_difference(static_cast<std::size_t>(cols));
  Eigen::MatrixXd l1tl1 = l1.transpose() * l1;
  Eigen::MatrixXd l2tl2 = l2.transpose() * l2;

  auto smooth_norm = [](const Eigen::MatrixXd& l, const Eigen::VectorXd& v) {
    return std::sqrt((l * v).squaredNorm() + kSmoothEps * kSmoothEps);
  };
  auto objective = [&]() {
    double obj = (x - a * b.transpose()).squaredNorm();
    for (Eigen::Index c = 0; c < rr; ++c) {
      if (gamma1 > 0) obj += gamma1 * smooth_norm(l1, a.col(c));
      if (gamma2 > 0) obj += gamma2 * smooth_norm(l2, b.col(c));
    }
    return obj;
  };

  TwoWayFactorization out;
  out.method = "smca";
  out.objective_trace.push_back(objective());

  Eigen::MatrixXd eye_rows = Eigen::MatrixXd::Identity(rows, rows);
  Eigen::MatrixXd eye_cols = Eigen::MatrixXd::Identity(cols, cols);

  for (std::size_t it = 0; it < max_iter; ++it) {
    for (Eigen::Index c = 0; c < rr; ++c) {
      // Residual without component c.
      Eigen::MatrixXd res = x - a * b.transpose() + a.col(c) * b.col(c).transpose();
      double bb = b.col(c).squaredNorm();
      if (bb > 1e-300) {
        if (gamma1 > 0) {
          double w = gamma1 / (2.0 * smooth_norm(l1, a.col(c)));
          a.col(c) = (bb * eye_rows + w * l1tl1).ldlt().solve(res * b.col(c));
        } else {
          a.col(c) = res * b.col(c) / bb;
        }
      }
      double aa = a.col(c).squaredNorm();
      if (aa > 1e-300) {
        if (gamma2 > 0) {
          double w = gamma2 / (2.0 * smooth_norm(l2, b.col(c)));
          b.col(c) = (aa * eye_cols + w * l2tl2).ldlt().solve(res.transpose() * a.col(c));
        } else {
          b.col(c) = res.transpose() * a.col(c) / aa;
        }
      }
    }
    double obj = objective();
    double prev = out.objective_trace.back();
    out.objective_trace.push_back(obj);
    if (std::abs(prev - obj) <= tol * std::max(prev, 1.0)) break;
  }

  out.mixing = std::move(a);
  out.sources = std::move(b);
  order_by_energy(out.mixing, out.sources);
  canonical_column_signs(out.mixing, out.sources);
  return out;
}

DenseTensor lagged_covariances(const Eigen::MatrixXd& x,
                               const std::vector<std::size_t>& lags) {
  if (lags.empty()) throw std::invalid_argument("at least one lag is required");
  const Eigen::Index t = x.cols();
  for (std::size_t lag : lags)
    if (static_cast<Eigen::Index>(lag) >= t)
      throw std::invalid_argument("lag must be smaller than the sample count");

  std::vector<DenseTensor> slices;
  slices.reserve(lags.size());
  for (std::size_t lag : lags) {
    const Eigen::Index m = t - static_cast<Eigen::Index>(lag);
    Eigen::MatrixXd c = x.rightCols(m) * x.leftCols(m).transpose() /
                        static_cast<double>(m);
    Eigen::MatrixXd sym = (c + c.transpose()) / 2.0;
    slices.push_back(DenseTensor::from_matrix(sym));
  }
  return stack_blocks(slices);
}

BlindIdentification blind_identify(const Eigen::MatrixXd& x, std::size_t r,
                                   std::vector<std::size_t> lags) {
  const Eigen::Index rows = x.rows(), t = x.cols();
  if (r < 1 || static_cast<Eigen::Index>(r) > rows)
    throw std::invalid_argument("source count must lie in 1..row count");
  if (lags.empty()) {
    std::size_t max_lag =
        std::min<std::size_t>(10, static_cast<std::size_t>(t) / 4);
    for (std::size_t lag = 0; lag <= max_lag; ++lag) lags.push_back(lag);
  }
  bool has_positive = false;
  for (std::size_t lag : lags) has_positive |= lag > 0;
  if (!has_positive)
    throw std::invalid_argument("at least one nonzero lag is required");

  Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();

  std::vector<std::size_t> all_lags;
  all_lags.push_back(0);
  for (std::size_t lag : lags)
    if (lag > 0) all_lags.push_back(lag);
  DenseTensor covs = lagged_covariances(centered, all_lags);

  Eigen::MatrixXd c0 = slice_last_mode(covs, 0).as_matrix();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c0);
  const Eigen::Index rr = static_cast<Eigen::Index>(r);
  Eigen::VectorXd evals(rr);
  Eigen::MatrixXd evecs(rows, rr);
  for (Eigen::Index j = 0; j < rr; ++j) {
    evals(j) = eig.eigenvalues()(rows - 1 - j);
    evecs.col(j) = eig.eigenvectors().col(rows - 1 - j);
  }
  double emax = evals(0);
  if (emax <= 0)
    throw IdentifiabilityError("signal covariance has no positive energy");
  for (Eigen::Index j = 0; j < rr; ++j)
    evals(j) = std::max(evals(j), 1e-12 * emax);

  Eigen::MatrixXd whiten =
      evals.cwiseSqrt().cwiseInverse().asDiagonal() * evecs.transpose();
  Eigen::MatrixXd color = evecs * evals.cwiseSqrt().asDiagonal();

  std::vector<Eigen::MatrixXd> whitened;
  for (std::size_t j = 1; j < all_lags.size(); ++j)
    whitened.push_back(whiten * slice_last_mode(covs, j).as_matrix() *
                       whiten.transpose());

  // With no temporal structure the whitened lagged covariances are pure
  // sampling noise and carry no rotation information.
  double max_gain = 0.0;
  for (const auto& m : whitened) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    max_gain = std::max(max_gain, svd.singularValues()(0));
  }
  if (max_gain < 0.15)
    throw IdentifiabilityError(
        "sources show no temporal structure at the given lags");

  std::vector<Eigen::MatrixXd> rotated = whitened;
  Eigen::MatrixXd v = joint_diagonalize(rotated);

  // Two sources with near-proportional lag profiles are not separable.
  const std::size_t n_lags = rotated.size();
  Eigen::MatrixXd profiles(static_cast<Eigen::Index>(n_lags), rr);
  for (std::size_t j = 0; j < n_lags; ++j)
    profiles.row(static_cast<Eigen::Index>(j)) = rotated[j].diagonal().transpose();
  for (Eigen::Index p = 0; p < rr; ++p)
    for (Eigen::Index q = p + 1; q < rr; ++q) {
      double np = profiles.col(p).norm(), nq = profiles.col(q).norm();
      if (np < 0.15 || nq < 0.15) continue;
      double cosine = std::abs(profiles.col(p).dot(profiles.col(q))) / (np * nq);
      if (cosine > 0.995)
        throw IdentifiabilityError("two sources share a lagged-covariance profile");
    }

  BlindIdentification result;
  result.mixing = color * v;
  result.lags = std::move(lags);

  Eigen::MatrixXd source_rows = pseudo_inverse(result.mixing) * centered;
  result.sources = source_rows.transpose();
  order_by_energy(result.mixing, result.sources);
  // Unit-norm mixing columns, scale absorbed by the sources.
  for (Eigen::Index c = 0; c < result.mixing.cols(); ++c) {
    double norm = result.mixing.col(c).norm();
    if (norm > 0) {
      result.mixing.col(c) /= norm;
      result.sources.col(c) *= norm;
    }
  }
  canonical_column_signs(result.mixing, result.sources);
  return result;
}

DenseTensor cumulant_tensor(const Eigen::MatrixXd& x) {
  const Eigen::Index i = x.rows(), t = x.cols();
  if (t < 4) throw std::invalid_argument("cumulants need at least 4 samples");

  Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(t);

  const std::size_t ii = static_cast<std::size_t>(i);
  DenseTensor cum({ii, ii, ii, ii});

  // Fill each sorted index combination once and mirror it to every
  // permutation so the symmetry is exact, not approximate.
  std::vector<std::size_t> idx(4);
  for (idx[0] = 0; idx[0] < ii; ++idx[0])
    for (idx[1] = idx[0]; idx[1] < ii; ++idx[1])
      for (idx[2] = idx[1]; idx[2] < ii; ++idx[2])
        for (idx[3] = idx[2]; idx[3] < ii; ++idx[3]) {
          const Eigen::Index a = static_cast<Eigen::Index>(idx[0]);
          const Eigen::Index b = static_cast<Eigen::Index>(idx[1]);
          const Eigen::Index c = static_cast<Eigen::Index>(idx[2]);
          const Eigen::Index d = static_cast<Eigen::Index>(idx[3]);
          double m4 = 0.0;
          for (Eigen::Index s = 0; s < t; ++s)
            m4 += centered(a, s) * centered(b, s) * centered(c, s) *
                  centered(d, s);
          m4 /= static_cast<double>(t);
          double value = m4 - cov(a, b) * cov(c, d) - cov(a, c) * cov(b, d) -
                         cov(a, d) * cov(b, c);

          std::vector<std::size_t> perm = idx;
          std::sort(perm.begin(), perm.end());
          do {
            cum.at(perm) = value;
          } while (std::next_permutation(perm.begin(), perm.end()));
        }
  return cum;
}

double amari_index(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw std::invalid_argument("mixing matrices must share dimensions");
  const Eigen::Index r = est.cols();

  auto check_full_rank = [](const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-10 * sv(0))
      throw std::invalid_argument("mixing matrix is rank deficient");
  };
  check_full_rank(est);
  check_full_rank(truth);
  if (r < 2) return 0.0;

  Eigen::MatrixXd p = (pseudo_inverse(est) * truth).cwiseAbs();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < r; ++i)
    sum += p.row(i).sum() / p.row(i).maxCoeff() - 1.0;
  for (Eigen::Index j = 0; j < r; ++j)
    sum += p.col(j).sum() / p.col(j).maxCoeff() - 1.0;
  return sum / (2.0 * static_cast<double>(r) * static_cast<double>(r - 1));
}

}  // namespace tenslink
