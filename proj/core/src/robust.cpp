#include "tenslink/robust.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cp_detail.hpp"
#include "tenslink/two_way.hpp"

namespace tenslink {

namespace {

void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

// Singular-value soft-thresholding: shrink every singular value by tau and
// drop the ones that reach zero.
Eigen::MatrixXd singular_value_shrink(const Eigen::MatrixXd& m, double tau) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  Eigen::Index keep = 0;
  while (keep < s.size() && s(keep) > tau) ++keep;
  if (keep == 0) return Eigen::MatrixXd::Zero(m.rows(), m.cols());
  return svd.matrixU().leftCols(keep) *
         (s.head(keep).array() - tau).matrix().asDiagonal() *
         svd.matrixV().leftCols(keep).transpose();
}

Eigen::MatrixXd entrywise_shrink(const Eigen::MatrixXd& m, double tau) {
  return (m.array().abs() - tau).max(0.0) * m.array().sign();
}

double spectral_norm(const Eigen::MatrixXd& m) {
  return Eigen::BDCSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

// Median of |v|; destroys the scratch vector order.
double median_abs(std::vector<double>& scratch) {
  if (scratch.empty()) return 0.0;
  for (double& v : scratch) v = std::abs(v);
  const std::size_t mid = scratch.size() / 2;
  std::nth_element(scratch.begin(), scratch.begin() + mid, scratch.end());
  double upper = scratch[mid];
  if (scratch.size() % 2 == 1) return upper;
  std::nth_element(scratch.begin(), scratch.begin() + mid - 1,
                   scratch.begin() + mid);
  return 0.5 * (scratch[mid - 1] + upper);
}

// Robust standard-deviation proxy: median absolute residual scaled to match a
// Gaussian (median |N(0,1)| = 0.6745).
double robust_sigma(std::vector<double>& residuals) {
  return median_abs(residuals) / 0.6745;
}

DenseTensor reconstruct_factors(const std::vector<Eigen::MatrixXd>& factors,
                                const std::vector<std::size_t>& shape) {
  Eigen::MatrixXd m1 =
      factors[0] * detail::khatri_rao_skip(factors, 1).transpose();
  return fold(m1, 1, shape);
}

std::size_t env_thread_cap() {
  const char* raw = std::getenv("TENSLINK_THREADS");
  if (raw == nullptr) return 1;
  char* end = nullptr;
  unsigned long parsed = std::strtoul(raw, &end, 10);
  if (end == raw || parsed == 0) return 1;
  return static_cast<std::size_t>(parsed);
}

}  // namespace

RobustDecomposition rpca(const Eigen::MatrixXd& y, double lambda,
                         const RpcaOptions& options) {
  require(lambda > 0, "sparsity weight lambda must be positive");
  require(y.size() > 0, "input matrix must be nonempty");

  RobustDecomposition out;
  const double norm_y = y.norm();
  if (norm_y == 0.0) {
    out.lowrank = DenseTensor::from_matrix(Eigen::MatrixXd::Zero(y.rows(), y.cols()));
    out.sparse = out.lowrank;
    return out;
  }

  const double two_norm = spectral_norm(y);
  // Dual-feasible multiplier start; balances the nuclear and l1 subgradients.
  const double dual_scale = std::max(two_norm, y.cwiseAbs().maxCoeff() / lambda);
  Eigen::MatrixXd multiplier = y / dual_scale;
  double mu = 1.25 / two_norm;
  const double mu_cap = mu * 1e7;

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  Eigen::MatrixXd e = x;
  Eigen::MatrixXd residual = y;
  out.converged = false;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    x = singular_value_shrink(y - e + multiplier / mu, 1.0 / mu);
    e = entrywise_shrink(y - x + multiplier / mu, lambda / mu);
    residual = y - x - e;
    multiplier += mu * residual;
    mu = std::min(mu * options.mu_growth, mu_cap);
    out.iterations = it + 1;
    if (residual.norm() / norm_y < options.tol) {
      out.converged = true;
      break;
    }
  }

  out.lowrank = DenseTensor::from_matrix(x);
  out.sparse = DenseTensor::from_matrix(e);
  out.noise_variance = residual.squaredNorm() / static_cast<double>(y.size());
  out.sparse_fraction =
      static_cast<double>((e.array() != 0.0).count()) / static_cast<double>(y.size());
  return out;
}

RobustDecomposition rpca(const Eigen::MatrixXd& y) {
  require(y.size() > 0, "input matrix must be nonempty");
  const double max_dim = static_cast<double>(std::max(y.rows(), y.cols()));
  return rpca(y, 1.0 / std::sqrt(max_dim));
}

Eigen::MatrixXd soft_impute(const MaskedTensor& y, double tau,
                            const CompletionOptions& options) {
  require(y.values.order() == 2, "matrix completion expects an order-2 tensor");
  require(y.count_observed() > 0, "observation mask is empty");
  require(tau > 0, "shrinkage tau must be positive");

  Eigen::MatrixXd data = y.values.as_matrix();
  if (y.count_observed() == y.mask.size()) return data;  // already the solution

  const Eigen::Index rows = data.rows(), cols = data.cols();
  Eigen::ArrayXXd observed(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      observed(i, j) =
          y.mask[static_cast<std::size_t>(i + rows * j)] ? 1.0 : 0.0;

  const double observed_norm = data.norm();  // unobserved entries are zero
  if (observed_norm == 0.0) return Eigen::MatrixXd::Zero(rows, cols);

  // Step size > 1/p (p = observed fraction) gives the dual ascent room to
  // enforce the observed entries while every pass stays a shrinkage at tau.
  const double step = 1.2 * static_cast<double>(y.mask.size()) /
                      static_cast<double>(y.count_observed());
  const double start = std::ceil(tau / (step * spectral_norm(data)));
  Eigen::MatrixXd dual = (start * step) * data;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    x = singular_value_shrink(dual, tau);
    Eigen::MatrixXd misfit = ((data - x).array() * observed).matrix();
    if (misfit.norm() / observed_norm < options.tol) break;
    dual += step * misfit;
  }
  return x;
}

DenseTensor halrtc(const MaskedTensor& y, const std::vector<double>& weights,
                   const HalrtcOptions& options) {
  const std::size_t n_modes = y.values.order();
  require(n_modes >= 2, "tensor completion expects order >= 2");
  require(weights.size() == n_modes, "one unfolding weight per mode is required");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "unfolding weights must be nonnegative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, "unfolding weights must sum to 1");
  require(y.count_observed() > 0, "observation mask is empty");

  if (y.count_observed() == y.mask.size()) return y.values;

  const auto& shape = y.values.shape();
  DenseTensor x = y.values;  // zero-filled start
  std::vector<DenseTensor> aux(n_modes, DenseTensor(shape));
  std::vector<DenseTensor> multipliers(n_modes, DenseTensor(shape));
  double rho = options.rho;

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    for (std::size_t n = 0; n < n_modes; ++n) {
      DenseTensor target = x + multipliers[n] * (1.0 / rho);
      if (weights[n] == 0.0) {
        aux[n] = std::move(target);  // zero-weight norms impose no shrinkage
      } else {
        aux[n] = fold(singular_value_shrink(unfold(target, n + 1),
                                            weights[n] / rho),
                      n + 1, shape);
      }
    }

    DenseTensor previous = x;
    x = DenseTensor(shape);
    for (std::size_t n = 0; n < n_modes; ++n)
      x += (aux[n] - multipliers[n] * (1.0 / rho)) * (1.0 / n_modes);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (y.mask[i]) x[i] = y.values[i];

    double gap = 0.0;
    for (std::size_t n = 0; n < n_modes; ++n) {
      gap = std::max(gap, frobenius_norm(x - aux[n]));
      multipliers[n] += (x - aux[n]) * rho;
    }
    rho *= options.rho_growth;

    // Converged only when the iterate is stationary AND the per-mode copies
    // agree; the first plateau (before any shrinkage activates) must not stop
    // the iteration.
    double change = frobenius_norm(x - previous);
    double base = std::max(frobenius_norm(previous), 1e-300);
    if (change / base < options.tol && gap / base < 1e-6) break;
  }
  return x;
}

DenseTensor halrtc(const MaskedTensor& y, const HalrtcOptions& options) {
  const std::size_t n_modes = y.values.order();
  require(n_modes >= 2, "tensor completion expects order >= 2");
  return halrtc(y, std::vector<double>(n_modes, 1.0 / static_cast<double>(n_modes)),
                options);
}

namespace {

// Flat parameter layout for the masked-fit solvers: factors concatenated in
// mode order, each column-major.
std::size_t packed_size(const std::vector<Eigen::MatrixXd>& factors) {
  std::size_t total = 0;
  for (const auto& f : factors) total += static_cast<std::size_t>(f.size());
  return total;
}

Eigen::VectorXd pack_factors(const std::vector<Eigen::MatrixXd>& factors) {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(packed_size(factors)));
  Eigen::Index at = 0;
  for (const auto& f : factors) {
    theta.segment(at, f.size()) = Eigen::Map<const Eigen::VectorXd>(f.data(), f.size());
    at += f.size();
  }
  return theta;
}

std::vector<Eigen::MatrixXd> unpack_factors(const Eigen::VectorXd& theta,
                                            const std::vector<std::size_t>& shape,
                                            std::size_t r) {
  std::vector<Eigen::MatrixXd> factors(shape.size());
  Eigen::Index at = 0;
  for (std::size_t n = 0; n < shape.size(); ++n) {
    const Eigen::Index rows = static_cast<Eigen::Index>(shape[n]);
    const Eigen::Index cols = static_cast<Eigen::Index>(r);
    factors[n] = Eigen::Map<const Eigen::MatrixXd>(theta.data() + at, rows, cols);
    at += rows * cols;
  }
  return factors;
}

// Residual on observed entries only (zero elsewhere).
DenseTensor masked_residual(const MaskedTensor& y,
                            const std::vector<Eigen::MatrixXd>& factors) {
  DenseTensor recon = reconstruct_factors(factors, y.values.shape());
  DenseTensor residual(y.values.shape());
  for (std::size_t i = 0; i < residual.size(); ++i)
    if (y.mask[i]) residual[i] = y.values[i] - recon[i];
  return residual;
}

void check_factor_shapes(const MaskedTensor& y,
                         const std::vector<Eigen::MatrixXd>& factors) {
  require(!factors.empty() && factors.size() == y.values.order(),
          "one factor matrix per mode is required");
  const Eigen::Index r = factors.front().cols();
  for (std::size_t n = 0; n < factors.size(); ++n) {
    require(factors[n].cols() == r, "factor column counts must agree");
    require(factors[n].rows() == static_cast<Eigen::Index>(y.values.shape()[n]),
            "factor rows must match the mode size");
  }
}

}  // namespace

double cp_wopt_objective(const MaskedTensor& y,
                         const std::vector<Eigen::MatrixXd>& factors) {
  check_factor_shapes(y, factors);
  DenseTensor residual = masked_residual(y, factors);
  double norm = frobenius_norm(residual);
  return 0.5 * norm * norm;
}

Eigen::VectorXd cp_wopt_gradient(const MaskedTensor& y,
                                 const std::vector<Eigen::MatrixXd>& factors) {
  check_factor_shapes(y, factors);
  DenseTensor residual = masked_residual(y, factors);
  std::vector<Eigen::MatrixXd> grads(factors.size());
  for (std::size_t n = 0; n < factors.size(); ++n)
    grads[n] = -unfold(residual, n + 1) * detail::khatri_rao_skip(factors, n + 1);
  return pack_factors(grads);
}

WoptFit cp_wopt(const MaskedTensor& y, std::size_t r, const WoptOptions& options) {
  require(r >= 1, "target rank must be positive");
  require(y.count_observed() > 0, "observation mask is empty");

  // A fully unobserved slab leaves the matching factor row unconstrained.
  const auto& shape = y.values.shape();
  {
    std::vector<std::vector<char>> seen(shape.size());
    for (std::size_t n = 0; n < shape.size(); ++n) seen[n].assign(shape[n], 0);
    for (std::size_t flat = 0; flat < y.mask.size(); ++flat) {
      if (!y.mask[flat]) continue;
      std::size_t rest = flat;
      for (std::size_t n = 0; n < shape.size(); ++n) {
        seen[n][rest % shape[n]] = 1;
        rest /= shape[n];
      }
    }
    for (std::size_t n = 0; n < shape.size(); ++n)
      for (std::size_t i = 0; i < shape[n]; ++i)
        if (!seen[n][i])
          throw IdentifiabilityError(
              "mode " + std::to_string(n + 1) + " index " + std::to_string(i) +
              " has no observed entries; its factor row is unrecoverable");
  }

  DecompOptions init_options;
  init_options.random_init = options.random_init;
  init_options.seed = options.seed;
  std::vector<Eigen::MatrixXd> factors =
      detail::cp_initial_factors(y.values, r, init_options);

  Eigen::VectorXd theta = pack_factors(factors);
  auto objective = [&](const Eigen::VectorXd& point) {
    return cp_wopt_objective(y, unpack_factors(point, shape, r));
  };
  auto gradient = [&](const Eigen::VectorXd& point) {
    return cp_wopt_gradient(y, unpack_factors(point, shape, r));
  };

  WoptFit fit;
  double value = objective(theta);
  Eigen::VectorXd grad = gradient(theta);
  const double scale = std::max(1.0, std::sqrt(2.0 * value));
  Eigen::VectorXd direction = -grad;
  double step_seed = 1.0 / std::max(1.0, grad.norm());

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    if (grad.norm() <= options.tol * scale) {
      fit.converged = true;
      break;
    }
    double slope = grad.dot(direction);
    if (slope >= 0.0) {  // restart on a non-descent direction
      direction = -grad;
      slope = -grad.squaredNorm();
    }

    double step = step_seed;
    Eigen::VectorXd candidate;
    double candidate_value = value;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      candidate = theta + step * direction;
      candidate_value = objective(candidate);
      if (candidate_value <= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search exhausted: gradient-level stall

    theta = candidate;
    Eigen::VectorXd next_grad = gradient(theta);
    // Polak-Ribiere with nonnegativity restart.
    double beta =
        std::max(0.0, next_grad.dot(next_grad - grad) / grad.squaredNorm());
    direction = -next_grad + beta * direction;
    grad = next_grad;
    value = candidate_value;
    step_seed = std::min(step * 2.0, 1e6);
    fit.iterations = it + 1;
    fit.objective_trace.push_back(value);
  }
  if (grad.norm() <= options.tol * scale) fit.converged = true;

  factors = unpack_factors(theta, shape, r);
  Eigen::VectorXd component_weights;
  detail::normalize_columns(factors, component_weights);
  fit.model.weights = component_weights;
  fit.model.factors = std::move(factors);
  detail::canonicalize(fit.model);
  fit.objective = value;
  return fit;
}

namespace {

// Largest unfolding edge sqrt(I_n) + sqrt(size/I_n): the scale a rank-one fit
// of pure unit-variance noise can reach, used to size the weight shrinkage.
double noise_edge(const std::vector<std::size_t>& shape) {
  double size = 1.0;
  for (std::size_t s : shape) size *= static_cast<double>(s);
  double edge = 0.0;
  for (std::size_t s : shape) {
    double in = static_cast<double>(s);
    edge = std::max(edge, std::sqrt(in) + std::sqrt(size / in));
  }
  return edge;
}

void absorb_weights(std::vector<Eigen::MatrixXd>& factors,
                    const Eigen::VectorXd& weights) {
  factors[0] = factors[0] * weights.asDiagonal();
}

}  // namespace

RankAdaptFit cp_rank_adapt(const MaskedTensor& y, std::size_t r_init,
                           const RankAdaptOptions& options) {
  require(r_init >= 1, "initial rank must be positive");
  require(y.count_observed() > 0, "observation mask is empty");

  const auto& shape = y.values.shape();
  const std::size_t n_modes = y.values.order();
  const double observed_norm = frobenius_norm(y.values);
  const double edge = noise_edge(shape);

  RankAdaptFit fit;
  fit.initial_rank = r_init;

  std::vector<double> scratch;
  scratch.reserve(y.count_observed());
  double sigma = 0.0;

  // Screen gross spikes against the raw data before choosing the starting
  // basis: a handful of large corruptions can otherwise carry more energy
  // than the structure and seed the subspace, and once a component owns a
  // spike no residual-scaled penalty can evict it.  Only unambiguous
  // corruptions (twenty robust sigmas — the tails of genuinely low-rank
  // data run out around ten) are screened, and they are removed whole
  // rather than clipped — a clipped leftover is exactly the kind of bump a
  // spare component latches onto.  The screen is transient: the outlier
  // estimate is recomputed against the model residual at the end of every
  // sweep, so a screened entry that the structure explains is reclaimed
  // immediately.
  DenseTensor outliers(shape);
  DenseTensor screened(shape);
  double data_scale = 0.0;
  {
    scratch.clear();
    for (std::size_t i = 0; i < y.mask.size(); ++i)
      if (y.mask[i]) scratch.push_back(y.values[i]);
    data_scale = robust_sigma(scratch);
    const double gate = 20.0 * data_scale;
    for (std::size_t i = 0; i < y.mask.size(); ++i) {
      if (!y.mask[i]) continue;
      if (data_scale > 0.0 && std::abs(y.values[i]) > gate)
        outliers[i] = y.values[i];
      screened[i] = y.values[i] - outliers[i];
    }
  }

  std::vector<Eigen::MatrixXd> factors =
      detail::cp_initial_factors(screened, r_init, DecompOptions{});
  DenseTensor estimate = reconstruct_factors(factors, shape);

  auto sweep_factors = [&](const DenseTensor& imputed) {
    for (std::size_t n = 0; n < n_modes; ++n) {
      Eigen::MatrixXd chain = detail::khatri_rao_skip(factors, n + 1);
      Eigen::MatrixXd gram = detail::gram_hadamard_skip(factors, n + 1);
      double ridge = 1e-12 * std::max(gram.trace(), 1e-300);
      gram.diagonal().array() += ridge;
      factors[n] = gram.ldlt()
                       .solve((unfold(imputed, n + 1) * chain).transpose())
                       .transpose();
    }
    estimate = reconstruct_factors(factors, shape);
  };

  auto impute = [&]() {
    DenseTensor z = estimate;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (y.mask[i]) z[i] = y.values[i] - outliers[i];
    return z;
  };

  // Three gate behaviours for the outlier slate.  A soft gate clips each
  // flagged residual back by the threshold — the proximal update for an
  // absolute-value penalty on the outlier term — so flagged entries keep a
  // bounded pull on the model and structure that merely looks extreme is
  // reclaimed once the fit explains it.  The fused gate additionally moves
  // residuals beyond outlier_redescend times the threshold into the outlier
  // term whole: a clipped gross corruption would otherwise drag the model
  // toward itself by the threshold amount every sweep.  The trim gate moves
  // every flagged residual whole, which frees those entries from the fit
  // entirely and removes the clip bias; it is reserved for states where the
  // flagged support is trustworthy.
  enum class Gate { soft, fused, trim };
  auto update_outliers = [&](double fixed_threshold, Gate mode) {
    double threshold = fixed_threshold;
    if (threshold < 0.0) {
      scratch.clear();
      for (std::size_t i = 0; i < y.mask.size(); ++i)
        if (y.mask[i]) scratch.push_back(y.values[i] - estimate[i]);
      // The floor keeps the gate from chasing its own shrinking residual:
      // once most entries are explained the median residual collapses, but
      // the slowest entries still carry honest misfit that must keep pulling
      // on the model rather than be filed away as outliers.
      sigma = std::max(robust_sigma(scratch),
                       options.outlier_floor_rel * data_scale);
      threshold = options.outlier_sigma * sigma;
    }
    const double give_up = options.outlier_redescend * threshold;
    for (std::size_t i = 0; i < y.mask.size(); ++i) {
      if (!y.mask[i]) continue;
      double residual = y.values[i] - estimate[i];
      const bool whole =
          mode == Gate::trim ||
          (mode == Gate::fused && std::abs(residual) > give_up);
      if (whole) {
        outliers[i] = std::abs(residual) > threshold ? residual : 0.0;
      } else {
        double magnitude = std::abs(residual) - threshold;
        outliers[i] =
            magnitude > 0.0 ? (residual > 0 ? magnitude : -magnitude) : 0.0;
      }
    }
    // Noise scale after removing the outlier estimates.
    scratch.clear();
    for (std::size_t i = 0; i < y.mask.size(); ++i)
      if (y.mask[i]) scratch.push_back(y.values[i] - estimate[i] - outliers[i]);
    return robust_sigma(scratch);
  };

  // Screened entries enter the first sweep imputed from the initial model:
  // neither the raw spike nor a hole where it used to be — a hole looks
  // exactly like structure to a spare component.  All other entries reach
  // the first sweep raw, so the first residual scale (which sizes the first
  // round of component pruning) is measured honestly.
  for (std::size_t i = 0; i < y.mask.size(); ++i)
    if (outliers[i] != 0.0) outliers[i] = y.values[i] - estimate[i];

  bool stable = false;
  std::size_t sweeps_at_rank = 0;
  for (std::size_t sweepno = 0; sweepno < options.max_sweeps; ++sweepno) {
    DenseTensor previous = estimate;
    const std::size_t previous_rank = static_cast<std::size_t>(factors[0].cols());
    sweep_factors(impute());
    double clean_sigma = update_outliers(-1.0, Gate::fused);

    Eigen::VectorXd weights;
    detail::normalize_columns(factors, weights);
    const double strongest = weights.maxCoeff();
    if (strongest <= 1e-14 * std::max(1.0, observed_norm))
      throw IdentifiabilityError(
          "every component was pruned; the observed data carry no rank-one "
          "structure above the noise floor");

    // Proximal weight shrinkage sized to the strongest pure-noise fit; the
    // leading component is exempt from being shrunk to extinction so a
    // noise-only input settles at rank one instead of erroring out.  The
    // same scale floor as the outlier gate keeps the shrinkage from stalling
    // once the residual scale collapses: components that only explain a
    // handful of entries leave the typical residual untouched and would
    // otherwise outlast any sweep budget.  (The floored cut biases the
    // surviving weights; the shrinkage-free refine below removes that.)
    Eigen::Index lead;
    weights.maxCoeff(&lead);
    const double cut =
        options.shrink_scale * edge *
        std::max(clean_sigma, options.outlier_floor_rel * data_scale);
    for (Eigen::Index c = 0; c < weights.size(); ++c)
      weights(c) = std::max(weights(c) - cut, 0.0);
    if (weights.maxCoeff() <= 0.0) weights(lead) = strongest;

    const double keep_floor = options.prune_rel * weights.maxCoeff();
    std::vector<Eigen::Index> kept;
    for (Eigen::Index c = 0; c < weights.size(); ++c)
      if (weights(c) > 0.0 && (weights(c) >= keep_floor || c == lead))
        kept.push_back(c);

    Eigen::VectorXd kept_weights(static_cast<Eigen::Index>(kept.size()));
    std::vector<Eigen::MatrixXd> kept_factors(n_modes);
    for (std::size_t n = 0; n < n_modes; ++n)
      kept_factors[n].resize(factors[n].rows(),
                             static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) {
      kept_weights(static_cast<Eigen::Index>(c)) = weights(kept[c]);
      for (std::size_t n = 0; n < n_modes; ++n)
        kept_factors[n].col(static_cast<Eigen::Index>(c)) =
            factors[n].col(kept[c]);
    }
    factors = std::move(kept_factors);
    absorb_weights(factors, kept_weights);
    estimate = reconstruct_factors(factors, shape);

    // Re-sync the outlier slate against the shrunken model.  Entries whose
    // outlier estimate carries the whole residual are imputed at the model's
    // own value, so a stale slate would hand the next sweep the pre-shrink
    // model and the refit would restore every component from its own echo.
    // Against the post-shrink state, structure is restored by the raw
    // observed entries while components supported only on outlier entries
    // decay by the full cut each sweep.
    update_outliers(options.outlier_sigma * sigma, Gate::fused);

    fit.iterations = sweepno + 1;
    double change = frobenius_norm(estimate - previous);
    double base = std::max(frobenius_norm(previous), 1e-300);
    sweeps_at_rank = kept.size() == previous_rank ? sweeps_at_rank + 1 : 0;
    if (kept.size() == previous_rank && change / base < options.tol) {
      stable = true;
      break;
    }
    // This loop only has to settle the rank; the refit below owns accuracy.
    // Once the rank has outlived any component the shrinkage could still be
    // draining (the floored cut empties the largest admissible weight within
    // this patience), further shrink-and-restore sweeps only grind the
    // surviving weights down, so hand over to the refit.
    if (sweeps_at_rank >= 40) {
      stable = true;
      break;
    }
  }

  // Shrinkage-free refit at the settled rank.  The gate is frozen so the
  // alternation becomes exact block descent on a fixed objective (least
  // squares plus an absolute-value penalty on the outlier term): each sweep
  // lowers it, so the refit converges monotonically and undoes the bias the
  // weight shrinkage left behind.  The pure soft gate is used — with the
  // rank settled there is no spare capacity left to ratchet into a
  // corruption, while the bounded pull of clipped entries lets any entry
  // the shrinkage phase over-assigned to the outlier slate recover.
  const double frozen_gate = options.outlier_sigma * sigma;
  for (std::size_t sweepno = 0; sweepno < options.refine_sweeps; ++sweepno) {
    DenseTensor previous = estimate;
    sweep_factors(impute());
    update_outliers(frozen_gate, Gate::soft);
    double change = frobenius_norm(estimate - previous);
    double base = std::max(frobenius_norm(previous), 1e-300);
    fit.iterations += 1;
    if (change / base < options.tol) break;
  }
  // At the refit optimum the flagged support holds only entries the model
  // genuinely cannot explain.  Trimming them outright removes the clip bias
  // they still exert, and entries that fall back below the frozen gate
  // return to the model in full.  The slate is assigned before each sweep
  // (and re-synced after the last) so the first sweep already runs free of
  // the clip bias.
  for (std::size_t sweepno = 0; sweepno < options.refine_sweeps; ++sweepno) {
    DenseTensor previous = estimate;
    update_outliers(frozen_gate, Gate::trim);
    sweep_factors(impute());
    double change = frobenius_norm(estimate - previous);
    double base = std::max(frobenius_norm(previous), 1e-300);
    fit.iterations += 1;
    if (change / base < options.tol) break;
  }
  update_outliers(frozen_gate, Gate::trim);
  fit.converged = stable;

  Eigen::VectorXd weights;
  detail::normalize_columns(factors, weights);
  fit.model.weights = weights;
  fit.model.factors = std::move(factors);
  detail::canonicalize(fit.model);

  fit.parts.lowrank = estimate;
  fit.parts.sparse = outliers;
  fit.parts.iterations = fit.iterations;
  fit.parts.converged = fit.converged;
  double squared = 0.0;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < y.mask.size(); ++i) {
    if (!y.mask[i]) continue;
    double noise = y.values[i] - estimate[i] - outliers[i];
    squared += noise * noise;
    if (outliers[i] != 0.0) ++nonzero;
  }
  fit.parts.noise_variance = squared / static_cast<double>(y.count_observed());
  fit.parts.sparse_fraction =
      static_cast<double>(nonzero) / static_cast<double>(y.mask.size());
  return fit;
}

namespace {

struct Corner {
  std::size_t i, j, k;
};

// Clamped stride grid along one axis: 0, s, 2s, ..., plus the final valid
// position so the volume is always fully covered.
std::vector<std::size_t> grid_positions(std::size_t extent, std::size_t patch,
                                        std::size_t stride) {
  std::vector<std::size_t> positions;
  const std::size_t last = extent - patch;
  for (std::size_t p = 0; p < last; p += stride) positions.push_back(p);
  positions.push_back(last);
  return positions;
}

void copy_cube(const DenseTensor& volume, const Corner& corner,
               std::size_t patch, double* out) {
  const auto& shape = volume.shape();
  const std::size_t n1 = shape[0], n2 = shape[1];
  std::size_t at = 0;
  for (std::size_t c = 0; c < patch; ++c)
    for (std::size_t b = 0; b < patch; ++b) {
      std::size_t base =
          (corner.i) + n1 * ((corner.j + b) + n2 * (corner.k + c));
      for (std::size_t a = 0; a < patch; ++a) out[at++] = volume[base + a];
    }
}

DenseTensor filter_stack_hosvd(const DenseTensor& stack, double sigma) {
  TuckerTensor model = hosvd(stack, stack.shape());
  const double threshold = 3.0 * sigma;
  for (std::size_t i = 0; i < model.core.size(); ++i)
    if (std::abs(model.core[i]) < threshold) model.core[i] = 0.0;
  return reconstruct(model);
}

DenseTensor filter_stack_cp(const DenseTensor& stack, std::size_t rank_init) {
  MaskedTensor masked(stack, ObservationMask(stack.shape(), true));
  try {
    RankAdaptOptions options;
    options.max_sweeps = 60;
    options.refine_sweeps = 20;
    return cp_rank_adapt(masked, rank_init, options).parts.lowrank;
  } catch (const IdentifiabilityError&) {
    return DenseTensor(stack.shape());  // featureless stack: estimate zero
  }
}

}  // namespace

double estimate_noise_stddev(const DenseTensor& volume) {
  std::vector<double> diffs;
  const std::size_t n_modes = volume.order();
  for (std::size_t n = 1; n <= n_modes; ++n) {
    if (volume.shape()[n - 1] < 2) continue;
    Eigen::MatrixXd un = unfold(volume, n);
    for (Eigen::Index i = 0; i + 1 < un.rows(); ++i)
      for (Eigen::Index j = 0; j < un.cols(); ++j)
        diffs.push_back(un(i + 1, j) - un(i, j));
  }
  if (diffs.empty()) return 0.0;
  // Differences of two independent noise samples carry variance 2 sigma^2.
  return median_abs(diffs) / (0.6745 * std::sqrt(2.0));
}

DenseTensor patch_denoise(const DenseTensor& volume, std::size_t patch,
                          std::size_t group_size, PatchFilter filter,
                          const PatchOptions& options) {
  require(volume.order() == 3, "patch denoising expects a 3rd-order volume");
  require(patch >= 1, "patch size must be positive");
  require(group_size >= 1, "group size must be positive");
  require(options.stride >= 1, "grid stride must be positive");
  const auto& shape = volume.shape();
  for (std::size_t n = 0; n < 3; ++n)
    require(shape[n] >= patch, "volume is smaller than the patch size");

  const double sigma =
      options.sigma >= 0.0 ? options.sigma : estimate_noise_stddev(volume);

  std::vector<Corner> references;
  {
    auto gi = grid_positions(shape[0], patch, options.stride);
    auto gj = grid_positions(shape[1], patch, options.stride);
    auto gk = grid_positions(shape[2], patch, options.stride);
    for (std::size_t k : gk)
      for (std::size_t j : gj)
        for (std::size_t i : gi) references.push_back({i, j, k});
  }

  std::size_t workers = options.threads > 0 ? options.threads : env_thread_cap();
  workers = std::max<std::size_t>(1, std::min(workers, references.size()));

  const std::size_t voxels = volume.size();
  std::vector<std::vector<double>> partial_sums(workers,
                                                std::vector<double>(voxels, 0.0));
  std::vector<std::vector<double>> partial_weights(
      workers, std::vector<double>(voxels, 0.0));

  const std::size_t cube = patch * patch * patch;
  const std::size_t radius = options.window_radius;

  auto process_range = [&](std::size_t begin, std::size_t end, std::size_t w) {
    std::vector<double> reference_cube(cube), candidate_cube(cube);
    std::vector<Corner> candidates;
    std::vector<std::pair<double, std::size_t>> scored;
    std::vector<double>& sums = partial_sums[w];
    std::vector<double>& hits = partial_weights[w];

    for (std::size_t ref = begin; ref < end; ++ref) {
      const Corner& corner = references[ref];
      copy_cube(volume, corner, patch, reference_cube.data());

      candidates.clear();
      const std::size_t i_lo = corner.i > radius ? corner.i - radius : 0;
      const std::size_t j_lo = corner.j > radius ? corner.j - radius : 0;
      const std::size_t k_lo = corner.k > radius ? corner.k - radius : 0;
      const std::size_t i_hi = std::min(corner.i + radius, shape[0] - patch);
      const std::size_t j_hi = std::min(corner.j + radius, shape[1] - patch);
      const std::size_t k_hi = std::min(corner.k + radius, shape[2] - patch);
      for (std::size_t k = k_lo; k <= k_hi; ++k)
        for (std::size_t j = j_lo; j <= j_hi; ++j)
          for (std::size_t i = i_lo; i <= i_hi; ++i)
            candidates.push_back({i, j, k});

      scored.clear();
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        copy_cube(volume, candidates[c], patch, candidate_cube.data());
        double distance = 0.0;
        for (std::size_t v = 0; v < cube; ++v) {
          double d = candidate_cube[v] - reference_cube[v];
          distance += d * d;
        }
        scored.emplace_back(distance, c);
      }
      const std::size_t members = std::min(group_size, scored.size());
      std::partial_sort(scored.begin(),
                        scored.begin() + static_cast<std::ptrdiff_t>(members),
                        scored.end());

      DenseTensor stack({patch, patch, patch, members});
      for (std::size_t g = 0; g < members; ++g)
        copy_cube(volume, candidates[scored[g].second], patch,
                  stack.data().data() + g * cube);

      DenseTensor filtered = filter == PatchFilter::hosvd
                                 ? filter_stack_hosvd(stack, sigma)
                                 : filter_stack_cp(stack, options.cp_rank_init);

      for (std::size_t g = 0; g < members; ++g) {
        const Corner& at = candidates[scored[g].second];
        const double* cube_values = filtered.data().data() + g * cube;
        std::size_t v = 0;
        for (std::size_t c = 0; c < patch; ++c)
          for (std::size_t b = 0; b < patch; ++b) {
            std::size_t base = at.i + shape[0] * ((at.j + b) + shape[1] * (at.k + c));
            for (std::size_t a = 0; a < patch; ++a) {
              sums[base + a] += cube_values[v++];
              hits[base + a] += 1.0;
            }
          }
      }
    }
  };

  if (workers == 1) {
    process_range(0, references.size(), 0);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (references.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(begin + chunk, references.size());
      if (begin >= end) break;
      pool.emplace_back(process_range, begin, end, w);
    }
    for (auto& t : pool) t.join();
  }

  DenseTensor out(shape);
  std::vector<double> weight_total(voxels, 0.0);
  for (std::size_t w = 0; w < workers; ++w)
    for (std::size_t v = 0; v < voxels; ++v) {
      out[v] += partial_sums[w][v];
      weight_total[v] += partial_weights[w][v];
    }
  for (std::size_t v = 0; v < voxels; ++v)
    out[v] = weight_total[v] > 0.0 ? out[v] / weight_total[v] : volume[v];
  return out;
}

double psnr(const DenseTensor& reference, const DenseTensor& estimate,
            double peak) {
  require(reference.same_shape(estimate), "inputs must share a shape");
  require(peak > 0.0, "peak value must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    double d = estimate[i] - reference[i];
    mse += d * d;
  }
  mse /= static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double rrse(const DenseTensor& reference, const DenseTensor& estimate) {
  require(reference.same_shape(estimate), "inputs must share a shape");
  const double base = frobenius_norm(reference);
  require(base > 0.0, "reference must be nonzero");
  return frobenius_norm(estimate - reference) / base;
}

}  // namespace tenslink
