#include "tenslink/synth.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace tenslink {

namespace {

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

Eigen::MatrixXd seeded_gaussian(Eigen::Index rows, Eigen::Index cols,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

Eigen::MatrixXd seeded_orthonormal(Eigen::Index rows, Eigen::Index cols,
                                   std::uint64_t seed) {
  Eigen::MatrixXd g = seeded_gaussian(rows, cols, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  // Fix the sign indeterminacy of the factorization so the result depends on
  // the seed alone.
  Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(cols, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

// Deterministic sub-seed derivation (splitmix64 finalizer over a combined
// key), so nested generators never share streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::vector<double> pink_noise(std::size_t samples, std::uint64_t seed) {
  constexpr int kRows = 16;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double rows[kRows];
  for (double& value : rows) value = normal(rng);
  std::vector<double> out(samples);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kRows) + 1.0);
  for (std::size_t t = 0; t < samples; ++t) {
    const int k = std::countr_zero(t + 1);
    if (k < kRows) rows[k] = normal(rng);
    double sum = normal(rng);  // full-rate white row
    for (double value : rows) sum += value;
    out[t] = sum * scale;
  }
  return out;
}

std::vector<DenseTensor> synth_ssvep(const SsvepConfig& config) {
  require(!config.frequencies.empty(), "at least one stimulation frequency is required");
  require(config.sample_rate > 0.0, "sample rate must be positive");
  require(config.window_seconds > 0.0, "window length must be positive");
  require(config.trials >= 1, "at least one trial is required");
  require(config.harmonics >= 1, "at least one harmonic is required");
  require(config.channels >= 2 * config.harmonics,
          "need at least two channels per harmonic (sine and cosine sources)");
  require(!std::isnan(config.snr_db), "signal-to-noise ratio must not be NaN");
  for (std::size_t a = 0; a < config.frequencies.size(); ++a) {
    require(config.frequencies[a] > 0.0, "stimulation frequencies must be positive");
    require(config.frequencies[a] * static_cast<double>(config.harmonics) <
                config.sample_rate / 2.0,
            "every harmonic must lie below the Nyquist rate");
    for (std::size_t b = a + 1; b < config.frequencies.size(); ++b)
      require(config.frequencies[a] != config.frequencies[b],
              "stimulation frequencies must be distinct");
  }
  const std::size_t samples = static_cast<std::size_t>(
      std::llround(config.sample_rate * config.window_seconds));
  require(samples >= 2, "window must span at least two samples");

  const std::size_t n_sources = 2 * config.harmonics;
  const bool noiseless = std::isinf(config.snr_db) && config.snr_db > 0.0;

  std::vector<DenseTensor> classes;
  classes.reserve(config.frequencies.size());
  for (std::size_t k = 0; k < config.frequencies.size(); ++k) {
    const double f = config.frequencies[k];

    // Stimulus-locked harmonic sources, amplitude 1/h: samples x 2H.
    Eigen::MatrixXd sources(samples, n_sources);
    for (std::size_t h = 1; h <= config.harmonics; ++h) {
      const double amplitude = 1.0 / static_cast<double>(h);
      const double w = 2.0 * std::numbers::pi * f * static_cast<double>(h) /
                       config.sample_rate;
      for (std::size_t t = 0; t < samples; ++t) {
        sources(t, 2 * (h - 1)) = amplitude * std::sin(w * static_cast<double>(t));
        sources(t, 2 * (h - 1) + 1) = amplitude * std::cos(w * static_cast<double>(t));
      }
    }

    // Per-class orthonormal spatial mixing: channels x 2H, condition number 1.
    Eigen::MatrixXd mixing = seeded_orthonormal(
        static_cast<Eigen::Index>(config.channels),
        static_cast<Eigen::Index>(n_sources), derive_seed(config.seed, 1000 + k));

    // Per-trial amplitude jitter in [0.8, 1.2]; the phase stays stimulus-locked.
    std::mt19937_64 jitter_rng(derive_seed(config.seed, 2000 + k));
    std::uniform_real_distribution<double> jitter(0.8, 1.2);

    DenseTensor clean({config.channels, samples, config.trials});
    for (std::size_t j = 0; j < config.trials; ++j) {
      const double gain = jitter(jitter_rng);
      Eigen::MatrixXd slice = gain * mixing * sources.transpose();  // C x S
      double* out = clean.data().data() + j * config.channels * samples;
      for (std::size_t t = 0; t < samples; ++t)
        for (std::size_t c = 0; c < config.channels; ++c)
          *out++ = slice(static_cast<Eigen::Index>(c),
                         static_cast<Eigen::Index>(t));
    }

    if (noiseless) {
      classes.push_back(std::move(clean));
      continue;
    }

    // Pink background noise per channel and trial, scaled so the class-level
    // power ratio matches the requested level exactly.
    DenseTensor noise({config.channels, samples, config.trials});
    for (std::size_t j = 0; j < config.trials; ++j)
      for (std::size_t c = 0; c < config.channels; ++c) {
        std::vector<double> track = pink_noise(
            samples, derive_seed(config.seed, ((k * config.trials + j) *
                                               config.channels + c) + 3000));
        double* out = noise.data().data() + j * config.channels * samples + c;
        for (std::size_t t = 0; t < samples; ++t)
          out[t * config.channels] = track[t];
      }
    double signal_power = 0.0, noise_power = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      signal_power += clean[i] * clean[i];
      noise_power += noise[i] * noise[i];
    }
    const double target_ratio = std::pow(10.0, config.snr_db / 10.0);
    const double scale = std::sqrt(signal_power / (noise_power * target_ratio));
    for (std::size_t i = 0; i < clean.size(); ++i) clean[i] += scale * noise[i];
    classes.push_back(std::move(clean));
  }
  return classes;
}

KruskalTensor synth_cp(const std::vector<std::size_t>& shape, std::size_t rank,
                       std::uint64_t seed) {
  require(!shape.empty(), "shape must be nonempty");
  require(rank >= 1, "rank must be positive");
  for (std::size_t d : shape) require(d >= 1, "mode sizes must be positive");

  KruskalTensor k;
  k.weights = Eigen::VectorXd(static_cast<Eigen::Index>(rank));
  for (std::size_t r = 0; r < rank; ++r)
    k.weights[static_cast<Eigen::Index>(r)] = static_cast<double>(rank - r);
  for (std::size_t n = 0; n < shape.size(); ++n) {
    Eigen::MatrixXd f =
        seeded_gaussian(static_cast<Eigen::Index>(shape[n]),
                        static_cast<Eigen::Index>(rank), derive_seed(seed, n));
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const double norm = f.col(c).norm();
      require(norm > 0.0, "degenerate random draw");
      f.col(c) /= norm;
    }
    k.factors.push_back(std::move(f));
  }
  return k;
}

DenseTensor synth_mlrank(const std::vector<std::size_t>& shape,
                         const std::vector<std::size_t>& ranks,
                         std::uint64_t seed) {
  require(!shape.empty(), "shape must be nonempty");
  require(ranks.size() == shape.size(), "one rank per mode is required");
  for (std::size_t n = 0; n < shape.size(); ++n) {
    require(shape[n] >= 1, "mode sizes must be positive");
    require(ranks[n] >= 1 && ranks[n] <= shape[n],
            "mode ranks must lie in [1, mode size]");
  }
  DenseTensor core(ranks);
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < core.size(); ++i) core[i] = normal(rng);
  DenseTensor out = core;
  for (std::size_t n = 0; n < shape.size(); ++n) {
    Eigen::MatrixXd f = seeded_orthonormal(static_cast<Eigen::Index>(shape[n]),
                                           static_cast<Eigen::Index>(ranks[n]),
                                           derive_seed(seed, n + 1));
    out = mode_n_product(out, f, n + 1);
  }
  return out;
}

DenseTensor synth_phantom(std::size_t n) {
  require(n >= 8, "phantom needs at least 8 voxels per axis");
  DenseTensor v({n, n, n});
  auto inside = [](std::size_t a, std::size_t lo, std::size_t hi) {
    return a >= lo && a < hi;
  };
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        double value = 0.2;
        if (inside(i, 2, n / 2) && inside(j, 2, n / 2) && inside(k, 2, n / 2))
          value = 0.9;
        if (inside(i, n / 2, n - 3) && inside(j, 3, n - 4) &&
            inside(k, n / 2 - 2, n - 4))
          value = 0.55;
        v.at({i, j, k}) = value;
      }
  return v;
}

ObservationMask synth_mask(const std::vector<std::size_t>& shape,
                           double observed_fraction, std::uint64_t seed) {
  require(!shape.empty(), "shape must be nonempty");
  require(observed_fraction >= 0.0 && observed_fraction <= 1.0,
          "observed fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(observed_fraction);
  ObservationMask mask(shape, false);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.set(i, keep(rng));
  return mask;
}

DenseTensor add_noise(const DenseTensor& x, double stddev, std::uint64_t seed) {
  require(stddev >= 0.0, "noise level must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  DenseTensor out = x;
  if (stddev == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += normal(rng);
  return out;
}

}  // namespace tenslink
