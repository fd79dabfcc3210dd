#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "tenslink/decomp.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// Configuration for the steady-state visual stimulation generator.  Each
/// stimulation frequency becomes one class tensor of shape
/// channels x samples x trials with samples = round(sample_rate * window_seconds).
struct SsvepConfig {
  /// Stimulation fundamentals in Hz; must be positive and pairwise distinct,
  /// and every harmonic must stay below the Nyquist rate.
  std::vector<double> frequencies = {6.0, 8.0, 9.0, 10.0};
  double sample_rate = 250.0;   // Hz
  double window_seconds = 4.0;  // trial duration
  std::size_t channels = 8;
  std::size_t trials = 12;
  /// Harmonics per fundamental carried by the evoked response (amplitude
  /// falls off as 1/h, so the spectral peak sits at the fundamental).  Each
  /// harmonic contributes a sine and a cosine source, so channels must be at
  /// least 2 * harmonics for the spatial mixing to have full column rank.
  std::size_t harmonics = 2;
  /// Global signal-to-noise ratio in dB over each class tensor; the pink
  /// background noise is scaled so the ratio holds exactly.  +infinity means
  /// noiseless.
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

/// Synthesizes one channel x samples x trials tensor per stimulation
/// frequency: a fixed per-class orthonormal spatial mixing applied to
/// stimulus-locked sine/cosine harmonics (shared across trials up to a
/// per-trial amplitude jitter), plus independent pink background noise per
/// channel and trial at the configured signal-to-noise ratio.  Deterministic
/// for a fixed config.
std::vector<DenseTensor> synth_ssvep(const SsvepConfig& config);

/// Octave-band pink-noise sequence (one row of white noise per octave, each
/// refreshed at half the previous rate, plus a full-rate row), normalized to
/// unit expected variance.  Deterministic per seed.
std::vector<double> pink_noise(std::size_t samples, std::uint64_t seed);

/// Planted sum-of-rank-ones model: unit-norm factor columns drawn from a
/// seeded normal generator, weights descending linearly from `rank` to 1.
KruskalTensor synth_cp(const std::vector<std::size_t>& shape, std::size_t rank,
                       std::uint64_t seed);

/// Random tensor with the given multilinear rank: a seeded normal core
/// contracted with per-mode random orthonormal factors.
DenseTensor synth_mlrank(const std::vector<std::size_t>& shape,
                         const std::vector<std::size_t>& ranks,
                         std::uint64_t seed);

/// Piecewise-constant n x n x n volume: background 0.2 with two rectangular
/// inclusions at 0.9 and 0.55 (peak value 0.9).  Needs n >= 8.
DenseTensor synth_phantom(std::size_t n);

/// Independent-entry observation mask keeping each entry with the given
/// probability.  Deterministic per seed.
ObservationMask synth_mask(const std::vector<std::size_t>& shape,
                           double observed_fraction, std::uint64_t seed);

/// Adds seeded independent normal noise with the given standard deviation.
DenseTensor add_noise(const DenseTensor& x, double stddev, std::uint64_t seed);

}  // namespace tenslink
