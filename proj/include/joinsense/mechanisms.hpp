#pragma once

// Noise mechanisms: a sensitivity plus a true answer in, a released answer
// out. The two smooth mechanisms check that the sensitivity report was
// produced under the smoothing parameters they calibrate for, so a bound
// smoothed for one release rule can never silently feed another.

#include <cstdint>
#include <string>
#include <string_view>

#include "joinsense/rng.hpp"
#include "joinsense/smooth.hpp"

namespace joinsense {

enum class Mechanism { LaplaceGlobal, LaplaceSmooth, GeneralCauchy };

const char* mechanism_name(Mechanism m);

struct NoisyAnswer {
  double trueAnswer = 0.0;  // kept for the bench's deviation metric, never released
  double sensitivity = 0.0;
  Mechanism mechanism = Mechanism::LaplaceSmooth;
  double scale = 0.0;
  double noisyValue = 0.0;
  std::uint64_t seed = 0;

  double deviation() const { return std::abs(trueAnswer - noisyValue); }
};

// Zero-mean Laplace draw with scale b, by inverse CDF on one uniform draw.
double laplace_noise(double scale, Rng& rng);

// Draw from the density proportional to 1/(1 + |z|^gamma), gamma > 1, by
// rejection from a uniform-central / power-tail mixture.
double general_cauchy_noise(double gamma, Rng& rng);

// answer + Laplace(GS/epsilon). Refuses an infinite global sensitivity: joins
// with private relations have none, which is the point of the smooth bounds.
NoisyAnswer release_global(double answer, double globalSensitivity, double epsilon, Rng& rng);

// answer + Laplace(2S/epsilon), for S smoothed with beta = epsilon/(2 ln(2/delta)).
NoisyAnswer release_smooth_laplace(double answer, const SensitivityReport& sensitivity,
                                   double epsilon, double delta, Rng& rng);

// answer + (2(gamma+1)S/epsilon) Z with Z ~ 1/(1+|z|^gamma), for S smoothed
// with beta = epsilon/(2(gamma+1)).
NoisyAnswer release_general_cauchy(double answer, const SensitivityReport& sensitivity,
                                   double epsilon, double gamma, Rng& rng);

// The noise stream for one release: keyed by query fingerprint, mechanism,
// and epsilon — deliberately not by sensitivity method, so releases of the
// same query under different sensitivity bounds share the same underlying
// draw and differ only by scale.
Rng noise_stream(std::uint64_t seed, std::string_view queryFingerprint, Mechanism mechanism,
                 double epsilon);

}  // namespace joinsense
