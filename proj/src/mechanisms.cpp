#include "joinsense/mechanisms.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "joinsense/errors.hpp"

namespace joinsense {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::LaplaceGlobal: return "laplace-global";
    case Mechanism::LaplaceSmooth: return "laplace-smooth";
    case Mechanism::GeneralCauchy: return "general-cauchy";
  }
  return "?";
}

double laplace_noise(double scale, Rng& rng) {
  if (scale < 0.0 || !std::isfinite(scale))
    throw UsageError("Laplace scale must be finite and non-negative");
  if (scale == 0.0) {
    (void)rng.next_unit();  // keep stream consumption independent of the scale
    return 0.0;
  }
  const double u = rng.next_unit();
  const double d = u - 0.5;
  double t = 1.0 - 2.0 * std::abs(d);
  if (t <= 0.0) t = 0x1.0p-53;  // u can be exactly 0; keep the tail finite
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return -scale * sign * std::log(t);
}

double general_cauchy_noise(double gamma, Rng& rng) {
  if (!(gamma > 1.0)) throw ConfigError("general Cauchy gamma must exceed 1");
  // |Z| has density proportional to 1/(1+z^gamma) on [0, inf). Proposal: with
  // probability (gamma-1)/gamma uniform on [0,1) (where the target is at most
  // 1), otherwise the power tail (gamma-1) z^(-gamma) on [1, inf). Acceptance
  // ratios below make the envelope tight on both pieces.
  const double pCentral = (gamma - 1.0) / gamma;
  double z = 0.0;
  for (;;) {
    const double u = rng.next_unit();
    double accept;
    if (u < pCentral) {
      z = rng.next_unit();
      accept = 1.0 / (1.0 + std::pow(z, gamma));
    } else {
      double v = 1.0 - rng.next_unit();
      if (v <= 0.0) v = 0x1.0p-53;
      z = std::pow(v, -1.0 / (gamma - 1.0));
      const double zg = std::pow(z, gamma);
      accept = zg / (1.0 + zg);
    }
    if (rng.next_unit() < accept) break;
  }
  return rng.next_unit() < 0.5 ? -z : z;
}

NoisyAnswer release_global(double answer, double globalSensitivity, double epsilon, Rng& rng) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!std::isfinite(globalSensitivity) || globalSensitivity < 0.0)
    throw UsageError("the global mechanism needs a finite global sensitivity; joins over "
                     "private relations have none — use a smooth bound instead");
  NoisyAnswer out;
  out.trueAnswer = answer;
  out.sensitivity = globalSensitivity;
  out.mechanism = Mechanism::LaplaceGlobal;
  out.scale = globalSensitivity / epsilon;
  out.noisyValue = answer + laplace_noise(out.scale, rng);
  return out;
}

NoisyAnswer release_smooth_laplace(double answer, const SensitivityReport& sensitivity,
                                   double epsilon, double delta, Rng& rng) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(delta > 0.0) || !(delta < 1.0))
    throw ConfigError("delta must lie strictly between 0 and 1");
  const SmoothingParams& sp = sensitivity.params;
  if (sp.kind != BetaKind::LaplaceSmooth || sp.epsilon != epsilon || sp.delta != delta)
    throw ConfigError("sensitivity was smoothed under different parameters than this "
                      "Laplace release requests");
  NoisyAnswer out;
  out.trueAnswer = answer;
  out.sensitivity = sensitivity.value;
  out.mechanism = Mechanism::LaplaceSmooth;
  out.scale = 2.0 * sensitivity.value / epsilon;
  out.noisyValue = answer + laplace_noise(out.scale, rng);
  return out;
}

NoisyAnswer release_general_cauchy(double answer, const SensitivityReport& sensitivity,
                                   double epsilon, double gamma, Rng& rng) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(gamma > 1.0)) throw ConfigError("general Cauchy gamma must exceed 1");
  const SmoothingParams& sp = sensitivity.params;
  if (sp.kind != BetaKind::GeneralCauchy || sp.epsilon != epsilon || sp.gamma != gamma)
    throw ConfigError("sensitivity was smoothed under different parameters than this "
                      "general-Cauchy release requests");
  NoisyAnswer out;
  out.trueAnswer = answer;
  out.sensitivity = sensitivity.value;
  out.mechanism = Mechanism::GeneralCauchy;
  out.scale = 2.0 * (gamma + 1.0) * sensitivity.value / epsilon;
  out.noisyValue = answer + out.scale * general_cauchy_noise(gamma, rng);
  return out;
}

Rng noise_stream(std::uint64_t seed, std::string_view queryFingerprint, Mechanism mechanism,
                 double epsilon) {
  return Rng::stream(seed, {stream_tag::kNoise, fnv1a(queryFingerprint),
                            static_cast<std::uint64_t>(mechanism),
                            std::bit_cast<std::uint64_t>(epsilon)});
}

}  // namespace joinsense
