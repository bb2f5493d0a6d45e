#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "joinsense/errors.hpp"
#include "joinsense/mechanisms.hpp"
#include "joinsense/rng.hpp"

using namespace joinsense;

namespace {

double median_abs(std::vector<double> v) {
  for (double& x : v) x = std::abs(x);
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (v[(n - 1) / 2] + v[n / 2]) / 2.0;
}

SensitivityReport laplace_report(double value, double epsilon, double delta) {
  SensitivityReport r;
  r.method = Method::RS;
  r.value = value;
  r.params = SmoothingParams::laplace(epsilon, delta);
  return r;
}

SensitivityReport cauchy_report(double value, double epsilon, double gamma) {
  SensitivityReport r;
  r.method = Method::RS;
  r.value = value;
  r.params = SmoothingParams::general_cauchy(epsilon, gamma);
  return r;
}

}  // namespace

TEST_CASE("laplace draws match the target distribution") {
  Rng rng = Rng::stream(99, {1});
  const double b = 2.0;
  const int n = 20000;
  std::vector<double> draws(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    draws[i] = laplace_noise(b, rng);
    sum += draws[i];
  }
  const double mean = sum / n;
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= n - 1;
  CHECK(std::abs(mean) < 0.1);                        // sd/sqrt(n) = 0.02
  CHECK(var == doctest::Approx(2.0 * b * b).epsilon(0.15));
  // The median of |Laplace(b)| is b·ln 2.
  CHECK(median_abs(draws) == doctest::Approx(b * std::log(2.0)).epsilon(0.05));
}

TEST_CASE("laplace scale validation") {
  Rng rng = Rng::stream(1, {2});
  CHECK(laplace_noise(0.0, rng) == 0.0);
  CHECK_THROWS_AS(laplace_noise(-1.0, rng), UsageError);
  CHECK_THROWS_AS(laplace_noise(std::numeric_limits<double>::infinity(), rng), UsageError);
  CHECK_THROWS_AS(laplace_noise(std::numeric_limits<double>::quiet_NaN(), rng), UsageError);
}

TEST_CASE("power-tail draws respect the shape parameter") {
  Rng rng = Rng::stream(5, {3});
  CHECK_THROWS_AS(general_cauchy_noise(1.0, rng), ConfigError);
  CHECK_THROWS_AS(general_cauchy_noise(0.5, rng), ConfigError);
  // Symmetric around zero: the sample median should be near 0.
  std::vector<double> draws(20001);
  for (double& d : draws) d = general_cauchy_noise(4.0, rng);
  std::sort(draws.begin(), draws.end());
  CHECK(std::abs(draws[draws.size() / 2]) < 0.1);
}

TEST_CASE("global release calibrates to global sensitivity") {
  Rng rng = Rng::stream(7, {4});
  const NoisyAnswer a = release_global(10.0, 1.0, 0.5, rng);
  CHECK(a.mechanism == Mechanism::LaplaceGlobal);
  CHECK(a.scale == doctest::Approx(2.0));  // GS/epsilon
  CHECK(a.trueAnswer == 10.0);
  CHECK(a.sensitivity == 1.0);
  CHECK(a.deviation() == doctest::Approx(std::abs(a.noisyValue - 10.0)));

  Rng rng2 = Rng::stream(7, {4});
  CHECK_THROWS_AS(
      release_global(10.0, std::numeric_limits<double>::infinity(), 0.5, rng2), UsageError);
  CHECK_THROWS_AS(release_global(10.0, 1.0, 0.0, rng2), ConfigError);
  CHECK_THROWS_AS(release_global(10.0, 1.0, -1.0, rng2), ConfigError);
}

TEST_CASE("smooth laplace release checks its calibration") {
  const double eps = 0.5, delta = 1e-6;
  Rng rng = Rng::stream(11, {5});
  const SensitivityReport rep = laplace_report(3.0, eps, delta);
  const NoisyAnswer a = release_smooth_laplace(100.0, rep, eps, delta, rng);
  CHECK(a.mechanism == Mechanism::LaplaceSmooth);
  CHECK(a.scale == doctest::Approx(2.0 * 3.0 / eps));
  CHECK(a.sensitivity == 3.0);

  Rng rng2 = Rng::stream(11, {5});
  // Mismatched epsilon, delta, or smoothing family must be refused.
  CHECK_THROWS_AS(release_smooth_laplace(100.0, rep, 0.25, delta, rng2), ConfigError);
  CHECK_THROWS_AS(release_smooth_laplace(100.0, rep, eps, 1e-5, rng2), ConfigError);
  const SensitivityReport wrongKind = cauchy_report(3.0, eps, 4.0);
  CHECK_THROWS_AS(release_smooth_laplace(100.0, wrongKind, eps, delta, rng2), ConfigError);
  CHECK_THROWS_AS(release_smooth_laplace(100.0, rep, eps, 0.0, rng2), ConfigError);
  CHECK_THROWS_AS(release_smooth_laplace(100.0, rep, eps, 1.0, rng2), ConfigError);
}

TEST_CASE("power-tail release checks its calibration") {
  const double eps = 0.5, gamma = 4.0;
  Rng rng = Rng::stream(13, {6});
  const SensitivityReport rep = cauchy_report(3.0, eps, gamma);
  const NoisyAnswer a = release_general_cauchy(100.0, rep, eps, gamma, rng);
  CHECK(a.mechanism == Mechanism::GeneralCauchy);
  CHECK(a.scale == doctest::Approx(2.0 * (gamma + 1.0) * 3.0 / eps));

  Rng rng2 = Rng::stream(13, {6});
  CHECK_THROWS_AS(release_general_cauchy(100.0, rep, eps, 3.0, rng2), ConfigError);
  CHECK_THROWS_AS(release_general_cauchy(100.0, rep, 0.25, gamma, rng2), ConfigError);
  const SensitivityReport wrongKind = laplace_report(3.0, eps, 1e-6);
  CHECK_THROWS_AS(release_general_cauchy(100.0, wrongKind, eps, gamma, rng2), ConfigError);
}

TEST_CASE("noise draws scale linearly in the sensitivity") {
  // Same stream, different scales: the noise offset must scale exactly.
  const double eps = 1.0, delta = 1e-6;
  const SensitivityReport s1 = laplace_report(2.0, eps, delta);
  const SensitivityReport s2 = laplace_report(6.0, eps, delta);
  Rng a = noise_stream(42, "fp", Mechanism::LaplaceSmooth, eps);
  Rng b = noise_stream(42, "fp", Mechanism::LaplaceSmooth, eps);
  const NoisyAnswer r1 = release_smooth_laplace(0.0, s1, eps, delta, a);
  const NoisyAnswer r2 = release_smooth_laplace(0.0, s2, eps, delta, b);
  CHECK(r2.noisyValue == doctest::Approx(3.0 * r1.noisyValue).epsilon(1e-12));
}

TEST_CASE("matched sensitivity makes the power tail noisier in the median") {
  // At equal S and epsilon the power-tail scale is 2(gamma+1)S/eps = 10S/eps
  // versus 2S/eps for Laplace, and its density has heavier tails; the median
  // absolute deviation over many seeds must come out clearly larger.
  const double eps = 1.0, S = 1.0;
  const SensitivityReport lap = laplace_report(S, eps, 1e-6);
  const SensitivityReport gc = cauchy_report(S, eps, 4.0);
  std::vector<double> lapDev, gcDev;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng ra = noise_stream(seed, "fp", Mechanism::LaplaceSmooth, eps);
    Rng rb = noise_stream(seed, "fp", Mechanism::GeneralCauchy, eps);
    lapDev.push_back(release_smooth_laplace(0.0, lap, eps, 1e-6, ra).deviation());
    gcDev.push_back(release_general_cauchy(0.0, gc, eps, 4.0, rb).deviation());
  }
  CHECK(median_abs(gcDev) > median_abs(lapDev));
}

TEST_CASE("noise streams key on query, mechanism, and epsilon only") {
  Rng a = noise_stream(9, "fingerprint", Mechanism::LaplaceSmooth, 1.0);
  Rng b = noise_stream(9, "fingerprint", Mechanism::LaplaceSmooth, 1.0);
  CHECK(a.next_u64() == b.next_u64());

  Rng c = noise_stream(9, "fingerprint", Mechanism::LaplaceSmooth, 2.0);
  Rng d = noise_stream(9, "different", Mechanism::LaplaceSmooth, 1.0);
  Rng e = noise_stream(9, "fingerprint", Mechanism::GeneralCauchy, 1.0);
  Rng f = noise_stream(10, "fingerprint", Mechanism::LaplaceSmooth, 1.0);
  Rng base = noise_stream(9, "fingerprint", Mechanism::LaplaceSmooth, 1.0);
  const std::uint64_t ref = base.next_u64();
  CHECK(c.next_u64() != ref);
  CHECK(d.next_u64() != ref);
  CHECK(e.next_u64() != ref);
  CHECK(f.next_u64() != ref);
}

TEST_CASE("mechanism names are stable identifiers") {
  CHECK(std::string(mechanism_name(Mechanism::LaplaceGlobal)) == "laplace-global");
  CHECK(std::string(mechanism_name(Mechanism::LaplaceSmooth)) == "laplace-smooth");
  CHECK(std::string(mechanism_name(Mechanism::GeneralCauchy)) == "general-cauchy");
}
