#pragma once

#include <optional>
#include <span>
#include <vector>

namespace coached::stats {

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-tailed p for Student's t with `df` degrees of freedom (df may be fractional).
double student_t_two_tailed(double t, double df);
// Upper tail P(F > f) for the F distribution.
double f_upper_tail(double f, double df1, double df2);

// NaN for empty input.
double mean(std::span<const double> xs);
// n-1 denominator; NaN below two values.
double sample_variance(std::span<const double> xs);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_two_tailed = 1.0;
};

enum class TTestVariant { kWelch, kPooled };

// Throws Error(kValidationError) for groups smaller than two and
// Error(kDegenerateVariance) when both groups are constant.
TTestResult welch_t(std::span<const double> a, std::span<const double> b);
TTestResult pooled_t(std::span<const double> a, std::span<const double> b);
TTestResult t_test(std::span<const double> a, std::span<const double> b, TTestVariant variant);

struct OlsFit {
  std::vector<double> beta;  // one per column kept
  std::vector<bool> kept;    // which design columns were linearly independent
  double rss = 0.0;
  std::size_t rank = 0;
};

// Least squares by Householder QR with column dropping: a column whose
// residual norm after projection on earlier kept columns falls below
// `tolerance` times its own norm is dropped.
OlsFit ols(const std::vector<std::vector<double>>& columns, std::span<const double> y,
           double tolerance = 1e-10);

struct AncovaObservation {
  double score = 0.0;
  bool treatment = false;  // vsc = true, appropriate = false
  double length = 0.0;
};

struct AncovaResult {
  double f_group = 0.0;
  double p_group = 1.0;
  std::optional<double> beta_length;  // absent when the covariate is constant
  double df_residual = 0.0;
};

/// score = b0 + b1*[treatment] + b2*length against the model without the
/// group term. A constant covariate is dropped, which reduces the test to a
/// one-way ANOVA on the two groups. Throws Error(kSingularDesign) when the
/// group effect is not estimable and Error(kValidationError) below four
/// observations.
AncovaResult ancova_group_length(std::span<const AncovaObservation> observations);

}  // namespace coached::stats
