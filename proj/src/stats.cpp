#include "coached/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "coached/error.hpp"

namespace coached::stats {

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a,b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double df) {
  if (std::isnan(t) || !(df > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return std::min(1.0, incomplete_beta(df / 2.0, 0.5, x));
}

double f_upper_tail(double f, double df1, double df2) {
  if (std::isnan(f) || !(df1 > 0.0 && df2 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  const double x = df2 / (df2 + df1 * f);
  return std::min(1.0, incomplete_beta(df2 / 2.0, df1 / 2.0, x));
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

namespace {

void check_groups(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorKind::kValidationError, "t-test needs at least two values per group");
  }
}

}  // namespace

TTestResult welch_t(std::span<const double> a, std::span<const double> b) {
  check_groups(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a);
  const double vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0) {
    throw Error(ErrorKind::kDegenerateVariance, "both groups have zero variance");
  }
  const double sa = va / na;
  const double sb = vb / nb;
  TTestResult r;
  r.t = (mean(a) - mean(b)) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p_two_tailed = student_t_two_tailed(r.t, r.df);
  return r;
}

TTestResult pooled_t(std::span<const double> a, std::span<const double> b) {
  check_groups(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a);
  const double vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0) {
    throw Error(ErrorKind::kDegenerateVariance, "both groups have zero variance");
  }
  TTestResult r;
  r.df = na + nb - 2.0;
  const double pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / r.df;
  r.t = (mean(a) - mean(b)) / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  r.p_two_tailed = student_t_two_tailed(r.t, r.df);
  return r;
}

TTestResult t_test(std::span<const double> a, std::span<const double> b, TTestVariant variant) {
  return variant == TTestVariant::kWelch ? welch_t(a, b) : pooled_t(a, b);
}

OlsFit ols(const std::vector<std::vector<double>>& columns, std::span<const double> y,
           double tolerance) {
  const std::size_t n = y.size();
  // Householder reflections applied column by column; dependent columns are
  // skipped so R stays upper triangular over the kept set.
  std::vector<std::vector<double>> reflectors;
  std::vector<std::vector<double>> r_columns;  // R entries for kept columns
  std::vector<std::size_t> kept_index;
  OlsFit fit;
  fit.kept.assign(columns.size(), false);

  const auto apply = [&](std::vector<double>& v) {
    for (std::size_t k = 0; k < reflectors.size(); ++k) {
      const auto& h = reflectors[k];
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += h[i] * v[i];
      for (std::size_t i = k; i < n; ++i) v[i] -= 2.0 * dot * h[i];
    }
  };

  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != n) throw Error(ErrorKind::kValidationError, "design column length");
    std::vector<double> v = columns[c];
    double original = 0.0;
    for (double x : v) original += x * x;
    original = std::sqrt(original);
    apply(v);
    const std::size_t k = reflectors.size();
    if (k >= n) continue;
    double tail = 0.0;
    for (std::size_t i = k; i < n; ++i) tail += v[i] * v[i];
    tail = std::sqrt(tail);
    if (original == 0.0 || tail <= tolerance * original) continue;

    const double alpha = v[k] > 0.0 ? -tail : tail;
    std::vector<double> h(n, 0.0);
    for (std::size_t i = k; i < n; ++i) h[i] = v[i];
    h[k] -= alpha;
    double hn = 0.0;
    for (std::size_t i = k; i < n; ++i) hn += h[i] * h[i];
    hn = std::sqrt(hn);
    for (std::size_t i = k; i < n; ++i) h[i] /= hn;
    reflectors.push_back(std::move(h));

    std::vector<double> rcol(k + 1, 0.0);
    for (std::size_t i = 0; i < k; ++i) rcol[i] = v[i];
    rcol[k] = alpha;
    r_columns.push_back(std::move(rcol));
    kept_index.push_back(c);
    fit.kept[c] = true;
  }

  std::vector<double> qty(y.begin(), y.end());
  apply(qty);
  const std::size_t p = reflectors.size();
  fit.rank = p;
  std::vector<double> beta(p, 0.0);
  for (std::size_t i = p; i-- > 0;) {
    double s = qty[i];
    for (std::size_t j = i + 1; j < p; ++j) s -= r_columns[j][i] * beta[j];
    beta[i] = s / r_columns[i][i];
  }
  fit.beta = std::move(beta);
  double rss = 0.0;
  for (std::size_t i = p; i < n; ++i) rss += qty[i] * qty[i];
  fit.rss = rss;
  return fit;
}

AncovaResult ancova_group_length(std::span<const AncovaObservation> obs) {
  const std::size_t n = obs.size();
  if (n < 4) throw Error(ErrorKind::kValidationError, "ANCOVA needs at least four observations");

  std::vector<double> ones(n, 1.0);
  std::vector<double> group(n);
  std::vector<double> length(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    group[i] = obs[i].treatment ? 1.0 : 0.0;
    length[i] = obs[i].length;
    y[i] = obs[i].score;
  }

  // Group column last, so it is the one checked for estimability.
  const OlsFit full = ols({ones, length, group}, y);
  if (!full.kept[2]) {
    throw Error(ErrorKind::kSingularDesign, "group effect is not estimable for this design");
  }
  const bool length_kept = full.kept[1];
  const OlsFit reduced = length_kept ? ols({ones, length}, y) : ols({ones}, y);

  AncovaResult result;
  result.df_residual = static_cast<double>(n) - static_cast<double>(full.rank);
  if (result.df_residual <= 0.0) {
    throw Error(ErrorKind::kSingularDesign, "no residual degrees of freedom");
  }
  if (length_kept) result.beta_length = full.beta[1];

  const double y_mean = mean(y);
  double tss = 0.0;
  for (double v : y) tss += (v - y_mean) * (v - y_mean);
  const double delta = std::max(0.0, reduced.rss - full.rss);
  // Rounding-level difference: treat as F = 0.
  const double noise = 1e-12 * std::max(tss, std::numeric_limits<double>::min());
  if (delta <= noise) {
    result.f_group = 0.0;
    result.p_group = 1.0;
  } else if (full.rss <= noise) {
    result.f_group = std::numeric_limits<double>::infinity();
    result.p_group = 0.0;
  } else {
    result.f_group = delta / (full.rss / result.df_residual);
    result.p_group = f_upper_tail(result.f_group, 1.0, result.df_residual);
  }
  return result;
}

}  // namespace coached::stats
