#pragma once

#include <span>
#include <vector>

namespace horizonlab::stats {

/// Sum in a fixed binary-tree order. The result depends only on the input
/// order, never on how the caller partitioned the work.
double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);
double median(std::vector<double> values);

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
  double rss = 0.0;
};

/// Ordinary least squares y ≈ intercept + slope·x.
LineFit linear_fit(std::span<const double> x, std::span<const double> y);

/// y ≈ scale·exp(rate·x), fitted log-linearly. `r2` and `rss` are measured on
/// y itself so they compare directly against a linear_fit of the same data.
struct ExpFit {
  double scale = 0.0;
  double rate = 0.0;
  double r2 = 0.0;
  double rss = 0.0;
};
ExpFit exponential_fit(std::span<const double> x, std::span<const double> y);

/// Gaussian-residual AIC for a k-parameter model.
double aic(double rss, std::size_t n, int k);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace horizonlab::stats
