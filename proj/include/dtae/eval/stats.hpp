#pragma once

#include <cstddef>
#include <span>

namespace dtae::eval {

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n − 1) standard deviation; 0 when n < 2
};

Summary summarize(std::span<const double> xs);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

// Welch's unequal-variance two-sample t-test. When both samples have zero
// variance the result is p = 1 for equal means and p = 0 otherwise.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace dtae::eval
