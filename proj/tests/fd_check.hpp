#pragma once

// Central finite-difference oracle for gradient checks. Kept independent of
// the autodiff code paths it validates: it only re-evaluates a loss closure
// under point perturbations of the model's own parameter storage.

#include <cmath>
#include <functional>
#include <string>

#include "stagecast/mat.hpp"
#include "stagecast/nn.hpp"

namespace fd {

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

struct Report {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
};

// Perturbs every entry of `storage` and compares the central difference of
// `eval` against `analytic`.
inline void check_tensor(const std::function<double()>& eval, stagecast::nn::Mat& storage,
                         const stagecast::nn::Mat& analytic, const std::string& name, Report& rep,
                         double h = 1e-5) {
  for (std::size_t i = 0; i < storage.size(); ++i) {
    const double orig = storage.d[i];
    storage.d[i] = orig + h;
    const double fp = eval();
    storage.d[i] = orig - h;
    const double fm = eval();
    storage.d[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double re = rel_err(fd, analytic.d[i]);
    ++rep.checked;
    if (re > rep.max_rel) {
      rep.max_rel = re;
      rep.worst = name + "[" + std::to_string(i) + "]";
    }
  }
}

}  // namespace fd
