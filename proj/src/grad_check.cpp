#include "loopformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace loopformer {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h, double tol) {
  for (const auto& [name, t] : params) {
    (void)name;
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
    for (const auto& [name, t] : params) {
      (void)name;
      analytic.push_back(t.has_grad() ? t.node()->grad
                                      : std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
    }
  }

  GradCheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    auto& data = params[p].second.node()->data;
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f().item();
      data[i] = saved - h;
      const double fm = f().item();
      data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
      const double err = std::fabs(a - fd) / denom;
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.entries;
      if (err > tol) {
        report.failures.push_back({params[p].first, static_cast<int64_t>(i), a, fd, err});
      }
    }
  }
  return report;
}

}  // namespace loopformer
