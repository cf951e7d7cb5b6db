#include "msp/grad_check.hpp"

#include <cmath>

#include "msp/error.hpp"

namespace msp {

GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h, double tol) {
  require(h > 0.0, ErrorKind::contract, "grad_check step must be positive");

  for (auto& [name, p] : params) {
    (void)name;
    p.data()->grad.clear();
  }

  Tape tape;
  Tensor loss = f(&tape);
  require(loss.numel() == 1, ErrorKind::contract, "grad_check needs a scalar loss");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    (void)name;
    analytic.push_back(p.grad());  // copies; allocates zeros when untouched
  }

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    auto& vals = p.values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double lp = f(nullptr).value();
      vals[i] = saved - h;
      const double lm = f(nullptr).value();
      vals[i] = saved;

      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = params[pi].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace msp
