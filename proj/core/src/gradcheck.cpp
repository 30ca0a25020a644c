#include "svtr2/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace svtr2 {

GradCheckReport check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& f,
                                const std::vector<Tensor<double>>& inputs, double tolerance,
                                int sample_cap, double eps) {
  GradCheckReport rep;
  rep.name = name;
  rep.tolerance = tolerance;

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    for (const Tensor<double>& t : inputs) {
      const_cast<Tensor<double>&>(t).set_requires_grad(true);
      const_cast<Tensor<double>&>(t).zero_grad();
    }
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Tensor<double> loss = f();
    if (loss.numel() != 1) throw StateError(name + ": gradcheck loss must be scalar");
    tape.backward(loss);
    for (const Tensor<double>& t : inputs) {
      if (t.has_grad())
        analytic.push_back(t.grad_vec());
      else
        analytic.emplace_back(std::size_t(t.numel()), 0.0);
    }
  }

  auto eval = [&]() -> double { return f().at({0}); };

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = const_cast<Tensor<double>&>(inputs[ti]);
    const long long n = t.numel();
    std::set<long long> picks;
    if (sample_cap <= 0 || n <= sample_cap) {
      for (long long i = 0; i < n; ++i) picks.insert(i);
    } else {
      picks.insert(0);
      picks.insert(n - 1);
      long long argmax = 0;
      for (long long i = 1; i < n; ++i)
        if (std::abs(analytic[ti][std::size_t(i)]) > std::abs(analytic[ti][std::size_t(argmax)]))
          argmax = i;
      picks.insert(argmax);
      for (int k = 0; k < sample_cap; ++k) picks.insert((n * k) / sample_cap);
    }
    for (long long i : picks) {
      double* v = t.data() + i;
      const double saved = *v;
      *v = saved + eps;
      const double fp = eval();
      *v = saved - eps;
      const double fm = eval();
      *v = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[ti][std::size_t(i)];
      const double denom = std::max({std::abs(a), std::abs(numeric), kDenomFloor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = str_cat("input#", ti, "[", i, "]: analytic=", a, " numeric=", numeric);
      }
    }
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

}  // namespace svtr2
