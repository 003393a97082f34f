#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "osebm/param_store.hpp"
#include "osebm/tape.hpp"

namespace osebm {

struct FdReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double tol = 0.0;
  int checked = 0;
};

// Central-difference check of reverse-mode gradients. `build` must be a
// deterministic tape builder (any sampling noise frozen by the caller); it is
// re-evaluated twice per parameter coordinate.
inline FdReport finite_diff_check(ParamStore& store, const std::vector<std::string>& names,
                                  const std::function<Var(Tape&)>& build, double step = 1e-5,
                                  double tol = 1e-4) {
  auto eval = [&]() {
    Tape tape(&store);
    Var loss = build(tape);
    const DenseMatrix& v = tape.value(loss);
    if (v.rows != 1 || v.cols != 1) throw std::invalid_argument("finite_diff_check: loss must be scalar");
    return v.data[0];
  };

  store.zero_grads();
  {
    Tape tape(&store);
    tape.backward(build(tape));
  }
  std::map<std::string, DenseMatrix> analytic;
  for (const std::string& name : names) analytic[name] = store.grad(name);

  FdReport report;
  report.tol = tol;
  report.pass = true;
  for (const std::string& name : names) {
    DenseMatrix& v = store.value(name);
    for (size_t i = 0; i < v.size(); ++i) {
      const double saved = v.data[i];
      v.data[i] = saved + step;
      const double fp = eval();
      v.data[i] = saved - step;
      const double fm = eval();
      v.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[name].data[i];
      const double diff = std::abs(fd - an);
      // Below ~1e-9 the central difference is dominated by float cancellation.
      const double rel = diff <= 1e-9 ? 0.0 : diff / std::max({std::abs(fd), std::abs(an), 1e-8});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = static_cast<int>(i);
      }
      if (rel > tol) report.pass = false;
    }
  }
  return report;
}

}  // namespace osebm
