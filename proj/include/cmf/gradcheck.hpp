#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cmf/tensor.hpp"

namespace cmf {

/// Raised when a function handed to finite_difference_check evaluates to
/// different values on repeated calls.
struct DeterminismError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckItem {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct CheckReport {
  double eps = 0.0;
  double tol = 0.0;
  double max_rel_err = 0.0;
  bool pass = true;
  std::vector<CheckItem> items;

  void add(std::string name, double err) {
    items.push_back({std::move(name), err, err < tol});
    max_rel_err = std::max(max_rel_err, err);
    pass = pass && items.back().pass;
  }
  void merge(const CheckReport& other) {
    for (const auto& it : other.items) {
      items.push_back(it);
      max_rel_err = std::max(max_rel_err, it.max_rel_err);
      pass = pass && it.pass;
    }
  }
  std::string summary() const;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Compares the analytic gradient of f (a deterministic scalar-valued forward
/// pass over `params`) against central finite differences, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-6) as the
/// denominator. f is evaluated twice up front; a value mismatch raises
/// DeterminismError.
CheckReport finite_difference_check(const std::function<Tensor()>& f, const NamedParams& params,
                                    double eps = 1e-5, double tol = 1e-4);

}  // namespace cmf
