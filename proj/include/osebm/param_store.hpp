#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/rng.hpp"

namespace osebm {

// Named parameter arrays with matching gradient slots. Iteration order is the
// sorted name order, which serialization and the optimizers rely on.
class ParamStore {
 public:
  struct Entry {
    DenseMatrix value;
    DenseMatrix grad;
  };

  void add(const std::string& name, int rows, int cols) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate param " + name);
    entries_[name] = Entry{DenseMatrix(rows, cols), DenseMatrix(rows, cols)};
  }

  // Gaussian init scaled by 1/sqrt(fan_in) with fan_in = rows of a weight matrix.
  void add_randn(const std::string& name, int rows, int cols, Rng& rng, double scale) {
    add(name, rows, cols);
    DenseMatrix& v = entries_[name].value;
    for (double& x : v.data) x = scale * rng.normal();
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  DenseMatrix& value(const std::string& name) { return find(name).value; }
  const DenseMatrix& value(const std::string& name) const { return find(name).value; }
  DenseMatrix& grad(const std::string& name) { return find(name).grad; }
  const DenseMatrix& grad(const std::string& name) const { return find(name).grad; }

  void zero_grads() {
    for (auto& [name, e] : entries_)
      for (double& g : e.grad.data) g = 0.0;
  }

  std::vector<std::string> names(const std::string& prefix = "") const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
  }

  size_t count() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Entry& find(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
  }
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown param " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace osebm
