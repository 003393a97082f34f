#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "osebm/matrix.hpp"
#include "osebm/param_store.hpp"

namespace osebm {

class Tape;

// Handle into a tape. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  const Tape* owner = nullptr;
};

// Reverse-mode autodiff over matrix-valued nodes. Nodes are appended in
// topological order; backward() sweeps creation order in reverse and adds
// parameter-leaf gradients into the bound ParamStore (accumulating across
// calls, so callers zero the store between steps).
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  Var constant(DenseMatrix v) { return push(std::move(v), {}, nullptr, false); }

  // Differentiable leaf that is not a named parameter (e.g. a latent batch).
  Var input(DenseMatrix v) { return push(std::move(v), {}, nullptr, true); }

  Var param(const std::string& name) {
    if (!store_) throw std::logic_error("Tape: param() requires a bound ParamStore");
    Var v = push(store_->value(name), {}, nullptr, true);
    nodes_[v.id].param_name = name;
    return v;
  }

  // The reference stays valid as the tape grows (node storage never moves).
  const DenseMatrix& value(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() target with respect to v.
  const DenseMatrix& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.rows != n.value.rows) throw std::logic_error("Tape: no gradient computed for node");
    return n.grad;
  }

  Var add(Var a, Var b) {
    shape_match(a, b, "add");
    DenseMatrix out = value(a);
    const DenseMatrix& vb = value(b);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    return push(std::move(out), {a.id, b.id}, [](Tape& t, const Node& n) {
      t.accumulate(n.parents[0], n.grad);
      t.accumulate(n.parents[1], n.grad);
    });
  }

  Var sub(Var a, Var b) {
    shape_match(a, b, "sub");
    DenseMatrix out = value(a);
    const DenseMatrix& vb = value(b);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    return push(std::move(out), {a.id, b.id}, [](Tape& t, const Node& n) {
      t.accumulate(n.parents[0], n.grad);
      t.accumulate_scaled(n.parents[1], n.grad, -1.0);
    });
  }

  Var mul(Var a, Var b) {
    shape_match(a, b, "mul");
    DenseMatrix out = value(a);
    const DenseMatrix& vb = value(b);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    return push(std::move(out), {a.id, b.id}, [](Tape& t, const Node& n) {
      const DenseMatrix& va = t.nodes_[n.parents[0]].value;
      const DenseMatrix& vb2 = t.nodes_[n.parents[1]].value;
      if (t.needs_grad(n.parents[0])) {
        DenseMatrix g = n.grad;
        for (size_t i = 0; i < g.size(); ++i) g.data[i] *= vb2.data[i];
        t.accumulate(n.parents[0], g);
      }
      if (t.needs_grad(n.parents[1])) {
        DenseMatrix g = n.grad;
        for (size_t i = 0; i < g.size(); ++i) g.data[i] *= va.data[i];
        t.accumulate(n.parents[1], g);
      }
    });
  }

  Var scale(Var a, double c) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x *= c;
    return push(std::move(out), {a.id}, [c](Tape& t, const Node& n) {
      t.accumulate_scaled(n.parents[0], n.grad, c);
    });
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var matmul(Var a, Var b) {
    DenseMatrix out = osebm::matmul(value(a), value(b));
    return push(std::move(out), {a.id, b.id}, [](Tape& t, const Node& n) {
      const DenseMatrix& va = t.nodes_[n.parents[0]].value;
      const DenseMatrix& vb = t.nodes_[n.parents[1]].value;
      if (t.needs_grad(n.parents[0])) t.accumulate(n.parents[0], osebm::matmul(n.grad, transpose(vb)));
      if (t.needs_grad(n.parents[1])) t.accumulate(n.parents[1], osebm::matmul(transpose(va), n.grad));
    });
  }

  // a: B x n, row: 1 x n broadcast over rows.
  Var add_row(Var a, Var row) {
    const DenseMatrix& va = value(a);
    const DenseMatrix& vr = value(row);
    if (vr.rows != 1 || vr.cols != va.cols) throw std::invalid_argument("add_row: shape mismatch");
    DenseMatrix out = va;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += vr.at(0, j);
    return push(std::move(out), {a.id, row.id}, [](Tape& t, const Node& n) {
      t.accumulate(n.parents[0], n.grad);
      if (t.needs_grad(n.parents[1])) {
        DenseMatrix g(1, n.grad.cols);
        for (int i = 0; i < n.grad.rows; ++i)
          for (int j = 0; j < n.grad.cols; ++j) g.at(0, j) += n.grad.at(i, j);
        t.accumulate(n.parents[1], g);
      }
    });
  }

  Var tanh_(Var a) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x = std::tanh(x);
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      DenseMatrix g = n.grad;
      for (size_t i = 0; i < g.size(); ++i) g.data[i] *= 1.0 - n.value.data[i] * n.value.data[i];
      t.accumulate(n.parents[0], g);
    });
  }

  Var sigmoid_(Var a) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      DenseMatrix g = n.grad;
      for (size_t i = 0; i < g.size(); ++i) {
        const double y = n.value.data[i];
        g.data[i] *= y * (1.0 - y);
      }
      t.accumulate(n.parents[0], g);
    });
  }

  Var exp_(Var a) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x = std::exp(x);
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      DenseMatrix g = n.grad;
      for (size_t i = 0; i < g.size(); ++i) g.data[i] *= n.value.data[i];
      t.accumulate(n.parents[0], g);
    });
  }

  Var log_(Var a) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x = std::log(x);
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      DenseMatrix g = n.grad;
      const DenseMatrix& va = t.nodes_[n.parents[0]].value;
      for (size_t i = 0; i < g.size(); ++i) g.data[i] /= va.data[i];
      t.accumulate(n.parents[0], g);
    });
  }

  // Subgradient is zero where the input is clamped.
  Var clamp_(Var a, double lo, double hi) {
    DenseMatrix out = value(a);
    for (double& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
    return push(std::move(out), {a.id}, [lo, hi](Tape& t, const Node& n) {
      DenseMatrix g = n.grad;
      const DenseMatrix& va = t.nodes_[n.parents[0]].value;
      for (size_t i = 0; i < g.size(); ++i)
        if (va.data[i] <= lo || va.data[i] >= hi) g.data[i] = 0.0;
      t.accumulate(n.parents[0], g);
    });
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    DenseMatrix out(1, 1);
    out.data[0] = s;
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      t.accumulate_broadcast(n.parents[0], n.grad.data[0]);
    });
  }

  Var mean_all(Var a) {
    const size_t m = value(a).size();
    if (m == 0) throw std::invalid_argument("mean_all: empty matrix");
    double s = 0.0;
    for (double x : value(a).data) s += x;
    DenseMatrix out(1, 1);
    out.data[0] = s / static_cast<double>(m);
    return push(std::move(out), {a.id}, [m](Tape& t, const Node& n) {
      t.accumulate_broadcast(n.parents[0], n.grad.data[0] / static_cast<double>(m));
    });
  }

  // B x n -> 1 x n column means.
  Var mean_rows(Var a) {
    const DenseMatrix& va = value(a);
    if (va.rows == 0) throw std::invalid_argument("mean_rows: empty matrix");
    DenseMatrix out(1, va.cols);
    for (int i = 0; i < va.rows; ++i)
      for (int j = 0; j < va.cols; ++j) out.at(0, j) += va.at(i, j);
    for (double& x : out.data) x /= va.rows;
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      Node& p = t.nodes_[n.parents[0]];
      if (!t.needs_grad(n.parents[0])) return;
      t.ensure_grad(n.parents[0]);
      const double inv = 1.0 / p.value.rows;
      for (int i = 0; i < p.value.rows; ++i)
        for (int j = 0; j < p.value.cols; ++j) p.grad.at(i, j) += inv * n.grad.at(0, j);
    });
  }

  // Row-wise log(sum_j exp(a_ij)) with max subtraction: B x K -> B x 1.
  Var logsumexp_rows(Var a) {
    const DenseMatrix& va = value(a);
    if (va.cols == 0) throw std::invalid_argument("logsumexp_rows: zero columns");
    DenseMatrix out(va.rows, 1);
    for (int i = 0; i < va.rows; ++i) {
      double m = va.at(i, 0);
      for (int j = 1; j < va.cols; ++j) m = std::max(m, va.at(i, j));
      double s = 0.0;
      for (int j = 0; j < va.cols; ++j) s += std::exp(va.at(i, j) - m);
      out.at(i, 0) = m + std::log(s);
    }
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      Node& p = t.nodes_[n.parents[0]];
      if (!t.needs_grad(n.parents[0])) return;
      t.ensure_grad(n.parents[0]);
      for (int i = 0; i < p.value.rows; ++i) {
        const double gi = n.grad.at(i, 0);
        if (gi == 0.0) continue;
        for (int j = 0; j < p.value.cols; ++j)
          p.grad.at(i, j) += gi * std::exp(p.value.at(i, j) - n.value.at(i, 0));
      }
    });
  }

  Var softmax_rows(Var a) {
    const DenseMatrix& va = value(a);
    DenseMatrix out(va.rows, va.cols);
    for (int i = 0; i < va.rows; ++i) {
      double m = va.at(i, 0);
      for (int j = 1; j < va.cols; ++j) m = std::max(m, va.at(i, j));
      double s = 0.0;
      for (int j = 0; j < va.cols; ++j) {
        out.at(i, j) = std::exp(va.at(i, j) - m);
        s += out.at(i, j);
      }
      for (int j = 0; j < va.cols; ++j) out.at(i, j) /= s;
    }
    return push(std::move(out), {a.id}, [](Tape& t, const Node& n) {
      if (!t.needs_grad(n.parents[0])) return;
      t.ensure_grad(n.parents[0]);
      Node& p = t.nodes_[n.parents[0]];
      for (int i = 0; i < p.value.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < p.value.cols; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
        for (int j = 0; j < p.value.cols; ++j)
          p.grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
      }
    });
  }

  // Gather one column per row: out_i = a_{i, idx[i]}.
  Var pick_cols(Var a, std::vector<int> idx) {
    const DenseMatrix& va = value(a);
    if (static_cast<int>(idx.size()) != va.rows) throw std::invalid_argument("pick_cols: index count != rows");
    DenseMatrix out(va.rows, 1);
    for (int i = 0; i < va.rows; ++i) {
      if (idx[i] < 0 || idx[i] >= va.cols) throw std::invalid_argument("pick_cols: index out of range");
      out.at(i, 0) = va.at(i, idx[i]);
    }
    return push(std::move(out), {a.id}, [idx = std::move(idx)](Tape& t, const Node& n) {
      if (!t.needs_grad(n.parents[0])) return;
      t.ensure_grad(n.parents[0]);
      Node& p = t.nodes_[n.parents[0]];
      for (int i = 0; i < n.value.rows; ++i) p.grad.at(i, idx[i]) += n.grad.at(i, 0);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int rows = value(parts[0]).rows;
    int cols = 0;
    std::vector<int> ids;
    for (Var p : parts) {
      if (value(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
      cols += value(p).cols;
      ids.push_back(p.id);
    }
    DenseMatrix out(rows, cols);
    int c0 = 0;
    for (Var p : parts) {
      const DenseMatrix& vp = value(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < vp.cols; ++j) out.at(i, c0 + j) = vp.at(i, j);
      c0 += vp.cols;
    }
    return push(std::move(out), std::move(ids), [](Tape& t, const Node& n) {
      int c0 = 0;
      for (int pid : n.parents) {
        Node& p = t.nodes_[pid];
        if (t.needs_grad(pid)) {
          t.ensure_grad(pid);
          for (int i = 0; i < p.value.rows; ++i)
            for (int j = 0; j < p.value.cols; ++j) p.grad.at(i, j) += n.grad.at(i, c0 + j);
        }
        c0 += p.value.cols;
      }
    });
  }

  // Columns [c0, c1).
  Var slice_cols(Var a, int c0, int c1) {
    const DenseMatrix& va = value(a);
    if (c0 < 0 || c1 > va.cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    DenseMatrix out(va.rows, c1 - c0);
    for (int i = 0; i < va.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = va.at(i, j);
    return push(std::move(out), {a.id}, [c0](Tape& t, const Node& n) {
      if (!t.needs_grad(n.parents[0])) return;
      t.ensure_grad(n.parents[0]);
      Node& p = t.nodes_[n.parents[0]];
      for (int i = 0; i < n.value.rows; ++i)
        for (int j = 0; j < n.value.cols; ++j) p.grad.at(i, c0 + j) += n.grad.at(i, j);
    });
  }

  // Scale row i of a (B x n) by s_i (B x 1).
  Var scale_rows(Var a, Var s) {
    const DenseMatrix& va = value(a);
    const DenseMatrix& vs = value(s);
    if (vs.rows != va.rows || vs.cols != 1) throw std::invalid_argument("scale_rows: scaler must be B x 1");
    DenseMatrix out = va;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= vs.at(i, 0);
    return push(std::move(out), {a.id, s.id}, [](Tape& t, const Node& n) {
      const DenseMatrix& va2 = t.nodes_[n.parents[0]].value;
      const DenseMatrix& vs2 = t.nodes_[n.parents[1]].value;
      if (t.needs_grad(n.parents[0])) {
        DenseMatrix g = n.grad;
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) g.at(i, j) *= vs2.at(i, 0);
        t.accumulate(n.parents[0], g);
      }
      if (t.needs_grad(n.parents[1])) {
        DenseMatrix g(va2.rows, 1);
        for (int i = 0; i < va2.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < va2.cols; ++j) dot += n.grad.at(i, j) * va2.at(i, j);
          g.at(i, 0) = dot;
        }
        t.accumulate(n.parents[1], g);
      }
    });
  }

  // sum_m coeffs[m] * parts[m], all the same shape.
  Var lincomb(const std::vector<Var>& parts, std::vector<double> coeffs) {
    if (parts.empty() || parts.size() != coeffs.size())
      throw std::invalid_argument("lincomb: parts/coeffs mismatch");
    DenseMatrix out(value(parts[0]).rows, value(parts[0]).cols);
    std::vector<int> ids;
    for (size_t m = 0; m < parts.size(); ++m) {
      const DenseMatrix& vp = value(parts[m]);
      if (!vp.same_shape(out)) throw std::invalid_argument("lincomb: shape mismatch");
      for (size_t i = 0; i < out.size(); ++i) out.data[i] += coeffs[m] * vp.data[i];
      ids.push_back(parts[m].id);
    }
    return push(std::move(out), std::move(ids), [coeffs = std::move(coeffs)](Tape& t, const Node& n) {
      for (size_t m = 0; m < n.parents.size(); ++m)
        t.accumulate_scaled(n.parents[m], n.grad, coeffs[m]);
    });
  }

  // loss must be a 1 x 1 node of this tape. Accumulates parameter gradients
  // into the bound ParamStore.
  void backward(Var loss) {
    const int lid = check(loss);
    const Node& ln = nodes_[lid];
    if (ln.value.rows != 1 || ln.value.cols != 1)
      throw std::invalid_argument("backward: loss must be scalar (1 x 1)");

    // Mark ancestors of the loss so unrelated heads on the same tape cost nothing.
    std::vector<char> marked(nodes_.size(), 0);
    std::vector<int> stack{lid};
    marked[lid] = 1;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int pid : nodes_[id].parents)
        if (!marked[pid] && nodes_[pid].requires_grad) {
          marked[pid] = 1;
          stack.push_back(pid);
        }
    }

    for (Node& n : nodes_) n.grad = DenseMatrix();  // fresh pass
    ensure_grad(lid);
    nodes_[lid].grad.data[0] = 1.0;

    for (int id = lid; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!marked[id] || !n.backward_fn) continue;
      if (n.grad.rows == 0) continue;  // never reached by downstream gradient
      n.backward_fn(*this, n);
    }

    if (store_) {
      for (const Node& n : nodes_) {
        if (n.param_name.empty() || n.grad.rows == 0) continue;
        DenseMatrix& g = store_->grad(n.param_name);
        for (size_t i = 0; i < g.size(); ++i) g.data[i] += n.grad.data[i];
      }
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;  // empty until backward reaches it
    std::vector<int> parents;
    std::function<void(Tape&, const Node&)> backward_fn;
    bool requires_grad = false;
    std::string param_name;
  };

  int check(Var v) const {
    if (v.owner != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("Tape: variable does not belong to this tape");
    return v.id;
  }

  void shape_match(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.rows != n.value.rows || n.grad.cols != n.value.cols)
      n.grad = DenseMatrix(n.value.rows, n.value.cols);
  }

  void accumulate(int id, const DenseMatrix& g) {
    if (!needs_grad(id)) return;
    ensure_grad(id);
    DenseMatrix& dst = nodes_[id].grad;
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
  }

  void accumulate_scaled(int id, const DenseMatrix& g, double c) {
    if (!needs_grad(id)) return;
    ensure_grad(id);
    DenseMatrix& dst = nodes_[id].grad;
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += c * g.data[i];
  }

  void accumulate_broadcast(int id, double g) {
    if (!needs_grad(id)) return;
    ensure_grad(id);
    for (double& x : nodes_[id].grad.data) x += g;
  }

  Var push(DenseMatrix value, std::vector<int> parents,
           std::function<void(Tape&, const Node&)> backward_fn, bool leaf_requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward_fn = std::move(backward_fn);
    n.requires_grad = leaf_requires_grad;
    for (int pid : n.parents)
      if (nodes_[pid].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1, this};
  }

  ParamStore* store_;
  // Deque so that references handed out by value() stay valid while further
  // nodes are appended; nothing is ever erased during a tape's lifetime.
  std::deque<Node> nodes_;
};

}  // namespace osebm
