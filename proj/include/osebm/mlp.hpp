#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "osebm/param_store.hpp"
#include "osebm/tape.hpp"

namespace osebm {

// Layer sizes including input and output; tanh on hidden layers, linear output.
struct MlpSpec {
  std::vector<int> sizes;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  int layer_count() const { return static_cast<int>(sizes.size()) - 1; }
};

inline void register_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  if (spec.sizes.size() < 2) throw std::invalid_argument("register_mlp: need at least one layer");
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.sizes[l], out = spec.sizes[l + 1];
    store.add_randn(prefix + "/W" + std::to_string(l), in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    store.add(prefix + "/b" + std::to_string(l), 1, out);
  }
}

// x: B x input_dim on the tape; returns B x output_dim.
inline Var mlp_apply(Tape& tape, const std::string& prefix, const MlpSpec& spec, Var x) {
  Var h = x;
  for (int l = 0; l < spec.layer_count(); ++l) {
    Var w = tape.param(prefix + "/W" + std::to_string(l));
    Var b = tape.param(prefix + "/b" + std::to_string(l));
    h = tape.add_row(tape.matmul(h, w), b);
    if (l + 1 < spec.layer_count()) h = tape.tanh_(h);
  }
  return h;
}

// Convenience single-vector forward pass through stored parameters.
inline std::vector<double> mlp_forward(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
                                       const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != spec.input_dim())
    throw std::invalid_argument("mlp_forward: input size mismatch");
  Tape tape(&store);
  Var in = tape.constant(DenseMatrix(1, spec.input_dim(), x));
  Var out = mlp_apply(tape, prefix, spec, in);
  return tape.value(out).data;
}

}  // namespace osebm
