#pragma once

#include <stdexcept>
#include <string>

namespace osebm {

// Non-finite values detected during sampling or training. Carries enough
// context for the CLI to report where the run blew up.
struct DivergenceError : std::runtime_error {
  int epoch = -1;
  int step = -1;

  DivergenceError(const std::string& what, int epoch_, int step_)
      : std::runtime_error(what), epoch(epoch_), step(step_) {}
};

}  // namespace osebm
