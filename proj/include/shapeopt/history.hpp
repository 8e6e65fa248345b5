#pragma once

#include <vector>

namespace shapeopt {

/// One accepted inner iterate of the augmented-Lagrangian solver.
struct IterationRecord {
  int outer_iter = 0;
  int inner_iter = 0;
  double objective = 0.0;  // J without the multiplier/penalty terms
  double constraint = 0.0;
  double penalty = 0.0;
  double multiplier = 0.0;
  double tr_radius = 0.0;
  double step_norm = 0.0;
  double grad_norm = 0.0;
  double min_det_ratio = 1.0;
};

using ConvergenceRecord = std::vector<IterationRecord>;

}  // namespace shapeopt
