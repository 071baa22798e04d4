#pragma once

namespace svc {

// Named loss terms; total is the sum of whichever terms the stage activates
// (inactive terms stay 0).
struct LossReport {
  double l_s_ce = 0.0;   // semantic cross-entropy
  double l_a_ce = 0.0;   // acoustic code cross-entropy
  double l_tf = 0.0;     // teacher-foresight MSE
  double l_s_mse = 0.0;  // intermediate-layer supervision MSE
  double total = 0.0;
};

}  // namespace svc
