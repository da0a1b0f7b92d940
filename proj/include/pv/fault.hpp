#pragma once

// Deliberate defects for negative-control runs of the verification suite.

namespace pv::fault {

enum class Point { none, conv3d_weight_grad };

void inject(Point point);
Point injected();

}  // namespace pv::fault
