// chaingem/curve.h

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CHAINGEM_CURVE_H_
#define CHAINGEM_CURVE_H_

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "chaingem/utterance.h"

namespace chaingem {

/// One evaluated point of a learning curve (long format).
struct CurveRow {
  long step = 0;
  int task_id = 0;
  std::string split;
  double cer = 0.0;
  double loss = 0.0;

  bool operator==(const CurveRow&) const = default;
};

using Curve = std::vector<CurveRow>;

/// A labelled set to evaluate during training. The span must outlive the call
/// that receives it.
struct EvalTarget {
  int task_id = 0;
  std::string split;
  std::span<const Utterance> data;
};

inline constexpr const char* kCurveCsvHeader = "step,task_id,split,cer,loss";

void write_curve_csv(std::ostream& os, const Curve& curve);
Curve read_curve_csv(std::istream& is);

}  // namespace chaingem

#endif  // CHAINGEM_CURVE_H_
