// src/curve.cc

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

#include "chaingem/curve.h"

#include <istream>
#include <ostream>

#include "io_util.h"

namespace chaingem {

void write_curve_csv(std::ostream& os, const Curve& curve) {
  os << kCurveCsvHeader << '\n';
  for (const auto& r : curve) {
    os << r.step << ',' << r.task_id << ',' << r.split << ','
       << io::format_double(r.cer) << ',' << io::format_double(r.loss) << '\n';
  }
}

Curve read_curve_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCurveCsvHeader) {
    throw Error("curve CSV must start with header '" +
                std::string(kCurveCsvHeader) + "'");
  }
  Curve out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = io::split(line, ',');
    if (f.size() != 5) throw Error("malformed curve row: " + line);
    CurveRow r;
    r.step = io::parse_long(f[0]);
    r.task_id = static_cast<int>(io::parse_long(f[1]));
    r.split = std::string(f[2]);
    r.cer = io::parse_double(f[3]);
    r.loss = io::parse_double(f[4]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace chaingem
