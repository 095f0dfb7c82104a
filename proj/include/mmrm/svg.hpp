// Copyright 2026 The mmrm-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal SVG writers for accuracy heatmaps and line charts. Output depends
// only on the inputs, so reruns produce byte-identical files.

#pragma once

#include <string>
#include <vector>

#include "mmrm/rmeval.hpp"

namespace mmrm::svg {

std::string heatmap(const GenMatrix& m, const std::string& title);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// x is drawn on a log2 axis when log_x is set.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series, bool log_x);

std::string escape(const std::string& text);

}  // namespace mmrm::svg
