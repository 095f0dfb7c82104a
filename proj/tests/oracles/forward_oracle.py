#!/usr/bin/env python3
# Copyright 2026 The mmrm-lab Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Independent reference for the reward network forward pass.

Reads tests/data/forward_case.json (a seed-1 net and seed-2 inputs written
by the library), recomputes the scores with plain Python floats and stores
them under "expected". Run once; the test suite reads the frozen values.
"""

import json
import math
import sys
from pathlib import Path


def forward(net, v, q, a):
    dims = net["dims"]
    x = list(v) + list(q) + list(a)
    n_in = dims["d_v"] + dims["d_q"] + dims["d_a"]
    w1, b1, w2 = net["W1"], net["b1"], net["W2"]
    out = net["b2"]
    for h in range(dims["hidden"]):
        pre = b1[h] + math.fsum(w1[h * n_in + i] * x[i] for i in range(n_in))
        out += w2[h] * math.tanh(pre)
    return out


def bt_loss(margin):
    if margin > 0:
        return math.log1p(math.exp(-margin))
    return -margin + math.log1p(math.exp(margin))


def main(path):
    case = json.loads(Path(path).read_text())
    net = case["net"]
    zeros = [0.0] * len(case["v"])
    r1 = forward(net, case["v"], case["q"], case["a1"])
    r2 = forward(net, case["v"], case["q"], case["a2"])
    case["expected"] = {
        "forward_a1": r1,
        "forward_a2": r2,
        "masked_forward_a1": forward(net, zeros, case["q"], case["a1"]),
        "pair_loss_label_1": bt_loss(r1 - r2),
        "pair_loss_label_minus_1": bt_loss(r2 - r1),
    }
    Path(path).write_text(json.dumps(case, indent=1) + "\n")
    print(json.dumps(case["expected"], indent=1))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/forward_case.json")
