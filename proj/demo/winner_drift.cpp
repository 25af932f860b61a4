// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Winner-loss drift under plain DPO and under the safeguard, on the
// aggressive preset. Prints probe-batch curves as CSV:
//
//   sdpo_demo_winner_drift [preset] [checkpoints] > drift.csv

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "sdpo/harness/train.hpp"

using namespace sdpo;
using namespace sdpo::harness;

int main(int argc, char** argv) {
    const std::string name = argc > 1 ? argv[1] : "aggressive";
    const std::size_t checkpoints = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 20;
    try {
        RunConfig cfg = preset(name);
        cfg.probe_every = std::max<std::size_t>(1, cfg.steps / std::max<std::size_t>(checkpoints, 1));
        const auto ctx = prepare_context(cfg);

        RunConfig plain = cfg;
        plain.safeguard.mode = SafeguardMode::fixed;
        plain.safeguard.fixed_lambda = 1.0;

        std::printf("run,step,loss_w,loss_l,margin\n");
        for (const auto& [label, run] : {std::pair{"dpo", plain}, std::pair{"sdpo", cfg}}) {
            const auto res = run_training(run, ctx);
            for (const auto& p : res.probe)
                std::printf("%s,%zu,%.10g,%.10g,%.10g\n", label, p.step, p.loss_w, p.loss_l, p.margin);
            std::fprintf(stderr, "%-4s L^w %+.4f -> %+.4f   margin %+.4f -> %+.4f\n", label, res.probe_start().loss_w,
                         res.probe_end().loss_w, res.probe_start().margin, res.probe_end().margin);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
