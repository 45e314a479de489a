#pragma once

#include <cstdint>

#include "trkd/checkpoint.hpp"
#include "trkd/dataset.hpp"
#include "trkd/trainer.hpp"
#include "trkd/verify_eval.hpp"

namespace trkd {

struct EvalReport {
    double eer = 0.0;  // fraction
    TrialScoreSet scores;
};

/// Held-out EER of a network's embeddings.
inline EvalReport evaluate_network(const Network& net, const LabeledSet& heldout,
                                   std::size_t pairs_per_class, std::uint64_t seed) {
    if (static_cast<std::size_t>(heldout.x.rows()) != net.body.spec().input_dim())
        throw ShapeError("evaluate: data has input dim " + std::to_string(heldout.x.rows()) +
                         ", checkpoint expects " + std::to_string(net.body.spec().input_dim()));
    EvalReport r;
    r.scores = build_trials(embed(net, heldout.x), heldout.labels, pairs_per_class, seed);
    r.eer = compute_eer(r.scores);
    return r;
}

}  // namespace trkd
