#pragma once

#include <vector>

#include "microrl/policy.hpp"

namespace microrl {

// Index of the highest-reward completion; ties resolve to the lowest index.
// Requires a non-empty, finite reward vector.
int raft_select(const std::vector<double>& rewards);

// Mean negative log-likelihood of seq.completion under m. Adds the gradient
// of that loss (descent direction) into buf and returns the loss value.
double cross_entropy_gradient(const PolicyModel& m, const TokenSequence& seq,
                              GradientBuffer& buf);

// Batch mean of the per-sequence losses above; buf receives the gradient of
// the batch-mean loss.
double cross_entropy_batch_gradient(const PolicyModel& m, const std::vector<TokenSequence>& batch,
                                    GradientBuffer& buf);

}  // namespace microrl
