#include "microrl/selection.hpp"

#include <cmath>
#include <stdexcept>

namespace microrl {

int raft_select(const std::vector<double>& rewards) {
    if (rewards.empty()) throw std::invalid_argument("raft_select: empty reward vector");
    int best = 0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (!std::isfinite(rewards[i])) {
            throw std::invalid_argument("raft_select: non-finite reward");
        }
        if (rewards[i] > rewards[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

double cross_entropy_gradient(const PolicyModel& m, const TokenSequence& seq,
                              GradientBuffer& buf) {
    if (seq.completion.empty()) {
        throw std::invalid_argument("cross_entropy_gradient: empty completion");
    }
    if (buf.g.size() != m.layout().total) {
        throw std::invalid_argument("cross_entropy_gradient: buffer size mismatch");
    }
    const std::vector<double> lp = log_probs(m, seq);
    const double n = static_cast<double>(lp.size());
    double loss = 0.0;
    for (double x : lp) loss -= x;
    loss /= n;
    const std::vector<double> weights(lp.size(), -1.0 / n);
    accumulate_weighted_logprob_grad(m, seq, weights, buf);
    return loss;
}

double cross_entropy_batch_gradient(const PolicyModel& m, const std::vector<TokenSequence>& batch,
                                    GradientBuffer& buf) {
    if (batch.empty()) {
        throw std::invalid_argument("cross_entropy_batch_gradient: empty batch");
    }
    if (buf.g.size() != m.layout().total) {
        throw std::invalid_argument("cross_entropy_batch_gradient: buffer size mismatch");
    }
    const double B = static_cast<double>(batch.size());
    double total = 0.0;
    for (const TokenSequence& seq : batch) {
        if (seq.completion.empty()) {
            throw std::invalid_argument("cross_entropy_batch_gradient: empty completion");
        }
        const std::vector<double> lp = log_probs(m, seq);
        const double n = static_cast<double>(lp.size());
        double loss = 0.0;
        for (double x : lp) loss -= x;
        loss /= n;
        total += loss;
        const std::vector<double> weights(lp.size(), -1.0 / (B * n));
        accumulate_weighted_logprob_grad(m, seq, weights, buf);
    }
    return total / B;
}

}  // namespace microrl
