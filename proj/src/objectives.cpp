#include "microrl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace microrl {

std::string method_name(Method m) {
    switch (m) {
        case Method::grpo: return "grpo";
        case Method::grpo_pos: return "grpo_pos";
        case Method::rgra: return "rgra";
        case Method::reinforce_raw: return "reinforce_raw";
        case Method::raft: return "raft";
        case Method::sft: return "sft";
    }
    return "?";
}

Method method_from_name(std::string_view name) {
    if (name == "grpo") return Method::grpo;
    if (name == "grpo_pos") return Method::grpo_pos;
    if (name == "rgra") return Method::rgra;
    if (name == "reinforce_raw") return Method::reinforce_raw;
    if (name == "raft") return Method::raft;
    if (name == "sft") return Method::sft;
    throw std::invalid_argument("unknown method: " + std::string(name));
}

AdvantageSet compute_advantages(const std::vector<double>& rewards, double std_floor) {
    const std::size_t G = rewards.size();
    if (G < 2) throw std::invalid_argument("compute_advantages: group size must be >= 2");
    if (!(std_floor > 0.0)) throw std::invalid_argument("compute_advantages: std floor must be > 0");

    AdvantageSet out;
    double sum = 0.0;
    bool constant = true;
    for (double r : rewards) {
        if (!std::isfinite(r)) throw std::invalid_argument("compute_advantages: non-finite reward");
        sum += r;
        if (r != rewards.front()) constant = false;
    }
    if (constant) {
        // A constant group carries no preference signal. Short-circuiting keeps
        // the advantages exactly zero even when the accumulated mean of the
        // repeated value rounds one ulp away from it.
        out.mean = rewards.front();
        out.stddev = 0.0;
        out.advantages.assign(G, 0.0);
        out.truncated.assign(G, 0.0);
        return out;
    }
    out.mean = sum / static_cast<double>(G);
    double var = 0.0;
    for (double r : rewards) {
        const double d = r - out.mean;
        var += d * d;
    }
    var /= static_cast<double>(G);  // population variance
    out.stddev = std::sqrt(var);
    const double denom = std::max(out.stddev, std_floor);

    out.advantages.resize(G);
    out.truncated.resize(G);
    for (std::size_t i = 0; i < G; ++i) {
        out.advantages[i] = (rewards[i] - out.mean) / denom;
        out.truncated[i] = std::max(out.advantages[i], 0.0);
    }
    return out;
}

double policy_ratio(double logp_current, double logp_old) {
    return std::exp(logp_current - logp_old);
}

double clip(double x, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clip: lo must be <= hi");
    return std::min(std::max(x, lo), hi);
}

double kl_estimate(double logp_current, double logp_ref) {
    // rho - ln(rho) - 1 with rho = exp(d); expm1 keeps the small-d case
    // accurate and non-negative.
    const double d = logp_ref - logp_current;
    return std::expm1(d) - d;
}

TokenTerms grpo_token_terms(const std::vector<double>& lp_cur, const std::vector<double>& lp_old,
                            const std::vector<double>* lp_ref, double adv,
                            const ObjectiveConfig& cfg, double scale) {
    if (lp_old.size() != lp_cur.size()) {
        throw std::invalid_argument("grpo_token_terms: logp length mismatch");
    }
    if (cfg.kl_beta != 0.0 && (lp_ref == nullptr || lp_ref->size() != lp_cur.size())) {
        throw std::invalid_argument("grpo_token_terms: reference log-probs required when beta != 0");
    }
    const double lo = 1.0 - cfg.epsilon, hi = 1.0 + cfg.epsilon;
    TokenTerms out;
    out.weights.resize(lp_cur.size());
    for (std::size_t t = 0; t < lp_cur.size(); ++t) {
        const double r = std::exp(lp_cur[t] - lp_old[t]);
        const double surr = std::min(r * adv, clip(r, lo, hi) * adv);
        double factor = 0.0;  // d surr / d logp_current[t]
        if (adv > 0.0) {
            factor = r <= hi ? adv * r : 0.0;
        } else if (adv < 0.0) {
            factor = r >= lo ? adv * r : 0.0;
        }
        double klw = 0.0, kl = 0.0;
        if (lp_ref != nullptr && lp_ref->size() == lp_cur.size()) {
            kl = kl_estimate(lp_cur[t], (*lp_ref)[t]);
            if (cfg.kl_beta != 0.0) klw = cfg.kl_beta * std::expm1((*lp_ref)[t] - lp_cur[t]);
        }
        const double w = scale * (factor + klw);
        out.weights[t] = w;
        if (w != 0.0) out.all_zero = false;
        out.objective += scale * (surr - cfg.kl_beta * kl);
        out.kl_sum += kl;
    }
    return out;
}

TokenTerms linear_token_terms(const std::vector<double>& lp_cur,
                              const std::vector<double>* lp_ref, double coeff, double beta,
                              double scale) {
    if (beta != 0.0 && (lp_ref == nullptr || lp_ref->size() != lp_cur.size())) {
        throw std::invalid_argument("linear_token_terms: reference log-probs required when beta != 0");
    }
    TokenTerms out;
    out.weights.resize(lp_cur.size());
    for (std::size_t t = 0; t < lp_cur.size(); ++t) {
        double klw = 0.0, kl = 0.0;
        if (lp_ref != nullptr && lp_ref->size() == lp_cur.size()) {
            kl = kl_estimate(lp_cur[t], (*lp_ref)[t]);
            if (beta != 0.0) klw = beta * std::expm1((*lp_ref)[t] - lp_cur[t]);
        }
        const double w = scale * (coeff + klw);
        out.weights[t] = w;
        if (w != 0.0) out.all_zero = false;
        out.objective += scale * (coeff * lp_cur[t] - beta * kl);
        out.kl_sum += kl;
    }
    return out;
}

namespace {

void validate_group(const CompletionGroup& g, const PolicyModel& model, const GradientBuffer& buf,
                    bool need_old, bool need_ref) {
    const std::size_t n = g.completions.size();
    if (n == 0) throw std::invalid_argument("objective gradient: empty completion group");
    if (g.rewards.size() != n || g.logp_current.size() != n) {
        throw std::invalid_argument("objective gradient: group field sizes disagree");
    }
    if (need_old && g.logp_old.size() != n) {
        throw std::invalid_argument("objective gradient: sampling-time log-probs missing");
    }
    if (need_ref && g.logp_ref.size() != n) {
        throw std::invalid_argument("objective gradient: reference log-probs missing");
    }
    if (buf.g.size() != model.layout().total) {
        throw std::invalid_argument("objective gradient: buffer size mismatch");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (g.completions[i].empty()) {
            throw std::invalid_argument("objective gradient: empty completion");
        }
        if (g.logp_current[i].size() != g.completions[i].size()) {
            throw std::invalid_argument("objective gradient: logp_current length mismatch");
        }
    }
}

// Shared driver: build per-completion terms, skip all-zero completions so
// they leave the buffer untouched bit-for-bit, and collect stats.
template <typename TermsFn>
ObjectiveStats run_group(const CompletionGroup& group, const PolicyModel& current,
                         GradientBuffer& buf, TermsFn&& terms_for) {
    ObjectiveStats stats;
    const double G = static_cast<double>(group.size());
    double kl_sum = 0.0;
    for (int i = 0; i < group.size(); ++i) {
        const double scale = 1.0 / (G * static_cast<double>(group.completions[i].size()));
        const TokenTerms terms = terms_for(i, scale);
        stats.objective += terms.objective;
        kl_sum += terms.kl_sum;
        stats.token_count += static_cast<long long>(group.completions[i].size());
        if (!terms.all_zero) {
            TokenSequence seq{group.prompt, group.completions[i]};
            accumulate_weighted_logprob_grad(current, seq, terms.weights, buf);
        }
    }
    if (stats.token_count > 0 && !group.logp_ref.empty()) {
        stats.kl_mean = kl_sum / static_cast<double>(stats.token_count);
    }
    return stats;
}

ObjectiveStats grpo_like(const CompletionGroup& group, const std::vector<double>& advantages,
                         const ObjectiveConfig& cfg, const PolicyModel& current,
                         GradientBuffer& buf) {
    validate_group(group, current, buf, /*need_old=*/true, /*need_ref=*/cfg.kl_beta != 0.0);
    if (advantages.size() != group.completions.size()) {
        throw std::invalid_argument("objective gradient: advantage count mismatch");
    }
    return run_group(group, current, buf, [&](int i, double scale) {
        const std::vector<double>* ref =
            group.logp_ref.empty() ? nullptr : &group.logp_ref[static_cast<std::size_t>(i)];
        return grpo_token_terms(group.logp_current[static_cast<std::size_t>(i)],
                                group.logp_old[static_cast<std::size_t>(i)], ref,
                                advantages[static_cast<std::size_t>(i)], cfg, scale);
    });
}

ObjectiveStats linear_like(const CompletionGroup& group, const std::vector<double>& coeffs,
                           const ObjectiveConfig& cfg, const PolicyModel& current,
                           GradientBuffer& buf) {
    validate_group(group, current, buf, /*need_old=*/false, /*need_ref=*/cfg.kl_beta != 0.0);
    if (coeffs.size() != group.completions.size()) {
        throw std::invalid_argument("objective gradient: coefficient count mismatch");
    }
    return run_group(group, current, buf, [&](int i, double scale) {
        const std::vector<double>* ref =
            group.logp_ref.empty() ? nullptr : &group.logp_ref[static_cast<std::size_t>(i)];
        return linear_token_terms(group.logp_current[static_cast<std::size_t>(i)], ref,
                                  coeffs[static_cast<std::size_t>(i)], cfg.kl_beta, scale);
    });
}

}  // namespace

ObjectiveStats grpo_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                             const ObjectiveConfig& cfg, const PolicyModel& current,
                             GradientBuffer& buf) {
    return grpo_like(group, adv.advantages, cfg, current, buf);
}

ObjectiveStats grpo_pos_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                                 const ObjectiveConfig& cfg, const PolicyModel& current,
                                 GradientBuffer& buf) {
    return grpo_like(group, adv.truncated, cfg, current, buf);
}

ObjectiveStats rgra_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                             const ObjectiveConfig& cfg, const PolicyModel& current,
                             GradientBuffer& buf) {
    return linear_like(group, adv.advantages, cfg, current, buf);
}

ObjectiveStats reinforce_raw_gradient(const CompletionGroup& group, const ObjectiveConfig& cfg,
                                      const PolicyModel& current, GradientBuffer& buf) {
    return linear_like(group, group.rewards, cfg, current, buf);
}

}  // namespace microrl
