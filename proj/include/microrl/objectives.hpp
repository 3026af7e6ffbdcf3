#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "microrl/policy.hpp"

namespace microrl {

enum class Method { grpo, grpo_pos, rgra, reinforce_raw, raft, sft };

std::string method_name(Method m);
Method method_from_name(std::string_view name);

// One prompt with its sampled completions and everything needed to weight
// their tokens. logp_current must be evaluated under the live policy that the
// gradient is taken against; logp_old/logp_ref come from the frozen snapshots
// and may stay empty for methods (or beta == 0) that do not need them.
struct CompletionGroup {
    std::vector<int> prompt;
    std::vector<std::vector<int>> completions;
    std::vector<double> rewards;
    std::vector<std::vector<double>> logp_current;
    std::vector<std::vector<double>> logp_old;
    std::vector<std::vector<double>> logp_ref;

    int size() const { return static_cast<int>(completions.size()); }
};

// Group-standardized advantages: (r_i - mean) / max(stddev, floor) with the
// population standard deviation, plus their non-negative truncation.
struct AdvantageSet {
    std::vector<double> advantages;
    std::vector<double> truncated;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ObjectiveConfig {
    double epsilon = 0.2;     // ratio clip half-width
    double kl_beta = 0.005;   // KL penalty coefficient
    double std_floor = 1e-6;  // advantage denominator floor
};

// Requires at least two rewards.
AdvantageSet compute_advantages(const std::vector<double>& rewards, double std_floor = 1e-6);

// exp(logp_current - logp_old) for one token.
double policy_ratio(double logp_current, double logp_old);

// Requires lo <= hi.
double clip(double x, double lo, double hi);

// Per-token KL estimate rho - ln(rho) - 1 with rho = exp(logp_ref -
// logp_current). Zero when the policies agree, non-negative always.
double kl_estimate(double logp_current, double logp_ref);

// Per-completion token terms shared by the gradient ops and exposed so tests
// can reproduce per-completion contributions exactly.
struct TokenTerms {
    std::vector<double> weights;  // d objective / d logp_current[t], scaled
    double objective = 0.0;       // scaled objective contribution
    double kl_sum = 0.0;          // unscaled sum of per-token kl estimates
    bool all_zero = true;         // no weight differs from 0.0
};

// Clipped-ratio surrogate terms: scale * (min(r*adv, clip(r)*adv) - beta*kl).
// lp_ref may be null when beta == 0.
TokenTerms grpo_token_terms(const std::vector<double>& lp_cur, const std::vector<double>& lp_old,
                            const std::vector<double>* lp_ref, double adv,
                            const ObjectiveConfig& cfg, double scale);

// Terms linear in the log-prob: scale * (coeff * logp - beta*kl). Used with
// coeff = advantage (score-term updates) or coeff = raw reward.
TokenTerms linear_token_terms(const std::vector<double>& lp_cur,
                              const std::vector<double>* lp_ref, double coeff, double beta,
                              double scale);

// Group statistics reported alongside each accumulated gradient. `objective`
// is the group-mean value being maximized (surrogate minus KL penalty);
// kl_mean averages the per-token KL estimate when a reference is available.
struct ObjectiveStats {
    double objective = 0.0;
    double kl_mean = 0.0;
    long long token_count = 0;
};

// Each op adds the ascent gradient of its objective, averaged per group
// ((1/G) sum_i (1/|o_i|) sum_t ...), into buf.
ObjectiveStats grpo_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                             const ObjectiveConfig& cfg, const PolicyModel& current,
                             GradientBuffer& buf);

// Same surrogate with advantages truncated at zero; negative-advantage
// completions keep only their KL term.
ObjectiveStats grpo_pos_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                                 const ObjectiveConfig& cfg, const PolicyModel& current,
                                 GradientBuffer& buf);

// Plain score-function update weighted by the standardized advantage; no
// ratio, no clipping.
ObjectiveStats rgra_gradient(const CompletionGroup& group, const AdvantageSet& adv,
                             const ObjectiveConfig& cfg, const PolicyModel& current,
                             GradientBuffer& buf);

// Score-function update weighted by the raw (uncentered) reward.
ObjectiveStats reinforce_raw_gradient(const CompletionGroup& group, const ObjectiveConfig& cfg,
                                      const PolicyModel& current, GradientBuffer& buf);

}  // namespace microrl
