#pragma once

#include <cstdint>
#include <vector>

#include "microrl/objectives.hpp"
#include "microrl/policy.hpp"
#include "microrl/tasks.hpp"

namespace microrl {

struct RolloutSettings {
    int group_size = 8;
    double temperature = 1.0;
    int max_new_tokens = 64;
    bool mask_correctness = false;  // format-only rewards during the shaping stage
    AnswerFormat format;
    const Vocabulary* vocab = nullptr;  // null -> shared task_vocabulary()
};

// Samples group_size completions for one prompt from `sampler`, scores them,
// and fills rewards plus logp_old (under sampler) and, when ref is non-null,
// logp_ref. logp_current stays empty until refresh_logp_current. Completion g
// draws from its own stream seeded by (master_seed, step + 1, prompt_index,
// g), so the result does not depend on evaluation order or thread count.
CompletionGroup rollout_group(const PolicyModel& sampler, const PolicyModel* ref,
                              const TaskInstance& task, const RolloutSettings& s,
                              std::uint64_t master_seed, long long step, int prompt_index);

// Batch rollout, one group per task, prompt_index = position in `tasks`.
// The parallel variant spreads (prompt, completion) pairs across OpenMP
// threads and produces bit-identical groups for any thread count; the serial
// variant is the plain reference loop.
std::vector<CompletionGroup> rollout_batch_serial(const PolicyModel& sampler,
                                                  const PolicyModel* ref,
                                                  const std::vector<const TaskInstance*>& tasks,
                                                  const RolloutSettings& s,
                                                  std::uint64_t master_seed, long long step);
std::vector<CompletionGroup> rollout_batch_parallel(const PolicyModel& sampler,
                                                    const PolicyModel* ref,
                                                    const std::vector<const TaskInstance*>& tasks,
                                                    const RolloutSettings& s,
                                                    std::uint64_t master_seed, long long step,
                                                    int threads);

// Recomputes logp_current for every completion under the live policy.
void refresh_logp_current(const PolicyModel& current, std::vector<CompletionGroup>& groups,
                          int threads);

struct BatchRolloutStats {
    double mean_reward = 0.0;    // rewards as stored in the groups (post-shaping)
    double mean_resp_len = 0.0;  // tokens per completion, eos included
    double accuracy = 0.0;       // unmasked correctness rate, re-scored from text
    double format_rate = 0.0;
};

// Re-scores the sampled text to report shaping-independent accuracy.
BatchRolloutStats batch_rollout_stats(const std::vector<CompletionGroup>& groups,
                                      const std::vector<const TaskInstance*>& tasks,
                                      const AnswerFormat& fmt, const Vocabulary* vocab = nullptr);

// Adds (1/denom) * (per-group gradient of `method`) for groups[begin, end)
// into buf and returns combined stats (objective summed over groups / denom,
// token-weighted kl_mean). advs may be empty for reinforce_raw. The parallel
// variant fills one buffer per group across OpenMP threads and merges them in
// group order, so any thread count gives the same bits as the serial loop.
ObjectiveStats batch_gradient_serial(Method method, const std::vector<CompletionGroup>& groups,
                                     std::size_t begin, std::size_t end, double denom,
                                     const std::vector<AdvantageSet>& advs,
                                     const ObjectiveConfig& cfg, const PolicyModel& current,
                                     GradientBuffer& buf);
ObjectiveStats batch_gradient_parallel(Method method, const std::vector<CompletionGroup>& groups,
                                       std::size_t begin, std::size_t end, double denom,
                                       const std::vector<AdvantageSet>& advs,
                                       const ObjectiveConfig& cfg, const PolicyModel& current,
                                       GradientBuffer& buf, int threads);

}  // namespace microrl
