#include "microrl/rollout.hpp"

#include <stdexcept>

#include "microrl/vocab.hpp"

namespace microrl {

namespace {

void validate_settings(const RolloutSettings& s) {
    if (s.group_size < 1) throw std::invalid_argument("rollout: group_size must be >= 1");
    if (!(s.temperature > 0.0)) throw std::invalid_argument("rollout: temperature must be > 0");
    if (s.max_new_tokens < 1) throw std::invalid_argument("rollout: max_new_tokens must be >= 1");
}

CompletionGroup make_empty_group(const TaskInstance& task, const RolloutSettings& s,
                                 bool with_ref) {
    CompletionGroup g;
    g.prompt = task.prompt_ids;
    g.completions.resize(static_cast<std::size_t>(s.group_size));
    g.rewards.resize(static_cast<std::size_t>(s.group_size));
    g.logp_current.resize(static_cast<std::size_t>(s.group_size));
    g.logp_old.resize(static_cast<std::size_t>(s.group_size));
    if (with_ref) g.logp_ref.resize(static_cast<std::size_t>(s.group_size));
    return g;
}

// Samples and scores one completion slot; called from both the serial and the
// OpenMP paths so they produce identical bits.
void fill_slot(const PolicyModel& sampler, const PolicyModel* ref, const TaskInstance& task,
               const RolloutSettings& s, std::uint64_t master_seed, long long step,
               int prompt_index, int g_idx, CompletionGroup& out) {
    const Vocabulary& voc = s.vocab ? *s.vocab : task_vocabulary();
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(step) + 1,
                        static_cast<std::uint64_t>(prompt_index),
                        static_cast<std::uint64_t>(g_idx)));
    SampleOptions opts;
    opts.temperature = s.temperature;
    opts.max_new_tokens = s.max_new_tokens;
    opts.eos_id = voc.eos_id;
    const TokenSequence seq = sample_completion(sampler, task.prompt_ids, opts, rng);

    const std::size_t k = static_cast<std::size_t>(g_idx);
    out.completions[k] = seq.completion;
    const RewardBreakdown rb = score_completion(voc.decode(seq.completion), task, s.format);
    out.rewards[k] = s.mask_correctness ? rb.format_reward : rb.total;
    out.logp_old[k] = log_probs(sampler, seq);
    if (ref) out.logp_ref[k] = log_probs(*ref, seq);
}

}  // namespace

CompletionGroup rollout_group(const PolicyModel& sampler, const PolicyModel* ref,
                              const TaskInstance& task, const RolloutSettings& s,
                              std::uint64_t master_seed, long long step, int prompt_index) {
    validate_settings(s);
    CompletionGroup g = make_empty_group(task, s, ref != nullptr);
    for (int i = 0; i < s.group_size; ++i) {
        fill_slot(sampler, ref, task, s, master_seed, step, prompt_index, i, g);
    }
    return g;
}

std::vector<CompletionGroup> rollout_batch_serial(const PolicyModel& sampler,
                                                  const PolicyModel* ref,
                                                  const std::vector<const TaskInstance*>& tasks,
                                                  const RolloutSettings& s,
                                                  std::uint64_t master_seed, long long step) {
    validate_settings(s);
    std::vector<CompletionGroup> groups;
    groups.reserve(tasks.size());
    for (std::size_t b = 0; b < tasks.size(); ++b) {
        groups.push_back(make_empty_group(*tasks[b], s, ref != nullptr));
        for (int i = 0; i < s.group_size; ++i) {
            fill_slot(sampler, ref, *tasks[b], s, master_seed, step, static_cast<int>(b), i,
                      groups.back());
        }
    }
    return groups;
}

std::vector<CompletionGroup> rollout_batch_parallel(const PolicyModel& sampler,
                                                    const PolicyModel* ref,
                                                    const std::vector<const TaskInstance*>& tasks,
                                                    const RolloutSettings& s,
                                                    std::uint64_t master_seed, long long step,
                                                    int threads) {
    validate_settings(s);
    if (threads < 1) threads = 1;
    std::vector<CompletionGroup> groups;
    groups.reserve(tasks.size());
    for (std::size_t b = 0; b < tasks.size(); ++b) {
        groups.push_back(make_empty_group(*tasks[b], s, ref != nullptr));
    }
    const long long total = static_cast<long long>(tasks.size()) * s.group_size;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (long long k = 0; k < total; ++k) {
        const int b = static_cast<int>(k / s.group_size);
        const int i = static_cast<int>(k % s.group_size);
        fill_slot(sampler, ref, *tasks[static_cast<std::size_t>(b)], s, master_seed, step, b, i,
                  groups[static_cast<std::size_t>(b)]);
    }
    return groups;
}

void refresh_logp_current(const PolicyModel& current, std::vector<CompletionGroup>& groups,
                          int threads) {
    if (threads < 1) threads = 1;
    // flatten (group, completion) indices once so the loop parallelizes evenly
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t b = 0; b < groups.size(); ++b) {
        if (groups[b].logp_current.size() != groups[b].completions.size()) {
            groups[b].logp_current.resize(groups[b].completions.size());
        }
        for (std::size_t i = 0; i < groups[b].completions.size(); ++i) slots.emplace_back(b, i);
    }
    const long long total = static_cast<long long>(slots.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (long long k = 0; k < total; ++k) {
        const auto [b, i] = slots[static_cast<std::size_t>(k)];
        TokenSequence seq{groups[b].prompt, groups[b].completions[i]};
        groups[b].logp_current[i] = log_probs(current, seq);
    }
}

BatchRolloutStats batch_rollout_stats(const std::vector<CompletionGroup>& groups,
                                      const std::vector<const TaskInstance*>& tasks,
                                      const AnswerFormat& fmt, const Vocabulary* vocab) {
    if (groups.size() != tasks.size()) {
        throw std::invalid_argument("batch_rollout_stats: groups/tasks size mismatch");
    }
    const Vocabulary& voc = vocab ? *vocab : task_vocabulary();
    BatchRolloutStats st;
    long long n = 0;
    for (std::size_t b = 0; b < groups.size(); ++b) {
        for (std::size_t i = 0; i < groups[b].completions.size(); ++i) {
            const RewardBreakdown rb =
                score_completion(voc.decode(groups[b].completions[i]), *tasks[b], fmt);
            st.mean_reward += groups[b].rewards[i];
            st.mean_resp_len += static_cast<double>(groups[b].completions[i].size());
            st.accuracy += rb.correctness_reward > 0.0 ? 1.0 : 0.0;
            st.format_rate += rb.format_reward > 0.0 ? 1.0 : 0.0;
            ++n;
        }
    }
    if (n > 0) {
        st.mean_reward /= static_cast<double>(n);
        st.mean_resp_len /= static_cast<double>(n);
        st.accuracy /= static_cast<double>(n);
        st.format_rate /= static_cast<double>(n);
    }
    return st;
}

namespace {

ObjectiveStats group_gradient(Method method, const CompletionGroup& group,
                              const AdvantageSet* adv, const ObjectiveConfig& cfg,
                              const PolicyModel& current, GradientBuffer& buf) {
    switch (method) {
        case Method::grpo:
            return grpo_gradient(group, *adv, cfg, current, buf);
        case Method::grpo_pos:
            return grpo_pos_gradient(group, *adv, cfg, current, buf);
        case Method::rgra:
            return rgra_gradient(group, *adv, cfg, current, buf);
        case Method::reinforce_raw:
            return reinforce_raw_gradient(group, cfg, current, buf);
        default:
            throw std::invalid_argument("batch_gradient: method '" + method_name(method) +
                                        "' has no group objective");
    }
}

void validate_batch_gradient_args(Method method, const std::vector<CompletionGroup>& groups,
                                  std::size_t begin, std::size_t end, double denom,
                                  const std::vector<AdvantageSet>& advs) {
    if (begin > end || end > groups.size()) {
        throw std::invalid_argument("batch_gradient: bad group range");
    }
    if (!(denom > 0.0)) throw std::invalid_argument("batch_gradient: denom must be > 0");
    if (method != Method::reinforce_raw && advs.size() != groups.size()) {
        throw std::invalid_argument("batch_gradient: advantage count mismatch");
    }
}

void merge_stats(ObjectiveStats& total, double& kl_weighted, const ObjectiveStats& st,
                 double denom) {
    total.objective += st.objective / denom;
    kl_weighted += st.kl_mean * static_cast<double>(st.token_count);
    total.token_count += st.token_count;
}

}  // namespace

ObjectiveStats batch_gradient_serial(Method method, const std::vector<CompletionGroup>& groups,
                                     std::size_t begin, std::size_t end, double denom,
                                     const std::vector<AdvantageSet>& advs,
                                     const ObjectiveConfig& cfg, const PolicyModel& current,
                                     GradientBuffer& buf) {
    validate_batch_gradient_args(method, groups, begin, end, denom, advs);
    ObjectiveStats total;
    double kl_weighted = 0.0;
    for (std::size_t b = begin; b < end; ++b) {
        GradientBuffer tmp(buf.g.size());
        const ObjectiveStats st = group_gradient(
            method, groups[b], advs.empty() ? nullptr : &advs[b], cfg, current, tmp);
        tmp.scale(1.0 / denom);
        buf.add(tmp);
        merge_stats(total, kl_weighted, st, denom);
    }
    if (total.token_count > 0) total.kl_mean = kl_weighted / static_cast<double>(total.token_count);
    return total;
}

ObjectiveStats batch_gradient_parallel(Method method, const std::vector<CompletionGroup>& groups,
                                       std::size_t begin, std::size_t end, double denom,
                                       const std::vector<AdvantageSet>& advs,
                                       const ObjectiveConfig& cfg, const PolicyModel& current,
                                       GradientBuffer& buf, int threads) {
    validate_batch_gradient_args(method, groups, begin, end, denom, advs);
    if (threads < 1) threads = 1;
    const std::size_t n = end - begin;
    std::vector<GradientBuffer> tmp(n);
    std::vector<ObjectiveStats> st(n);
    const long long total_n = static_cast<long long>(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (long long k = 0; k < total_n; ++k) {
        const std::size_t b = begin + static_cast<std::size_t>(k);
        tmp[static_cast<std::size_t>(k)] = GradientBuffer(buf.g.size());
        st[static_cast<std::size_t>(k)] =
            group_gradient(method, groups[b], advs.empty() ? nullptr : &advs[b], cfg, current,
                           tmp[static_cast<std::size_t>(k)]);
    }
    // merge in group order: bits are independent of the thread count
    ObjectiveStats total;
    double kl_weighted = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        tmp[k].scale(1.0 / denom);
        buf.add(tmp[k]);
        merge_stats(total, kl_weighted, st[k], denom);
    }
    if (total.token_count > 0) total.kl_mean = kl_weighted / static_cast<double>(total.token_count);
    return total;
}

}  // namespace microrl
