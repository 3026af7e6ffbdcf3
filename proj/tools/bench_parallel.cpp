// Benchmarks the OpenMP rollout and batch-gradient kernels against their
// serial reference implementations and verifies that both produce the same
// numbers.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "microrl/rollout.hpp"
#include "microrl/trainer.hpp"
#include "microrl/vocab.hpp"

using namespace microrl;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    int prompts = 32, group = 8, max_new = 64, reps = 3;
    std::vector<int> thread_counts{1, 2, 4};
    std::uint64_t seed = 1;

    CLI::App app{"serial vs OpenMP kernel benchmark"};
    app.add_option("--prompts", prompts)->capture_default_str();
    app.add_option("--group", group)->capture_default_str();
    app.add_option("--max-new-tokens", max_new)->capture_default_str();
    app.add_option("--reps", reps)->capture_default_str();
    app.add_option("--threads", thread_counts, "thread counts to benchmark")
        ->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const Vocabulary& voc = task_vocabulary();
    const ModelDims dims{voc.size(), 16, 32};
    PolicyModel sampler = init_policy(dims, derive_seed(seed, 1));
    PolicyModel current = init_policy(dims, derive_seed(seed, 2));
    PolicyModel ref = init_policy(dims, derive_seed(seed, 3));

    TrainConfig gen_cfg;
    const std::vector<TaskInstance> tasks = generate_tasks(gen_cfg, prompts, derive_seed(seed, 4));
    std::vector<const TaskInstance*> ptrs;
    for (const TaskInstance& t : tasks) ptrs.push_back(&t);

    RolloutSettings rs;
    rs.group_size = group;
    rs.max_new_tokens = max_new;

    std::printf("prompts=%d group=%d max_new_tokens=%d reps=%d params=%zu\n", prompts, group,
                max_new, reps, current.params.size());

    // --- rollout ---
    auto t0 = std::chrono::steady_clock::now();
    std::vector<CompletionGroup> groups;
    for (int r = 0; r < reps; ++r) {
        groups = rollout_batch_serial(sampler, &ref, ptrs, rs, seed, r);
    }
    const double rollout_serial_ms = ms_since(t0) / reps;
    std::printf("%-22s %8.2f ms\n", "rollout serial", rollout_serial_ms);

    for (int threads : thread_counts) {
        t0 = std::chrono::steady_clock::now();
        std::vector<CompletionGroup> par;
        for (int r = 0; r < reps; ++r) {
            par = rollout_batch_parallel(sampler, &ref, ptrs, rs, seed, r, threads);
        }
        const double ms = ms_since(t0) / reps;
        bool same = par.size() == groups.size();
        for (std::size_t b = 0; same && b < par.size(); ++b) {
            same = par[b].completions == groups[b].completions &&
                   par[b].rewards == groups[b].rewards && par[b].logp_old == groups[b].logp_old;
        }
        std::printf("%-15s t=%-4d %8.2f ms  speedup %.2fx  identical=%s\n", "rollout parallel",
                    threads, ms, rollout_serial_ms / ms, same ? "yes" : "NO");
    }

    // --- batch gradient ---
    refresh_logp_current(current, groups, 1);
    std::vector<AdvantageSet> advs;
    for (const CompletionGroup& g : groups) advs.push_back(compute_advantages(g.rewards));
    ObjectiveConfig ocfg;
    const double denom = static_cast<double>(groups.size());

    GradientBuffer serial_buf(current.layout().total);
    t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
        serial_buf.zero();
        batch_gradient_serial(Method::grpo, groups, 0, groups.size(), denom, advs, ocfg, current,
                              serial_buf);
    }
    const double grad_serial_ms = ms_since(t0) / reps;
    std::printf("%-22s %8.2f ms\n", "gradient serial", grad_serial_ms);

    for (int threads : thread_counts) {
        GradientBuffer buf(current.layout().total);
        t0 = std::chrono::steady_clock::now();
        for (int r = 0; r < reps; ++r) {
            buf.zero();
            batch_gradient_parallel(Method::grpo, groups, 0, groups.size(), denom, advs, ocfg,
                                    current, buf, threads);
        }
        const double ms = ms_since(t0) / reps;
        const double diff = max_abs_diff(serial_buf.g, buf.g);
        std::printf("%-15s t=%-4d %8.2f ms  speedup %.2fx  max|diff|=%.2e\n", "gradient parallel",
                    threads, ms, grad_serial_ms / ms, diff);
        if (diff > 1e-12) {
            std::fprintf(stderr, "FAIL: parallel gradient deviates beyond 1e-12\n");
            return 1;
        }
    }
    return 0;
}
