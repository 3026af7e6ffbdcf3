#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "microrl/metrics.hpp"
#include "microrl/objectives.hpp"
#include "microrl/policy.hpp"
#include "microrl/rollout.hpp"
#include "microrl/tasks.hpp"

namespace microrl {

enum class OptimizerKind { sgd, adam };
std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(std::string_view name);

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First-order optimizer over the flat parameter vector. step() applies one
// descent update theta -= lr * direction(loss_grad); a zero gradient from a
// fresh state leaves the parameters bit-identical for both kinds.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerKind kind, std::size_t n, AdamSettings settings = {});

    void step(std::vector<double>& theta, const std::vector<double>& loss_grad, double lr);

    OptimizerKind kind() const { return kind_; }
    long long t() const { return t_; }
    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }
    const AdamSettings& settings() const { return settings_; }

    // Exact-state restore for checkpointing.
    void restore(long long t, std::vector<double> m, std::vector<double> v);

    bool operator==(const Optimizer& other) const;

private:
    OptimizerKind kind_ = OptimizerKind::sgd;
    AdamSettings settings_;
    long long t_ = 0;
    std::vector<double> m_, v_;  // adam moments; empty for sgd
};

enum class LrDecay { constant, linear };
std::string lr_decay_name(LrDecay d);
LrDecay lr_decay_from_name(std::string_view name);

// Linear warmup over the first warmup_steps updates (step 0 gets base/warmup),
// then either a constant plateau or a linear decay that reaches 0 at
// total_steps.
double scheduled_lr(double base_lr, int warmup_steps, long long total_steps, LrDecay decay,
                    long long step);

struct TrainConfig {
    Method method = Method::grpo;
    TaskKind task = TaskKind::arithmetic;
    ArithmeticOptions arith;
    CountdownOptions countdown;
    // Datasets are generated from the run seed unless explicit paths are set.
    int train_size = 256;
    int eval_size = 64;
    std::string train_data;
    std::string eval_data;

    int embed = 16;
    int hidden = 32;
    // Restrict the vocabulary to the configured task family plus the answer
    // markers instead of the shared all-task charset.
    bool scoped_vocab = false;

    int batch_size = 24;
    int group_size = 8;
    double temperature = 1.0;
    int max_new_tokens = 64;

    double lr = 1e-5;
    int warmup_steps = 5;
    LrDecay lr_decay = LrDecay::constant;
    OptimizerKind optimizer = OptimizerKind::adam;
    double epsilon = 0.2;
    double kl_beta = 0.005;
    double std_floor = 1e-6;
    int inner_epochs = 1;
    int grad_accum = 1;  // micro-batches per optimizer step (chunked accumulation)
    long long total_steps = 100;
    int shaping_steps = 0;  // correctness reward masked before this step
    AnswerFormat format;

    std::uint64_t seed = 1;
    int threads = 1;
    // Report elapsed_ms as 0 so repeated runs produce byte-identical metrics.
    bool deterministic_timing = false;

    std::string metrics_path;
    std::string checkpoint_path;  // base path; .model/.ref.model/.state.json appended
    long long checkpoint_every = 0;  // additionally checkpoint every N steps when > 0
    std::string raft_dump_path;      // JSONL of the kept completions (raft only)
    std::string resume_from;         // checkpoint base to continue from
};

// Throws std::invalid_argument on inconsistent settings (e.g. group_size < 2
// for the group-standardized methods).
void validate_config(const TrainConfig& cfg);

std::vector<TaskInstance> generate_tasks(const TrainConfig& cfg, int n, std::uint64_t seed);

struct EvalResult {
    double accuracy = 0.0;
    double format_rate = 0.0;
    double mean_reward = 0.0;
    double mean_resp_len = 0.0;
};

// Greedy decoding over the task list; deterministic. Prompts are re-encoded
// under `vocab` when one is given (null -> shared task_vocabulary()).
EvalResult evaluate(const PolicyModel& m, const std::vector<TaskInstance>& tasks,
                    const AnswerFormat& fmt, int max_new_tokens,
                    const Vocabulary* vocab = nullptr);

struct Checkpoint {
    PolicyModel model;
    PolicyModel reference;
    Optimizer optimizer;
    long long next_step = 0;
};

// Three files under `base`: base.model, base.ref.model, base.state.json.
void save_checkpoint(const std::string& base, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& base);

struct ExperimentResult {
    PolicyModel model;
    PolicyModel reference;
    std::vector<MetricsRow> rows;
    EvalResult final_eval;
};

// Runs the configured method for total_steps updates and returns the final
// policy with its per-step metrics. Identical configs (with
// deterministic_timing) produce identical rows and parameters for any thread
// count; resuming from a checkpoint reproduces the remaining rows exactly.
ExperimentResult run_experiment(const TrainConfig& cfg);

}  // namespace microrl
