#include "microrl/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "microrl/selection.hpp"
#include "microrl/vocab.hpp"

namespace microrl {

namespace {

// Sub-stream tags for the master seed. Rollouts use tag = step + 1, so these
// values stay out of reach of any realistic step count.
constexpr std::uint64_t kTagInit = 0xFFFFFFFFFFFFFFFFull;
constexpr std::uint64_t kTagTrainData = 0xFFFFFFFFFFFFFFFEull;
constexpr std::uint64_t kTagEvalData = 0xFFFFFFFFFFFFFFFDull;

}  // namespace

std::string optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
    }
    throw std::invalid_argument("optimizer_name: bad kind");
}

OptimizerKind optimizer_from_name(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer: " + std::string(name));
}

Optimizer::Optimizer(OptimizerKind kind, std::size_t n, AdamSettings settings)
    : kind_(kind), settings_(settings) {
    if (kind_ == OptimizerKind::adam) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }
}

void Optimizer::step(std::vector<double>& theta, const std::vector<double>& loss_grad,
                     double lr) {
    if (theta.size() != loss_grad.size()) {
        throw std::invalid_argument("Optimizer::step: size mismatch");
    }
    if (kind_ == OptimizerKind::sgd) {
        ++t_;
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * loss_grad[i];
        return;
    }
    if (m_.size() != theta.size()) {
        throw std::invalid_argument("Optimizer::step: state sized for a different model");
    }
    ++t_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = loss_grad[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        const double mh = m_[i] / c1;
        const double vh = v_[i] / c2;
        theta[i] -= lr * mh / (std::sqrt(vh) + settings_.epsilon);
    }
}

void Optimizer::restore(long long t, std::vector<double> m, std::vector<double> v) {
    if (t < 0) throw std::invalid_argument("Optimizer::restore: negative step count");
    if (kind_ == OptimizerKind::sgd) {
        if (!m.empty() || !v.empty()) {
            throw std::invalid_argument("Optimizer::restore: sgd carries no moments");
        }
    } else {
        if (m.size() != m_.size() || v.size() != v_.size()) {
            throw std::invalid_argument("Optimizer::restore: moment size mismatch");
        }
        m_ = std::move(m);
        v_ = std::move(v);
    }
    t_ = t;
}

bool Optimizer::operator==(const Optimizer& other) const {
    return kind_ == other.kind_ && t_ == other.t_ && m_ == other.m_ && v_ == other.v_ &&
           settings_.beta1 == other.settings_.beta1 && settings_.beta2 == other.settings_.beta2 &&
           settings_.epsilon == other.settings_.epsilon;
}

std::string lr_decay_name(LrDecay d) {
    switch (d) {
        case LrDecay::constant: return "constant";
        case LrDecay::linear: return "linear";
    }
    throw std::invalid_argument("lr_decay_name: bad kind");
}

LrDecay lr_decay_from_name(std::string_view name) {
    if (name == "constant") return LrDecay::constant;
    if (name == "linear") return LrDecay::linear;
    throw std::invalid_argument("unknown lr decay: " + std::string(name));
}

double scheduled_lr(double base_lr, int warmup_steps, long long total_steps, LrDecay decay,
                    long long step) {
    if (step < 0 || step >= total_steps) throw std::invalid_argument("scheduled_lr: step out of range");
    if (warmup_steps < 0) throw std::invalid_argument("scheduled_lr: negative warmup");
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (decay == LrDecay::linear && total_steps > warmup_steps) {
        return base_lr * static_cast<double>(total_steps - step) /
               static_cast<double>(total_steps - warmup_steps);
    }
    return base_lr;
}

void validate_config(const TrainConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (cfg.embed < 1 || cfg.hidden < 1) fail("embed and hidden must be >= 1");
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (cfg.group_size < 1) fail("group_size must be >= 1");
    const bool standardized = cfg.method == Method::grpo || cfg.method == Method::grpo_pos ||
                              cfg.method == Method::rgra;
    if (standardized && cfg.group_size < 2) {
        fail("group_size must be >= 2 for group-standardized methods");
    }
    if (!(cfg.temperature > 0.0)) fail("temperature must be > 0");
    if (cfg.max_new_tokens < 1) fail("max_new_tokens must be >= 1");
    if (!(cfg.lr >= 0.0)) fail("lr must be >= 0");
    if (cfg.warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (!(cfg.epsilon > 0.0)) fail("epsilon must be > 0");
    if (!(cfg.kl_beta >= 0.0)) fail("kl_beta must be >= 0");
    if (!(cfg.std_floor > 0.0)) fail("std_floor must be > 0");
    if (cfg.inner_epochs < 1) fail("inner_epochs must be >= 1");
    if (cfg.grad_accum < 1 || cfg.grad_accum > cfg.batch_size) {
        fail("grad_accum must be in [1, batch_size]");
    }
    if (cfg.total_steps < 0) fail("total_steps must be >= 0");
    if (cfg.shaping_steps < 0) fail("shaping_steps must be >= 0");
    if (cfg.train_data.empty() && cfg.train_size < 1) fail("train_size must be >= 1");
    if (cfg.eval_data.empty() && cfg.eval_size < 0) fail("eval_size must be >= 0");
    if (cfg.threads < 1) fail("threads must be >= 1");
    if (cfg.format.open.empty() || cfg.format.close.empty() || cfg.format.open == cfg.format.close) {
        fail("answer markers must be non-empty and distinct");
    }
    // A scoped vocabulary contains the marker characters by construction.
    if (!cfg.scoped_vocab) {
        try {
            task_vocabulary().encode(cfg.format.open + cfg.format.close);
        } catch (const std::invalid_argument& e) {
            fail(std::string("answer markers must be encodable: ") + e.what());
        }
    }
    if (cfg.checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (!cfg.raft_dump_path.empty() && cfg.method != Method::raft) {
        fail("raft_dump_path only applies to the raft method");
    }
}

std::vector<TaskInstance> generate_tasks(const TrainConfig& cfg, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TaskInstance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.push_back(cfg.task == TaskKind::arithmetic ? gen_arithmetic(rng, cfg.arith)
                                                       : gen_countdown(rng, cfg.countdown));
    }
    return out;
}

EvalResult evaluate(const PolicyModel& m, const std::vector<TaskInstance>& tasks,
                    const AnswerFormat& fmt, int max_new_tokens, const Vocabulary* vocab) {
    const Vocabulary& voc = vocab ? *vocab : task_vocabulary();
    SampleOptions opts;
    opts.greedy = true;
    opts.max_new_tokens = max_new_tokens;
    opts.eos_id = voc.eos_id;
    Rng rng(0);  // greedy decoding draws nothing

    EvalResult res;
    for (const TaskInstance& task : tasks) {
        const std::vector<int> prompt = vocab ? voc.encode(task.prompt_text) : task.prompt_ids;
        const TokenSequence seq = sample_completion(m, prompt, opts, rng);
        const RewardBreakdown rb = score_completion(voc.decode(seq.completion), task, fmt);
        res.accuracy += rb.correctness_reward > 0.0 ? 1.0 : 0.0;
        res.format_rate += rb.format_reward > 0.0 ? 1.0 : 0.0;
        res.mean_reward += rb.total;
        res.mean_resp_len += static_cast<double>(seq.completion.size());
    }
    if (!tasks.empty()) {
        const double n = static_cast<double>(tasks.size());
        res.accuracy /= n;
        res.format_rate /= n;
        res.mean_reward /= n;
        res.mean_resp_len /= n;
    }
    return res;
}

void save_checkpoint(const std::string& base, const Checkpoint& ck) {
    save_model(ck.model, base + ".model");
    save_model(ck.reference, base + ".ref.model");

    nlohmann::json j;
    j["version"] = 1;
    j["next_step"] = ck.next_step;
    j["optimizer"] = {{"kind", optimizer_name(ck.optimizer.kind())},
                      {"t", ck.optimizer.t()},
                      {"beta1", ck.optimizer.settings().beta1},
                      {"beta2", ck.optimizer.settings().beta2},
                      {"epsilon", ck.optimizer.settings().epsilon},
                      {"m", ck.optimizer.m()},
                      {"v", ck.optimizer.v()}};
    const std::string path = base + ".state.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint state for writing: " + path);
    out << j.dump(1) << '\n';
    if (!out) throw std::runtime_error("checkpoint state write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& base) {
    Checkpoint ck;
    ck.model = load_model(base + ".model");
    ck.reference = snapshot(load_model(base + ".ref.model"), Role::reference);

    const std::string path = base + ".state.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint state: " + path);
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("version").get<int>() != 1) {
            throw std::runtime_error("unsupported checkpoint version");
        }
        ck.next_step = j.at("next_step").get<long long>();
        const nlohmann::json& o = j.at("optimizer");
        AdamSettings s;
        s.beta1 = o.at("beta1").get<double>();
        s.beta2 = o.at("beta2").get<double>();
        s.epsilon = o.at("epsilon").get<double>();
        ck.optimizer = Optimizer(optimizer_from_name(o.at("kind").get<std::string>()),
                                 ck.model.params.size(), s);
        ck.optimizer.restore(o.at("t").get<long long>(), o.at("m").get<std::vector<double>>(),
                             o.at("v").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad checkpoint state: " + e.what());
    }
    if (ck.next_step < 0) throw std::runtime_error(path + ": negative next_step");
    return ck;
}

namespace {

bool is_policy_gradient(Method m) {
    return m == Method::grpo || m == Method::grpo_pos || m == Method::rgra ||
           m == Method::reinforce_raw;
}

bool needs_advantages(Method m) {
    return m == Method::grpo || m == Method::grpo_pos || m == Method::rgra;
}

struct StatsMerge {
    ObjectiveStats total;
    double kl_weighted = 0.0;

    void add(const ObjectiveStats& st) {
        total.objective += st.objective;
        kl_weighted += st.kl_mean * static_cast<double>(st.token_count);
        total.token_count += st.token_count;
    }
    ObjectiveStats finish() {
        if (total.token_count > 0) {
            total.kl_mean = kl_weighted / static_cast<double>(total.token_count);
        }
        return total;
    }
};

// One optimizer update from the accumulated loss gradient.
void apply_update(PolicyModel& model, Optimizer& opt, const std::vector<double>& loss_grad,
                  double lr) {
    std::vector<double> theta = flat_params(model);
    opt.step(theta, loss_grad, lr);
    set_flat_params(model, theta);
}

struct PgStepOutcome {
    BatchRolloutStats rollout;
    double objective = 0.0;  // first inner epoch, i.e. on the sampled distribution
    double kl_mean = 0.0;
};

PgStepOutcome policy_gradient_step(PolicyModel& model, const PolicyModel& ref, Optimizer& opt,
                                   const TrainConfig& cfg, const Vocabulary& voc,
                                   const std::vector<const TaskInstance*>& batch, long long step,
                                   double lr) {
    const PolicyModel old = snapshot(model, Role::old_snapshot);
    RolloutSettings rs;
    rs.group_size = cfg.group_size;
    rs.temperature = cfg.temperature;
    rs.max_new_tokens = cfg.max_new_tokens;
    rs.mask_correctness = step < cfg.shaping_steps;
    rs.format = cfg.format;
    rs.vocab = &voc;

    const bool use_ref = cfg.kl_beta != 0.0;
    std::vector<CompletionGroup> groups = rollout_batch_parallel(
        old, use_ref ? &ref : nullptr, batch, rs, cfg.seed, step, cfg.threads);

    PgStepOutcome out;
    out.rollout = batch_rollout_stats(groups, batch, cfg.format, &voc);

    std::vector<AdvantageSet> advs;
    if (needs_advantages(cfg.method)) {
        advs.reserve(groups.size());
        for (const CompletionGroup& g : groups) {
            advs.push_back(compute_advantages(g.rewards, cfg.std_floor));
        }
    }

    ObjectiveConfig ocfg;
    ocfg.epsilon = cfg.epsilon;
    ocfg.kl_beta = cfg.kl_beta;
    ocfg.std_floor = cfg.std_floor;

    const std::size_t B = groups.size();
    const double denom = static_cast<double>(B);
    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        refresh_logp_current(model, groups, cfg.threads);
        GradientBuffer buf(model.params.size());
        StatsMerge merge;
        // contiguous micro-batches; chunking does not change the accumulated sum
        const std::size_t chunks = static_cast<std::size_t>(cfg.grad_accum);
        for (std::size_t c = 0; c < chunks; ++c) {
            const std::size_t a = B * c / chunks;
            const std::size_t b = B * (c + 1) / chunks;
            if (a == b) continue;
            merge.add(batch_gradient_parallel(cfg.method, groups, a, b, denom, advs, ocfg, model,
                                              buf, cfg.threads));
        }
        const ObjectiveStats st = merge.finish();
        if (epoch == 0) {
            out.objective = st.objective;
            out.kl_mean = st.kl_mean;
        }
        buf.scale(-1.0);  // ascent on the objective = descent on its negation
        apply_update(model, opt, buf.g, lr);
    }
    return out;
}

struct CeStepOutcome {
    BatchRolloutStats rollout;
    double loss = 0.0;
};

CeStepOutcome raft_step(PolicyModel& model, Optimizer& opt, const TrainConfig& cfg,
                        const Vocabulary& voc, const std::vector<const TaskInstance*>& batch,
                        long long step, double lr, std::ofstream* dump) {
    RolloutSettings rs;
    rs.group_size = cfg.group_size;
    rs.temperature = cfg.temperature;
    rs.max_new_tokens = cfg.max_new_tokens;
    rs.mask_correctness = step < cfg.shaping_steps;
    rs.format = cfg.format;
    rs.vocab = &voc;

    const std::vector<CompletionGroup> groups =
        rollout_batch_parallel(model, nullptr, batch, rs, cfg.seed, step, cfg.threads);

    CeStepOutcome out;
    out.rollout = batch_rollout_stats(groups, batch, cfg.format, &voc);
    std::vector<TokenSequence> kept;
    kept.reserve(groups.size());
    for (std::size_t b = 0; b < groups.size(); ++b) {
        const int k = raft_select(groups[b].rewards);
        kept.push_back(TokenSequence{groups[b].prompt,
                                     groups[b].completions[static_cast<std::size_t>(k)]});
        if (dump) {
            nlohmann::json j;
            j["step"] = step;
            j["prompt"] = batch[b]->prompt_text;
            j["completion"] = voc.decode(kept.back().completion);
            j["reward"] = groups[b].rewards[static_cast<std::size_t>(k)];
            *dump << j.dump() << '\n';
        }
    }
    if (dump) dump->flush();

    GradientBuffer buf(model.params.size());
    out.loss = cross_entropy_batch_gradient(model, kept, buf);
    apply_update(model, opt, buf.g, lr);
    return out;
}

// Greedy probe of the batch prompts so supervised runs report the same
// reward/length columns as the sampled methods.
BatchRolloutStats greedy_probe(const PolicyModel& model, const TrainConfig& cfg,
                               const Vocabulary& voc,
                               const std::vector<const TaskInstance*>& batch) {
    SampleOptions opts;
    opts.greedy = true;
    opts.max_new_tokens = cfg.max_new_tokens;
    opts.eos_id = voc.eos_id;
    Rng rng(0);

    BatchRolloutStats st;
    for (const TaskInstance* task : batch) {
        const TokenSequence seq = sample_completion(model, task->prompt_ids, opts, rng);
        const RewardBreakdown rb = score_completion(voc.decode(seq.completion), *task, cfg.format);
        st.mean_reward += rb.total;
        st.mean_resp_len += static_cast<double>(seq.completion.size());
        st.accuracy += rb.correctness_reward > 0.0 ? 1.0 : 0.0;
        st.format_rate += rb.format_reward > 0.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(batch.size());
    st.mean_reward /= n;
    st.mean_resp_len /= n;
    st.accuracy /= n;
    st.format_rate /= n;
    return st;
}

CeStepOutcome sft_step(PolicyModel& model, Optimizer& opt, const TrainConfig& cfg,
                       const Vocabulary& voc, const std::vector<const TaskInstance*>& batch,
                       double lr) {
    std::vector<TokenSequence> seqs;
    seqs.reserve(batch.size());
    for (const TaskInstance* task : batch) {
        std::vector<int> ids = voc.encode(cfg.format.open + task->gold_answer + cfg.format.close);
        ids.push_back(voc.eos_id);
        seqs.push_back(TokenSequence{task->prompt_ids, std::move(ids)});
    }

    CeStepOutcome out;
    // probe before the update, like the sampled methods
    out.rollout = greedy_probe(model, cfg, voc, batch);

    GradientBuffer buf(model.params.size());
    out.loss = cross_entropy_batch_gradient(model, seqs, buf);
    apply_update(model, opt, buf.g, lr);
    return out;
}

}  // namespace

ExperimentResult run_experiment(const TrainConfig& cfg) {
    validate_config(cfg);
    const Vocabulary scoped =
        cfg.scoped_vocab ? task_scoped_vocabulary(cfg.task, cfg.format) : Vocabulary{};
    const Vocabulary& voc = cfg.scoped_vocab ? scoped : task_vocabulary();
    const ModelDims dims{voc.size(), cfg.embed, cfg.hidden};

    std::vector<TaskInstance> train_tasks =
        cfg.train_data.empty() ? generate_tasks(cfg, cfg.train_size, derive_seed(cfg.seed, kTagTrainData))
                               : load_dataset(cfg.train_data);
    if (train_tasks.empty()) throw std::runtime_error("run_experiment: empty training set");
    std::vector<TaskInstance> eval_tasks =
        cfg.eval_data.empty() ? generate_tasks(cfg, cfg.eval_size, derive_seed(cfg.seed, kTagEvalData))
                              : load_dataset(cfg.eval_data);
    if (cfg.scoped_vocab) {
        // datasets arrive encoded under the shared vocabulary
        for (TaskInstance& t : train_tasks) t.prompt_ids = voc.encode(t.prompt_text);
        for (TaskInstance& t : eval_tasks) t.prompt_ids = voc.encode(t.prompt_text);
    }

    PolicyModel model, ref;
    Optimizer opt;
    long long start_step = 0;
    if (!cfg.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(cfg.resume_from);
        if (ck.model.dims.vocab != dims.vocab || ck.model.dims.embed != dims.embed ||
            ck.model.dims.hidden != dims.hidden) {
            throw std::runtime_error("run_experiment: checkpoint dims do not match the config");
        }
        if (ck.optimizer.kind() != cfg.optimizer) {
            throw std::runtime_error("run_experiment: checkpoint optimizer does not match the config");
        }
        model = std::move(ck.model);
        ref = std::move(ck.reference);
        opt = std::move(ck.optimizer);
        start_step = ck.next_step;
    } else {
        model = init_policy(dims, derive_seed(cfg.seed, kTagInit));
        ref = snapshot(model, Role::reference);
        opt = Optimizer(cfg.optimizer, model.params.size());
    }

    std::unique_ptr<MetricsWriter> metrics;
    if (!cfg.metrics_path.empty()) metrics = std::make_unique<MetricsWriter>(cfg.metrics_path);

    std::unique_ptr<std::ofstream> raft_dump;
    if (cfg.method == Method::raft && !cfg.raft_dump_path.empty()) {
        raft_dump = std::make_unique<std::ofstream>(
            cfg.raft_dump_path, cfg.resume_from.empty() ? std::ios::trunc : std::ios::app);
        if (!*raft_dump) {
            throw std::runtime_error("cannot open raft dump file: " + cfg.raft_dump_path);
        }
    }

    ExperimentResult res;
    for (long long step = start_step; step < cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr =
            scheduled_lr(cfg.lr, cfg.warmup_steps, cfg.total_steps, cfg.lr_decay, step);

        std::vector<const TaskInstance*> batch(static_cast<std::size_t>(cfg.batch_size));
        for (int j = 0; j < cfg.batch_size; ++j) {
            const std::size_t idx = static_cast<std::size_t>(
                (step * cfg.batch_size + j) % static_cast<long long>(train_tasks.size()));
            batch[static_cast<std::size_t>(j)] = &train_tasks[idx];
        }

        MetricsRow row;
        row.step = step;
        row.lr = lr;
        if (is_policy_gradient(cfg.method)) {
            const PgStepOutcome out =
                policy_gradient_step(model, ref, opt, cfg, voc, batch, step, lr);
            row.avg_reward = out.rollout.mean_reward;
            row.avg_resp_len = out.rollout.mean_resp_len;
            row.loss = -out.objective;
            row.kl_mean = out.kl_mean;
        } else if (cfg.method == Method::raft) {
            const CeStepOutcome out =
                raft_step(model, opt, cfg, voc, batch, step, lr, raft_dump.get());
            row.avg_reward = out.rollout.mean_reward;
            row.avg_resp_len = out.rollout.mean_resp_len;
            row.loss = out.loss;
        } else {  // sft
            const CeStepOutcome out = sft_step(model, opt, cfg, voc, batch, lr);
            row.avg_reward = out.rollout.mean_reward;
            row.avg_resp_len = out.rollout.mean_resp_len;
            row.loss = out.loss;
        }

        if (!cfg.deterministic_timing) {
            row.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
        }
        res.rows.push_back(row);
        if (metrics) metrics->write(row);

        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_steps) {
            save_checkpoint(cfg.checkpoint_path, Checkpoint{model, ref, opt, step + 1});
        }
    }

    if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(cfg.checkpoint_path, Checkpoint{model, ref, opt, cfg.total_steps});
    }
    res.final_eval = evaluate(model, eval_tasks, cfg.format, cfg.max_new_tokens,
                              cfg.scoped_vocab ? &voc : nullptr);
    res.model = std::move(model);
    res.reference = std::move(ref);
    return res;
}

}  // namespace microrl
