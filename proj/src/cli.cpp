#include "microrl/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "microrl/config.hpp"
#include "microrl/metrics.hpp"
#include "microrl/tasks.hpp"
#include "microrl/trainer.hpp"

namespace microrl {

namespace {

std::pair<std::string, std::string> split_labeled_path(const std::string& s) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
        throw std::invalid_argument("--run expects LABEL=CSV_PATH, got '" + s + "'");
    }
    return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<RunSeries> load_runs(const std::vector<std::string>& specs) {
    std::vector<RunSeries> runs;
    runs.reserve(specs.size());
    for (const std::string& spec : specs) {
        auto [label, path] = split_labeled_path(spec);
        runs.push_back(RunSeries{std::move(label), read_metrics_csv(path)});
    }
    return runs;
}

struct GenDataArgs {
    std::string task = "arithmetic";
    int n = 256;
    std::uint64_t seed = 1;
    std::string out;
    ArithmeticOptions arith;
    CountdownOptions countdown;
};

void run_gen_data(const GenDataArgs& a) {
    TrainConfig cfg;
    cfg.task = task_kind_from_name(a.task);
    cfg.arith = a.arith;
    cfg.countdown = a.countdown;
    const std::vector<TaskInstance> tasks = generate_tasks(cfg, a.n, a.seed);
    save_dataset(tasks, a.out);
    std::printf("wrote %zu %s tasks to %s\n", tasks.size(), a.task.c_str(), a.out.c_str());
}

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool print_config = false;
};

void run_train(const TrainArgs& a) {
    TrainConfig cfg = a.config_path.empty() ? TrainConfig{} : parse_config_file(a.config_path);
    for (const std::string& kv : a.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--set expects KEY=VALUE, got '" + kv + "'");
        }
        std::string_view key(kv);
        apply_config_setting(cfg, key.substr(0, eq), key.substr(eq + 1));
    }
    if (a.print_config) {
        std::fputs(dump_config(cfg).c_str(), stdout);
        return;
    }
    const ExperimentResult res = run_experiment(cfg);
    std::printf("ran %lld steps (method=%s task=%s seed=%llu threads=%d)\n",
                cfg.total_steps, method_name(cfg.method).c_str(),
                task_kind_name(cfg.task).c_str(),
                static_cast<unsigned long long>(cfg.seed), cfg.threads);
    if (!res.rows.empty()) {
        const MetricsRow& last = res.rows.back();
        std::printf("last step: reward=%.4f resp_len=%.2f loss=%.6f kl=%.6f\n", last.avg_reward,
                    last.avg_resp_len, last.loss, last.kl_mean);
    }
    std::printf("final eval: accuracy=%.4f format_rate=%.4f mean_reward=%.4f mean_resp_len=%.2f\n",
                res.final_eval.accuracy, res.final_eval.format_rate, res.final_eval.mean_reward,
                res.final_eval.mean_resp_len);
    if (!cfg.metrics_path.empty()) std::printf("metrics: %s\n", cfg.metrics_path.c_str());
    if (!cfg.checkpoint_path.empty()) {
        std::printf("checkpoint: %s{.model,.ref.model,.state.json}\n",
                    cfg.checkpoint_path.c_str());
    }
}

struct EvalArgs {
    std::string model;
    std::string data;
    std::string task = "arithmetic";
    int n = 64;
    std::uint64_t seed = 1;
    int max_new_tokens = 64;
    std::string open = "<answer>";
    std::string close = "</answer>";
    bool scoped_vocab = false;
    ArithmeticOptions arith;
    CountdownOptions countdown;
};

void run_eval(const EvalArgs& a) {
    const PolicyModel m = load_model(a.model);
    std::vector<TaskInstance> tasks;
    if (!a.data.empty()) {
        tasks = load_dataset(a.data);
    } else {
        TrainConfig cfg;
        cfg.task = task_kind_from_name(a.task);
        cfg.arith = a.arith;
        cfg.countdown = a.countdown;
        tasks = generate_tasks(cfg, a.n, a.seed);
    }
    const AnswerFormat fmt{a.open, a.close};
    Vocabulary scoped;
    const Vocabulary* voc = nullptr;
    if (a.scoped_vocab) {
        scoped = task_scoped_vocabulary(task_kind_from_name(a.task), fmt);
        voc = &scoped;
    }
    const int want = voc ? scoped.size() : task_vocabulary().size();
    if (m.dims.vocab != want) {
        throw std::runtime_error("model vocab size " + std::to_string(m.dims.vocab) +
                                 " does not match the " +
                                 (a.scoped_vocab ? std::string("scoped") : std::string("shared")) +
                                 " vocabulary (" + std::to_string(want) +
                                 "); check --scoped-vocab, --task and the markers");
    }
    const EvalResult ev = evaluate(m, tasks, fmt, a.max_new_tokens, voc);
    std::printf("accuracy=%.4f format_rate=%.4f mean_reward=%.4f mean_resp_len=%.2f n=%zu\n",
                ev.accuracy, ev.format_rate, ev.mean_reward, ev.mean_resp_len, tasks.size());
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"desk-scale policy-gradient training on verifiable micro-tasks"};
    app.require_subcommand(1);

    GenDataArgs gd;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a task dataset (JSONL)");
    gen->add_option("--task", gd.task, "arithmetic|countdown")->capture_default_str();
    gen->add_option("--n", gd.n, "number of tasks")->capture_default_str();
    gen->add_option("--seed", gd.seed, "generator seed")->capture_default_str();
    gen->add_option("--out", gd.out, "output JSONL path")->required();
    gen->add_option("--digits", gd.arith.digits, "arithmetic operand width");
    gen->add_option("--ops", gd.arith.ops, "arithmetic operator set");
    gen->add_option("--n-numbers", gd.countdown.n_numbers, "countdown pool size");
    gen->add_option("--number-min", gd.countdown.number_min);
    gen->add_option("--number-max", gd.countdown.number_max);
    gen->add_option("--target-min", gd.countdown.target_min);
    gen->add_option("--target-max", gd.countdown.target_max);
    gen->callback([&] { run_gen_data(gd); });

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "run a training experiment");
    train->add_option("--config", tr.config_path, "key = value config file");
    train->add_option("--set", tr.overrides, "override KEY=VALUE (repeatable)");
    train->add_flag("--print-config", tr.print_config, "dump the effective config and exit");
    train->callback([&] { run_train(tr); });

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "greedy-evaluate a saved model");
    eval_cmd->add_option("--model", ev.model, "model file")->required();
    eval_cmd->add_option("--data", ev.data, "task JSONL (otherwise tasks are generated)");
    eval_cmd->add_option("--task", ev.task, "arithmetic|countdown")->capture_default_str();
    eval_cmd->add_option("--n", ev.n, "generated task count")->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "generator seed")->capture_default_str();
    eval_cmd->add_option("--max-new-tokens", ev.max_new_tokens)->capture_default_str();
    eval_cmd->add_option("--open", ev.open, "answer open marker")->capture_default_str();
    eval_cmd->add_option("--close", ev.close, "answer close marker")->capture_default_str();
    eval_cmd->add_flag("--scoped-vocab", ev.scoped_vocab,
                       "model was trained on the task-scoped vocabulary");
    eval_cmd->add_option("--digits", ev.arith.digits, "arithmetic operand width");
    eval_cmd->add_option("--ops", ev.arith.ops, "arithmetic operator set");
    eval_cmd->add_option("--n-numbers", ev.countdown.n_numbers, "countdown pool size");
    eval_cmd->callback([&] { run_eval(ev); });

    std::vector<std::string> plot_specs;
    std::string plot_out, plot_column = "avg_reward";
    int plot_window = 5;
    CLI::App* plot = app.add_subcommand("plot", "render metrics curves to SVG");
    plot->add_option("--run", plot_specs, "LABEL=CSV_PATH (repeatable)")->required();
    plot->add_option("--out", plot_out, "output SVG path")->required();
    plot->add_option("--column", plot_column, "metrics column")->capture_default_str();
    plot->add_option("--window", plot_window, "smoothing window")->capture_default_str();
    plot->callback([&] {
        plot_runs(load_runs(plot_specs), plot_column, plot_window, plot_out);
        std::printf("wrote %s\n", plot_out.c_str());
    });

    std::vector<std::string> report_specs;
    ReportOptions ropt;
    CLI::App* report = app.add_subcommand("report", "compare runs in a text table");
    report->add_option("--run", report_specs, "LABEL=CSV_PATH (repeatable)")->required();
    report->add_option("--final-window", ropt.final_window)->capture_default_str();
    report->add_option("--smooth-window", ropt.smooth_window)->capture_default_str();
    report->add_option("--collapse-window", ropt.collapse_window)->capture_default_str();
    report->add_option("--collapse-frac", ropt.collapse_frac)->capture_default_str();
    report->callback(
        [&] { std::fputs(compare_report(load_runs(report_specs), ropt).c_str(), stdout); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace microrl
