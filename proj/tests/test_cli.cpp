#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "microrl/cli.hpp"
#include "microrl/config.hpp"
#include "microrl/metrics.hpp"
#include "microrl/tasks.hpp"

using namespace microrl;

namespace {

std::string tmp_path(const std::string& name) { return "/tmp/microrl_cli_" + name; }

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("microrl");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config text parsing: comments, overrides and round trip") {
    const TrainConfig cfg = parse_config_text(
        "# comment line\n"
        "method = rgra\n"
        "task = countdown   # trailing comment\n"
        "\n"
        "batch_size = 12\n"
        "lr = 5e-4\n"
        "answer_open = <\n"
        "answer_close = >\n"
        "deterministic_timing = true\n"
        "seed = 99\n");
    CHECK(cfg.method == Method::rgra);
    CHECK(cfg.task == TaskKind::countdown);
    CHECK(cfg.batch_size == 12);
    CHECK(cfg.lr == 5e-4);
    CHECK(cfg.format.open == "<");
    CHECK(cfg.format.close == ">");
    CHECK(cfg.deterministic_timing);
    CHECK(cfg.seed == 99);
    CHECK(cfg.group_size == 8);  // untouched default

    // dump -> parse returns the same settings
    TrainConfig custom;
    custom.method = Method::raft;
    custom.task = TaskKind::countdown;
    custom.lr = 0.125;
    custom.kl_beta = 0.0;
    custom.total_steps = 77;
    custom.format = {"<", ">"};
    custom.metrics_path = "/tmp/x.csv";
    custom.raft_dump_path = "/tmp/x.jsonl";
    custom.threads = 3;
    const TrainConfig re = parse_config_text(dump_config(custom));
    CHECK(re.method == custom.method);
    CHECK(re.task == custom.task);
    CHECK(re.lr == custom.lr);
    CHECK(re.kl_beta == custom.kl_beta);
    CHECK(re.total_steps == custom.total_steps);
    CHECK(re.format.open == custom.format.open);
    CHECK(re.metrics_path == custom.metrics_path);
    CHECK(re.raft_dump_path == custom.raft_dump_path);
    CHECK(re.threads == custom.threads);
}

TEST_CASE("config errors carry the origin and line") {
    CHECK_THROWS_WITH_AS(parse_config_text("method = grpo\nwhat\n", "f.cfg"),
                         doctest::Contains("f.cfg:2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("unknown_key = 3\n", "f.cfg"),
                         doctest::Contains("unknown config key"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("batch_size = soon\n", "f.cfg"),
                         doctest::Contains("expected an integer"), std::runtime_error);

    TrainConfig cfg;
    CHECK_THROWS_AS(apply_config_setting(cfg, "nope", "1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_config_setting(cfg, "deterministic_timing", "maybe"),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_config_setting(cfg, "seed", "-1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_config_setting(cfg, "method", "ppo"), std::invalid_argument);
    apply_config_setting(cfg, "method", "reinforce_raw");
    CHECK(cfg.method == Method::reinforce_raw);

    CHECK_THROWS_AS(parse_config_file("/nonexistent/file.cfg"), std::runtime_error);
}

TEST_CASE("cli: dataset generation writes a loadable file") {
    const std::string out = tmp_path("data.jsonl");
    CHECK(run_cli({"gen-data", "--task", "countdown", "--n", "12", "--seed", "5", "--out", out}) ==
          0);
    const std::vector<TaskInstance> tasks = load_dataset(out);
    CHECK(tasks.size() == 12);
    CHECK(tasks[0].kind == TaskKind::countdown);
}

TEST_CASE("cli: train honors --set overrides and writes artifacts") {
    const std::string csv = tmp_path("train.csv");
    const std::string ck = tmp_path("train_ck");
    const int rc = run_cli({"train",
                            "--set", "method=rgra",
                            "--set", "total_steps=2",
                            "--set", "batch_size=3",
                            "--set", "group_size=3",
                            "--set", "train_size=8",
                            "--set", "eval_size=4",
                            "--set", "embed=4",
                            "--set", "hidden=6",
                            "--set", "max_new_tokens=8",
                            "--set", "deterministic_timing=true",
                            "--set", "metrics_path=" + csv,
                            "--set", "checkpoint_path=" + ck});
    CHECK(rc == 0);
    CHECK(read_metrics_csv(csv).size() == 2);
    std::ifstream model(ck + ".model", std::ios::binary);
    CHECK(model.good());

    // the saved model evaluates cleanly against a dataset file
    const std::string data = tmp_path("eval.jsonl");
    REQUIRE(run_cli({"gen-data", "--n", "6", "--out", data}) == 0);
    CHECK(run_cli({"eval", "--model", ck + ".model", "--data", data, "--max-new-tokens", "8"}) ==
          0);
}

TEST_CASE("cli: train config file plus print-config") {
    const std::string cfg_path = tmp_path("run.cfg");
    {
        std::ofstream out(cfg_path);
        out << "method = grpo_pos\ntotal_steps = 5\nseed = 11\n";
    }
    CHECK(run_cli({"train", "--config", cfg_path, "--print-config"}) == 0);
    CHECK(run_cli({"train", "--config", "/nonexistent.cfg", "--print-config"}) == 1);
    CHECK(run_cli({"train", "--set", "broken"}) == 1);
    CHECK(run_cli({"train", "--set", "unknown_key=1"}) == 1);
}

TEST_CASE("cli: plot and report consume training metrics") {
    const std::string csv_a = tmp_path("run_a.csv");
    const std::string csv_b = tmp_path("run_b.csv");
    std::vector<MetricsRow> rows_a, rows_b;
    for (int i = 0; i < 25; ++i) {
        MetricsRow r;
        r.step = i;
        r.avg_reward = 0.02 * i;
        r.avg_resp_len = 20.0 - 0.1 * i;
        r.loss = -r.avg_reward;
        r.lr = 1e-5;
        rows_a.push_back(r);
        r.avg_reward = 0.01 * i;
        r.avg_resp_len = i < 2 ? 20.0 : 1.0;
        rows_b.push_back(r);
    }
    write_metrics_csv(csv_a, rows_a);
    write_metrics_csv(csv_b, rows_b);

    const std::string svg = tmp_path("plot.svg");
    CHECK(run_cli({"plot", "--run", "steady=" + csv_a, "--run", "shrink=" + csv_b, "--out", svg,
                   "--column", "avg_resp_len", "--window", "3"}) == 0);
    std::ifstream in(svg);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content.find("<svg") == 0);
    CHECK(content.find(">steady</text>") != std::string::npos);

    CHECK(run_cli({"report", "--run", "steady=" + csv_a, "--run", "shrink=" + csv_b}) == 0);
    CHECK(run_cli({"report", "--run", "bad-spec"}) == 1);
    CHECK(run_cli({"plot", "--run", "x=" + csv_a}) != 0);  // missing --out
}

TEST_CASE("cli: bad invocations exit nonzero") {
    CHECK(run_cli({}) != 0);
    CHECK(run_cli({"frobnicate"}) != 0);
    CHECK(run_cli({"gen-data", "--n", "4"}) != 0);          // missing --out
    CHECK(run_cli({"train", "--no-such-flag"}) != 0);
    CHECK(run_cli({"eval", "--model", "/nonexistent.model"}) == 1);
}

TEST_CASE("cli: scoped-vocabulary training and evaluation round trip") {
    const std::string ck = tmp_path("scoped_ck");
    const std::string data = tmp_path("scoped_eval.jsonl");
    REQUIRE(run_cli({"train",
                     "--set", "method=rgra",
                     "--set", "scoped_vocab=true",
                     "--set", "answer_open=<",
                     "--set", "answer_close=>",
                     "--set", "total_steps=2",
                     "--set", "batch_size=3",
                     "--set", "group_size=3",
                     "--set", "train_size=8",
                     "--set", "eval_size=4",
                     "--set", "embed=4",
                     "--set", "hidden=6",
                     "--set", "max_new_tokens=8",
                     "--set", "deterministic_timing=true",
                     "--set", "checkpoint_path=" + ck}) == 0);
    REQUIRE(run_cli({"gen-data", "--n", "6", "--out", data}) == 0);

    // the scoped model only evaluates under the matching vocabulary
    CHECK(run_cli({"eval", "--model", ck + ".model", "--data", data, "--max-new-tokens", "8",
                   "--scoped-vocab", "--open", "<", "--close", ">"}) == 0);
    CHECK(run_cli({"eval", "--model", ck + ".model", "--data", data, "--max-new-tokens", "8"}) ==
          1);
}
