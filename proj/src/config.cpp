#include "microrl/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace microrl {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* want) {
    throw std::invalid_argument("config key '" + std::string(key) + "': expected " + want +
                                ", got '" + std::string(value) + "'");
}

long long to_ll(std::string_view key, std::string_view value) {
    const std::string s(value);
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size() || errno != 0) bad_value(key, value, "an integer");
    return v;
}

int to_int(std::string_view key, std::string_view value) {
    const long long v = to_ll(key, value);
    if (v < -2147483648LL || v > 2147483647LL) bad_value(key, value, "a 32-bit integer");
    return static_cast<int>(v);
}

std::uint64_t to_u64(std::string_view key, std::string_view value) {
    const std::string s(value);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno != 0) {
        bad_value(key, value, "an unsigned integer");
    }
    return v;
}

double to_d(std::string_view key, std::string_view value) {
    const std::string s(value);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) bad_value(key, value, "a number");
    return v;
}

bool to_b(std::string_view key, std::string_view value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    bad_value(key, value, "a boolean (0/1/true/false)");
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

void apply_config_setting(TrainConfig& cfg, std::string_view key, std::string_view value) {
    if (key == "method") cfg.method = method_from_name(value);
    else if (key == "task") cfg.task = task_kind_from_name(value);
    else if (key == "digits") cfg.arith.digits = to_int(key, value);
    else if (key == "ops") cfg.arith.ops = std::string(value);
    else if (key == "n_numbers") cfg.countdown.n_numbers = to_int(key, value);
    else if (key == "number_min") cfg.countdown.number_min = to_ll(key, value);
    else if (key == "number_max") cfg.countdown.number_max = to_ll(key, value);
    else if (key == "target_min") cfg.countdown.target_min = to_ll(key, value);
    else if (key == "target_max") cfg.countdown.target_max = to_ll(key, value);
    else if (key == "train_size") cfg.train_size = to_int(key, value);
    else if (key == "eval_size") cfg.eval_size = to_int(key, value);
    else if (key == "train_data") cfg.train_data = std::string(value);
    else if (key == "eval_data") cfg.eval_data = std::string(value);
    else if (key == "embed") cfg.embed = to_int(key, value);
    else if (key == "hidden") cfg.hidden = to_int(key, value);
    else if (key == "scoped_vocab") cfg.scoped_vocab = to_b(key, value);
    else if (key == "batch_size") cfg.batch_size = to_int(key, value);
    else if (key == "group_size") cfg.group_size = to_int(key, value);
    else if (key == "temperature") cfg.temperature = to_d(key, value);
    else if (key == "max_new_tokens") cfg.max_new_tokens = to_int(key, value);
    else if (key == "lr") cfg.lr = to_d(key, value);
    else if (key == "warmup_steps") cfg.warmup_steps = to_int(key, value);
    else if (key == "lr_decay") cfg.lr_decay = lr_decay_from_name(value);
    else if (key == "optimizer") cfg.optimizer = optimizer_from_name(value);
    else if (key == "epsilon") cfg.epsilon = to_d(key, value);
    else if (key == "kl_beta") cfg.kl_beta = to_d(key, value);
    else if (key == "std_floor") cfg.std_floor = to_d(key, value);
    else if (key == "inner_epochs") cfg.inner_epochs = to_int(key, value);
    else if (key == "grad_accum") cfg.grad_accum = to_int(key, value);
    else if (key == "total_steps") cfg.total_steps = to_ll(key, value);
    else if (key == "shaping_steps") cfg.shaping_steps = to_int(key, value);
    else if (key == "answer_open") cfg.format.open = std::string(value);
    else if (key == "answer_close") cfg.format.close = std::string(value);
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "threads") cfg.threads = to_int(key, value);
    else if (key == "deterministic_timing") cfg.deterministic_timing = to_b(key, value);
    else if (key == "metrics_path") cfg.metrics_path = std::string(value);
    else if (key == "checkpoint_path") cfg.checkpoint_path = std::string(value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = to_ll(key, value);
    else if (key == "raft_dump_path") cfg.raft_dump_path = std::string(value);
    else if (key == "resume_from") cfg.resume_from = std::string(value);
    else throw std::invalid_argument("unknown config key: '" + std::string(key) + "'");
}

TrainConfig parse_config_text(std::string_view text, std::string_view origin) {
    TrainConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        const std::size_t hash = s.find('#');
        if (hash != std::string_view::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const std::size_t eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw std::runtime_error(std::string(origin) + ":" + std::to_string(lineno) +
                                     ": expected 'key = value'");
        }
        const std::string_view key = trim(s.substr(0, eq));
        const std::string_view value = trim(s.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(std::string(origin) + ":" + std::to_string(lineno) +
                                     ": empty key");
        }
        try {
            apply_config_setting(cfg, key, value);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(std::string(origin) + ":" + std::to_string(lineno) + ": " +
                                     e.what());
        }
    }
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string dump_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "method = " << method_name(cfg.method) << '\n';
    out << "task = " << task_kind_name(cfg.task) << '\n';
    out << "digits = " << cfg.arith.digits << '\n';
    out << "ops = " << cfg.arith.ops << '\n';
    out << "n_numbers = " << cfg.countdown.n_numbers << '\n';
    out << "number_min = " << cfg.countdown.number_min << '\n';
    out << "number_max = " << cfg.countdown.number_max << '\n';
    out << "target_min = " << cfg.countdown.target_min << '\n';
    out << "target_max = " << cfg.countdown.target_max << '\n';
    out << "train_size = " << cfg.train_size << '\n';
    out << "eval_size = " << cfg.eval_size << '\n';
    out << "train_data = " << cfg.train_data << '\n';
    out << "eval_data = " << cfg.eval_data << '\n';
    out << "embed = " << cfg.embed << '\n';
    out << "hidden = " << cfg.hidden << '\n';
    out << "scoped_vocab = " << (cfg.scoped_vocab ? "true" : "false") << '\n';
    out << "batch_size = " << cfg.batch_size << '\n';
    out << "group_size = " << cfg.group_size << '\n';
    out << "temperature = " << fmt_double(cfg.temperature) << '\n';
    out << "max_new_tokens = " << cfg.max_new_tokens << '\n';
    out << "lr = " << fmt_double(cfg.lr) << '\n';
    out << "warmup_steps = " << cfg.warmup_steps << '\n';
    out << "lr_decay = " << lr_decay_name(cfg.lr_decay) << '\n';
    out << "optimizer = " << optimizer_name(cfg.optimizer) << '\n';
    out << "epsilon = " << fmt_double(cfg.epsilon) << '\n';
    out << "kl_beta = " << fmt_double(cfg.kl_beta) << '\n';
    out << "std_floor = " << fmt_double(cfg.std_floor) << '\n';
    out << "inner_epochs = " << cfg.inner_epochs << '\n';
    out << "grad_accum = " << cfg.grad_accum << '\n';
    out << "total_steps = " << cfg.total_steps << '\n';
    out << "shaping_steps = " << cfg.shaping_steps << '\n';
    out << "answer_open = " << cfg.format.open << '\n';
    out << "answer_close = " << cfg.format.close << '\n';
    out << "seed = " << cfg.seed << '\n';
    out << "threads = " << cfg.threads << '\n';
    out << "deterministic_timing = " << (cfg.deterministic_timing ? "true" : "false") << '\n';
    out << "metrics_path = " << cfg.metrics_path << '\n';
    out << "checkpoint_path = " << cfg.checkpoint_path << '\n';
    out << "checkpoint_every = " << cfg.checkpoint_every << '\n';
    out << "raft_dump_path = " << cfg.raft_dump_path << '\n';
    out << "resume_from = " << cfg.resume_from << '\n';
    return out.str();
}

}  // namespace microrl
