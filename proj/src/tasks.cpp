#include "microrl/tasks.hpp"

#include <json.hpp>

#include <cctype>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace microrl {

namespace {

long long uniform_in(Rng& rng, long long lo, long long hi) {
    return lo + static_cast<long long>(rng.next_u64() %
                                       static_cast<std::uint64_t>(hi - lo + 1));
}

std::vector<std::size_t> find_all(std::string_view text, std::string_view needle) {
    std::vector<std::size_t> out;
    if (needle.empty()) return out;
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string_view::npos) {
        out.push_back(pos);
        pos += needle.size();
    }
    return out;
}

// ---- countdown expression evaluation --------------------------------------

constexpr long long kValueCap = 1000000000000LL;  // guards multiplication overflow

struct ExprParser {
    std::string_view s;
    std::size_t pos = 0;
    std::vector<long long> literals;
    bool ok = true;

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool at_end() {
        skip_ws();
        return pos >= s.size();
    }
    char peek() {
        skip_ws();
        return pos < s.size() ? s[pos] : '\0';
    }

    long long parse_expr() {
        long long v = parse_term();
        while (ok) {
            const char c = peek();
            if (c == '+' || c == '-') {
                ++pos;
                const long long r = parse_term();
                if (!ok) return 0;
                v = c == '+' ? v + r : v - r;
                if (std::llabs(v) > kValueCap) ok = false;
            } else {
                break;
            }
        }
        return v;
    }

    long long parse_term() {
        long long v = parse_factor();
        while (ok) {
            const char c = peek();
            if (c == '*' || c == '/') {
                ++pos;
                const long long r = parse_factor();
                if (!ok) return 0;
                if (c == '*') {
                    if (std::llabs(v) > 0 && std::llabs(r) > kValueCap / std::llabs(v)) {
                        ok = false;
                        return 0;
                    }
                    v = v * r;
                } else {
                    if (r == 0 || v % r != 0) {  // division must be exact
                        ok = false;
                        return 0;
                    }
                    v = v / r;
                }
            } else {
                break;
            }
        }
        return v;
    }

    long long parse_factor() {
        const char c = peek();
        if (c == '(') {
            ++pos;
            const long long v = parse_expr();
            if (!ok || peek() != ')') {
                ok = false;
                return 0;
            }
            ++pos;
            return v;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            long long v = 0;
            int len = 0;
            while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                v = v * 10 + (s[pos] - '0');
                ++pos;
                if (++len > 12) {
                    ok = false;
                    return 0;
                }
            }
            literals.push_back(v);
            return v;
        }
        ok = false;
        return 0;
    }
};

bool multiset_within(const std::vector<long long>& used, std::vector<long long> avail) {
    for (long long u : used) {
        bool found = false;
        for (std::size_t i = 0; i < avail.size(); ++i) {
            if (avail[i] == u) {
                avail.erase(avail.begin() + static_cast<long>(i));
                found = true;
                break;
            }
        }
        if (!found) return false;
    }
    return true;
}

struct SearchEntry {
    long long value;
    std::string expr;
};

// Depth-first combination search over the multiset of remaining values.
bool search_countdown(std::vector<SearchEntry>& entries, long long target, std::string& out) {
    for (const SearchEntry& e : entries) {
        if (e.value == target) {
            out = e.expr;
            return true;
        }
    }
    const std::size_t n = entries.size();
    if (n < 2) return false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const SearchEntry a = entries[i];
            const SearchEntry b = entries[j];
            std::vector<SearchEntry> rest;
            for (std::size_t k = 0; k < n; ++k) {
                if (k != i && k != j) rest.push_back(entries[k]);
            }
            struct Cand {
                bool valid;
                long long value;
                char op;
            };
            const Cand cands[] = {
                {true, a.value + b.value, '+'},
                {a.value - b.value >= 0, a.value - b.value, '-'},
                {std::llabs(a.value) <= kValueCap / std::max(1LL, std::llabs(b.value)),
                 a.value * b.value, '*'},
                {b.value != 0 && a.value % std::max(1LL, b.value) == 0 && b.value != 0,
                 b.value != 0 ? a.value / b.value : 0, '/'},
            };
            for (const Cand& c : cands) {
                if (!c.valid) continue;
                std::vector<SearchEntry> next = rest;
                next.push_back({c.value, "(" + a.expr + c.op + b.expr + ")"});
                if (search_countdown(next, target, out)) return true;
            }
        }
    }
    return false;
}

}  // namespace

std::string task_kind_name(TaskKind k) {
    return k == TaskKind::arithmetic ? "arithmetic" : "countdown";
}

TaskKind task_kind_from_name(std::string_view name) {
    if (name == "arithmetic") return TaskKind::arithmetic;
    if (name == "countdown") return TaskKind::countdown;
    throw std::invalid_argument("unknown task kind: " + std::string(name));
}

TaskInstance gen_arithmetic(Rng& rng, const ArithmeticOptions& opt) {
    if (opt.digits != 1 && opt.digits != 2) {
        throw std::invalid_argument("gen_arithmetic: digits must be 1 or 2");
    }
    if (opt.ops.empty() || opt.ops.find_first_not_of("+-*") != std::string::npos) {
        throw std::invalid_argument("gen_arithmetic: ops must be a non-empty subset of \"+-*\"");
    }
    const long long lo = opt.digits == 1 ? 0 : 10;
    const long long hi = opt.digits == 1 ? 9 : 99;
    const long long a = uniform_in(rng, lo, hi);
    const long long b = uniform_in(rng, lo, hi);
    const char op = opt.ops[static_cast<std::size_t>(rng.next_u64() % opt.ops.size())];
    long long result = 0;
    switch (op) {
        case '+': result = a + b; break;
        case '-': result = a - b; break;
        case '*': result = a * b; break;
    }
    TaskInstance inst;
    inst.kind = TaskKind::arithmetic;
    inst.prompt_text = std::to_string(a) + op + std::to_string(b) + "=";
    inst.prompt_ids = task_vocabulary().encode(inst.prompt_text);
    inst.gold_answer = std::to_string(result);
    return inst;
}

TaskInstance gen_countdown(Rng& rng, const CountdownOptions& opt) {
    if (opt.n_numbers < 2 || opt.n_numbers > 4) {
        throw std::invalid_argument("gen_countdown: n_numbers must be in [2, 4]");
    }
    if (opt.number_min < 0 || opt.number_min > opt.number_max ||
        opt.target_min > opt.target_max) {
        throw std::invalid_argument("gen_countdown: bad number/target range");
    }
    for (int attempt = 0; attempt < 100000; ++attempt) {
        std::vector<long long> numbers(static_cast<std::size_t>(opt.n_numbers));
        for (long long& n : numbers) n = uniform_in(rng, opt.number_min, opt.number_max);
        const long long target = uniform_in(rng, opt.target_min, opt.target_max);
        const std::string expr = solve_countdown(numbers, target);
        if (expr.empty()) continue;

        TaskInstance inst;
        inst.kind = TaskKind::countdown;
        inst.numbers = numbers;
        inst.target = target;
        std::string prompt;
        for (std::size_t i = 0; i < numbers.size(); ++i) {
            if (i) prompt += ',';
            prompt += std::to_string(numbers[i]);
        }
        prompt += ':';
        prompt += std::to_string(target);
        prompt += '=';
        inst.prompt_text = prompt;
        inst.prompt_ids = task_vocabulary().encode(prompt);
        inst.gold_answer = expr;
        return inst;
    }
    throw std::runtime_error("gen_countdown: no solvable instance found for the given ranges");
}

Vocabulary task_scoped_vocabulary(TaskKind kind, const AnswerFormat& fmt) {
    std::string chars = kind == TaskKind::arithmetic ? "0123456789+-*=" : "0123456789+-*/()=,:";
    chars += fmt.open;
    chars += fmt.close;
    return Vocabulary::from_chars(chars);  // deduplicates, keeps first-seen order
}

bool matches_format(std::string_view text, const AnswerFormat& fmt) {
    if (fmt.open.empty() || fmt.close.empty() || fmt.open == fmt.close) {
        throw std::invalid_argument("answer format markers must be non-empty and distinct");
    }
    const auto opens = find_all(text, fmt.open);
    const auto closes = find_all(text, fmt.close);
    if (opens.size() != 1 || closes.size() != 1) return false;
    const std::size_t open_at = opens[0];
    const std::size_t close_at = closes[0];
    // the payload between the markers must be non-empty
    if (close_at <= open_at + fmt.open.size()) return false;
    return close_at + fmt.close.size() == text.size();
}

std::string extract_answer(std::string_view text, const AnswerFormat& fmt, TaskKind kind) {
    if (matches_format(text, fmt)) {
        const std::size_t open_at = find_all(text, fmt.open)[0];
        const std::size_t payload_begin = open_at + fmt.open.size();
        const std::size_t close_at = find_all(text, fmt.close)[0];
        return std::string(text.substr(payload_begin, close_at - payload_begin));
    }
    if (kind == TaskKind::countdown) return std::string(text);
    // arithmetic fallback: last integer in the text, minus sign included
    int end = -1;
    for (int i = static_cast<int>(text.size()) - 1; i >= 0; --i) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            end = i + 1;
            break;
        }
    }
    if (end < 0) return "";
    int begin = end - 1;
    while (begin > 0 && std::isdigit(static_cast<unsigned char>(text[begin - 1]))) --begin;
    if (begin > 0 && text[begin - 1] == '-') --begin;
    return std::string(text.substr(static_cast<std::size_t>(begin),
                                   static_cast<std::size_t>(end - begin)));
}

RewardBreakdown score_completion(std::string_view completion_text, const TaskInstance& inst,
                                 const AnswerFormat& fmt) {
    RewardBreakdown r;
    if (matches_format(completion_text, fmt)) r.format_reward = 0.1;
    const std::string extracted = extract_answer(completion_text, fmt, inst.kind);
    if (inst.kind == TaskKind::arithmetic) {
        long long got = 0, want = 0;
        if (parse_int(extracted, got) && parse_int(inst.gold_answer, want) && got == want) {
            r.correctness_reward = 1.0;
        }
    } else {
        if (verify_countdown_expression(extracted, inst.numbers, inst.target)) {
            r.correctness_reward = 1.0;
        }
    }
    r.total = r.format_reward + r.correctness_reward;
    return r;
}

bool verify_countdown_expression(std::string_view expr, const std::vector<long long>& numbers,
                                 long long target) {
    ExprParser p;
    p.s = expr;
    const long long v = p.parse_expr();
    if (!p.ok || !p.at_end() || p.literals.empty()) return false;
    if (!multiset_within(p.literals, numbers)) return false;
    return v == target;
}

std::string solve_countdown(const std::vector<long long>& numbers, long long target) {
    std::vector<SearchEntry> entries;
    entries.reserve(numbers.size());
    for (long long n : numbers) entries.push_back({n, std::to_string(n)});
    std::string out;
    if (search_countdown(entries, target, out)) return out;
    return "";
}

bool parse_int(std::string_view s, long long& out) {
    if (s.empty()) return false;
    std::size_t i = 0;
    bool neg = false;
    if (s[0] == '-') {
        neg = true;
        i = 1;
        if (s.size() == 1) return false;
    }
    if (s.size() - i > 18) return false;
    long long v = 0;
    for (; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
        v = v * 10 + (s[i] - '0');
    }
    out = neg ? -v : v;
    return true;
}

void save_dataset(const std::vector<TaskInstance>& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset file for writing: " + path);
    for (const TaskInstance& inst : ds) {
        nlohmann::json j;
        j["prompt"] = inst.prompt_text;
        j["gold"] = inst.gold_answer;
        j["kind"] = task_kind_name(inst.kind);
        if (inst.kind == TaskKind::countdown) {
            j["numbers"] = inst.numbers;
            j["target"] = inst.target;
        }
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("failed writing dataset file: " + path);
}

std::vector<TaskInstance> load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<TaskInstance> ds;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("dataset parse error at " + path + ":" +
                                     std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("prompt") || !j.contains("gold") || !j.contains("kind")) {
            throw std::runtime_error("dataset record missing fields at " + path + ":" +
                                     std::to_string(lineno));
        }
        TaskInstance inst;
        inst.prompt_text = j.at("prompt").get<std::string>();
        inst.gold_answer = j.at("gold").get<std::string>();
        inst.kind = task_kind_from_name(j.at("kind").get<std::string>());
        if (inst.kind == TaskKind::countdown) {
            if (!j.contains("numbers") || !j.contains("target")) {
                throw std::runtime_error("countdown record missing numbers/target at " + path +
                                         ":" + std::to_string(lineno));
            }
            inst.numbers = j.at("numbers").get<std::vector<long long>>();
            inst.target = j.at("target").get<long long>();
        }
        inst.prompt_ids = task_vocabulary().encode(inst.prompt_text);
        ds.push_back(std::move(inst));
    }
    return ds;
}

}  // namespace microrl
