#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "microrl/rng.hpp"
#include "microrl/vocab.hpp"

namespace microrl {

enum class TaskKind { arithmetic, countdown };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(std::string_view name);

struct TaskInstance {
    std::string prompt_text;
    std::vector<int> prompt_ids;
    std::string gold_answer;
    TaskKind kind = TaskKind::arithmetic;
    // countdown only
    std::vector<long long> numbers;
    long long target = 0;
};

// Two independent reward signals: a small one for emitting the answer markup
// correctly and the main one for a verifiably correct answer.
struct RewardBreakdown {
    double format_reward = 0.0;
    double correctness_reward = 0.0;
    double total = 0.0;
};

// Answer markup around the final answer. Configurable so desk-scale runs can
// pick markers short enough to be discoverable by a tiny policy.
struct AnswerFormat {
    std::string open = "<answer>";
    std::string close = "</answer>";
};

struct ArithmeticOptions {
    int digits = 1;           // operand width: 1 -> [0,9], 2 -> [10,99]
    std::string ops = "+-*";  // subset of "+-*"
};

struct CountdownOptions {
    int n_numbers = 3;  // 3 or 4
    long long number_min = 1, number_max = 9;
    long long target_min = 10, target_max = 50;
};

// Single-operation arithmetic instance, prompt "a<op>b=".
TaskInstance gen_arithmetic(Rng& rng, const ArithmeticOptions& opt = {});

// Countdown instance, prompt "n1,n2,n3:target=". Guaranteed solvable: the
// generator keeps a brute-force solution as the gold answer.
TaskInstance gen_countdown(Rng& rng, const CountdownOptions& opt = {});

// Vocabulary restricted to the characters one task family can emit plus the
// answer markers. A smaller head makes desk-scale sampling land on meaningful
// tokens far more often than the shared all-task vocabulary does.
Vocabulary task_scoped_vocabulary(TaskKind kind, const AnswerFormat& fmt);

// True when text contains the markup exactly once and nothing after the
// close marker (leading text before the open marker is allowed).
bool matches_format(std::string_view text, const AnswerFormat& fmt);

// The answer the completion is judged on: the markup payload when present,
// otherwise a best effort (last integer in the text for arithmetic, the whole
// text for countdown).
std::string extract_answer(std::string_view text, const AnswerFormat& fmt, TaskKind kind);

RewardBreakdown score_completion(std::string_view completion_text, const TaskInstance& inst,
                                 const AnswerFormat& fmt = {});

// True when expr parses as +,-,*,/ with parentheses over integer literals,
// uses each provided number at most once, every division is exact, and the
// value equals target.
bool verify_countdown_expression(std::string_view expr, const std::vector<long long>& numbers,
                                 long long target);

// Brute-force search for an expression over a subset of numbers reaching
// target (non-negative integer intermediates). Empty string when unreachable.
std::string solve_countdown(const std::vector<long long>& numbers, long long target);

// Strict integer parse of a whole string (optional leading minus).
bool parse_int(std::string_view s, long long& out);

// Line-delimited JSON dataset.
void save_dataset(const std::vector<TaskInstance>& ds, const std::string& path);
std::vector<TaskInstance> load_dataset(const std::string& path);

}  // namespace microrl
