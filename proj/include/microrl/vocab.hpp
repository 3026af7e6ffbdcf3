#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace microrl {

// Character-level vocabulary with a single trailing end-of-sequence token.
struct Vocabulary {
    std::vector<std::string> tokens;  // single-character strings, then "<eos>"
    int eos_id = -1;

    int size() const { return static_cast<int>(tokens.size()); }

    // Id of a character token, -1 when absent.
    int id_of(char c) const;

    // Throws std::invalid_argument on characters outside the vocabulary.
    std::vector<int> encode(std::string_view text) const;

    // Renders ids back to text; stops at the first eos token.
    std::string decode(const std::vector<int>& ids) const;

    // Builds a character vocabulary from a set of characters (deduplicated,
    // kept in first-seen order) plus the eos token.
    static Vocabulary from_chars(std::string_view chars);
};

// Characters sufficient for both task families and the default answer
// markup: digits, arithmetic operators, parentheses, separators and the
// letters of "answer".
std::string_view task_charset();

// Canonical vocabulary shared by generators, scoring and the trainer.
const Vocabulary& task_vocabulary();

}  // namespace microrl
