#include "microrl/vocab.hpp"

#include <stdexcept>

namespace microrl {

int Vocabulary::id_of(char c) const {
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
        if (tokens[i].size() == 1 && tokens[i][0] == c) return i;
    }
    return -1;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
        int id = id_of(c);
        if (id < 0) {
            throw std::invalid_argument(std::string("character not in vocabulary: '") + c + "'");
        }
        ids.push_back(id);
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range in decode");
        if (id == eos_id) break;
        out += tokens[id];
    }
    return out;
}

Vocabulary Vocabulary::from_chars(std::string_view chars) {
    Vocabulary v;
    for (char c : chars) {
        if (v.id_of(c) >= 0) continue;
        v.tokens.push_back(std::string(1, c));
    }
    v.tokens.push_back("<eos>");
    v.eos_id = static_cast<int>(v.tokens.size()) - 1;
    return v;
}

std::string_view task_charset() {
    return "0123456789+-*/()=<>,:answer";
}

const Vocabulary& task_vocabulary() {
    static const Vocabulary v = Vocabulary::from_chars(task_charset());
    return v;
}

}  // namespace microrl
