#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lcl {

/// Reserved token ids. They occupy the first rows of every vocabulary.
struct SpecialTokens {
  std::int32_t pad = 0;
  std::int32_t eos = 1;  // "</s>", also the sequence header
  std::int32_t boi = 2;
  std::int32_t eoi = 3;

  bool is_special(std::int32_t id) const { return id == pad || id == eos || id == boi || id == eoi; }

  void validate(std::size_t vocab_size) const {
    const std::int32_t ids[] = {pad, eos, boi, eoi};
    for (int i = 0; i < 4; ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
        throw std::invalid_argument("special token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                    std::to_string(vocab_size));
      }
      for (int j = 0; j < i; ++j)
        if (ids[i] == ids[j]) throw std::invalid_argument("special token ids must be distinct");
    }
  }
};

class Vocabulary {
 public:
  static constexpr const char* kSpecialWords[4] = {"<pad>", "</s>", "<BoI>", "<EoI>"};

  Vocabulary() {
    for (const char* w : kSpecialWords) add(w);
  }

  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words)
      if (!contains(w)) add(w);
  }

  std::int32_t add(const std::string& word) {
    if (word.empty()) throw std::invalid_argument("vocabulary: empty word");
    if (word.find_first_of(", \t\n=") != std::string::npos) {
      throw std::invalid_argument("vocabulary: word '" + word + "' contains a separator character");
    }
    auto [it, inserted] = index_.emplace(word, static_cast<std::int32_t>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  std::int32_t id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw std::out_of_range("vocabulary: unknown word '" + word + "'");
    return it->second;
  }

  const std::string& word(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
      throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    }
    return words_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  SpecialTokens specials() const { return {}; }

  std::string decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    for (auto i : ids) {
      if (!out.empty()) out += ' ';
      out += word(i);
    }
    return out;
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace lcl
