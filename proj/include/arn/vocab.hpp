#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace arn {

// Token-to-id map with fixed reserved ids. Serialized as one token per
// line; a token's id is its line number offset by the reserved count.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens)
      : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const auto [it, inserted] =
          index_.emplace(tokens_[i], static_cast<int>(i) + kReserved);
      if (!inserted) {
        throw std::invalid_argument("Vocabulary: duplicate token '" +
                                    tokens_[i] + "'");
      }
    }
  }

  int size() const { return static_cast<int>(tokens_.size()) + kReserved; }

  bool contains(const std::string& token) const {
    return index_.count(token) > 0;
  }

  /// Id of a token, kUnk when absent.
  int id_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token_of(int id) const {
    static const std::string reserved[kReserved] = {"<pad>", "<bos>", "<eos>",
                                                    "<unk>"};
    if (id < 0 || id >= size()) {
      throw std::out_of_range("Vocabulary: id out of range");
    }
    if (id < kReserved) return reserved[id];
    return tokens_[static_cast<std::size_t>(id - kReserved)];
  }

  std::vector<int> encode(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id_of(w));
    return ids;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Vocabulary: cannot write " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Vocabulary: cannot read " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace arn
