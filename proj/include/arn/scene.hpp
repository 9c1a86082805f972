#pragma once

#include "arn/geometry.hpp"

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace arn {

inline constexpr int kMaxQueryTokens = 19;

// Three-way feature decomposition shared by queries and proposals.
enum Modality : int { kSubject = 0, kLocation = 1, kContext = 2 };

inline const char* modality_name(int m) {
  static const char* names[3] = {"subject", "location", "context"};
  return names[m];
}

// One natural-language query against a scene. The ground-truth proposal is
// an evaluation-only annotation: it is private and every read goes through
// a counted accessor, so tests can assert the training path never touches
// it. Manifest IO uses uncounted friend access.
class QueryRecord {
 public:
  std::vector<std::string> words;
  std::vector<int> token_ids;  // filled once a vocabulary is applied
  std::vector<std::string> attribute_words;
  std::vector<int> attribute_ids;  // filled once an attribute table is applied
  std::string template_tag;        // synthetic template family, may be empty

  bool has_gt() const {
    gt_reads_.fetch_add(1, std::memory_order_relaxed);
    return gt_.has_value();
  }

  /// Evaluation-only. Counted so the weak-supervision isolation test can
  /// prove training never consults it.
  std::optional<int> gt_proposal() const {
    gt_reads_.fetch_add(1, std::memory_order_relaxed);
    return gt_;
  }

  void set_gt_proposal(std::optional<int> gt) { gt_ = std::move(gt); }

  static std::uint64_t gt_read_count() {
    return gt_reads_.load(std::memory_order_relaxed);
  }

 private:
  std::optional<int> gt_;
  inline static std::atomic<std::uint64_t> gt_reads_{0};

  friend struct ManifestIo;
};

struct Scene {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<Proposal> proposals;
  std::vector<QueryRecord> queries;

  void validate() const {
    if (proposals.empty()) {
      throw std::invalid_argument("Scene " + image_id + ": no proposals");
    }
    if (width <= 0.0 || height <= 0.0) {
      throw std::invalid_argument("Scene " + image_id +
                                  ": non-positive image dimensions");
    }
    for (const auto& p : proposals) p.box.validate();
    for (const auto& q : queries) {
      if (q.words.empty() ||
          q.words.size() > static_cast<std::size_t>(kMaxQueryTokens)) {
        throw std::invalid_argument("Scene " + image_id +
                                    ": query token count out of [1, 19]");
      }
    }
  }
};

// Attribute label inventory with corpus frequencies; classification-loss
// class weights are reciprocal frequencies.
struct AttributeTable {
  std::vector<std::string> names;
  std::vector<int> frequency;
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(names.size()); }

  int id_of(const std::string& name) const {
    const auto it = index.find(name);
    return it == index.end() ? -1 : it->second;
  }

  double weight(int id) const {
    return 1.0 / static_cast<double>(frequency.at(static_cast<std::size_t>(id)));
  }

  void add(const std::string& name, int count) {
    if (count < 1) {
      throw std::invalid_argument("AttributeTable: frequency must be >= 1");
    }
    if (index.count(name)) {
      throw std::invalid_argument("AttributeTable: duplicate attribute '" +
                                  name + "'");
    }
    index.emplace(name, static_cast<int>(names.size()));
    names.push_back(name);
    frequency.push_back(count);
  }
};

}  // namespace arn
