#ifndef XPROMPT_SYNTAX_HPP
#define XPROMPT_SYNTAX_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xprompt/corpus.hpp"

namespace xprompt {

inline constexpr const char* kMaskTag = "[MASK]";

/// Bijective tag <-> id map. Id 0 is always the reserved mask symbol.
class PosVocabulary {
 public:
  PosVocabulary();

  int add(const std::string& tag);
  int id(const std::string& tag) const;  // throws on unknown tag
  bool contains(const std::string& tag) const { return index_.count(tag) != 0; }
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tags_.size()); }
  int mask_id() const { return 0; }
  const std::vector<std::string>& tags() const { return tags_; }

  /// Adds every tag of every sentence; run once, single-threaded, before training.
  void add_corpus(const DomainCorpus& corpus);

  void save(const std::filesystem::path& path) const;
  static PosVocabulary load(const std::filesystem::path& path);

  friend bool operator==(const PosVocabulary& a, const PosVocabulary& b) {
    return a.tags_ == b.tags_;
  }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
};

/// Source of POS tags for pre-tokenized sentences.
class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<std::string> tag(const std::vector<std::string>& tokens) const = 0;
};

/// Deterministic lookup tagger with a small suffix fallback.
class DictionaryTagger : public PosTagger {
 public:
  DictionaryTagger() = default;
  explicit DictionaryTagger(std::map<std::string, std::string> entries,
                            std::string fallback = "NN");

  /// Most frequent tag per lower-cased word across the corpus.
  static DictionaryTagger from_corpus(const DomainCorpus& corpus);
  /// Two-column "word<TAB>tag" file.
  static DictionaryTagger load(const std::filesystem::path& path);

  void add(const std::string& word, const std::string& tag);
  std::vector<std::string> tag(const std::vector<std::string>& tokens) const override;

 private:
  std::map<std::string, std::string> entries_;
  std::string fallback_ = "NN";
};

/// Adapter for an external tagging toolkit: runs `command` with the tokens
/// on stdin (one per line) and reads one tag per line from stdout.
class CommandTagger : public PosTagger {
 public:
  explicit CommandTagger(std::string command) : command_(std::move(command)) {}
  std::vector<std::string> tag(const std::vector<std::string>& tokens) const override;

 private:
  std::string command_;
};

/// Tags a sentence and registers any new tags in `vocab`.
std::vector<std::string> tag_pos(const std::vector<std::string>& tokens,
                                 const PosTagger& tagger, PosVocabulary& vocab);

struct MaskPlan {
  std::vector<std::size_t> masked_positions;  // ascending
  std::vector<std::uint8_t> indicator;
  std::uint64_t seed = 0;
};

/// Number of positions masked for a sentence of length n.
std::size_t mask_count(std::size_t n, double rate);

/// Replaces exactly mask_count(n, rate) tags, chosen uniformly without
/// replacement, by kMaskTag.
std::pair<std::vector<std::string>, MaskPlan> apply_pos_mask(
    const std::vector<std::string>& pos_tags, double rate, std::uint64_t seed);

/// Plan with no masked positions (inference path).
MaskPlan empty_mask_plan(std::size_t n);

/// Fresh per-epoch mask seed for one sentence.
std::uint64_t mask_seed(std::uint64_t base_seed, std::uint64_t epoch,
                        const std::string& sentence_id);

}  // namespace xprompt

#endif  // XPROMPT_SYNTAX_HPP
