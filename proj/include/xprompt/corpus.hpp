#ifndef XPROMPT_CORPUS_HPP
#define XPROMPT_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xprompt {

enum class Bio : std::uint8_t { B, I, O };

char bio_symbol(Bio label);
/// Parses "B", "I" or "O"; throws ValidationError naming any other symbol.
Bio parse_bio(const std::string& symbol);

using BioSequence = std::vector<Bio>;

/// One review sentence in sequence-tagging form.
struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;
  BioSequence bio_labels;
  std::string sentence_id;
  /// False when the gold BIO column was "-" (unlabelled target data);
  /// bio_labels then holds all-O placeholders.
  bool labelled = true;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const TaggedSentence&, const TaggedSentence&) = default;
};

struct DomainCorpus {
  std::string domain_name;
  std::vector<TaggedSentence> train;
  std::vector<TaggedSentence> test;
  bool labelled = true;

  friend bool operator==(const DomainCorpus&, const DomainCorpus&) = default;
};

/// Inclusive token range of one aspect term.
struct AspectSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  friend auto operator<=>(const AspectSpan&, const AspectSpan&) = default;
};

using SpanSet = std::vector<AspectSpan>;  // sorted, disjoint

struct BioViolation {
  std::size_t position;
  std::string rule;

  friend bool operator==(const BioViolation&, const BioViolation&) = default;
};

std::vector<BioViolation> validate_bio(const BioSequence& labels);
std::vector<BioViolation> validate_bio(const std::vector<std::string>& symbols);

/// Maximal B I* runs. Throws ValidationError on ill-formed input.
SpanSet spans_from_bio(const BioSequence& labels);
/// B at span start, I for the rest of the span, O elsewhere.
BioSequence bio_from_spans(const SpanSet& spans, std::size_t length);
/// Rewrites I-after-O (and a leading I) to B so predictions are never dropped.
BioSequence repair_bio(BioSequence labels);

/// Checks every TaggedSentence invariant; returns a description per problem.
std::vector<std::string> check_sentence(const TaggedSentence& sentence);

DomainCorpus load_corpus(const std::filesystem::path& path,
                         const std::string& domain_name);
void write_corpus(const DomainCorpus& corpus, const std::filesystem::path& path);
std::string format_corpus(const DomainCorpus& corpus);

/// Template description for desk-scale synthetic corpora.
///
/// Templates are slot sequences. A slot is either a POS tag, filled from
/// `lexicon[tag]`, or the literal "<ASPECT>", filled with one entry of
/// `aspect_terms` (each word tagged `aspect_pos`).
struct SyntheticSpec {
  std::string domain_name = "SYN";
  int train_sentences = 50;
  int test_sentences = 0;
  std::map<std::string, std::vector<std::string>> lexicon;
  std::vector<std::vector<std::string>> aspect_terms;
  std::vector<std::vector<std::string>> aspect_templates;
  std::vector<std::vector<std::string>> plain_templates;
  std::string aspect_pos = "NN";
  /// Leaves the train split unlabelled (as for a target domain).
  bool unlabelled_train = false;
};

inline constexpr const char* kAspectSlot = "<ASPECT>";

DomainCorpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticSpec& spec);

}  // namespace xprompt

#endif  // XPROMPT_CORPUS_HPP
