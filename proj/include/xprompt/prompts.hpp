#ifndef XPROMPT_PROMPTS_HPP
#define XPROMPT_PROMPTS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/tensor.hpp"
#include "xprompt/vocab.hpp"

namespace xprompt {

struct PromptCandidate {
  std::string token;
  double mi_score = 0.0;  // bits
  std::map<std::string, int> domain_counts;
  double mean_aspect_distance = 0.0;

  friend bool operator==(const PromptCandidate&, const PromptCandidate&) = default;
};

/// Static (context-free) token embeddings used to rank and initialize prompts.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual int width() const = 0;
  virtual RowVec<double> embed(const std::string& token) const = 0;
};

/// Mean of the backbone's input embeddings over a token's pieces.
class StaticEmbedder : public TextEmbedder {
 public:
  StaticEmbedder(const Mat<float>& token_embedding, const SubwordVocab& vocab)
      : table_(token_embedding), vocab_(vocab) {}
  int width() const override { return static_cast<int>(table_.cols()); }
  RowVec<double> embed(const std::string& token) const override;

 private:
  const Mat<float>& table_;
  const SubwordVocab& vocab_;
};

/// Learnable soft prompts and where their initial values came from.
template <typename Scalar>
struct PromptBank {
  Mat<Scalar> vectors;  // rows x d
  std::vector<PromptCandidate> provenance;
  int m = 0;  // prompts prepended per input

  int rows() const { return static_cast<int>(vectors.rows()); }
  int width() const { return static_cast<int>(vectors.cols()); }
};

/// Binary mutual information I(X;Y) in bits from a 2x2 contingency table.
/// n11 counts X=1,Y=1; n10 counts X=1,Y=0; and so on.
double mutual_information(std::int64_t n11, std::int64_t n10, std::int64_t n01, std::int64_t n00);

/// Lower-cased tokens occurring at least `min_count` times in the train split
/// of every source corpus, scored by sentence-level MI between "contains the
/// token" and "contains an aspect span". Sorted by token.
std::vector<PromptCandidate> extract_pivot_candidates(const std::vector<DomainCorpus>& sources,
                                                      int min_count);

/// Distinct lower-cased words inside gold aspect spans of the train splits.
std::vector<std::string> collect_aspect_tokens(const std::vector<DomainCorpus>& sources);

/// Attaches mean Euclidean distance to the aspect tokens and sorts ascending;
/// ties break on higher MI, then token.
std::vector<PromptCandidate> rank_candidates(std::vector<PromptCandidate> candidates,
                                             const TextEmbedder& embedder,
                                             const std::vector<std::string>& aspect_tokens);

/// Bank initialized from the top `rows` candidates' static embeddings;
/// `m` of them are prepended per input (rows == m for a global bank).
PromptBank<float> build_prompt_bank(const std::vector<PromptCandidate>& ranked, int m,
                                    const TextEmbedder& embedder, int rows = 0);

/// Per-input variant: the m bank rows closest to the sentence's mean static
/// embedding, in ascending distance order.
std::vector<int> select_prompt_rows(const Mat<float>& bank, const RowVec<double>& sentence_mean,
                                    int m);

}  // namespace xprompt

#endif  // XPROMPT_PROMPTS_HPP
