#include "xprompt/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "xprompt/error.hpp"

namespace xprompt {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double mi_term(double joint, double total, double row, double col) {
  if (joint == 0.0) return 0.0;
  return (joint / total) * std::log2((joint * total) / (row * col));
}

}  // namespace

double mutual_information(std::int64_t n11, std::int64_t n10, std::int64_t n01, std::int64_t n00) {
  if (n11 < 0 || n10 < 0 || n01 < 0 || n00 < 0) {
    throw ValidationError("contingency counts must be nonnegative");
  }
  const double a = static_cast<double>(n11), b = static_cast<double>(n10);
  const double c = static_cast<double>(n01), d = static_cast<double>(n00);
  const double total = a + b + c + d;
  if (total == 0.0) throw ValidationError("contingency table is empty");
  const double x1 = a + b, x0 = c + d, y1 = a + c, y0 = b + d;
  // The off-diagonal pair is summed first so that swapping the roles of X
  // and Y gives a bit-identical result.
  const double diag = mi_term(a, total, x1, y1) + mi_term(d, total, x0, y0);
  const double off = mi_term(b, total, x1, y0) + mi_term(c, total, x0, y1);
  return std::max(0.0, diag + off);
}

RowVec<double> StaticEmbedder::embed(const std::string& token) const {
  const auto ids = vocab_.encode_word(token);
  RowVec<double> sum = RowVec<double>::Zero(table_.cols());
  for (int id : ids) sum += table_.row(id).cast<double>();
  return sum / static_cast<double>(ids.size());
}

std::vector<PromptCandidate> extract_pivot_candidates(const std::vector<DomainCorpus>& sources,
                                                      int min_count) {
  if (sources.empty()) throw ValidationError("need at least one source corpus");
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  for (const auto& c : sources) {
    if (!c.labelled) {
      throw ValidationError("source corpus " + c.domain_name +
                            " is unlabelled; mutual information needs aspect labels");
    }
  }

  std::map<std::string, std::map<std::string, int>> counts;  // token -> domain -> count
  std::map<std::string, std::int64_t> with_aspect, without_aspect;
  std::int64_t aspect_sentences = 0, total_sentences = 0;
  for (const auto& corpus : sources) {
    for (const auto& s : corpus.train) {
      const bool has_aspect =
          std::find(s.bio_labels.begin(), s.bio_labels.end(), Bio::B) != s.bio_labels.end();
      ++total_sentences;
      if (has_aspect) ++aspect_sentences;
      std::set<std::string> seen;
      for (const auto& tok : s.tokens) {
        auto key = lower(tok);
        ++counts[key][corpus.domain_name];
        seen.insert(std::move(key));
      }
      for (const auto& tok : seen) ++(has_aspect ? with_aspect : without_aspect)[tok];
    }
  }

  std::vector<PromptCandidate> out;
  for (const auto& [token, per_domain] : counts) {
    bool pivot = true;
    for (const auto& corpus : sources) {
      auto it = per_domain.find(corpus.domain_name);
      if (it == per_domain.end() || it->second < min_count) {
        pivot = false;
        break;
      }
    }
    if (!pivot) continue;
    const std::int64_t n11 = with_aspect[token];
    const std::int64_t n10 = without_aspect[token];
    const std::int64_t n01 = aspect_sentences - n11;
    const std::int64_t n00 = total_sentences - aspect_sentences - n10;
    PromptCandidate cand;
    cand.token = token;
    cand.mi_score = mutual_information(n11, n10, n01, n00);
    cand.domain_counts = per_domain;
    out.push_back(std::move(cand));
  }
  return out;
}

std::vector<std::string> collect_aspect_tokens(const std::vector<DomainCorpus>& sources) {
  std::set<std::string> tokens;
  for (const auto& corpus : sources) {
    if (!corpus.labelled) continue;
    for (const auto& s : corpus.train) {
      for (const auto& span : spans_from_bio(s.bio_labels)) {
        for (auto i = span.start; i <= span.end; ++i) tokens.insert(lower(s.tokens[i]));
      }
    }
  }
  return {tokens.begin(), tokens.end()};
}

std::vector<PromptCandidate> rank_candidates(std::vector<PromptCandidate> candidates,
                                             const TextEmbedder& embedder,
                                             const std::vector<std::string>& aspect_tokens) {
  if (candidates.empty()) throw ValidationError("no prompt candidates to rank");
  if (aspect_tokens.empty()) throw ValidationError("aspect token set is empty");
  std::vector<RowVec<double>> aspects;
  aspects.reserve(aspect_tokens.size());
  for (const auto& a : aspect_tokens) aspects.push_back(embedder.embed(a));
  for (auto& cand : candidates) {
    const auto e = embedder.embed(cand.token);
    double total = 0.0;
    for (const auto& a : aspects) total += (e - a).norm();
    cand.mean_aspect_distance = total / static_cast<double>(aspects.size());
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    if (x.mean_aspect_distance != y.mean_aspect_distance) {
      return x.mean_aspect_distance < y.mean_aspect_distance;
    }
    if (x.mi_score != y.mi_score) return x.mi_score > y.mi_score;
    return x.token < y.token;
  });
  return candidates;
}

PromptBank<float> build_prompt_bank(const std::vector<PromptCandidate>& ranked, int m,
                                    const TextEmbedder& embedder, int rows) {
  if (m < 1) throw ValidationError("prompt length m must be >= 1");
  if (rows == 0) rows = m;
  if (rows < m) throw ValidationError("prompt bank rows must be >= m");
  if (static_cast<int>(ranked.size()) < rows) {
    throw ValidationError("only " + std::to_string(ranked.size()) + " prompt candidates for " +
                          std::to_string(rows) + " prompt vectors; lower min_count");
  }
  PromptBank<float> bank;
  bank.m = m;
  bank.vectors.resize(rows, embedder.width());
  for (int i = 0; i < rows; ++i) {
    bank.vectors.row(i) = embedder.embed(ranked[static_cast<std::size_t>(i)].token).cast<float>();
    bank.provenance.push_back(ranked[static_cast<std::size_t>(i)]);
  }
  if (!bank.vectors.allFinite()) throw ValidationError("prompt bank contains non-finite values");
  return bank;
}

std::vector<int> select_prompt_rows(const Mat<float>& bank, const RowVec<double>& sentence_mean,
                                    int m) {
  if (m > bank.rows()) throw ValidationError("bank smaller than m");
  std::vector<std::pair<double, int>> dist;
  for (Eigen::Index r = 0; r < bank.rows(); ++r) {
    dist.emplace_back((bank.row(r).cast<double>() - sentence_mean).norm(), static_cast<int>(r));
  }
  std::sort(dist.begin(), dist.end());
  std::vector<int> rows;
  for (int i = 0; i < m; ++i) rows.push_back(dist[static_cast<std::size_t>(i)].second);
  return rows;
}

}  // namespace xprompt
