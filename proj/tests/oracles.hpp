#ifndef XPROMPT_TESTS_ORACLES_HPP
#define XPROMPT_TESTS_ORACLES_HPP

// Reference implementations used only by tests. They deliberately take a
// different route from the library code they check.

#include <cmath>
#include <regex>
#include <string>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/random.hpp"

namespace xprompt::testing {

/// Every label string of length n over {B, I, O}.
inline std::vector<BioSequence> all_label_strings(std::size_t n) {
  std::vector<BioSequence> out{{}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<BioSequence> next;
    for (const auto& prefix : out) {
      for (Bio b : {Bio::B, Bio::I, Bio::O}) {
        auto s = prefix;
        s.push_back(b);
        next.push_back(std::move(s));
      }
    }
    out = std::move(next);
  }
  return out;
}

inline std::string bio_string(const BioSequence& labels) {
  std::string s;
  for (Bio b : labels) s.push_back(bio_symbol(b));
  return s;
}

/// Well-formedness as the regular language (O | B I*)*.
inline bool regex_accepts_bio(const BioSequence& labels) {
  static const std::regex language("^(O|BI*)*$");
  return std::regex_match(bio_string(labels), language);
}

/// Two-state automaton: OUTSIDE / INSIDE(start). Emits a span whenever an
/// open span is closed by B, O or end of input.
inline SpanSet reference_spans(const BioSequence& labels) {
  SpanSet spans;
  bool inside = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= labels.size(); ++i) {
    const char c = i == labels.size() ? '$' : bio_symbol(labels[i]);
    if (inside && c != 'I') {
      spans.push_back({start, i - 1});
      inside = false;
    }
    if (c == 'B') {
      inside = true;
      start = i;
    }
  }
  return spans;
}

/// Long-double summation of the four p log2(p / (px py)) terms.
inline long double reference_mi(long double a, long double b, long double c, long double d) {
  const long double n = a + b + c + d;
  const long double cells[2][2] = {{d, c}, {b, a}};  // [x][y]
  long double total = 0.0L;
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 2; ++y) {
      const long double pxy = cells[x][y] / n;
      if (pxy == 0.0L) continue;
      const long double px = (cells[x][0] + cells[x][1]) / n;
      const long double py = (cells[0][y] + cells[1][y]) / n;
      total += pxy * std::log2(pxy / (px * py));
    }
  }
  return total;
}

struct BruteForcePRF {
  double precision, recall, f1;
};

/// Explicit pairwise matching with long-form arithmetic.
inline BruteForcePRF reference_prf(const std::vector<SpanSet>& predicted,
                                   const std::vector<SpanSet>& gold) {
  long matched = 0, n_pred = 0, n_gold = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    n_pred += static_cast<long>(predicted[s].size());
    n_gold += static_cast<long>(gold[s].size());
    for (const auto& p : predicted[s]) {
      for (const auto& g : gold[s]) {
        if (p.start == g.start && p.end == g.end) {
          ++matched;
          break;
        }
      }
    }
  }
  BruteForcePRF r{0, 0, 0};
  if (n_pred > 0) r.precision = static_cast<double>(matched) / static_cast<double>(n_pred);
  if (n_gold > 0) r.recall = static_cast<double>(matched) / static_cast<double>(n_gold);
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

/// Random disjoint span set over a sentence of the given length.
inline SpanSet random_spans(Rng& rng, std::size_t length) {
  SpanSet spans;
  std::size_t i = 0;
  while (i < length) {
    if (rng.uniform01() < 0.3) {
      const std::size_t len = 1 + rng.uniform_index(3);
      const std::size_t end = std::min(length - 1, i + len - 1);
      spans.push_back({i, end});
      i = end + 2;
    } else {
      ++i;
    }
  }
  return spans;
}

}  // namespace xprompt::testing

#endif  // XPROMPT_TESTS_ORACLES_HPP
