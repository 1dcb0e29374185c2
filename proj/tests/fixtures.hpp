#ifndef XPROMPT_TESTS_FIXTURES_HPP
#define XPROMPT_TESTS_FIXTURES_HPP

#include <string>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/model.hpp"
#include "xprompt/objective.hpp"
#include "xprompt/training.hpp"

namespace xprompt::testing {

/// Restaurant-like domain: aspects are NN / NN NN runs after a determiner.
inline SyntheticSpec restaurant_spec(int train, int test) {
  SyntheticSpec s;
  s.domain_name = "REST";
  s.train_sentences = train;
  s.test_sentences = test;
  s.lexicon = {{"DT", {"the", "this", "our"}},
               {"VBZ", {"is", "was", "tastes"}},
               {"JJ", {"great", "awful", "cold", "fresh"}},
               {"RB", {"really", "very", "quite"}},
               {"PRP", {"we", "they", "i"}},
               {"VBD", {"loved", "hated", "visited"}},
               {"IN", {"at", "in", "with"}},
               {".", {".", "!"}}};
  s.aspect_terms = {{"food"}, {"pizza"}, {"service"}, {"wine", "list"}, {"sushi"}, {"staff"}};
  s.aspect_templates = {{"DT", kAspectSlot, "VBZ", "RB", "JJ", "."},
                        {"PRP", "VBD", "DT", kAspectSlot, "."},
                        {"DT", kAspectSlot, "VBZ", "JJ", "IN", "DT", kAspectSlot, "."}};
  s.plain_templates = {{"PRP", "VBD", "RB", "."}};
  return s;
}

/// Laptop-like domain with the same POS patterns but disjoint words.
inline SyntheticSpec laptop_spec(int train, int test) {
  SyntheticSpec s = restaurant_spec(train, test);
  s.domain_name = "LAPT";
  s.lexicon["JJ"] = {"fast", "slow", "sturdy", "cheap"};
  s.lexicon["VBD"] = {"bought", "returned", "used"};
  s.aspect_terms = {{"keyboard"}, {"battery"}, {"screen"}, {"hard", "drive"}, {"trackpad"}, {"fan"}};
  return s;
}

inline EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.hidden_width = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_width = 32;
  c.max_length = 128;
  return c;
}

}  // namespace xprompt::testing

#endif  // XPROMPT_TESTS_FIXTURES_HPP
