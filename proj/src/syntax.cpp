#include "xprompt/syntax.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "xprompt/error.hpp"
#include "xprompt/random.hpp"

namespace xprompt {

PosVocabulary::PosVocabulary() { add(kMaskTag); }

int PosVocabulary::add(const std::string& tag) {
  if (auto it = index_.find(tag); it != index_.end()) return it->second;
  if (tag.empty() || tag.find_first_of("\t\n\r") != std::string::npos) {
    throw ValidationError("invalid POS tag '" + tag + "'");
  }
  const int id = static_cast<int>(tags_.size());
  tags_.push_back(tag);
  index_.emplace(tag, id);
  return id;
}

int PosVocabulary::id(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) throw ValidationError("POS tag '" + tag + "' not in vocabulary");
  return it->second;
}

void PosVocabulary::add_corpus(const DomainCorpus& corpus) {
  for (const auto* split : {&corpus.train, &corpus.test}) {
    for (const auto& s : *split) {
      for (const auto& t : s.pos_tags) add(t);
    }
  }
}

void PosVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : tags_) out << t << '\n';
}

PosVocabulary PosVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  PosVocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kMaskTag) throw ParseError(path.string(), 1, "first entry must be the mask tag");
      continue;
    }
    if (vocab.contains(line)) throw ParseError(path.string(), line_no, "duplicate tag " + line);
    vocab.add(line);
  }
  return vocab;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DictionaryTagger::DictionaryTagger(std::map<std::string, std::string> entries,
                                   std::string fallback)
    : fallback_(std::move(fallback)) {
  for (auto& [word, tag] : entries) add(word, tag);
}

void DictionaryTagger::add(const std::string& word, const std::string& tag) {
  entries_[lower(word)] = tag;
}

DictionaryTagger DictionaryTagger::from_corpus(const DomainCorpus& corpus) {
  std::map<std::string, std::map<std::string, int>> counts;
  for (const auto* split : {&corpus.train, &corpus.test}) {
    for (const auto& s : *split) {
      for (std::size_t i = 0; i < s.size(); ++i) ++counts[lower(s.tokens[i])][s.pos_tags[i]];
    }
  }
  DictionaryTagger tagger;
  for (const auto& [word, tags] : counts) {
    // std::map iteration makes the tie-break lexicographic.
    auto best = std::max_element(tags.begin(), tags.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    tagger.entries_[word] = best->first;
  }
  return tagger;
}

DictionaryTagger DictionaryTagger::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  DictionaryTagger tagger;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path.string(), line_no, "expected word<TAB>tag");
    }
    tagger.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return tagger;
}

std::vector<std::string> DictionaryTagger::tag(const std::vector<std::string>& tokens) const {
  std::vector<std::string> tags;
  tags.reserve(tokens.size());
  for (const auto& tok : tokens) {
    const auto key = lower(tok);
    if (auto it = entries_.find(key); it != entries_.end()) {
      tags.push_back(it->second);
    } else if (ends_with(key, "ly")) {
      tags.push_back("RB");
    } else if (ends_with(key, "ing")) {
      tags.push_back("VBG");
    } else if (ends_with(key, "ed")) {
      tags.push_back("VBD");
    } else {
      tags.push_back(fallback_);
    }
  }
  return tags;
}

std::vector<std::string> CommandTagger::tag(const std::vector<std::string>& tokens) const {
  auto tmp = std::filesystem::temp_directory_path() /
             ("xprompt-tag-" + std::to_string(hash_string(command_) ^ tokens.size()) + ".txt");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& t : tokens) out << t << '\n';
  }
  const std::string cmd = command_ + " < '" + tmp.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw Error("POS provider failed to start: " + command_);
  std::string output;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, got);
  const int status = ::pclose(pipe);
  std::filesystem::remove(tmp);
  if (status != 0) {
    throw Error("POS provider failed (status " + std::to_string(status) + "): " + output);
  }
  std::vector<std::string> tags;
  std::size_t start = 0;
  while (start < output.size()) {
    auto nl = output.find('\n', start);
    if (nl == std::string::npos) nl = output.size();
    auto tag = output.substr(start, nl - start);
    if (!tag.empty() && tag.back() == '\r') tag.pop_back();
    if (!tag.empty()) tags.push_back(tag);
    start = nl + 1;
  }
  return tags;
}

std::vector<std::string> tag_pos(const std::vector<std::string>& tokens,
                                 const PosTagger& tagger, PosVocabulary& vocab) {
  if (tokens.empty()) throw ValidationError("cannot tag an empty sentence");
  std::vector<std::string> tags;
  try {
    tags = tagger.tag(tokens);
  } catch (const std::exception& e) {
    throw Error(std::string("POS provider error: ") + e.what());
  }
  if (tags.size() != tokens.size()) {
    throw ValidationError("POS provider returned " + std::to_string(tags.size()) +
                          " tags for " + std::to_string(tokens.size()) + " tokens");
  }
  for (const auto& t : tags) {
    if (t == kMaskTag) throw ValidationError("POS provider emitted the reserved mask tag");
  }
  for (const auto& t : tags) vocab.add(t);
  return tags;
}

std::size_t mask_count(std::size_t n, double rate) {
  // The epsilon keeps products like 0.1 * 30 from rounding up to 4.
  const double k = std::ceil(rate * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

std::pair<std::vector<std::string>, MaskPlan> apply_pos_mask(
    const std::vector<std::string>& pos_tags, double rate, std::uint64_t seed) {
  if (pos_tags.empty()) throw ValidationError("cannot mask an empty tag list");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("mask rate must lie in [0, 1]");
  const std::size_t n = pos_tags.size();
  const std::size_t k = mask_count(n, rate);

  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  MaskPlan plan;
  plan.seed = seed;
  plan.masked_positions.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(plan.masked_positions.begin(), plan.masked_positions.end());
  plan.indicator.assign(n, 0);
  auto masked = pos_tags;
  for (auto p : plan.masked_positions) {
    plan.indicator[p] = 1;
    masked[p] = kMaskTag;
  }
  return {std::move(masked), std::move(plan)};
}

MaskPlan empty_mask_plan(std::size_t n) {
  MaskPlan plan;
  plan.indicator.assign(n, 0);
  return plan;
}

std::uint64_t mask_seed(std::uint64_t base_seed, std::uint64_t epoch,
                        const std::string& sentence_id) {
  return derive_seed(base_seed, "mask", epoch, hash_string(sentence_id));
}

}  // namespace xprompt
