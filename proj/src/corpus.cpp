#include "xprompt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "xprompt/error.hpp"
#include "xprompt/random.hpp"

namespace xprompt {

char bio_symbol(Bio label) {
  switch (label) {
    case Bio::B: return 'B';
    case Bio::I: return 'I';
    case Bio::O: return 'O';
  }
  return '?';
}

Bio parse_bio(const std::string& symbol) {
  if (symbol == "B") return Bio::B;
  if (symbol == "I") return Bio::I;
  if (symbol == "O") return Bio::O;
  throw ValidationError("unknown BIO label symbol '" + symbol + "'");
}

std::vector<BioViolation> validate_bio(const BioSequence& labels) {
  std::vector<BioViolation> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != Bio::I) continue;
    if (i == 0) {
      out.push_back({i, "I without preceding B/I"});
    } else if (labels[i - 1] == Bio::O) {
      out.push_back({i, "I follows O"});
    }
  }
  return out;
}

std::vector<BioViolation> validate_bio(const std::vector<std::string>& symbols) {
  BioSequence labels;
  labels.reserve(symbols.size());
  for (const auto& s : symbols) labels.push_back(parse_bio(s));
  return validate_bio(labels);
}

SpanSet spans_from_bio(const BioSequence& labels) {
  if (auto v = validate_bio(labels); !v.empty()) {
    throw ValidationError("ill-formed BIO sequence at index " +
                          std::to_string(v.front().position) + ": " + v.front().rule);
  }
  SpanSet spans;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != Bio::B) continue;
    std::size_t end = i;
    while (end + 1 < labels.size() && labels[end + 1] == Bio::I) ++end;
    spans.push_back({i, end});
    i = end;
  }
  return spans;
}

BioSequence bio_from_spans(const SpanSet& spans, std::size_t length) {
  BioSequence labels(length, Bio::O);
  for (const auto& span : spans) {
    if (span.start > span.end || span.end >= length) {
      throw ValidationError("span (" + std::to_string(span.start) + "," +
                            std::to_string(span.end) + ") outside sentence of length " +
                            std::to_string(length));
    }
    for (std::size_t i = span.start; i <= span.end; ++i) {
      if (labels[i] != Bio::O) throw ValidationError("overlapping spans");
      labels[i] = i == span.start ? Bio::B : Bio::I;
    }
  }
  return labels;
}

BioSequence repair_bio(BioSequence labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Bio::I && (i == 0 || labels[i - 1] == Bio::O)) labels[i] = Bio::B;
  }
  return labels;
}

std::vector<std::string> check_sentence(const TaggedSentence& s) {
  std::vector<std::string> problems;
  if (s.tokens.empty()) problems.push_back("empty sentence");
  if (s.pos_tags.size() != s.tokens.size() || s.bio_labels.size() != s.tokens.size()) {
    problems.push_back("column lengths differ");
  }
  for (const auto& tok : s.tokens) {
    if (tok.empty() || tok.find_first_of("\t\n\r") != std::string::npos) {
      problems.push_back("invalid token '" + tok + "'");
    }
  }
  for (const auto& tag : s.pos_tags) {
    if (tag.empty() || tag.find_first_of("\t\n\r") != std::string::npos) {
      problems.push_back("invalid POS tag '" + tag + "'");
    }
  }
  for (const auto& v : validate_bio(s.bio_labels)) {
    problems.push_back("BIO violation at " + std::to_string(v.position) + ": " + v.rule);
  }
  return problems;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

enum class Split { train, test };

struct PendingSentence {
  TaggedSentence sentence;
  std::size_t first_line = 0;
  int unlabelled_rows = 0;
};

}  // namespace

DomainCorpus load_corpus(const std::filesystem::path& path, const std::string& domain_name) {
  if (domain_name.empty()) throw ValidationError("domain name must be nonempty");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());

  DomainCorpus corpus;
  corpus.domain_name = domain_name;
  Split split = Split::train;
  std::string pending_id;
  PendingSentence cur;
  std::vector<std::string> bad_ids;
  const std::string where = path.string();

  auto flush = [&](std::size_t line_no) {
    if (cur.sentence.tokens.empty()) return;
    auto& s = cur.sentence;
    const int n = static_cast<int>(s.tokens.size());
    if (cur.unlabelled_rows != 0 && cur.unlabelled_rows != n) {
      throw ParseError(where, line_no, "sentence mixes labelled and unlabelled rows");
    }
    s.labelled = cur.unlabelled_rows == 0;
    auto& dest = split == Split::train ? corpus.train : corpus.test;
    if (pending_id.empty()) {
      s.sentence_id = domain_name + (split == Split::train ? "-train-" : "-test-") +
                      std::to_string(dest.size());
    } else {
      s.sentence_id = pending_id;
      pending_id.clear();
    }
    if (!validate_bio(s.bio_labels).empty()) bad_ids.push_back(s.sentence_id);
    dest.push_back(std::move(s));
    cur = PendingSentence{};
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush(line_no);
      continue;
    }
    if (line.front() == '#' && line.find('\t') == std::string::npos) {
      // Directives live in comments so plain CoNLL readers skip them.
      if (line.rfind("#split=", 0) == 0) {
        flush(line_no);
        const auto value = line.substr(7);
        if (value == "train") {
          split = Split::train;
        } else if (value == "test") {
          split = Split::test;
        } else {
          throw ParseError(where, line_no, "unknown split '" + value + "'");
        }
      } else if (line.rfind("#id=", 0) == 0) {
        flush(line_no);
        pending_id = line.substr(4);
      }
      continue;
    }
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw ParseError(where, line_no,
                       "expected 3 tab-separated columns, found " + std::to_string(cols.size()));
    }
    if (cols[0].empty() || cols[1].empty()) {
      throw ParseError(where, line_no, "empty token or POS column");
    }
    if (cur.sentence.tokens.empty()) cur.first_line = line_no;
    cur.sentence.tokens.push_back(cols[0]);
    cur.sentence.pos_tags.push_back(cols[1]);
    if (cols[2] == "-") {
      ++cur.unlabelled_rows;
      cur.sentence.bio_labels.push_back(Bio::O);
    } else if (cols[2] == "B" || cols[2] == "I" || cols[2] == "O") {
      cur.sentence.bio_labels.push_back(parse_bio(cols[2]));
    } else {
      throw ParseError(where, line_no, "unknown BIO label '" + cols[2] + "'");
    }
  }
  flush(line_no + 1);

  if (!bad_ids.empty()) {
    std::string msg = "BIO violations in sentences:";
    for (const auto& id : bad_ids) msg += " " + id;
    throw ValidationError(msg);
  }
  if (corpus.train.empty() && corpus.test.empty()) {
    throw ValidationError(where + ": no sentences");
  }
  const bool any_unlabelled = std::any_of(corpus.train.begin(), corpus.train.end(),
                                          [](const auto& s) { return !s.labelled; });
  const bool any_labelled = std::any_of(corpus.train.begin(), corpus.train.end(),
                                        [](const auto& s) { return s.labelled; });
  if (any_unlabelled && any_labelled) {
    throw ValidationError(where + ": train split mixes labelled and unlabelled sentences");
  }
  corpus.labelled = !any_unlabelled;
  return corpus;
}

std::string format_corpus(const DomainCorpus& corpus) {
  std::ostringstream out;
  auto emit = [&](const std::vector<TaggedSentence>& sentences, const char* split) {
    out << "#split=" << split << '\n';
    for (const auto& s : sentences) {
      out << "#id=" << s.sentence_id << '\n';
      for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        out << s.tokens[i] << '\t' << s.pos_tags[i] << '\t';
        if (s.labelled) {
          out << bio_symbol(s.bio_labels[i]);
        } else {
          out << '-';
        }
        out << '\n';
      }
      out << '\n';
    }
  };
  out << "# domain " << corpus.domain_name << '\n';
  emit(corpus.train, "train");
  emit(corpus.test, "test");
  return out.str();
}

void write_corpus(const DomainCorpus& corpus, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << format_corpus(corpus);
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[rng.uniform_index(items.size())];
}

TaggedSentence realize(Rng& rng, const SyntheticSpec& spec,
                       const std::vector<std::string>& slots) {
  TaggedSentence s;
  for (const auto& slot : slots) {
    if (slot == kAspectSlot) {
      const auto& term = pick(rng, spec.aspect_terms);
      for (std::size_t k = 0; k < term.size(); ++k) {
        s.tokens.push_back(term[k]);
        s.pos_tags.push_back(spec.aspect_pos);
        s.bio_labels.push_back(k == 0 ? Bio::B : Bio::I);
      }
      continue;
    }
    auto it = spec.lexicon.find(slot);
    if (it == spec.lexicon.end() || it->second.empty()) {
      throw ValidationError("synthetic template slot '" + slot + "' has no lexicon entries");
    }
    s.tokens.push_back(pick(rng, it->second));
    s.pos_tags.push_back(slot);
    s.bio_labels.push_back(Bio::O);
  }
  return s;
}

}  // namespace

DomainCorpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticSpec& spec) {
  if (spec.train_sentences <= 0) throw ValidationError("sentence count must be > 0");
  if (spec.test_sentences < 0) throw ValidationError("test sentence count must be >= 0");
  if (spec.domain_name.empty()) throw ValidationError("domain name must be nonempty");
  if (spec.aspect_templates.empty() && spec.plain_templates.empty()) {
    throw ValidationError("synthetic spec has no templates");
  }
  if (!spec.aspect_templates.empty() && spec.aspect_terms.empty()) {
    throw ValidationError("aspect templates given without aspect terms");
  }
  std::vector<const std::vector<std::string>*> templates;
  for (const auto& t : spec.aspect_templates) templates.push_back(&t);
  for (const auto& t : spec.plain_templates) templates.push_back(&t);
  for (const auto* t : templates) {
    if (t->empty()) throw ValidationError("empty synthetic template");
  }

  Rng rng(derive_seed(seed, "synthetic", hash_string(spec.domain_name)));
  DomainCorpus corpus;
  corpus.domain_name = spec.domain_name;
  auto fill = [&](std::vector<TaggedSentence>& dest, int count, const char* split) {
    for (int i = 0; i < count; ++i) {
      auto s = realize(rng, spec, *pick(rng, templates));
      s.sentence_id = spec.domain_name + "-" + split + "-" + std::to_string(i);
      dest.push_back(std::move(s));
    }
  };
  fill(corpus.train, spec.train_sentences, "train");
  fill(corpus.test, spec.test_sentences, "test");
  if (spec.unlabelled_train) {
    corpus.labelled = false;
    for (auto& s : corpus.train) {
      s.labelled = false;
      std::fill(s.bio_labels.begin(), s.bio_labels.end(), Bio::O);
    }
  }
  return corpus;
}

}  // namespace xprompt
