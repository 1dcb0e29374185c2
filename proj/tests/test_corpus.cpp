#include <filesystem>
#include <fstream>
#include <regex>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/error.hpp"

using namespace xprompt;
using namespace xprompt::testing;

namespace {

BioSequence seq(const std::string& s) {
  BioSequence out;
  for (char c : s) out.push_back(parse_bio(std::string(1, c)));
  return out;
}

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
  auto path = std::filesystem::temp_directory_path() / ("xprompt-test-" + name);
  std::ofstream(path, std::ios::binary) << content;
  return path;
}

}  // namespace

TEST_CASE("validate_bio") {
  CHECK(validate_bio(seq("OBIO")).empty());

  auto v = validate_bio(seq("IO"));
  REQUIRE(v.size() == 1);
  CHECK(v[0].position == 0);

  v = validate_bio(seq("BOI"));
  REQUIRE(v.size() == 1);
  CHECK(v[0].position == 2);

  CHECK_THROWS_WITH_AS(validate_bio(std::vector<std::string>{"O", "X"}),
                       doctest::Contains("'X'"), ValidationError);
}

TEST_CASE("spans_from_bio") {
  CHECK(spans_from_bio(seq("OBIO")) == SpanSet{{1, 2}});
  CHECK(spans_from_bio(seq("OOO")).empty());
  CHECK(spans_from_bio(seq("BBI")) == SpanSet{{0, 0}, {1, 2}});
  CHECK_THROWS_AS(spans_from_bio(seq("OI")), ValidationError);
}

TEST_CASE("spans_from_bio agrees with the reference automaton up to length 6") {
  for (std::size_t n = 0; n <= 6; ++n) {
    for (const auto& labels : all_label_strings(n)) {
      const bool valid = regex_accepts_bio(labels);
      CHECK(validate_bio(labels).empty() == valid);
      if (valid) CHECK(spans_from_bio(labels) == reference_spans(labels));
    }
  }
}

TEST_CASE("bio_from_spans inverts spans_from_bio") {
  for (std::size_t n = 0; n <= 8; ++n) {
    for (const auto& labels : all_label_strings(n)) {
      if (!validate_bio(labels).empty()) continue;
      CHECK(bio_from_spans(spans_from_bio(labels), n) == labels);
    }
  }
  CHECK_THROWS_AS(bio_from_spans({{2, 4}}, 3), ValidationError);
  CHECK_THROWS_AS(bio_from_spans({{0, 1}, {1, 2}}, 3), ValidationError);
}

TEST_CASE("repair_bio turns stray I into B") {
  CHECK(repair_bio(seq("IOIIB")) == seq("BOBIB"));
  CHECK(repair_bio(seq("BIO")) == seq("BIO"));
}

TEST_CASE("load_corpus minimal file") {
  auto path = write_temp("minimal.tsv", "Keyboard\tNN\tB\n\n");
  const auto c = load_corpus(path, "L");
  REQUIRE(c.train.size() == 1);
  CHECK(c.train[0].tokens == std::vector<std::string>{"Keyboard"});
  CHECK(c.train[0].bio_labels == seq("B"));
  CHECK(c.labelled);
}

TEST_CASE("load_corpus errors") {
  CHECK_THROWS_WITH_AS(load_corpus(write_temp("empty.tsv", ""), "R"),
                       doctest::Contains("no sentences"), ValidationError);

  auto bad = write_temp("bad.tsv", "# comment\nThe\tDT\tO\nfood\tNN\n");
  try {
    load_corpus(bad, "R");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }

  auto bio = write_temp("bio.tsv", "#id=s1\nfood\tNN\tI\n\n#id=s2\ngood\tJJ\tO\n\n#id=s3\nx\tNN\tO\ny\tNN\tI\n");
  CHECK_THROWS_WITH_AS(load_corpus(bio, "R"), doctest::Contains("s1 s3"), ValidationError);

  auto mixed = write_temp("mixed.tsv", "food\tNN\t-\ngood\tJJ\tO\n");
  CHECK_THROWS_AS(load_corpus(mixed, "R"), ParseError);
}

TEST_CASE("load_corpus splits, unlabelled rows and hash tokens") {
  auto path = write_temp("splits.tsv",
                         "#split=train\nthe\tDT\t-\nscreen\tNN\t-\n\n"
                         "#split=test\n#\t#\tO\nscreen\tNN\tB\n\n");
  const auto c = load_corpus(path, "L");
  CHECK_FALSE(c.labelled);
  REQUIRE(c.train.size() == 1);
  CHECK_FALSE(c.train[0].labelled);
  REQUIRE(c.test.size() == 1);
  CHECK(c.test[0].tokens[0] == "#");
  CHECK(c.test[0].bio_labels == seq("OB"));
}

TEST_CASE("load_corpus reproduces split sizes of a full-size domain file") {
  auto spec = restaurant_spec(3877, 2158);
  spec.domain_name = "R";
  const auto original = generate_synthetic_corpus(1, spec);
  auto path = std::filesystem::temp_directory_path() / "xprompt-test-R.tsv";
  write_corpus(original, path);
  const auto loaded = load_corpus(path, "R");
  CHECK(loaded.train.size() == 3877);
  CHECK(loaded.test.size() == 2158);
  CHECK(loaded.train.size() + loaded.test.size() == 6035);
}

TEST_CASE("write_corpus / load_corpus round trip on random corpora") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto spec = seed % 2 ? restaurant_spec(15, 5) : laptop_spec(10, 10);
    spec.unlabelled_train = seed % 3 == 0;
    const auto c = generate_synthetic_corpus(seed, spec);
    auto path = std::filesystem::temp_directory_path() / "xprompt-test-roundtrip.tsv";
    write_corpus(c, path);
    CHECK(load_corpus(path, c.domain_name) == c);
  }
}

TEST_CASE("generate_synthetic_corpus") {
  auto spec = restaurant_spec(50, 0);
  spec.aspect_templates.resize(2);
  spec.plain_templates.clear();
  const auto a = generate_synthetic_corpus(7, spec);
  CHECK(a == generate_synthetic_corpus(7, spec));
  CHECK(a.train.size() == 50);
  for (const auto& s : a.train) CHECK(check_sentence(s).empty());

  CHECK(generate_synthetic_corpus(8, spec).train != a.train);

  auto plain = restaurant_spec(20, 0);
  plain.aspect_templates.clear();
  for (const auto& s : generate_synthetic_corpus(7, plain).train) {
    CHECK(std::all_of(s.bio_labels.begin(), s.bio_labels.end(), [](Bio b) { return b == Bio::O; }));
  }

  auto empty = restaurant_spec(0, 0);
  CHECK_THROWS_AS(generate_synthetic_corpus(7, empty), ValidationError);
}
