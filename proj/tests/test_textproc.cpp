#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "ctrleval/ctrleval.hpp"
#include "test_support.hpp"

using namespace ctrleval;
using testing_support::code_of;

namespace {

std::vector<std::string> texts(const Segmentation& seg) {
  std::vector<std::string> out;
  for (const auto& s : seg.sentences) out.push_back(s.text);
  return out;
}

using Strings = std::vector<std::string>;

}  // namespace

TEST(Segment, TwoPeriods) {
  EXPECT_EQ(texts(segment_sentences("It rained. We stayed home.")), (Strings{"It rained.", "We stayed home."}));
}

TEST(Segment, NoTerminator) { EXPECT_EQ(texts(segment_sentences("Hello world")), (Strings{"Hello world"})); }

TEST(Segment, AbbreviationFromShippedList) {
  const auto shipped = AbbreviationList::load(testing_support::data_path("abbreviations.txt"));
  EXPECT_TRUE(shipped.contains("Dr"));
  EXPECT_EQ(texts(segment_sentences("Dr. Smith left. He returned!", shipped)),
            (Strings{"Dr. Smith left.", "He returned!"}));
  EXPECT_EQ(texts(segment_sentences("Dr. Smith left. He returned!")), (Strings{"Dr. Smith left.", "He returned!"}));
}

TEST(Segment, WithoutAbbreviationsTheTitleSplits) {
  const AbbreviationList none;
  EXPECT_EQ(texts(segment_sentences("Dr. Smith left.", none)), (Strings{"Dr.", "Smith left."}));
}

TEST(Segment, BuiltinListMatchesShippedFile) {
  const auto shipped = AbbreviationList::load(testing_support::data_path("abbreviations.txt"));
  EXPECT_EQ(shipped.entries(), AbbreviationList::builtin().entries());
}

TEST(Segment, QuotesRunsAndLowercaseContinuation) {
  EXPECT_EQ(texts(segment_sentences("A. B.")), (Strings{"A.", "B."}));
  EXPECT_EQ(texts(segment_sentences("He said \"Stop!\" Then he left.")),
            (Strings{"He said \"Stop!\"", "Then he left."}));
  EXPECT_EQ(texts(segment_sentences("Wait... what happened?")), (Strings{"Wait... what happened?"}));
  EXPECT_EQ(texts(segment_sentences("Really?! Yes.")), (Strings{"Really?!", "Yes."}));
  EXPECT_EQ(texts(segment_sentences("It cost 3.5 dollars. Fine.")), (Strings{"It cost 3.5 dollars.", "Fine."}));
}

TEST(Segment, EmptyInput) {
  EXPECT_EQ(code_of([] { (void)segment_sentences(""); }), ErrorCode::empty_text);
  EXPECT_EQ(code_of([] { (void)segment_sentences(" \n\t "); }), ErrorCode::empty_text);
}

TEST(Segment, PropertyReconstructsInputExactly) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::string text = (trial % 3 == 0) ? "  " : "";
    const int m = 1 + trial % 6;
    for (int j = 0; j < m; ++j) {
      if (j) text += (j % 2) ? " " : "\n  ";
      text += testing_support::random_sentence(rng);
    }
    if (trial % 4 == 0) text += " \n";
    const auto seg = segment_sentences(text);
    EXPECT_EQ(seg.reconstruct(), text);
    EXPECT_EQ(seg.separators.size(), seg.size() + 1);
    EXPECT_EQ(seg.size(), static_cast<std::size_t>(m)) << text;
    for (std::size_t j = 0; j < seg.size(); ++j) {
      EXPECT_EQ(seg.sentences[j].index, j);
      EXPECT_EQ(std::string(trim(seg.sentences[j].text)), seg.sentences[j].text);
      EXPECT_FALSE(seg.sentences[j].text.empty());
    }
  }
}

TEST(Tokenize, GoldenFile) {
  std::ifstream in(testing_support::golden_path("tokenize.json"));
  const auto cases = nlohmann::json::parse(in);
  ASSERT_GE(cases.size(), 3u);
  for (const auto& c : cases) {
    EXPECT_EQ(tokenize_words(c[0].get<std::string>()), c[1].get<Strings>()) << c[0];
  }
}

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize_words("The cat, the CAT!"), (Strings{"the", "cat", "the", "cat"}));
  EXPECT_TRUE(tokenize_words("...").empty());
  EXPECT_EQ(tokenize_words("It's 3 words"), (Strings{"it's", "3", "words"}));
}

TEST(StripPrefix, GoldenFile) {
  std::ifstream in(testing_support::golden_path("prefix_strip.json"));
  const auto cases = nlohmann::json::parse(in);
  for (const auto& c : cases) {
    const auto text = c[0].get<std::string>(), prefix = c[1].get<std::string>();
    if (c[2].is_null()) {
      EXPECT_TRUE(code_of([&] { (void)strip_prefix(text, prefix); }).has_value()) << text;
    } else {
      EXPECT_EQ(strip_prefix(text, prefix), c[2].get<std::string>()) << text;
    }
  }
}

TEST(StripPrefix, ErrorCodes) {
  EXPECT_EQ(code_of([] { (void)strip_prefix("The movie was fun.", "A book"); }), ErrorCode::prefix_mismatch);
  EXPECT_EQ(code_of([] { (void)strip_prefix("The movie ", "The movie"); }), ErrorCode::empty_continuation);
}

TEST(TrimIncomplete, DropsUnterminatedTail) {
  EXPECT_EQ(trim_incomplete_last_sentence("It rained. We stayed"), "It rained.");
  EXPECT_EQ(trim_incomplete_last_sentence("It rained. We stayed."), "It rained. We stayed.");
  EXPECT_EQ(trim_incomplete_last_sentence("Only a fragment"), "Only a fragment");
  EXPECT_EQ(trim_incomplete_last_sentence("He said \"Stop.\" She"), "He said \"Stop.\"");
  EXPECT_TRUE(ends_complete("Done.\""));
  EXPECT_FALSE(ends_complete("Not done"));
}

TEST(MakeInstance, FillsDerivedFields) {
  const auto inst = make_instance("The movie", "Positive", "The movie was fun. I laughed.");
  EXPECT_EQ(inst.continuation, "was fun. I laughed.");
  EXPECT_EQ(inst.sentence_count(), 2u);
  EXPECT_EQ(inst.label, "Positive");
}

TEST(Utf8, LowercaseFoldingAndDecoding) {
  EXPECT_EQ(utf8::to_lower(U'Ä'), U'ä');
  EXPECT_EQ(utf8::to_lower(U'Ж'), U'ж');
  EXPECT_EQ(utf8::to_lower(U'Σ'), U'σ');
  std::string s;
  utf8::append(s, U'€');
  EXPECT_EQ(s, "\xE2\x82\xAC");
  EXPECT_EQ(utf8::decode(s, 0).cp, U'€');
}
