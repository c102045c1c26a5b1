#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "rtd/random.hpp"
#include "rtd/tokenizer.hpp"
#include "test_support.hpp"

namespace rtd {
namespace {

using testing::TempDir;
using testing::write_file;
using testing::write_vocab;

const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

Vocab small_vocab(std::vector<std::string> extra, bool lowercase = true) {
  std::vector<std::string> tokens = kSpecials;
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return Vocab::from_tokens(tokens, lowercase);
}

TEST(Vocab, IdsAreLineNumbers) {
  TempDir dir;
  std::vector<std::string> tokens = kSpecials;
  for (const char* t : {"the", "cat", "sat", "on", "mat"}) tokens.push_back(t);
  write_vocab(dir / "vocab.txt", tokens);
  const Vocab v = load_vocab(dir / "vocab.txt");
  EXPECT_EQ(v.size(), 10u);
  EXPECT_EQ(v.id("[PAD]"), 0);
  EXPECT_EQ(v.id("[MASK]"), 4);
  EXPECT_EQ(v.id("mat"), 9);
  EXPECT_EQ(v.token(6), "cat");
  EXPECT_EQ(v.special().cls, 2);
  EXPECT_EQ(v.special().sep, 3);
  EXPECT_EQ(v.id("unknown-word"), v.special().unk);
}

TEST(Vocab, MissingSpecialIsNamed) {
  TempDir dir;
  write_vocab(dir / "vocab.txt", {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "hello"});
  try {
    load_vocab(dir / "vocab.txt");
    FAIL() << "expected TokenizerError";
  } catch (const TokenizerError& e) {
    EXPECT_NE(std::string(e.what()).find("[MASK]"), std::string::npos) << e.what();
  }
}

TEST(Vocab, DuplicateTokenRejected) {
  EXPECT_THROW(small_vocab({"dog", "cat", "dog"}), TokenizerError);
}

TEST(Vocab, CrLfLinesAreStripped) {
  TempDir dir;
  write_file(dir / "vocab.txt", "[PAD]\r\n[UNK]\r\n[CLS]\r\n[SEP]\r\n[MASK]\r\nword\r\n");
  const Vocab v = load_vocab(dir / "vocab.txt");
  EXPECT_EQ(v.find("word"), 5);
}

TEST(Vocab, CasingSidecarAndOverride) {
  TempDir dir;
  std::vector<std::string> tokens = kSpecials;
  tokens.push_back("Paris");
  tokens.push_back("paris");
  write_vocab(dir / "vocab.txt", tokens);
  EXPECT_TRUE(load_vocab(dir / "vocab.txt").lowercase());
  write_file(dir / "vocab.txt.casing", "cased\n");
  const Vocab cased = load_vocab(dir / "vocab.txt");
  EXPECT_FALSE(cased.lowercase());
  EXPECT_EQ(encode("Paris", cased), std::vector<int>{5});
  const Vocab forced = load_vocab(dir / "vocab.txt", true);
  EXPECT_EQ(encode("Paris", forced), std::vector<int>{6});
  write_file(dir / "vocab.txt.casing", "sometimes\n");
  EXPECT_THROW(load_vocab(dir / "vocab.txt"), TokenizerError);
}

TEST(Vocab, UnknownIdThrows) {
  const Vocab v = small_vocab({"a"});
  EXPECT_THROW(v.token(-1), TokenizerError);
  EXPECT_THROW(v.token(6), TokenizerError);
}

TEST(Wordpiece, EmptyInput) {
  EXPECT_TRUE(wordpiece("", small_vocab({"a"})).empty());
  EXPECT_TRUE(wordpiece("   \t\n", small_vocab({"a"})).empty());
}

TEST(Wordpiece, GreedyLongestMatch) {
  const Vocab v = small_vocab({"un", "##aff", "##able"});
  EXPECT_EQ(wordpiece("unaffable", v), (std::vector<std::string>{"un", "##aff", "##able"}));
}

TEST(Wordpiece, PrefersLongerPiece) {
  const Vocab v = small_vocab({"un", "una", "##ff", "##ffable", "##able"});
  // "una" is the longest prefix, then "##ffable" covers the rest.
  EXPECT_EQ(wordpiece("unaffable", v), (std::vector<std::string>{"una", "##ffable"}));
}

TEST(Wordpiece, UnmatchedWordBecomesUnk) {
  const Vocab v = small_vocab({"un", "##aff"});
  EXPECT_EQ(wordpiece("zzz", v), std::vector<std::string>{"[UNK]"});
  // A word whose tail cannot be matched is [UNK] as a whole.
  EXPECT_EQ(wordpiece("unaffx", v), std::vector<std::string>{"[UNK]"});
}

TEST(Wordpiece, OverlongWordBecomesUnk) {
  const Vocab v = small_vocab({"a", "##a"});
  EXPECT_EQ(wordpiece(std::string(kMaxWordChars, 'a'), v).size(), kMaxWordChars);
  EXPECT_EQ(wordpiece(std::string(kMaxWordChars + 1, 'a'), v), std::vector<std::string>{"[UNK]"});
}

TEST(Wordpiece, PunctuationSplitsAndAccentsFold) {
  const Vocab v = small_vocab({"great", "!", "cafe", "ok"});
  EXPECT_EQ(wordpiece("great!!", v), (std::vector<std::string>{"great", "!", "!"}));
  EXPECT_EQ(wordpiece("Caf\xC3\xA9 OK", v), (std::vector<std::string>{"cafe", "ok"}));
}

TEST(Wordpiece, PiecesCarrySourceSpans) {
  const Vocab v = small_vocab({"un", "##aff", "##able", "cat"});
  const std::string text = "  unaffable cat";
  const auto pieces = wordpiece_pieces(text, v);
  ASSERT_EQ(pieces.size(), 4u);
  EXPECT_EQ(pieces[0].span, (CharSpan{2, 4}));
  EXPECT_EQ(pieces[1].span, (CharSpan{4, 7}));
  EXPECT_EQ(pieces[2].span, (CharSpan{7, 11}));
  EXPECT_EQ(text.substr(pieces[3].span.begin, pieces[3].span.end - pieces[3].span.begin), "cat");
}

TEST(Wordpiece, NeverEmitsOutOfVocabTokens) {
  const Vocab v = small_vocab({"a", "b", "ab", "##a", "##b", "##ba", "!", "c"});
  std::set<std::string> known(v.tokens().begin(), v.tokens().end());
  const std::string alphabet = "abcd! ,.";
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const std::size_t len = rng.index(20);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.index(alphabet.size())];
    for (const auto& tok : wordpiece(text, v)) EXPECT_TRUE(known.contains(tok)) << tok << " from '" << text << "'";
  }
}

TEST(BuildSequence, SingleSegment) {
  const Vocab v = small_vocab({"hi"});
  const Segment seg{"hi", {}};
  const Encoding enc = build_sequence(std::span<const Segment>(&seg, 1), v, 16);
  EXPECT_EQ(enc.ids, (std::vector<int>{2, 5, 3}));
  EXPECT_EQ(enc.segment_ids, (std::vector<int>{0, 0, 0}));
  ASSERT_EQ(enc.spans.size(), 3u);
  EXPECT_FALSE(enc.spans[0].has_value());
  ASSERT_TRUE(enc.spans[1].has_value());
  EXPECT_EQ(enc.spans[1]->chars, (CharSpan{0, 2}));
  EXPECT_FALSE(enc.spans[2].has_value());
}

TEST(BuildSequence, TwoSegmentsUseSegmentIds) {
  const Vocab v = small_vocab({"a", "b", "c"});
  const std::vector<Segment> segs = {{"a b", {}}, {"c", {}}};
  const Encoding enc = build_sequence(segs, v, 16);
  EXPECT_EQ(enc.ids, (std::vector<int>{2, 5, 6, 3, 7, 3}));
  EXPECT_EQ(enc.segment_ids, (std::vector<int>{0, 0, 0, 0, 1, 1}));
}

TEST(BuildSequence, MarkedSpanCoversExactlyTheWordPieces) {
  const Vocab v = small_vocab({"this", "movie", "is", "gr", "##eat", "!", "great"});
  const std::string text = "this movie is great!!";
  const std::size_t at = text.find("great");
  const Segment seg{text, {{at, at + 5}}};
  const Encoding enc = build_sequence(std::span<const Segment>(&seg, 1), v, 32);
  ASSERT_EQ(enc.marked.size(), 1u);
  // Oracle: pieces whose spans fall inside the label-word characters.
  const auto pieces = wordpiece_pieces(text, v);
  std::size_t first = pieces.size(), last = 0;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].span.begin >= at && pieces[i].span.end <= at + 5) {
      first = std::min(first, i);
      last = i;
    }
  }
  EXPECT_EQ(enc.marked[0], (TokenRange{first + 1, last + 2}));  // +1 for [CLS]
  EXPECT_EQ(enc.ids[enc.marked[0].begin], v.id("great"));
  EXPECT_EQ(enc.marked[0].size(), 1u);  // trailing "!!" excluded
}

TEST(BuildSequence, MarkedSpanIsTheSlotNotAnEarlierOccurrence) {
  const Vocab v = small_vocab({"great", "film", ",", "it", "was"});
  const std::string text = "great film , it was great";
  const std::size_t slot = text.rfind("great");
  const Segment seg{text, {{slot, slot + 5}}};
  const Encoding enc = build_sequence(std::span<const Segment>(&seg, 1), v, 32);
  ASSERT_EQ(enc.marked.size(), 1u);
  EXPECT_EQ(enc.marked[0].begin, enc.ids.size() - 2);
}

TEST(BuildSequence, TooShortForMarkedWordErrors) {
  const Vocab v = small_vocab({"gr", "##eat"});
  const Segment seg{"great", {{0, 5}}};
  EXPECT_THROW(build_sequence(std::span<const Segment>(&seg, 1), v, 3), TokenizerError);
  EXPECT_NO_THROW(build_sequence(std::span<const Segment>(&seg, 1), v, 4));
}

TEST(BuildSequence, MaxLenBelowMinimumErrors) {
  const Vocab v = small_vocab({"a"});
  const std::vector<Segment> segs = {{"a", {}}, {"a", {}}};
  EXPECT_THROW(build_sequence(segs, v, 3), TokenizerError);  // 3 specials + 1 token needed
}

TEST(BuildSequence, TruncatesLongestUnmarkedSegmentFromItsTail) {
  const Vocab v = small_vocab({"a", "b", "c", "d", "e", "f", "x", "y", "great"});
  const std::string prompt = "x great";
  const std::vector<Segment> segs = {{"a b c d e f", {}}, {prompt, {{2, 7}}}};
  const Encoding enc = build_sequence(segs, v, 8);
  ASSERT_EQ(enc.ids.size(), 8u);
  // [CLS] a b c [SEP] x great [SEP]
  EXPECT_EQ(enc.ids, (std::vector<int>{2, 5, 6, 7, 3, 11, 13, 3}));
  ASSERT_EQ(enc.marked.size(), 1u);
  EXPECT_EQ(enc.ids[enc.marked[0].begin], v.id("great"));
}

TEST(BuildSequence, MarkedSpansSurviveTruncationOrError) {
  const Vocab v = small_vocab({"w", "great"});
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::string input;
    const std::size_t words = 1 + rng.index(30);
    for (std::size_t i = 0; i < words; ++i) input += "w ";
    std::string prompt;
    const std::size_t before = rng.index(5);
    for (std::size_t i = 0; i < before; ++i) prompt += "w ";
    const std::size_t at = prompt.size();
    prompt += "great";
    for (std::size_t i = 0; i < rng.index(5); ++i) prompt += " w";
    const std::vector<Segment> segs = {{input, {}}, {prompt, {{at, at + 5}}}};
    const std::size_t max_len = 4 + rng.index(20);
    try {
      const Encoding enc = build_sequence(segs, v, max_len);
      EXPECT_LE(enc.ids.size(), max_len);
      ASSERT_EQ(enc.marked.size(), 1u);
      EXPECT_EQ(enc.ids[enc.marked[0].begin], v.id("great"));
      EXPECT_EQ(enc.ids.size(), enc.spans.size());
      EXPECT_EQ(enc.ids.size(), enc.segment_ids.size());
    } catch (const TokenizerError&) {
      // Only allowed when the prompt up to and including the label word cannot fit.
      EXPECT_LT(max_len, 3 + 1 + before + 1) << "max_len " << max_len;
    }
  }
}

TEST(BuildSequence, SpansAreMonotone) {
  const Vocab v = testing::english_vocab();
  const std::vector<Segment> segs = {{"the cat sat , the dog sat", {}}, {"it was good .", {}}};
  const Encoding enc = build_sequence(segs, v, 64);
  std::size_t last_segment = 0, last_end = 0;
  for (const auto& span : enc.spans) {
    if (!span) continue;
    if (span->segment != last_segment) {
      last_segment = span->segment;
      last_end = 0;
    }
    EXPECT_GE(span->chars.begin, last_end);
    EXPECT_LT(span->chars.begin, span->chars.end);
    last_end = span->chars.end;
  }
}

TEST(Decode, EmptyAndUnknown) {
  const Vocab v = small_vocab({"a"});
  EXPECT_EQ(decode(std::vector<int>{}, v), "");
  EXPECT_THROW(decode(std::vector<int>{-1}, v), TokenizerError);
  EXPECT_THROW(decode(std::vector<int>{99}, v), TokenizerError);
}

TEST(Decode, JoinsContinuationPieces) {
  const Vocab v = small_vocab({"un", "##aff", "##able", "cat"});
  EXPECT_EQ(decode(std::vector<int>{2, 5, 6, 7, 8, 3}, v), "unaffable cat");
}

TEST(Decode, RoundTripsInVocabText) {
  const Vocab v = testing::english_vocab();
  for (const std::string text : {"the cat sat", "  a   fine\tfilm ", "it was great", "the dogs sat"}) {
    std::string normalized;
    bool gap = false;
    for (char c : text) {
      if (c == ' ' || c == '\t') {
        gap = !normalized.empty();
      } else {
        if (gap) normalized += ' ';
        gap = false;
        normalized += c;
      }
    }
    EXPECT_EQ(decode(encode(text, v), v), normalized) << text;
  }
}

}  // namespace
}  // namespace rtd
