#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtd {

class TokenizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

/// Words longer than this many code points map to [UNK].
inline constexpr std::size_t kMaxWordChars = 100;

struct SpecialIds {
  int pad = 0;
  int unk = 0;
  int cls = 0;
  int sep = 0;
  int mask = 0;
};

/// Immutable token <-> id table. Ids are zero-based line numbers of the
/// vocabulary file.
class Vocab {
 public:
  /// Throws on duplicate tokens or a missing special token.
  static Vocab from_tokens(std::vector<std::string> tokens, bool lowercase = true);

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  /// Falls back to [UNK].
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  const SpecialIds& special() const { return special_; }
  bool is_special(int id) const;
  /// Uncased vocabularies lowercase and strip accents before matching.
  bool lowercase() const { return lowercase_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  SpecialIds special_;
  bool lowercase_ = true;
};

/// Loads a LF-delimited vocabulary. Casing comes from `lowercase` when given,
/// otherwise from a sidecar file `<path>.casing` holding "cased" or
/// "uncased", otherwise uncased.
Vocab load_vocab(const std::filesystem::path& path, std::optional<bool> lowercase = std::nullopt);

/// Byte range [begin, end) into a UTF-8 source string.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct Piece {
  std::string text;
  CharSpan span;
};

/// Whitespace/punctuation pre-split with source spans. Applies the vocab's
/// casing rule to the piece text.
std::vector<Piece> split_words(std::string_view text, bool lowercase);

/// Greedy longest-match-first subword segmentation of already split words.
std::vector<Piece> wordpiece_pieces(std::string_view text, const Vocab& vocab);

/// Token strings for `text`; never emits anything outside the vocabulary.
std::vector<std::string> wordpiece(std::string_view text, const Vocab& vocab);

/// Ids without special tokens.
std::vector<int> encode(std::string_view text, const Vocab& vocab);

/// One input segment with label-word character spans marked for tracking.
struct Segment {
  std::string text;
  std::vector<CharSpan> marked;
};

struct TokenSpan {
  std::size_t segment = 0;
  CharSpan chars;
};

/// Half-open token index range.
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const TokenRange&) const = default;
};

struct Encoding {
  std::vector<int> ids;
  std::vector<std::optional<TokenSpan>> spans;  // empty for special tokens
  std::vector<int> segment_ids;
  std::vector<TokenRange> marked;  // one per marked span, in segment order
};

/// Builds `[CLS] seg1 [SEP] seg2 [SEP] ...`, truncating to `max_len`.
/// Truncation drops tail tokens of the longest segment without marked spans
/// first, then tail tokens after the last marked span of marked segments.
/// Throws if a marked span cannot be kept.
Encoding build_sequence(std::span<const Segment> segments, const Vocab& vocab, std::size_t max_len);

/// Joins pieces back into text; "##" pieces attach to the previous word.
std::string decode(std::span<const int> ids, const Vocab& vocab, bool skip_special = true);

}  // namespace rtd
