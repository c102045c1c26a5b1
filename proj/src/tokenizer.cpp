#include "rtd/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace rtd {
namespace {

struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t end;
};

std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = lead;
    if (lead >= 0xF0 && lead < 0xF8) {
      len = 4;
      cp = lead & 0x07;
    } else if (lead >= 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if (lead >= 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    }
    if (len > 1) {
      if (i + len > text.size()) {
        len = 1;
        cp = 0xFFFD;
      } else {
        for (std::size_t k = 1; k < len; ++k) {
          const auto cont = static_cast<unsigned char>(text[i + k]);
          if ((cont & 0xC0) != 0x80) {
            len = 1;
            cp = 0xFFFD;
            break;
          }
          cp = (cp << 6) | (cont & 0x3F);
        }
      }
    } else if (lead >= 0x80) {
      cp = 0xFFFD;
    }
    out.push_back({cp, i, i + len});
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_whitespace(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == 0x00A0 || c == 0x3000 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x202F || c == 0x205F;
}

bool is_control(char32_t c) {
  if (c == U'\t' || c == U'\n' || c == U'\r') return false;
  return c == 0 || c == 0xFFFD || c < 0x20 || (c >= 0x7F && c < 0xA0) || (c >= 0x200B && c <= 0x200F);
}

bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
    return true;
  }
  return (c >= 0x00A1 && c <= 0x00BF && c != 0x00AA && c != 0x00B2 && c != 0x00B3 && c != 0x00B5 &&
          c != 0x00B9 && c != 0x00BA && c != 0x00BC && c != 0x00BD && c != 0x00BE) ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F);
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

bool is_combining_mark(char32_t c) { return c >= 0x0300 && c <= 0x036F; }

// Lowercase plus accent stripping for ASCII and Latin-1 letters.
char32_t fold_uncased(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c < 0xC0 || c > 0xFF) return c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) c += 0x20;
  if (c >= 0xE0 && c <= 0xE5) return U'a';
  if (c == 0xE7) return U'c';
  if (c >= 0xE8 && c <= 0xEB) return U'e';
  if (c >= 0xEC && c <= 0xEF) return U'i';
  if (c == 0xF1) return U'n';
  if (c >= 0xF2 && c <= 0xF6) return U'o';
  if (c >= 0xF9 && c <= 0xFC) return U'u';
  if (c == 0xFD || c == 0xFF) return U'y';
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TokenizerError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens, bool lowercase) {
  Vocab vocab;
  vocab.lowercase_ = lowercase;
  vocab.index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto [it, inserted] = vocab.index_.emplace(tokens[i], static_cast<int>(i));
    if (!inserted) {
      throw TokenizerError("duplicate vocabulary token '" + tokens[i] + "' on lines " +
                           std::to_string(it->second + 1) + " and " + std::to_string(i + 1));
    }
  }
  vocab.tokens_ = std::move(tokens);
  auto require = [&](std::string_view name) {
    auto id = vocab.find(name);
    if (!id) throw TokenizerError("vocabulary is missing special token " + std::string(name));
    return *id;
  };
  vocab.special_ = {require(kPadToken), require(kUnkToken), require(kClsToken), require(kSepToken),
                    require(kMaskToken)};
  return vocab;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view token) const { return find(token).value_or(special_.unk); }

const std::string& Vocab::token(int id) const {
  if (!contains(id)) throw TokenizerError("token id " + std::to_string(id) + " is not in the vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_special(int id) const {
  return id == special_.pad || id == special_.unk || id == special_.cls || id == special_.sep ||
         id == special_.mask;
}

Vocab load_vocab(const std::filesystem::path& path, std::optional<bool> lowercase) {
  const std::string text = read_file(path);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t stop = text.find('\n', start);
    if (stop == std::string::npos) stop = text.size();
    std::string line = text.substr(start, stop - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(std::move(line));
    start = stop + 1;
  }
  if (!lowercase) {
    auto sidecar = path;
    sidecar += ".casing";
    lowercase = true;
    if (std::filesystem::exists(sidecar)) {
      std::string flag = read_file(sidecar);
      flag.erase(std::remove_if(flag.begin(), flag.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }),
                 flag.end());
      if (flag == "cased") {
        lowercase = false;
      } else if (flag != "uncased") {
        throw TokenizerError("casing sidecar " + sidecar.string() + " must say 'cased' or 'uncased'");
      }
    }
  }
  return Vocab::from_tokens(std::move(tokens), *lowercase);
}

std::vector<Piece> split_words(std::string_view text, bool lowercase) {
  std::vector<Piece> words;
  Piece current;
  bool open = false;
  auto flush = [&] {
    if (open && !current.text.empty()) words.push_back(std::move(current));
    current = Piece{};
    open = false;
  };
  for (const auto& cp : decode_utf8(text)) {
    if (is_whitespace(cp.value)) {
      flush();
      continue;
    }
    if (is_control(cp.value)) continue;
    if (lowercase && is_combining_mark(cp.value)) {
      if (open) current.span.end = cp.end;
      continue;
    }
    const char32_t c = lowercase ? fold_uncased(cp.value) : cp.value;
    if (is_punctuation(c) || is_cjk(c)) {
      flush();
      Piece single;
      append_utf8(single.text, c);
      single.span = {cp.begin, cp.end};
      words.push_back(std::move(single));
      continue;
    }
    if (!open) {
      current.span.begin = cp.begin;
      open = true;
    }
    append_utf8(current.text, c);
    current.span.end = cp.end;
  }
  flush();
  return words;
}

std::vector<Piece> wordpiece_pieces(std::string_view text, const Vocab& vocab) {
  std::vector<Piece> out;
  const std::string& unk = vocab.token(vocab.special().unk);
  for (const auto& word : split_words(text, vocab.lowercase())) {
    const auto chars = decode_utf8(word.text);
    if (chars.size() > kMaxWordChars) {
      out.push_back({unk, word.span});
      continue;
    }
    // Map positions inside the folded word back to source bytes. Folding is
    // one code point to one code point, so positions line up unless combining
    // marks were dropped; in that case pieces fall back to the word span.
    const auto source = decode_utf8(text.substr(word.span.begin, word.span.end - word.span.begin));
    const bool aligned = source.size() == chars.size();
    auto source_span = [&](std::size_t from, std::size_t to) -> CharSpan {
      if (!aligned) return word.span;
      return {word.span.begin + source[from].begin, word.span.begin + source[to - 1].end};
    };

    std::vector<Piece> pieces;
    bool bad = false;
    std::size_t start = 0;
    while (start < chars.size()) {
      std::size_t end = chars.size();
      std::optional<std::string> match;
      while (start < end) {
        std::string candidate = start > 0 ? "##" : "";
        candidate.append(word.text, chars[start].begin, chars[end - 1].end - chars[start].begin);
        if (vocab.find(candidate)) {
          match = std::move(candidate);
          break;
        }
        --end;
      }
      if (!match) {
        bad = true;
        break;
      }
      pieces.push_back({std::move(*match), source_span(start, end)});
      start = end;
    }
    if (bad) {
      out.push_back({unk, word.span});
    } else {
      out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
    }
  }
  return out;
}

std::vector<std::string> wordpiece(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (auto& piece : wordpiece_pieces(text, vocab)) out.push_back(std::move(piece.text));
  return out;
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& piece : wordpiece_pieces(text, vocab)) ids.push_back(vocab.id(piece.text));
  return ids;
}

Encoding build_sequence(std::span<const Segment> segments, const Vocab& vocab, std::size_t max_len) {
  if (segments.empty()) throw TokenizerError("build_sequence: no segments");
  const std::size_t specials = segments.size() + 1;
  if (max_len < specials + 1) {
    throw TokenizerError("build_sequence: max_len " + std::to_string(max_len) + " leaves no room for tokens");
  }

  struct Tokenized {
    std::vector<Piece> pieces;
    std::vector<TokenRange> marked;  // local token indices
    std::size_t keep = 0;            // tokens retained after truncation
    std::size_t floor = 0;           // truncation may not go below this
  };
  std::vector<Tokenized> parts(segments.size());
  std::size_t total = specials;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    auto& part = parts[s];
    part.pieces = wordpiece_pieces(segments[s].text, vocab);
    for (const auto& span : segments[s].marked) {
      std::size_t first = part.pieces.size();
      std::size_t last = 0;
      for (std::size_t t = 0; t < part.pieces.size(); ++t) {
        const auto& p = part.pieces[t].span;
        if (p.begin < span.end && span.begin < p.end) {
          first = std::min(first, t);
          last = t + 1;
        }
      }
      if (first >= last) {
        throw TokenizerError("build_sequence: marked span [" + std::to_string(span.begin) + "," +
                             std::to_string(span.end) + ") covers no tokens in segment " + std::to_string(s));
      }
      part.marked.push_back({first, last});
      part.floor = std::max(part.floor, last);
    }
    part.keep = part.pieces.size();
    total += part.keep;
  }

  while (total > max_len) {
    // Unmarked segments are truncated before any marked one; within a
    // group the longest goes first, ties going to the later segment.
    std::optional<std::size_t> pick;
    auto better = [&](std::size_t s) {
      if (!pick) return true;
      const bool unmarked = parts[s].marked.empty();
      const bool pick_unmarked = parts[*pick].marked.empty();
      if (unmarked != pick_unmarked) return unmarked;
      return parts[s].keep >= parts[*pick].keep;
    };
    for (std::size_t s = 0; s < parts.size(); ++s) {
      if (parts[s].keep > parts[s].floor && better(s)) pick = s;
    }
    if (!pick) {
      throw TokenizerError("build_sequence: marked label-word span cannot fit within max_len " +
                           std::to_string(max_len));
    }
    --parts[*pick].keep;
    --total;
  }

  Encoding enc;
  enc.ids.reserve(total);
  auto push_special = [&](int id, int segment) {
    enc.ids.push_back(id);
    enc.spans.emplace_back();
    enc.segment_ids.push_back(segment);
  };
  push_special(vocab.special().cls, 0);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const int segment_id = s == 0 ? 0 : 1;
    const std::size_t offset = enc.ids.size();
    for (std::size_t t = 0; t < parts[s].keep; ++t) {
      enc.ids.push_back(vocab.id(parts[s].pieces[t].text));
      enc.spans.push_back(TokenSpan{s, parts[s].pieces[t].span});
      enc.segment_ids.push_back(segment_id);
    }
    for (const auto& range : parts[s].marked) enc.marked.push_back({offset + range.begin, offset + range.end});
    push_special(vocab.special().sep, segment_id);
  }
  return enc;
}

std::string decode(std::span<const int> ids, const Vocab& vocab, bool skip_special) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (skip_special && (id == vocab.special().cls || id == vocab.special().sep || id == vocab.special().pad)) {
      continue;
    }
    if (tok.size() > 2 && tok.starts_with("##") && !out.empty()) {
      out.append(tok, 2);
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace rtd
