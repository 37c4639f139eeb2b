#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kinctx {

/// Half-open byte range into a string.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Token {
  std::string text;
  Span span;
  bool is_word = false;
};

// Word bytes are ASCII alphanumerics, '_' and every byte of a multi-byte
// UTF-8 sequence; everything else is punctuation or space.
inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' ||
         c >= 0x80;
}

inline bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// True unless `pos` falls between two word bytes, i.e. inside a word.
/// Punctuation bytes are single tokens, so every position around them counts.
bool is_token_boundary(std::string_view text, std::size_t pos);

/// ASCII lowercase; other bytes pass through.
std::string fold_case(std::string_view s);

/// Reference tokenization: maximal runs of word bytes, and every other
/// non-space byte as its own token. Whitespace is dropped.
std::vector<Token> tokenize(std::string_view text);

std::vector<std::string> token_strings(std::string_view text);

/// Joins tokens with single spaces.
std::string join_tokens(std::span<const std::string> tokens);

std::string trim(std::string_view s);
std::string rtrim(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

}  // namespace kinctx
