#include "kinctx/text.hpp"

namespace kinctx {

bool is_token_boundary(std::string_view text, std::size_t pos) {
  if (pos == 0 || pos >= text.size()) return pos <= text.size();
  return !(is_word_byte(static_cast<unsigned char>(text[pos - 1])) &&
           is_word_byte(static_cast<unsigned char>(text[pos])));
}

std::string fold_case(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space_byte(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      tokens.push_back({std::string(text.substr(i, j - i)), {i, j}, true});
      i = j;
    } else {
      tokens.push_back({std::string(1, text[i]), {i, i + 1}, false});
      ++i;
    }
  }
  return tokens;
}

std::vector<std::string> token_strings(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) out.push_back(std::move(t.text));
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space_byte(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space_byte(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string rtrim(std::string_view s) {
  std::size_t e = s.size();
  while (e > 0 && is_space_byte(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(0, e));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace kinctx
