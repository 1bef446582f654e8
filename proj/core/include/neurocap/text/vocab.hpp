#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace neurocap::text {

using TokenId = std::int64_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kDefaultMaxLen = 16;

/// Word-level vocabulary. Ids 0-3 are PAD, BOS, EOS, UNK; the rest map
/// one-to-one onto surface words.
class Vocab {
 public:
  /// Closed vocabulary covering the synthetic caption and QA grammar.
  static const Vocab& standard();

  explicit Vocab(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  /// UNK for words not in the table.
  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  /// Surface form; reserved ids render as "<pad>", "<bos>", "<eos>", "<unk>".
  const std::string& word(TokenId id) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  /// Set when words were dropped to fit max_len.
  bool truncated = false;

  std::size_t size() const { return ids.size(); }
};

/// Lowercases and splits on whitespace; every ASCII punctuation character is
/// its own word.
std::vector<std::string> split_words(std::string_view text);
/// split_words joined by single spaces.
std::string normalize(std::string_view text);

/// [BOS, words..., EOS], cut to max_len (EOS kept) with `truncated` set.
TokenSequence tokenize(std::string_view text, const Vocab& vocab = Vocab::standard(),
                       std::size_t max_len = kDefaultMaxLen);
/// Words between BOS and the first EOS, space-joined; PAD is skipped.
std::string detokenize(const TokenSequence& seq, const Vocab& vocab = Vocab::standard());
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab = Vocab::standard());

/// "Question: {q} Answer:"; throws ParameterError when q is blank.
std::string prompt_text(std::string_view question);
/// Tokenized prompt_text(q): BOS first, no EOS.
TokenSequence build_prompt(std::string_view question, const Vocab& vocab = Vocab::standard());

}  // namespace neurocap::text
