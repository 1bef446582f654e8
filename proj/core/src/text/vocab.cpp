#include "neurocap/text/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "neurocap/data/synthetic.hpp"
#include "neurocap/error.hpp"

namespace neurocap::text {

namespace {

const std::vector<std::string> kReserved{"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

const Vocab& Vocab::standard() {
  static const Vocab vocab = [] {
    std::vector<std::string> words{"a", "the", "there", "is", "in", ".", "?", ":", "question", "answer", "what", "where", "color"};
    for (auto w : data::kObjects) words.emplace_back(w);
    for (auto w : data::kColors) words.emplace_back(w);
    for (auto w : data::kScenes) words.emplace_back(w);
    return Vocab(words);
  }();
  return vocab;
}

Vocab::Vocab(const std::vector<std::string>& words) : words_(kReserved) {
  for (const auto& r : kReserved) index_.emplace(r, static_cast<TokenId>(index_.size()));
  for (const auto& w : words) {
    if (w.empty()) throw ParameterError("Vocab: empty word");
    if (!index_.emplace(w, static_cast<TokenId>(words_.size())).second) {
      throw ParameterError("Vocab: duplicate word '" + w + "'");
    }
    words_.push_back(w);
  }
}

TokenId Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() || it->second < 4 ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const { return id(word) != kUnk; }

const std::string& Vocab::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("Vocab: token id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ParameterError("tokenize: max_len must leave room for BOS and EOS");
  TokenSequence seq;
  seq.ids.push_back(kBos);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() + 1 >= max_len) {
      seq.truncated = true;
      break;
    }
    seq.ids.push_back(vocab.id(w));
  }
  seq.ids.push_back(kEos);
  return seq;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) { return detokenize(seq.ids, vocab); }

std::string prompt_text(std::string_view question) {
  if (std::all_of(question.begin(), question.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
    throw ParameterError("build_prompt: question is empty");
  }
  return "Question: " + std::string(question) + " Answer:";
}

TokenSequence build_prompt(std::string_view question, const Vocab& vocab) {
  TokenSequence seq;
  seq.ids.push_back(kBos);
  for (const auto& w : split_words(prompt_text(question))) seq.ids.push_back(vocab.id(w));
  return seq;
}

}  // namespace neurocap::text
