#include "topo/phrasal.hpp"

#include <algorithm>
#include <cctype>

#include "topo/error.hpp"

namespace topo {

std::vector<std::string> decode_bio(std::span<const std::string> tokens, std::span<const Tag> tags,
                                    std::span<const std::int64_t> word_ids) {
  if (tokens.size() != tags.size()) {
    throw SchemaError("decode_bio: " + std::to_string(tokens.size()) + " tokens but " +
                      std::to_string(tags.size()) + " tags");
  }
  if (!word_ids.empty() && word_ids.size() != tokens.size()) {
    throw SchemaError("decode_bio: word_ids length does not match tokens");
  }
  std::vector<std::string> phrases;
  std::string current;
  bool open = false;
  auto close = [&] {
    if (open) phrases.push_back(current);
    current.clear();
    open = false;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tag t = tags[i];
    if (t == Tag::O) {
      close();
      continue;
    }
    if (t == Tag::B || !open) {
      close();
      open = true;
      current = tokens[i];
      continue;
    }
    const bool same_word = !word_ids.empty() && word_ids[i] == word_ids[i - 1];
    if (!same_word) current += ' ';
    current += tokens[i];
  }
  close();
  return phrases;
}

std::string normalize_phrase(std::string_view phrase) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = phrase.size();
  while (b < e && is_space(static_cast<unsigned char>(phrase[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(phrase[e - 1]))) --e;
  std::string out(phrase.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::set<std::string> normalize_dedup(std::span<const std::string> phrases) {
  std::set<std::string> out;
  for (const auto& p : phrases) {
    auto n = normalize_phrase(p);
    if (!n.empty()) out.insert(std::move(n));
  }
  return out;
}

PhrasalScore phrasal_prf(const std::set<std::string>& pred, const std::set<std::string>& gold) {
  PhrasalScore s;
  for (const auto& p : pred) {
    if (gold.count(p)) {
      ++s.tp;
    } else {
      ++s.fp;
    }
  }
  s.fn = static_cast<std::int64_t>(gold.size()) - s.tp;
  if (pred.empty() && gold.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace topo
