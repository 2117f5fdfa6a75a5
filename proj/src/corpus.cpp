#include "topo/corpus.hpp"

#include <fstream>

#include "json.hpp"
#include "topo/error.hpp"

namespace topo {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::vector<Tag> tags_from_json(const json& j) {
  std::vector<Tag> out;
  for (const auto& t : j) out.push_back(parse_tag(t.get<std::string>()));
  return out;
}

ordered_json tags_to_json(const std::vector<Tag>& tags) {
  ordered_json j = ordered_json::array();
  for (Tag t : tags) j.push_back(std::string(tag_name(t)));
  return j;
}

void write_lines(const std::filesystem::path& path, const std::vector<ordered_json>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  std::vector<LabelRecord> out;
  for_each_json_line(path, [&](const json& j) {
    LabelRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.split = j.value("split", std::string{});
    r.words = j.at("words").get<std::vector<std::string>>();
    if (j.contains("tags")) r.word_tags = tags_from_json(j.at("tags"));
    if (j.contains("subtoken_counts")) {
      r.subtoken_counts = j.at("subtoken_counts").get<std::vector<std::size_t>>();
    }
    if (!r.word_tags.empty() && r.word_tags.size() != r.words.size()) {
      throw SchemaError("utterance " + r.utterance_id + ": " + std::to_string(r.words.size()) +
                        " words but " + std::to_string(r.word_tags.size()) + " tags");
    }
    if (!r.subtoken_counts.empty() && r.subtoken_counts.size() != r.words.size()) {
      throw SchemaError("utterance " + r.utterance_id + ": subtoken_counts length mismatch");
    }
    out.push_back(std::move(r));
  });
  return out;
}

void save_labels(const std::vector<LabelRecord>& records, const std::filesystem::path& path) {
  std::vector<ordered_json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    ordered_json j;
    j["utterance_id"] = r.utterance_id;
    if (!r.split.empty()) j["split"] = r.split;
    j["words"] = r.words;
    if (!r.word_tags.empty()) j["tags"] = tags_to_json(r.word_tags);
    if (!r.subtoken_counts.empty()) j["subtoken_counts"] = r.subtoken_counts;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  for_each_json_line(path, [&](const json& j) {
    PredictionRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.tokens = j.value("tokens", std::vector<std::string>{});
    r.word_ids = j.value("word_ids", std::vector<std::int64_t>{});
    if (j.contains("tags")) r.tags = tags_from_json(j.at("tags"));
    r.phrases = j.value("phrases", std::vector<std::string>{});
    out.push_back(std::move(r));
  });
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path) {
  std::vector<ordered_json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    ordered_json j;
    j["utterance_id"] = r.utterance_id;
    j["tokens"] = r.tokens;
    j["word_ids"] = r.word_ids;
    j["tags"] = tags_to_json(r.tags);
    j["phrases"] = r.phrases;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

}  // namespace topo
