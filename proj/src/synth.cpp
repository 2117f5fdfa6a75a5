#include "topo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "topo/error.hpp"
#include "topo/parallel.hpp"

namespace topo {

namespace {

constexpr std::size_t kNameSpace = 4000;  // ids per name family (3 syllables, base 20)

constexpr const char* kSyllables[20] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "ba",
                                        "do", "fe", "gu", "hi", "ja", "pe", "qui", "wo", "xa", "yu"};

std::string name_for(std::size_t id) {
  std::string s;
  for (int i = 0; i < 3; ++i) {
    s += kSyllables[id % 20];
    id /= 20;
  }
  return s;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Vec = std::vector<double>;

// Gaussian draw with coordinate 0 (the role axis) left at zero.
Vec off_axis_gaussian(std::size_t dim, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  Vec v(dim, 0.0);
  for (std::size_t c = 1; c < dim; ++c) v[c] = normal(rng);
  return v;
}

void normalize(Vec& v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
}

Vec around(const Vec& center, double sigma, std::mt19937_64& rng) {
  Vec v = off_axis_gaussian(center.size(), sigma, rng);
  for (std::size_t c = 0; c < v.size(); ++c) v[c] += center[c];
  normalize(v);
  return v;
}

struct Utterance {
  std::vector<float> vectors;
  std::vector<TokenMeta> meta;
  LabelRecord label;
};

}  // namespace

void SynthSpec::validate() const {
  if (dim < 2) throw ParameterError("synth: dim must be >= 2");
  if (utterances == 0 || tokens_per_utterance == 0) {
    throw ParameterError("synth: utterances and tokens_per_utterance must be positive");
  }
  if (!(term_fraction > 0 && term_fraction < 1)) {
    throw ParameterError("synth: term_fraction must lie in (0, 1)");
  }
  if (!(sigma_term > 0 && sigma_term < sigma_bg)) {
    throw ParameterError("synth: need 0 < sigma_term < sigma_bg");
  }
  if (domains < 3 || utterances < domains) {
    throw ParameterError("synth: need at least 3 domains and one utterance per domain");
  }
  if (term_types_per_domain == 0 || domains * term_types_per_domain > kNameSpace) {
    throw ParameterError("synth: term vocabulary size out of range");
  }
  if (background_words < 2 || background_words * 2 > kNameSpace) {
    throw ParameterError("synth: background vocabulary size out of range");
  }
  if (max_phrase_words == 0) throw ParameterError("synth: max_phrase_words must be >= 1");
  if (!(family_spread >= 0) || !(role_margin >= 0)) {
    throw ParameterError("synth: family_spread and role_margin must be >= 0");
  }
}

SynthSpec SynthSpec::from_config(const ConfigFile& cfg) {
  std::string p;
  for (const auto& k : cfg.keys()) {
    if (k.rfind("synth.", 0) == 0) p = "synth.";
  }
  cfg.reject_unknown(p.empty() ? "" : "synth",
                     {"dim", "utterances", "tokens_per_utterance", "term_fraction", "sigma_term",
                      "sigma_bg", "seed", "domains", "term_types_per_domain", "family_spread",
                      "background_words", "max_phrase_words", "role_margin"});
  SynthSpec s;
  s.dim = cfg.get_size(p + "dim", s.dim);
  s.utterances = cfg.get_size(p + "utterances", s.utterances);
  s.tokens_per_utterance = cfg.get_size(p + "tokens_per_utterance", s.tokens_per_utterance);
  s.term_fraction = cfg.get_double(p + "term_fraction", s.term_fraction);
  s.sigma_term = cfg.get_double(p + "sigma_term", s.sigma_term);
  s.sigma_bg = cfg.get_double(p + "sigma_bg", s.sigma_bg);
  s.seed = static_cast<std::uint64_t>(cfg.get_int(p + "seed", static_cast<std::int64_t>(s.seed)));
  s.domains = cfg.get_size(p + "domains", s.domains);
  s.term_types_per_domain = cfg.get_size(p + "term_types_per_domain", s.term_types_per_domain);
  s.family_spread = cfg.get_double(p + "family_spread", s.family_spread);
  s.background_words = cfg.get_size(p + "background_words", s.background_words);
  s.max_phrase_words = cfg.get_size(p + "max_phrase_words", s.max_phrase_words);
  s.role_margin = cfg.get_double(p + "role_margin", s.role_margin);
  return s;
}

SynthOutput generate_synth(const SynthSpec& spec, unsigned threads) {
  spec.validate();
  const std::size_t dim = spec.dim;
  std::mt19937_64 rng(splitmix64(spec.seed));

  // Shared geometry: one hub per domain, term types around it, background
  // word centers uniform on the sphere.
  std::vector<std::vector<Vec>> term_centers(spec.domains);
  for (std::size_t d = 0; d < spec.domains; ++d) {
    Vec hub = off_axis_gaussian(dim, 1.0, rng);
    normalize(hub);
    for (std::size_t t = 0; t < spec.term_types_per_domain; ++t) {
      term_centers[d].push_back(around(hub, spec.family_spread, rng));
    }
  }
  std::vector<Vec> bg_centers;
  for (std::size_t w = 0; w < spec.background_words; ++w) {
    Vec c = off_axis_gaussian(dim, 1.0, rng);
    normalize(c);
    bg_centers.push_back(std::move(c));
  }
  // Even background words are one subtoken, odd ones two.
  auto bg_pieces = [](std::size_t w) { return std::size_t{1} + (w % 2); };

  const double role_scale = 1.0 / std::sqrt(1.0 + spec.role_margin * spec.role_margin);
  std::vector<Utterance> utts(spec.utterances);

  parallel_for(spec.utterances, threads, 32, [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      std::mt19937_64 urng(splitmix64(spec.seed ^ splitmix64(u + 1)));
      const std::size_t domain = u * spec.domains / spec.utterances;
      const std::size_t T = spec.tokens_per_utterance;
      const auto m = std::binomial_distribution<std::size_t>(T, spec.term_fraction)(urng);

      // Units: a term phrase (list of term types) or one background word.
      struct Unit {
        bool term;
        std::vector<std::size_t> ids;
      };
      std::vector<Unit> units;
      for (std::size_t rem = m; rem > 0;) {
        const auto len = std::uniform_int_distribution<std::size_t>(
            1, std::min(spec.max_phrase_words, rem))(urng);
        Unit unit{true, {}};
        for (std::size_t i = 0; i < len; ++i) {
          unit.ids.push_back(std::uniform_int_distribution<std::size_t>(
              0, spec.term_types_per_domain - 1)(urng));
        }
        units.push_back(std::move(unit));
        rem -= len;
      }
      for (std::size_t rem = T - m; rem > 0;) {
        auto w = std::uniform_int_distribution<std::size_t>(0, spec.background_words - 1)(urng);
        if (bg_pieces(w) > rem) w -= w % 2;  // fall back to a one-piece word
        units.push_back({false, {w}});
        rem -= bg_pieces(w);
      }
      std::shuffle(units.begin(), units.end(), urng);

      Utterance& out = utts[u];
      char id_buf[32];
      std::snprintf(id_buf, sizeof(id_buf), "u%05zu", u);
      out.label.utterance_id = id_buf;
      out.label.split = domain + 1 == spec.domains   ? "test"
                        : domain + 2 == spec.domains ? "validation"
                                                     : "train";
      std::int64_t position = 0;
      auto emit = [&](Vec base, bool initial, const std::string& text, std::int64_t word,
                      std::int64_t sub, Tag tag, bool term) {
        base[0] = initial ? spec.role_margin : -spec.role_margin;
        for (double& x : base) x *= role_scale;
        normalize(base);
        for (double x : base) out.vectors.push_back(static_cast<float>(x));
        TokenMeta meta;
        meta.token_text = text;
        meta.utterance_id = out.label.utterance_id;
        meta.position = position++;
        meta.word_index = word;
        meta.subtoken_index = sub;
        meta.gold_tag = tag;
        meta.extra_columns["is_term"] = term ? 1.0 : 0.0;
        meta.extra_columns["domain"] = static_cast<double>(domain);
        out.meta.push_back(std::move(meta));
      };
      for (const auto& unit : units) {
        if (unit.term) {
          for (std::size_t i = 0; i < unit.ids.size(); ++i) {
            const std::size_t type = unit.ids[i];
            const auto word = static_cast<std::int64_t>(out.label.words.size());
            const auto text = name_for(domain * spec.term_types_per_domain + type);
            const Tag tag = i == 0 ? Tag::B : Tag::I;
            emit(around(term_centers[domain][type], spec.sigma_term, urng), i == 0, text, word, 0,
                 tag, true);
            out.label.words.push_back(text);
            out.label.word_tags.push_back(tag);
            out.label.subtoken_counts.push_back(1);
          }
        } else {
          const std::size_t w = unit.ids[0];
          const auto word = static_cast<std::int64_t>(out.label.words.size());
          std::string text;
          for (std::size_t piece = 0; piece < bg_pieces(w); ++piece) {
            const auto piece_text = name_for(kNameSpace + 2 * w + piece);
            emit(around(bg_centers[w], spec.sigma_bg, urng), piece == 0, piece_text, word,
                 static_cast<std::int64_t>(piece), Tag::O, false);
            text += piece_text;
          }
          out.label.words.push_back(text);
          out.label.word_tags.push_back(Tag::O);
          out.label.subtoken_counts.push_back(bg_pieces(w));
        }
      }
    }
  });

  std::vector<float> vectors;
  std::vector<TokenMeta> meta;
  SynthOutput result;
  for (auto& u : utts) {
    vectors.insert(vectors.end(), u.vectors.begin(), u.vectors.end());
    std::move(u.meta.begin(), u.meta.end(), std::back_inserter(meta));
    result.labels.push_back(std::move(u.label));
  }
  // Rows are unit norm already; the store flag records it.
  result.store = Datastore(dim, std::move(vectors), std::move(meta), true);
  return result;
}

void write_synth(const SynthOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_datastore(out.store, dir / "store.tds");
  save_labels(out.labels, dir / "labels.jsonl");
}

}  // namespace topo
