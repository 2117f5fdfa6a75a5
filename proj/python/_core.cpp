#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "topo/error.hpp"
#include "topo/features.hpp"
#include "topo/knn.hpp"
#include "topo/persistence.hpp"
#include "topo/phrasal.hpp"
#include "topo/pipeline.hpp"
#include "topo/stats.hpp"
#include "topo/synth.hpp"
#include "topo/vecstore.hpp"

namespace py = pybind11;
using namespace topo;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::pair<std::vector<float>, std::size_t> matrix_from(const F32Array& a) {
  if (a.ndim() != 2) throw SchemaError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), dim = static_cast<std::size_t>(a.shape(1));
  return {std::vector<float>(a.data(), a.data() + rows * dim), dim};
}

template <typename T>
py::array_t<T> to_array(std::span<const T> v, std::size_t rows, std::size_t cols) {
  py::array_t<T> out({rows, cols});
  if (!v.empty()) std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
  return out;
}

DistanceMatrix distance_matrix_from(const F64Array& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw SchemaError("expected a square matrix");
  const auto n = static_cast<std::size_t>(a.shape(0));
  return DistanceMatrix(n, std::vector<double>(a.data(), a.data() + n * n));
}

PersistenceDiagram diagram_from(const F64Array& pairs, int degree) {
  PersistenceDiagram d;
  d.degree = degree;
  if (pairs.size() == 0) return d;
  if (pairs.ndim() != 2 || pairs.shape(1) != 2) throw SchemaError("pairs must have shape (m, 2)");
  for (py::ssize_t i = 0; i < pairs.shape(0); ++i) d.pairs.push_back({pairs.at(i, 0), pairs.at(i, 1)});
  return d;
}

py::array_t<double> pairs_array(const PersistenceDiagram& d) {
  py::array_t<double> out({d.pairs.size(), std::size_t{2}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < d.pairs.size(); ++i) {
    v(i, 0) = d.pairs[i].birth;
    v(i, 1) = d.pairs[i].death;
  }
  return out;
}

py::dict meta_dict(const TokenMeta& m) {
  py::dict d;
  d["token_text"] = m.token_text;
  d["utterance_id"] = m.utterance_id;
  d["position"] = m.position;
  d["word_index"] = m.word_index;
  d["subtoken_index"] = m.subtoken_index;
  d["gold_tag"] = m.gold_tag ? py::object(py::str(std::string(tag_name(*m.gold_tag)))) : py::none();
  d["extra_columns"] = m.extra_columns;
  return d;
}

TokenMeta meta_from(const py::dict& d) {
  TokenMeta m;
  m.token_text = d.contains("token_text") ? d["token_text"].cast<std::string>() : "";
  m.utterance_id = d["utterance_id"].cast<std::string>();
  m.position = d["position"].cast<std::int64_t>();
  if (d.contains("word_index")) m.word_index = d["word_index"].cast<std::int64_t>();
  if (d.contains("subtoken_index")) m.subtoken_index = d["subtoken_index"].cast<std::int64_t>();
  if (d.contains("gold_tag") && !d["gold_tag"].is_none()) {
    m.gold_tag = parse_tag(d["gold_tag"].cast<std::string>());
  }
  if (d.contains("extra_columns")) {
    m.extra_columns = d["extra_columns"].cast<std::map<std::string, double>>();
  }
  if (d.contains("padding")) m.padding = d["padding"].cast<bool>();
  return m;
}

std::vector<Tag> tags_from(const std::vector<std::string>& tags) {
  std::vector<Tag> out;
  for (const auto& t : tags) out.push_back(parse_tag(t));
  return out;
}

py::dict score_dict(const PhrasalScore& s) {
  py::dict d;
  d["tp"] = s.tp;
  d["fp"] = s.fp;
  d["fn"] = s.fn;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f1"] = s.f1;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Local topological features of contextual embeddings";

  auto base = py::register_exception<Error>(m, "TopoError", PyExc_RuntimeError);
  py::register_exception<NormalizationError>(m, "NormalizationError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<CacheDepthError>(m, "CacheDepthError", base.ptr());
  py::register_exception<NumericsError>(m, "NumericsError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // vecstore
  m.def("normalize_l2", [](const py::array_t<float, py::array::forcecast>& v) {
    if (v.ndim() != 1) throw SchemaError("expected a 1-D array");
    const auto out = normalize_l2(std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
    return py::array_t<float>(out.size(), out.data());
  });

  py::class_<Datastore>(m, "Datastore")
      .def_property_readonly("count", &Datastore::count)
      .def_property_readonly("dim", &Datastore::dim)
      .def_property_readonly("normalized", &Datastore::normalized)
      .def("vectors", [](const Datastore& ds) { return to_array(ds.vectors(), ds.count(), ds.dim()); })
      .def("meta", [](const Datastore& ds, std::size_t i) {
        if (i >= ds.count()) throw py::index_error();
        return meta_dict(ds.meta(i));
      })
      .def("__len__", &Datastore::count);

  m.def(
      "build_datastore",
      [](const F32Array& raw, const std::vector<py::dict>& meta, bool normalize, bool drop_padding) {
        auto [v, dim] = matrix_from(raw);
        std::vector<TokenMeta> rows;
        for (const auto& d : meta) rows.push_back(meta_from(d));
        return build_datastore(v, dim, std::move(rows), BuildOptions{normalize, drop_padding});
      },
      py::arg("vectors"), py::arg("meta"), py::arg("normalize") = true, py::arg("drop_padding") = true);
  m.def("load_datastore", &load_datastore, py::arg("path"));
  m.def("save_datastore", &save_datastore, py::arg("store"), py::arg("path"));

  // knn
  m.def(
      "exact_knn",
      [](const Datastore& ds, const F32Array& queries, std::uint32_t k, unsigned threads) {
        auto [q, dim] = matrix_from(queries);
        if (dim != ds.dim()) throw SchemaError("query dim differs from store dim");
        NeighborCache cache;
        {
          py::gil_scoped_release nogil;
          KnnOptions o;
          o.threads = threads;
          cache = exact_knn(ds, QueryMatrix{q, dim}, k, o);
        }
        const std::size_t nq = cache.query_count();
        py::array_t<std::uint64_t> idx({nq, std::size_t{k}});
        py::array_t<float> dist({nq, std::size_t{k}});
        for (std::size_t i = 0; i < nq; ++i) {
          std::memcpy(idx.mutable_data(i, 0), cache.indices(i).data(), k * sizeof(std::uint64_t));
          std::memcpy(dist.mutable_data(i, 0), cache.distances(i).data(), k * sizeof(float));
        }
        return py::make_tuple(idx, dist);
      },
      py::arg("store"), py::arg("queries"), py::arg("k"), py::arg("threads") = 0,
      "Returns (indices, squared distances), each of shape (queries, k).");

  // persistence
  m.def(
      "cosine_distance_matrix",
      [](const F32Array& members) {
        auto [v, dim] = matrix_from(members);
        const auto dm = cosine_distance_matrix(v, dim);
        return to_array(dm.entries(), dm.size(), dm.size());
      },
      py::arg("members"));
  m.def(
      "vr_persistence_h0",
      [](const F64Array& dm) {
        const auto d = vr_persistence_h0(distance_matrix_from(dm));
        return py::make_tuple(pairs_array(d), d.essential_count);
      },
      py::arg("distance_matrix"), "Returns (pairs, essential_count).");
  m.def(
      "vr_persistence_h1",
      [](const F64Array& dm) {
        const auto d = vr_persistence_h1(distance_matrix_from(dm));
        return py::make_tuple(pairs_array(d), d.essential_count);
      },
      py::arg("distance_matrix"), "Returns (pairs, essential_count).");

  // features
  m.def(
      "persistence_image",
      [](const F64Array& pairs, double bandwidth, std::size_t resolution, std::size_t neighborhood_n,
         double y_lo, double y_hi) {
        PersistenceImageParams p;
        p.bandwidth = bandwidth;
        p.resolution = resolution;
        p.neighborhood_n = neighborhood_n;
        p.y_lo = y_lo;
        p.y_hi = y_hi;
        const auto img = persistence_image(diagram_from(pairs, 0), p);
        return py::array_t<double>(img.size(), img.data());
      },
      py::arg("pairs"), py::arg("bandwidth") = 0.01, py::arg("resolution") = 100,
      py::arg("neighborhood_n") = 128, py::arg("y_lo") = 0.0, py::arg("y_hi") = 1.0);
  m.def(
      "wasserstein_norm", [](const F64Array& pairs) { return wasserstein_norm(diagram_from(pairs, 0)); },
      py::arg("pairs"));

  // stats
  m.def(
      "kendall_tau_b",
      [](const F64Array& x, const F64Array& y) {
        const auto r = kendall_tau_b(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                                     std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
        return py::make_tuple(r.tau, r.p);
      },
      py::arg("x"), py::arg("y"), "Returns (tau, two-sided p).");

  // phrasal
  m.def(
      "decode_bio",
      [](const std::vector<std::string>& tokens, const std::vector<std::string>& tags,
         const std::vector<std::int64_t>& word_ids) {
        return decode_bio(tokens, tags_from(tags), word_ids);
      },
      py::arg("tokens"), py::arg("tags"), py::arg("word_ids") = std::vector<std::int64_t>{});
  m.def("normalize_dedup", [](const std::vector<std::string>& p) { return normalize_dedup(p); });
  m.def(
      "phrasal_prf",
      [](const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
        return score_dict(phrasal_prf(normalize_dedup(pred), normalize_dedup(gold)));
      },
      py::arg("pred"), py::arg("gold"), "Normalizes and deduplicates both sides, then scores.");

  // synth + pipeline
  m.def(
      "synth",
      [](const std::filesystem::path& out_dir, std::size_t utterances, std::uint64_t seed,
         unsigned threads) {
        SynthSpec s;
        s.utterances = utterances;
        s.seed = seed;
        s.validate();
        py::gil_scoped_release nogil;
        write_synth(generate_synth(s, threads), out_dir);
      },
      py::arg("out_dir"), py::arg("utterances") = 2000, py::arg("seed") = 0, py::arg("threads") = 0,
      "Writes store.tds, its sidecar and labels.jsonl under out_dir.");
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, bool force) {
        const auto cfg = PipelineConfig::load(config);
        PipelineOptions opts;
        opts.force = force;
        std::vector<StageOutcome> outcomes;
        {
          py::gil_scoped_release nogil;
          outcomes = run_pipeline(cfg, opts);
        }
        py::list out;
        for (const auto& o : outcomes) out.append(py::make_tuple(o.name, o.ran, o.seconds));
        return out;
      },
      py::arg("config"), py::arg("force") = false,
      "Runs every stage; returns (stage, ran, seconds) tuples.");
}
