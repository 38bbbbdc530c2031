#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coached/agent.hpp"
#include "coached/config.hpp"
#include "coached/corpus.hpp"
#include "coached/error.hpp"
#include "coached/eval.hpp"
#include "coached/retrieval.hpp"
#include "coached/stats.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::object to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null:
      return py::none();
    case json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case json::value_t::number_integer:
      return py::int_(j.get<std::int64_t>());
    case json::value_t::number_unsigned:
      return py::int_(j.get<std::uint64_t>());
    case json::value_t::number_float:
      return py::float_(j.get<double>());
    case json::value_t::string:
      return py::str(j.get_ref<const std::string&>());
    case json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(to_py(v));
      return out;
    }
    case json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return out;
    }
    default:
      throw py::type_error("unsupported JSON value");
  }
}

json from_py(const py::handle& o) {
  if (o.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(o)) return o.cast<bool>();
  if (py::isinstance<py::int_>(o)) return o.cast<std::int64_t>();
  if (py::isinstance<py::float_>(o)) return o.cast<double>();
  if (py::isinstance<py::str>(o)) return o.cast<std::string>();
  if (py::isinstance<py::dict>(o)) {
    json out = json::object();
    for (const auto& [k, v] : o.cast<py::dict>()) out[py::str(k).cast<std::string>()] = from_py(v);
    return out;
  }
  if (py::isinstance<py::list>(o) || py::isinstance<py::tuple>(o)) {
    json out = json::array();
    for (const auto& v : o) out.push_back(from_py(v));
    return out;
  }
  throw py::type_error("cannot convert " + py::repr(o).cast<std::string>() + " to JSON");
}

coached::ChunkingPolicy policy_from(const py::dict& d) {
  coached::ChunkingPolicy p;
  const json j = from_py(d);
  if (j.contains("strategy")) p.strategy = coached::parse_chunk_strategy(j["strategy"].get<std::string>());
  p.target_chars = j.value("target_chars", p.target_chars);
  p.overlap_chars = j.value("overlap_chars", p.overlap_chars);
  p.min_chunk_chars = j.value("min_chunk_chars", p.min_chunk_chars);
  p.boundary_similarity_quantile = j.value("boundary_similarity_quantile", p.boundary_similarity_quantile);
  if (j.contains("separators")) p.separators = j["separators"].get<std::vector<std::string>>();
  return p;
}

template <typename T, typename F>
std::vector<T> list_from(const py::list& items, F convert) {
  std::vector<T> out;
  for (const auto& item : items) out.push_back(convert(from_py(item)));
  return out;
}

py::dict t_result(const coached::stats::TTestResult& r) {
  py::dict d;
  d["t"] = r.t;
  d["df"] = r.df;
  d["p"] = r.p_two_tailed;
  return d;
}

// Fitted TF-IDF index over a list of chunk dicts.
class PyIndex {
 public:
  explicit PyIndex(coached::VectorIndex index) : index_(std::move(index)), embedder_(coached::tfidf_embedder_for(index_)) {}

  static PyIndex build(const py::list& chunks) {
    const auto parsed = list_from<coached::Chunk>(chunks, coached::chunk_from_json);
    const coached::TfIdfEmbedder embedder(coached::fit_tfidf(parsed));
    return PyIndex(coached::build_index(parsed, embedder));
  }

  py::list search(const std::string& query, std::size_t k, double min_score) const {
    py::list out;
    for (const auto& hit : coached::search(index_, *embedder_, query, k, min_score)) out.append(to_py(to_json(hit)));
    return out;
  }

  void save(const std::string& path) const { coached::save_index(index_, path); }
  std::size_t size() const { return index_.entries.size(); }
  std::string tag() const { return index_.embedder_tag; }

 private:
  coached::VectorIndex index_;
  std::unique_ptr<coached::Embedder> embedder_;
};

}  // namespace

PYBIND11_MODULE(_coached, m) {
  m.doc() = "Retrieval, supervision parsing and rating statistics from the coached core.";

  // Kept alive for the interpreter's lifetime.
  static PyObject* error_type = py::exception<coached::Error>(m, "CoachedError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const coached::Error& e) {
      py::object instance = py::handle(error_type)(e.what());
      instance.attr("kind") = std::string(coached::error_kind_name(e.kind()));
      PyErr_SetObject(error_type, instance.ptr());
    }
  });

  m.def(
      "normalize_document",
      [](const std::string& raw, const std::string& format, const py::dict& provenance) {
        return to_py(to_json(
            coached::normalize_document(raw, coached::parse_document_format(format), from_py(provenance))));
      },
      py::arg("raw"), py::arg("format") = "plain", py::arg("provenance") = py::dict());

  m.def(
      "chunk_document",
      [](const py::dict& document, const py::dict& policy) {
        const auto chunks = coached::chunk_document(coached::document_from_json(from_py(document)), policy_from(policy));
        py::list out;
        for (const auto& c : chunks) out.append(to_py(to_json(c)));
        return out;
      },
      py::arg("document"), py::arg("policy") = py::dict());

  py::class_<PyIndex>(m, "Index")
      .def(py::init(&PyIndex::build), py::arg("chunks"))
      .def_static(
          "load", [](const std::string& path) { return PyIndex(coached::load_index(path)); }, py::arg("path"))
      .def("search", &PyIndex::search, py::arg("query"), py::arg("k") = 4,
           py::arg("min_score") = coached::kDefaultMinScore)
      .def("save", &PyIndex::save, py::arg("path"))
      .def_property_readonly("embedder_tag", &PyIndex::tag)
      .def("__len__", &PyIndex::size);

  m.def(
      "parse_supervisor_output",
      [](const std::string& raw) {
        const auto v = coached::agent::parse_supervisor_output(raw);
        py::dict d;
        d["verdict"] = std::string(coached::agent::to_string(v.kind));
        d["feedback"] = v.feedback;
        d["replacement"] = v.replacement ? py::object(py::str(*v.replacement)) : py::none();
        return d;
      },
      py::arg("raw"));

  m.def(
      "read_turn_log",
      [](const std::string& path, const std::string& session_id) {
        py::list out;
        for (const auto& t : coached::agent::read_turn_log(path, session_id)) out.append(to_py(to_json(t)));
        return out;
      },
      py::arg("path"), py::arg("session_id") = "");

  m.def(
      "welch_t", [](const std::vector<double>& a, const std::vector<double>& b) { return t_result(coached::stats::welch_t(a, b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "pooled_t",
      [](const std::vector<double>& a, const std::vector<double>& b) { return t_result(coached::stats::pooled_t(a, b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "ancova",
      [](const std::vector<double>& scores, const std::vector<bool>& treatment, const std::vector<double>& lengths) {
        if (scores.size() != treatment.size() || scores.size() != lengths.size()) {
          throw py::value_error("scores, treatment and lengths must have the same length");
        }
        std::vector<coached::stats::AncovaObservation> obs;
        for (std::size_t i = 0; i < scores.size(); ++i) obs.push_back({scores[i], treatment[i], lengths[i]});
        const auto r = coached::stats::ancova_group_length(obs);
        py::dict d;
        d["f"] = r.f_group;
        d["p"] = r.p_group;
        d["beta_length"] = r.beta_length ? py::object(py::float_(*r.beta_length)) : py::none();
        d["df_residual"] = r.df_residual;
        return d;
      },
      py::arg("scores"), py::arg("treatment"), py::arg("lengths"));

  m.def(
      "load_trial_bank",
      [](const std::string& path) {
        py::list out;
        for (const auto& t : coached::eval::load_trial_bank(path)) out.append(to_py(to_json(t)));
        return out;
      },
      py::arg("path"));

  m.def(
      "blind_shuffle",
      [](const py::list& trials, const std::string& rater_id, std::uint64_t seed) {
        py::list out;
        for (const auto& p :
             coached::eval::blind_shuffle(list_from<coached::eval::Trial>(trials, coached::eval::trial_from_json),
                                          rater_id, seed)) {
          out.append(to_py(to_json(p)));
        }
        return out;
      },
      py::arg("trials"), py::arg("rater_id"), py::arg("seed"));

  m.def(
      "build_report",
      [](const py::list& ratings, const py::list& trials, const std::string& variant) {
        if (variant != "welch" && variant != "pooled") throw py::value_error("variant must be 'welch' or 'pooled'");
        const auto report = coached::eval::build_report(
            list_from<coached::eval::Rating>(ratings, coached::eval::rating_from_json),
            list_from<coached::eval::Trial>(trials, coached::eval::trial_from_json),
            variant == "pooled" ? coached::stats::TTestVariant::kPooled : coached::stats::TTestVariant::kWelch);
        return to_py(to_json(report));
      },
      py::arg("ratings"), py::arg("trials"), py::arg("variant") = "welch");

  m.def(
      "load_config", [](const std::string& path) { return to_py(to_json(coached::load_config(path))); },
      py::arg("path"));
}
