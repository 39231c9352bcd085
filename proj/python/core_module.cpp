// Thin binding layer. Structured values cross the boundary as JSON text; the
// Python package decodes them.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rac/app.hpp"
#include "rac/cli.hpp"
#include "rac/service.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

rac::app::AppConfig config_from(const std::optional<std::string>& config_json) {
    if (!config_json) return {};
    return rac::app::app_config_from_json(json::parse(*config_json));
}

rac::Label label_arg(const std::string& name) {
    auto l = rac::label_from_name(name);
    if (!l) throw rac::Error(rac::ErrorCode::UnknownLabel, "unknown label '" + name + "'");
    return *l;
}

rac::eval::PredictionRun make_run(const std::string& id, const std::vector<std::string>& gold,
                                  const std::vector<std::optional<std::string>>& pred) {
    if (gold.size() != pred.size()) {
        throw rac::Error(rac::ErrorCode::InvalidArgument, "gold and predictions differ in length");
    }
    rac::eval::PredictionRun run;
    run.run_id = id;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        rac::eval::Prediction p;
        p.doc_id = std::to_string(i);
        p.gold = label_arg(gold[i]);
        if (pred[i]) p.predicted = label_arg(*pred[i]);
        run.items.push_back(std::move(p));
    }
    return run;
}

// Service without sockets: each call returns (status, json text).
class Classifier {
public:
    Classifier(const std::optional<std::string>& config_json, const std::optional<std::string>& index_path) {
        auto cfg = config_from(config_json);
        auto providers = rac::app::make_providers(cfg);
        std::shared_ptr<rac::app::IndexBundle> bundle;
        if (index_path) {
            bundle = std::make_shared<rac::app::IndexBundle>(rac::app::load_bundle(*index_path, *providers.embedder));
            cfg.index_path = *index_path;
        }
        service_ = std::make_unique<rac::app::Service>(cfg, providers, bundle);
    }

    std::pair<int, std::string> classify(const std::string& body) { return wrap(service_->classify(body)); }
    std::pair<int, std::string> add_document(const std::string& body) { return wrap(service_->add_document(body)); }
    std::pair<int, std::string> reindex() { return wrap(service_->reindex()); }
    std::pair<int, std::string> health() const { return wrap(service_->health()); }
    std::pair<int, std::string> trace(const std::string& id) const { return wrap(service_->get_trace(id)); }

private:
    static std::pair<int, std::string> wrap(const rac::app::ServiceResponse& r) { return {r.status, r.body.dump()}; }
    std::unique_ptr<rac::app::Service> service_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the rac package";

    static py::exception<rac::Error> rac_error(m, "RacError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const rac::Error& e) {
            py::set_error(rac_error, e.what());
        } catch (const json::exception& e) {
            py::set_error(PyExc_ValueError, e.what());
        }
    });

    m.def("default_config", [] { return rac::app::to_json(rac::app::AppConfig{}).dump(); });
    m.def("load_config", [](const std::string& path) { return rac::app::to_json(rac::app::load_app_config(path)).dump(); });
    m.def("validate_config", [](const std::string& config_json) {
        return rac::app::to_json(config_from(config_json)).dump();
    });

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = rac::app::cli_dispatch(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));

    m.def(
        "fixture_corpus",
        [](std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed) {
            const auto docs = rac::corpus::make_separable_corpus(
                {.train_per_class = train_per_class, .test_per_class = test_per_class, .seed = seed});
            return rac::corpus::serialize_corpus(docs, rac::corpus::Format::Jsonl);
        },
        py::arg("train_per_class") = 20, py::arg("test_per_class") = 10, py::arg("seed") = 7);

    m.def(
        "metrics",
        [](const std::vector<std::string>& gold, const std::vector<std::optional<std::string>>& pred) {
            return rac::eval::to_json(rac::eval::evaluate(make_run("run", gold, pred))).dump();
        },
        py::arg("gold"), py::arg("pred"));

    m.def(
        "bootstrap_ci",
        [](const std::vector<std::string>& gold, const std::vector<std::optional<std::string>>& pred,
           std::size_t resamples, double level, std::uint64_t seed) {
            rac::eval::BootstrapOptions opts;
            opts.resamples = resamples;
            opts.level = level;
            opts.seed = seed;
            const auto run = make_run("run", gold, pred);
            const auto ci = rac::eval::stratified_bootstrap_ci(
                run, [](const rac::eval::ConfusionMatrix& cm) { return rac::eval::macro_f1(cm); }, opts);
            return rac::eval::to_json(ci).dump();
        },
        py::arg("gold"), py::arg("pred"), py::arg("resamples") = 2000, py::arg("level") = 0.95, py::arg("seed") = 0);

    m.def(
        "permutation_test",
        [](const std::vector<std::string>& gold, const std::vector<std::optional<std::string>>& pred_a,
           const std::vector<std::optional<std::string>>& pred_b, std::size_t permutations, std::uint64_t seed) {
            rac::eval::PermutationOptions opts;
            opts.permutations = permutations;
            opts.seed = seed;
            const auto result = rac::eval::paired_permutation_test(
                make_run("a", gold, pred_a), make_run("b", gold, pred_b),
                [](const rac::eval::ConfusionMatrix& cm) { return rac::eval::macro_f1(cm); }, opts);
            return rac::eval::to_json(result).dump();
        },
        py::arg("gold"), py::arg("pred_a"), py::arg("pred_b"), py::arg("permutations") = 10000, py::arg("seed") = 0);

    m.def("format_p_value", &rac::eval::format_p_value);

    py::class_<Classifier>(m, "Classifier")
        .def(py::init<const std::optional<std::string>&, const std::optional<std::string>&>(),
             py::arg("config_json") = py::none(), py::arg("index_path") = py::none())
        .def("classify", &Classifier::classify, py::call_guard<py::gil_scoped_release>())
        .def("add_document", &Classifier::add_document, py::call_guard<py::gil_scoped_release>())
        .def("reindex", &Classifier::reindex, py::call_guard<py::gil_scoped_release>())
        .def("health", &Classifier::health)
        .def("trace", &Classifier::trace);
}
