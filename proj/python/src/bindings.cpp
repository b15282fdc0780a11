#include <pybind11/iostream.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "citras/app.hpp"
#include "citras/checkpoint.hpp"
#include "citras/errors.hpp"
#include "citras/inference.hpp"
#include "citras/run_config.hpp"
#include "citras/training.hpp"

namespace py = pybind11;
using namespace citras;
using nlohmann::json;

namespace {

// Configs and reports cross the boundary as JSON text; the Python layer
// converts to and from dicts.
CitrasConfig model_config(const std::string& text) { return CitrasConfig::from_json(json::parse(text.empty() ? "{}" : text)); }

Window make_py_window(Columns lookback_target, Columns lookback_observed, Columns known_extended, Columns horizon_target) {
    Window w;
    w.lookback_target = std::move(lookback_target);
    w.lookback_observed = std::move(lookback_observed);
    w.known_extended = std::move(known_extended);
    w.horizon_target = std::move(horizon_target);
    return w;
}

// Nested [step][target][position] lists.
std::vector<std::vector<std::vector<double>>> nested(const Tensor& t) {
    std::vector<std::vector<std::vector<double>>> out(t.dim(0), std::vector<std::vector<double>>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        for (std::size_t c = 0; c < t.dim(1); ++c) {
            const double* row = t.data() + (i * t.dim(1) + c) * t.dim(2);
            out[i][c].assign(row, row + t.dim(2));
        }
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_citras, m) {
    m.doc() = "Covariate-aware patch transformer for time series forecasting";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<AlignmentError>(m, "AlignmentError", base.ptr());
    py::register_exception<UnsupportedError>(m, "UnsupportedError", base.ptr());
    py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<DivisibilityError>(m, "DivisibilityError", base.ptr());

    py::class_<Window>(m, "Window")
        .def(py::init(&make_py_window), py::arg("lookback_target"), py::arg("lookback_observed") = Columns{},
             py::arg("known_extended") = Columns{}, py::arg("horizon_target") = Columns{})
        .def_readwrite("lookback_target", &Window::lookback_target)
        .def_readwrite("lookback_observed", &Window::lookback_observed)
        .def_readwrite("known_extended", &Window::known_extended)
        .def_readwrite("horizon_target", &Window::horizon_target)
        .def_readwrite("origin", &Window::origin)
        .def_property_readonly("lookback", &Window::lookback)
        .def_property_readonly("horizon", &Window::horizon);

    py::class_<CitrasParams>(m, "Model")
        .def(py::init([](const std::string& config, std::uint64_t seed) { return CitrasParams::init(model_config(config), seed); }),
             py::arg("config_json") = "", py::arg("seed") = kDefaultSeed)
        .def_static("load", [](const std::filesystem::path& path) { return load_checkpoint(path); }, py::arg("path"))
        .def(
            "save",
            [](const CitrasParams& p, const std::filesystem::path& path, const std::string& dtype) {
                if (dtype != "f64" && dtype != "f32") throw ConfigError("dtype must be 'f64' or 'f32'");
                save_checkpoint(p, path, dtype == "f32" ? CheckpointDtype::f32 : CheckpointDtype::f64);
            },
            py::arg("path"), py::arg("dtype") = "f64")
        .def_property_readonly("config_json", [](const CitrasParams& p) { return p.config.to_json().dump(); })
        .def_property_readonly("parameter_count",
                               [](const CitrasParams& p) {
                                   std::size_t n = 0;
                                   for (const auto& e : p.store) n += e->value.size();
                                   return n;
                               })
        .def(
            "forward", [](const CitrasParams& p, const Window& w) { return nested(forward(w, p).predictions); }, py::arg("window"),
            py::call_guard<py::gil_scoped_release>())
        .def(
            "forecast",
            [](const CitrasParams& p, const Window& w, std::size_t horizon) {
                const RollingForecast r = rolling_forecast(p, w, horizon);
                return py::make_tuple(r.predictions, r.iterations);
            },
            py::arg("window"), py::arg("horizon"))
        .def(
            "evaluate",
            [](const CitrasParams& p, const std::vector<Window>& windows, const std::vector<std::size_t>& horizons, std::size_t threads) {
                py::gil_scoped_release release;
                return evaluate(p, windows, horizons, threads).to_json().dump();
            },
            py::arg("windows"), py::arg("horizons"), py::arg("threads") = 1)
        .def(
            "fit",
            [](CitrasParams& p, const std::vector<Window>& train, const std::vector<Window>& val, const std::string& config, std::size_t threads) {
                const TrainConfig tc = TrainConfig::from_json(json::parse(config.empty() ? "{}" : config));
                py::gil_scoped_release release;
                FitOptions options;
                options.threads = threads;
                return fit(p, train, val, tc, options).to_json().dump();
            },
            py::arg("train"), py::arg("val"), py::arg("train_config_json") = "", py::arg("threads") = 1)
        .def(
            "attention_csv",
            [](const CitrasParams& p, const Window& w) { return attention_csv(attention_export(p, w), {}, {}); }, py::arg("window"));

    m.def(
        "experiment_windows",
        [](const std::string& run_config, const std::string& base_dir) {
            const RunConfig rc = RunConfig::from_json(json::parse(run_config), base_dir);
            Experiment e = load_experiment(rc);
            return py::make_tuple(std::move(e.windows.train), std::move(e.windows.val), std::move(e.windows.test));
        },
        py::arg("run_config_json"), py::arg("base_dir") = "");

    m.def(
        "complexity_probe",
        [](const std::string& config, const std::vector<std::size_t>& variates, const std::vector<std::size_t>& steps) {
            json rows = json::array();
            for (const auto& r : complexity_probe(model_config(config), variates, steps)) {
                rows.push_back({{"variates", r.variates}, {"steps", r.steps}, {"cross_variate_macs", r.cross_variate_macs}, {"cross_time_macs", r.cross_time_macs}});
            }
            return rows.dump();
        },
        py::arg("config_json"), py::arg("variates"), py::arg("steps"));

    m.def(
        "parse_config", [](const std::filesystem::path& path) { return parse_config(path).to_json().dump(); }, py::arg("path"));

    m.def(
        "run_cli", [](const std::vector<std::string>& args) { return run_cli(args); }, py::arg("args"),
        py::call_guard<py::scoped_ostream_redirect, py::scoped_estream_redirect>());
}
