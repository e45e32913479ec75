#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ticketlab/cli.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/featurespace.hpp"
#include "ticketlab/harness.hpp"
#include "ticketlab/sweep.hpp"

namespace py = pybind11;
using namespace ticketlab;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

py::array_t<std::uint8_t> to_numpy(const Mask& m) {
    py::array_t<std::uint8_t> out({m.rows, m.cols});
    std::copy(m.bits.begin(), m.bits.end(), out.mutable_data());
    return out;
}

py::dict census_dict(const Census& c) {
    py::dict d;
    d["codes"] = c.code_count();
    d["codes_4p"] = c.count_4p;
    d["codes_3n1p"] = c.count_3n1p;
    d["aligned_margin_mean"] = c.aligned_margin_mean;
    d["noncanonical"] = c.noncanonical;
    py::list codes;
    for (const auto& id : c.codes)
        codes.append(py::make_tuple(id.site.row, id.site.clause, to_string(id.family), id.template_index));
    d["code_list"] = codes;
    d["row_load"] = c.row_load;
    return d;
}

LocalVector as_local(const std::vector<double>& u) {
    if (u.size() != kClauseSize) throw InputError("local vector must have four entries");
    return {u[0], u[1], u[2], u[3]};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the ticketlab feature-space lottery-ticket lab.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<DnfTask>(m, "DnfTask")
        .def_property_readonly("clauses", [](const DnfTask& t) { return t.clauses; })
        .def_readonly("d_in", &DnfTask::d_in)
        .def_property_readonly("mode", [](const DnfTask& t) { return to_string(t.mode); })
        .def("evaluate", [](const DnfTask& t, const std::vector<std::uint8_t>& x) {
            if (x.size() != t.d_in) throw InputError("input length must equal d_in");
            return eval_dnf(t, x);
        })
        .def("__str__", &serialize_task);

    m.def(
        "generate_dnf",
        [](std::size_t k, std::size_t d_in, const std::string& mode, std::uint64_t seed) {
            return generate_dnf(k, d_in, parse_overlap_mode(mode), seed);
        },
        py::arg("clauses"), py::arg("d_in"), py::arg("mode"), py::arg("seed"));
    m.def("parse_task", &parse_task);
    m.def(
        "sample_dataset",
        [](const DnfTask& t, std::size_t n, std::uint64_t seed) {
            const auto ds = sample_dataset(t, n, seed);
            py::array_t<std::uint8_t> x({ds.n, ds.d_in});
            std::copy(ds.inputs.begin(), ds.inputs.end(), x.mutable_data());
            py::array_t<std::uint8_t> y(static_cast<py::ssize_t>(ds.n));
            std::copy(ds.labels.begin(), ds.labels.end(), y.mutable_data());
            return py::make_tuple(x, y);
        },
        py::arg("task"), py::arg("n"), py::arg("seed"));

    m.def(
        "embedding_matrix",
        [](const std::string& kind, std::size_t d_in, std::uint64_t seed) {
            return to_numpy(make_embedding(parse_embedding_kind(kind), d_in, seed).c0);
        },
        py::arg("kind"), py::arg("d_in"), py::arg("seed") = 0);

    m.def(
        "code_distance",
        [](const std::vector<double>& u, const std::string& family, double tau) {
            return code_distance(as_local(u), parse_family(family), tau);
        },
        py::arg("u"), py::arg("family"), py::arg("tau") = 0.1);
    m.def(
        "code_margin",
        [](const std::vector<double>& u, const std::string& family) {
            return code_margin(as_local(u), parse_family(family));
        },
        py::arg("u"), py::arg("family"));

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def(py::init([](py::kwargs kw) {
            RunConfig c;
            for (auto [k, v] : kw) apply_config_assignment(c, py::str(k), py::str(v));
            return c;
        }))
        .def("set", [](RunConfig& c, const std::string& k, const std::string& v) { apply_config_assignment(c, k, v); })
        .def("to_text", &config_to_text)
        .def_static("from_text", &config_from_text)
        .def("run_id", &run_id)
        .def("validate", [](const RunConfig& c) { validate(c); })
        .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; })
        .def("__repr__", [](const RunConfig& c) { return "RunConfig(" + run_id(c) + ")"; });

    py::class_<RunRecord>(m, "RunRecord")
        .def_readonly("run_id", &RunRecord::run_id)
        .def_readonly("complete", &RunRecord::complete)
        .def_readonly("error", &RunRecord::error)
        .def_property_readonly("failure", [](const RunRecord& r) { return to_string(r.failure); })
        .def_readonly("final_accuracy", &RunRecord::final_accuracy)
        .def_readonly("config", &RunRecord::config)
        .def_property_readonly("final_census", [](const RunRecord& r) { return census_dict(r.final_census); })
        .def_property_readonly("dense_final_census",
                               [](const RunRecord& r) { return census_dict(r.dense_final_census); })
        .def_property_readonly("init_c1", [](const RunRecord& r) { return to_numpy(r.init_c1); })
        .def_property_readonly("mask", [](const RunRecord& r) -> py::object {
            if (!r.mask) return py::none();
            return to_numpy(*r.mask);
        })
        .def_property_readonly("task", [](const RunRecord& r) { return r.task(); })
        .def("to_text", [](const RunRecord& r) {
            std::ostringstream os;
            write_record(os, r);
            return os.str();
        })
        .def_static("from_text", [](const std::string& text) {
            std::istringstream is(text);
            return read_record(is);
        });

    m.def(
        "run_ticket_cycle",
        [](const RunConfig& c) {
            py::gil_scoped_release release;
            CycleOptions opt;
            opt.keep_artifacts = false;
            return run_ticket_cycle(c, opt);
        },
        py::arg("config"));
    m.def("load_record", &load_record);
    m.def("save_record", &save_record);
    m.def(
        "ticket_metrics", [](const RunRecord& run, const RunRecord& ref) { return run_metric_values(run, &ref); },
        py::arg("run"), py::arg("reference"));

    m.def("preset_names", &preset_names);
    m.def(
        "sweep",
        [](const std::string& preset, std::size_t seeds, std::size_t workers, const std::string& out_dir,
           int max_probe_epoch) {
            PresetOptions po;
            po.seeds = seeds;
            po.max_probe_epoch = max_probe_epoch;
            SweepOptions so;
            so.out_dir = out_dir;
            so.workers = workers;
            SweepResult res;
            {
                py::gil_scoped_release release;
                res = sweep(make_preset(preset, po), so);
            }
            py::list rows;
            for (const auto& row : res.rows) {
                py::dict d;
                d["cell"] = row.cell;
                d["label"] = row.label;
                d["runs"] = row.runs;
                d["failures"] = row.failures;
                py::dict stats;
                for (const auto& [k, s] : row.stats) stats[py::str(k)] = py::make_tuple(s.n, s.mean, s.sem);
                d["stats"] = stats;
                rows.append(d);
            }
            return rows;
        },
        py::arg("preset"), py::arg("seeds") = 1, py::arg("workers") = 1, py::arg("out_dir") = "",
        py::arg("max_probe_epoch") = -1);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
