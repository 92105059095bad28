// Python bindings for the main operations: dataset synthesis and IO, weight
// normalization, schedule search/IO/interpolation, retraining, and the
// hypergradient cross-checks. Thin translation layer only; all logic lives in
// the C++ core.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "distsearch/data.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/losses.hpp"
#include "distsearch/meta_search.hpp"
#include "distsearch/network.hpp"
#include "distsearch/oracle.hpp"
#include "distsearch/pathway.hpp"
#include "distsearch/retrain.hpp"
#include "distsearch/run_config.hpp"
#include "distsearch/schedule.hpp"

namespace py = pybind11;
using namespace distsearch;

namespace {

// One self-contained toy rig, assembled the same way the CLI does it, so the
// Python layer can exercise search/retrain without re-exposing every type.
struct ToyRig {
  std::shared_ptr<Dataset> data;
  DatasetSplit parts;
  Network teacher;
  Network student;
  PathwaySet pathways;

  ToyRig(int64_t n, double sigma, uint64_t seed, int64_t teacher_epochs)
      : data(std::make_shared<Dataset>(synth_task(n, 4, sigma, seed, 16, 16))),
        parts(split(data, 0.8, seed + 1)),
        teacher(small_teacher_spec(4), seed + 2, "teacher"),
        student(small_student_spec(4), seed + 3) {
    teacher =
        pretrain(teacher, parts, teacher_epochs, 0.05, seed + 4, 32).net;
    teacher.set_role("teacher");
    teacher.freeze();
    const Shape s = data->sample_shape();
    pathways = enumerate_pathways(student.spec(), teacher.spec(), parse_transform_kinds(""),
                                  Tensor::zeros({1, s[0], s[1], s[2]}), seed + 5);
    pathways.set_requires_grad(true);
  }
};

py::dict schedule_to_dict(const Schedule& s) {
  py::dict d;
  d["pathway_ids"] = s.pathway_ids;
  d["rows"] = s.rows;
  d["raw_rows"] = s.raw_rows;
  return d;
}

Schedule schedule_from_parts(std::vector<std::string> ids, std::vector<std::vector<double>> rows,
                             std::vector<std::vector<double>> raw_rows) {
  Schedule s;
  s.pathway_ids = std::move(ids);
  s.rows = std::move(rows);
  s.raw_rows = std::move(raw_rows);
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(_distsearch, m) {
  m.doc() = "bilevel pathway-weight schedule search for feature distillation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);

  m.def(
      "normalize_alpha",
      [](const std::vector<double>& raw, const std::string& strategy, double g) {
        return normalize_alpha(raw, parse_norm_strategy(strategy), g);
      },
      py::arg("raw"), py::arg("strategy") = "biased-softmax", py::arg("g") = 1.0,
      "Normalize raw pathway weights; strategy is one of biased-softmax, "
      "plain-softmax, l1-plus-1, l1, sigmoid.");

  m.def(
      "quadratic_hypergradient",
      [](double xi, double theta, double alpha) {
        QuadraticBilevelProblem problem(theta);
        SearchConfig cfg;
        cfg.xi = xi;
        cfg.epsilon_mode = EpsilonMode::Fixed;
        cfg.epsilon = 1e-3;
        AlphaState state({alpha}, NormStrategy::BiasedSoftmax, cfg.g);
        return hypergradient(problem, state, cfg)[0];
      },
      py::arg("xi") = 0.1, py::arg("theta") = 1.0, py::arg("alpha") = 0.0,
      "Hypergradient of the analytic quadratic bilevel problem; evaluates to "
      "0.09 at the defaults.");

  m.def(
      "gen_dataset",
      [](const std::string& path, int64_t n, int64_t classes, double sigma, uint64_t seed) {
        save_dataset(synth_task(n, classes, sigma, seed, 16, 16), path);
      },
      py::arg("path"), py::arg("n") = 256, py::arg("classes") = 4, py::arg("sigma") = 0.3,
      py::arg("seed") = 0);
  m.def(
      "dataset_info",
      [](const std::string& path) {
        const Dataset d = load_dataset(path);
        py::dict info;
        info["n"] = d.size();
        info["classes"] = d.num_classes;
        const Shape s = d.sample_shape();
        info["shape"] = py::make_tuple(s[0], s[1], s[2]);
        return info;
      },
      py::arg("path"));

  m.def("load_schedule", [](const std::string& path) { return schedule_to_dict(load_schedule(path)); },
        py::arg("path"));
  m.def(
      "save_schedule",
      [](const std::string& path, std::vector<std::string> ids,
         std::vector<std::vector<double>> rows, std::vector<std::vector<double>> raw_rows) {
        save_schedule(schedule_from_parts(std::move(ids), std::move(rows), std::move(raw_rows)),
                      path);
      },
      py::arg("path"), py::arg("pathway_ids"), py::arg("rows"), py::arg("raw_rows"));
  m.def(
      "interpolate_schedule",
      [](std::vector<std::string> ids, std::vector<std::vector<double>> rows,
         std::vector<std::vector<double>> raw_rows, size_t length) {
        return schedule_to_dict(interpolate(
            schedule_from_parts(std::move(ids), std::move(rows), std::move(raw_rows)), length));
      },
      py::arg("pathway_ids"), py::arg("rows"), py::arg("raw_rows"), py::arg("length"));

  m.def(
      "toy_search",
      [](int64_t n, double sigma, uint64_t seed, int64_t search_steps, int64_t retrain_steps,
         double gamma, int64_t batch_size, int64_t teacher_epochs) {
        ToyRig rig(n, sigma, seed, teacher_epochs);
        SearchConfig cfg;
        cfg.gamma = gamma;
        cfg.search_steps = search_steps;
        cfg.retrain_steps = retrain_steps;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        const Schedule sched =
            search(cfg, rig.parts, rig.teacher, rig.student, rig.pathways, nullptr, nullptr);
        return schedule_to_dict(sched);
      },
      py::arg("n") = 96, py::arg("sigma") = 0.3, py::arg("seed") = 0,
      py::arg("search_steps") = 4, py::arg("retrain_steps") = 8, py::arg("gamma") = 0.05,
      py::arg("batch_size") = 16, py::arg("teacher_epochs") = 1,
      "Run the schedule search on a freshly built toy rig and return the "
      "schedule as a dict.");

  m.def(
      "toy_retrain",
      [](int64_t n, double sigma, uint64_t seed, int64_t steps, double lr,
         const std::string& baseline, int64_t teacher_epochs) {
        ToyRig rig(n, sigma, seed, teacher_epochs);
        Schedule sched = baseline == "none"
                             ? zero_weight_schedule(rig.pathways.ids(), steps)
                             : equal_weight_schedule(rig.pathways.ids(), steps);
        RetrainConfig cfg;
        cfg.steps = steps;
        cfg.batch_size = 16;
        cfg.lr = lr;
        cfg.seed = seed;
        const RetrainResult res = retrain(sched, rig.parts.train(), rig.parts.val(),
                                          rig.teacher, rig.student, rig.pathways, cfg);
        py::dict out;
        out["final_accuracy"] = res.report.final_accuracy;
        out["final_loss"] = res.report.final_loss;
        out["steps"] = res.report.wall_steps;
        return out;
      },
      py::arg("n") = 96, py::arg("sigma") = 0.3, py::arg("seed") = 0, py::arg("steps") = 8,
      py::arg("lr") = 0.05, py::arg("baseline") = "equal", py::arg("teacher_epochs") = 1,
      "Retrain a fresh toy student under an equal-weight or zero-weight "
      "schedule and return the final metrics.");

  m.def(
      "check_hypergradient",
      [](int64_t n, double sigma, uint64_t seed, int64_t warm_steps, double h) {
        ToyRig rig(n, sigma, seed, 2);
        SearchConfig cfg;
        AlphaState alpha(std::vector<double>(rig.pathways.size(), 1.0), cfg.strategy, cfg.g);
        KDBilevelProblem problem(rig.student, rig.teacher, rig.pathways, LossSpec{});
        BatchStream warm(rig.parts.train(), 32, 3);
        const Batch val_all = rig.parts.val().all();
        for (int64_t w = 0; w < warm_steps; ++w) {
          problem.set_batches(warm.next(), val_all);
          inner_step(problem, alpha, cfg.xi);
        }
        problem.set_batches(rig.parts.train().all(), val_all);
        const auto approx = hypergradient(problem, alpha, cfg);
        const auto oracle = brute_force_hypergradient(problem, alpha, cfg.xi, h);
        const OracleReport rep = compare_hypergradient(approx, oracle, 1e-3, 0.999, 1e-8);
        py::dict out;
        out["cosine"] = rep.cosine;
        out["max_rel_error"] = rep.max_rel_error;
        out["pass"] = rep.pass;
        out["approx"] = approx;
        out["oracle"] = oracle;
        return out;
      },
      py::arg("n") = 96, py::arg("sigma") = 0.3, py::arg("seed") = 0, py::arg("warm_steps") = 4,
      py::arg("h") = 1e-4,
      "Compare the symmetric-probe hypergradient against the direct "
      "perturbation oracle on a toy rig.");

  m.def("config_keys", &RunConfig::known_keys,
        "All recognized run-configuration keys, in file order.");
}
