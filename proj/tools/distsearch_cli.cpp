// Command-line front end: one binary for the whole workflow — synthesize
// data, pretrain the teacher, search a pathway-weight schedule, retrain a
// student under it, evaluate, export schedules, and cross-check the
// meta-gradient against the direct-perturbation oracle.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/meta_search.hpp"
#include "distsearch/oracle.hpp"
#include "distsearch/retrain.hpp"
#include "distsearch/run_config.hpp"
#include "distsearch/text.hpp"

namespace fs = std::filesystem;
using namespace distsearch;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
};

RunConfig resolve(const CliArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig() : RunConfig::load(args.config_path);
  for (const auto& s : args.sets) cfg.apply_override(s);
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

std::string sub_out(const RunConfig& cfg, const std::string& out_dir,
                    const std::string& value) {
  return RunConfig::substitute_out(value, out_dir);
}

void write_resolved(const RunConfig& cfg, const std::string& out_dir,
                    const std::string& subcommand) {
  fs::create_directories(out_dir);
  cfg.save(out_dir + "/" + subcommand + ".resolved.cfg");
}

std::shared_ptr<Dataset> load_data(const RunConfig& cfg, const std::string& out_dir) {
  const std::string path = sub_out(cfg, out_dir, cfg.data_path);
  if (!fs::exists(path))
    throw FormatError("data.path: " + path + " does not exist (run gen-data first)");
  return std::make_shared<Dataset>(load_dataset(path));
}

Network load_teacher(const RunConfig& cfg, const std::string& out_dir) {
  const std::string path = sub_out(cfg, out_dir, cfg.teacher_path);
  if (!fs::exists(path))
    throw FormatError("teacher.path: " + path + " does not exist (run pretrain first)");
  Network teacher = load_checkpoint(path);
  if (teacher.spec().to_text() != NetworkSpec::parse(cfg.teacher_spec).to_text())
    throw ConfigError("teacher.spec does not match the architecture stored in " + path);
  teacher.set_role("teacher");
  teacher.freeze();
  return teacher;
}

PathwaySet build_pathways(const RunConfig& cfg, const Network& student,
                          const Network& teacher, const Dataset& data) {
  const Shape s = data.sample_shape();
  PathwaySet p = enumerate_pathways(student.spec(), teacher.spec(),
                                    parse_transform_kinds(cfg.pathway_kinds),
                                    Tensor::zeros({1, s[0], s[1], s[2]}), cfg.seed + 5);
  p.set_requires_grad(true);
  return p;
}

// Seed derivation, fixed across subcommands so search/retrain/check all see
// the same nets: split +1, teacher init +2, student init +3, teacher
// pretrain stream +4, pathway init +5.
int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  const Dataset d =
      synth_task(cfg.data_n, cfg.data_classes, cfg.data_sigma, cfg.seed, cfg.data_h, cfg.data_w);
  const std::string path = sub_out(cfg, out_dir, cfg.data_path);
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path).parent_path());
  save_dataset(d, path);
  write_resolved(cfg, out_dir, "gen-data");
  std::cout << "wrote " << path << " (n=" << d.size() << ", classes=" << d.num_classes
            << ", shape=" << cfg.data_h << "x" << cfg.data_w << ")\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& out_dir) {
  auto data = load_data(cfg, out_dir);
  const DatasetSplit parts = split(data, cfg.split_ratio, cfg.seed + 1);
  Network teacher(NetworkSpec::parse(cfg.teacher_spec), cfg.seed + 2, "teacher");
  const PretrainResult res = pretrain(teacher, parts, cfg.teacher_epochs, cfg.teacher_lr,
                                      cfg.seed + 4, cfg.teacher_batch);

  const std::string path = sub_out(cfg, out_dir, cfg.teacher_path);
  save_checkpoint(res.net, path);
  std::ofstream curve(out_dir + "/pretrain_curve.csv", std::ios::binary);
  curve << "step,loss\n";
  for (size_t i = 0; i < res.step_losses.size(); ++i)
    curve << i << "," << fmt_double(res.step_losses[i]) << "\n";
  write_resolved(cfg, out_dir, "pretrain");

  const EvalResult ev = evaluate(res.net, parts.val());
  std::cout << "wrote " << path << "\n"
            << "teacher val accuracy = " << fmt_double(ev.accuracy)
            << " loss = " << fmt_double(ev.loss) << "\n";
  return 0;
}

int cmd_search(const RunConfig& cfg, const std::string& out_dir) {
  auto data = load_data(cfg, out_dir);
  const DatasetSplit parts = split(data, cfg.split_ratio, cfg.seed + 1);
  Network teacher = load_teacher(cfg, out_dir);
  Network student(NetworkSpec::parse(cfg.student_spec), cfg.seed + 3);
  PathwaySet pathways = build_pathways(cfg, student, teacher, *data);

  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/search_log.txt", std::ios::binary);
  SearchTrace trace;
  const std::string sched_path = sub_out(cfg, out_dir, cfg.schedule_path);
  Schedule sched;
  try {
    sched = search(cfg.search_config(), parts, teacher, student, pathways, &log, &trace);
  } catch (const NumericError&) {
    if (trace.partial.length() > 0)
      save_schedule(trace.partial, out_dir + "/schedule.partial.csv");
    throw;
  }
  save_schedule(sched, sched_path);

  std::ofstream tr(out_dir + "/search_trace.csv", std::ios::binary);
  tr << "step,train_loss,val_loss,epsilon,val_grad_norm,active,alpha_max,alpha_min,"
        "teacher_forwards,student_forwards,backward_passes\n";
  for (const auto& s : trace.steps)
    tr << s.step << "," << fmt_double(s.train_value) << "," << fmt_double(s.val_value) << ","
       << fmt_double(s.epsilon) << "," << fmt_double(s.val_grad_norm) << "," << s.active_count
       << "," << fmt_double(s.alpha_max) << "," << fmt_double(s.alpha_min) << ","
       << s.hg_teacher_forwards << "," << s.hg_student_forwards << "," << s.hg_backward_passes
       << "\n";
  write_resolved(cfg, out_dir, "search");
  std::cout << "wrote " << sched_path << " (" << sched.length() << " steps x "
            << sched.width() << " pathways)\n";
  return 0;
}

int cmd_retrain(const RunConfig& cfg, const std::string& out_dir) {
  auto data = load_data(cfg, out_dir);
  const DatasetSplit parts = split(data, cfg.split_ratio, cfg.seed + 1);
  Network teacher = load_teacher(cfg, out_dir);
  Network student(NetworkSpec::parse(cfg.student_spec), cfg.seed + 3);
  PathwaySet pathways = build_pathways(cfg, student, teacher, *data);

  Schedule sched;
  if (cfg.retrain_baseline == "equal") {
    sched = equal_weight_schedule(pathways.ids(), cfg.retrain_steps);
  } else if (cfg.retrain_baseline == "none") {
    sched = zero_weight_schedule(pathways.ids(), cfg.retrain_steps);
  } else {
    sched = load_schedule(sub_out(cfg, out_dir, cfg.schedule_path));
    if (sched.length() > cfg.retrain_steps)
      throw ConfigError("retrain.steps = " + std::to_string(cfg.retrain_steps) +
                        " is shorter than the schedule (" + std::to_string(sched.length()) +
                        " rows)");
    if (sched.length() < cfg.retrain_steps) sched = interpolate(sched, cfg.retrain_steps);
  }

  const RetrainResult res =
      retrain(sched, parts.train(), parts.val(), teacher, student, pathways,
              cfg.retrain_config());
  fs::create_directories(out_dir);
  save_checkpoint(res.student, sub_out(cfg, out_dir, cfg.eval_checkpoint));
  save_retrain_report(res.report, out_dir + "/retrain_report.txt");
  write_resolved(cfg, out_dir, "retrain");
  std::cout << "baseline = " << cfg.retrain_baseline << "\n"
            << "final accuracy = " << fmt_double(res.report.final_accuracy)
            << " loss = " << fmt_double(res.report.final_loss) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& out_dir) {
  auto data = load_data(cfg, out_dir);
  const DatasetSplit parts = split(data, cfg.split_ratio, cfg.seed + 1);
  DatasetView view;
  if (cfg.eval_on == "train") {
    view = parts.train();
  } else if (cfg.eval_on == "val") {
    view = parts.val();
  } else {
    std::vector<int64_t> all(static_cast<size_t>(data->size()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    view = DatasetView(data, std::move(all));
  }
  const Network net = load_checkpoint(sub_out(cfg, out_dir, cfg.eval_checkpoint));
  const EvalResult ev = evaluate(net, view, cfg.eval_batch);

  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/eval.txt", std::ios::binary);
  os << "partition = " << cfg.eval_on << "\n"
     << "n = " << view.size() << "\n"
     << "accuracy = " << fmt_double(ev.accuracy) << "\n"
     << "loss = " << fmt_double(ev.loss) << "\n";
  write_resolved(cfg, out_dir, "eval");
  std::cout << "partition = " << cfg.eval_on << " n = " << view.size()
            << "\naccuracy = " << fmt_double(ev.accuracy) << "\nloss = " << fmt_double(ev.loss)
            << "\n";
  return 0;
}

// id format is t{i}-s{j}-k{k}; extract one field by its prefix letter.
int id_field(const std::string& id, char which) {
  size_t pos = id.find(which);
  int v = 0;
  for (++pos; pos < id.size() && std::isdigit(static_cast<unsigned char>(id[pos])); ++pos)
    v = v * 10 + (id[pos] - '0');
  return v;
}

int cmd_export_schedule(const RunConfig& cfg, const std::string& out_dir) {
  const Schedule sched = load_schedule(sub_out(cfg, out_dir, cfg.schedule_path));
  fs::create_directories(out_dir);

  // Per-pathway summary over the whole schedule.
  std::ofstream sum(out_dir + "/schedule_summary.csv", std::ios::binary);
  sum << "pathway,teacher_tap,student_tap,transform,mean,max,final,active_fraction\n";
  std::string stdout_table = "pathway,mean,max,final,active_fraction\n";
  for (size_t p = 0; p < sched.pathway_ids.size(); ++p) {
    double mean = 0.0, mx = 0.0;
    int64_t active = 0;
    for (size_t t = 0; t < sched.rows.size(); ++t) {
      mean += sched.rows[t][p];
      mx = std::max(mx, sched.rows[t][p]);
      if (sched.raw_rows[t][p] > cfg.search_tau) ++active;
    }
    mean /= static_cast<double>(sched.length());
    const double fin = sched.rows.back()[p];
    const double frac = static_cast<double>(active) / static_cast<double>(sched.length());
    const std::string& id = sched.pathway_ids[p];
    sum << id << "," << id_field(id, 't') << "," << id_field(id, 's') << ","
        << id_field(id, 'k') << "," << fmt_double(mean) << "," << fmt_double(mx) << ","
        << fmt_double(fin) << "," << fmt_double(frac) << "\n";
    stdout_table += id + "," + fmt_double(mean) + "," + fmt_double(mx) + "," +
                    fmt_double(fin) + "," + fmt_double(frac) + "\n";
  }

  // Mean weight trajectory per teacher tap, one column per tap group.
  int max_tap = 0;
  for (const auto& id : sched.pathway_ids) max_tap = std::max(max_tap, id_field(id, 't'));
  std::ofstream grp(out_dir + "/schedule_groups.csv", std::ios::binary);
  grp << "step";
  for (int g = 0; g <= max_tap; ++g) grp << ",t" << g;
  grp << "\n";
  for (size_t t = 0; t < sched.rows.size(); ++t) {
    grp << t;
    for (int g = 0; g <= max_tap; ++g) {
      double mean = 0.0;
      int64_t count = 0;
      for (size_t p = 0; p < sched.pathway_ids.size(); ++p)
        if (id_field(sched.pathway_ids[p], 't') == g) {
          mean += sched.rows[t][p];
          ++count;
        }
      grp << "," << fmt_double(count ? mean / static_cast<double>(count) : 0.0);
    }
    grp << "\n";
  }
  write_resolved(cfg, out_dir, "export-schedule");
  std::cout << stdout_table;
  return 0;
}

int cmd_check_hypergrad(const RunConfig& cfg, const std::string& out_dir) {
  auto data = load_data(cfg, out_dir);
  const DatasetSplit parts = split(data, cfg.split_ratio, cfg.seed + 1);

  Network teacher;
  const std::string teacher_path = sub_out(cfg, out_dir, cfg.teacher_path);
  if (fs::exists(teacher_path)) {
    teacher = load_teacher(cfg, out_dir);
  } else {
    Network fresh(NetworkSpec::parse(cfg.teacher_spec), cfg.seed + 2, "teacher");
    teacher = pretrain(fresh, parts, cfg.teacher_epochs, cfg.teacher_lr, cfg.seed + 4,
                       cfg.teacher_batch)
                  .net;
    teacher.set_role("teacher");
    teacher.freeze();
  }

  Network student(NetworkSpec::parse(cfg.student_spec), cfg.seed + 3);
  PathwaySet pathways = build_pathways(cfg, student, teacher, *data);
  const SearchConfig scfg = cfg.search_config();
  AlphaState alpha(std::vector<double>(pathways.size(), 1.0), scfg.strategy, scfg.g);

  KDBilevelProblem pb(student, teacher, pathways, cfg.loss_spec());
  BatchStream warm_stream(parts.train(), 32, 3);
  const Batch val_all = parts.val().all();
  for (int64_t w = 0; w < cfg.check_warm_steps; ++w) {
    pb.set_batches(warm_stream.next(), val_all);
    inner_step(pb, alpha, scfg.xi);
  }
  const Batch train_m = cfg.check_train_batch > 0
                            ? BatchStream(parts.train(), cfg.check_train_batch, 17).next()
                            : parts.train().all();
  const Batch val_m = cfg.check_val_batch > 0
                          ? BatchStream(parts.val(), cfg.check_val_batch, 19).next()
                          : val_all;
  pb.set_batches(train_m, val_m);

  const auto approx = hypergradient(pb, alpha, scfg);
  const auto oracle = brute_force_hypergradient(pb, alpha, scfg.xi, cfg.check_h);
  const OracleReport rep = compare_hypergradient(approx, oracle, cfg.check_rel_tol,
                                                 cfg.check_cos_tol, cfg.check_floor);

  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/hypergrad_report.txt", std::ios::binary);
  os << rep.summary();
  write_resolved(cfg, out_dir, "check-hypergrad");
  std::cout << rep.summary();
  return rep.pass ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilevel pathway-weight schedule search for feature distillation"};
  app.require_subcommand(1);

  CliArgs args;
  app.add_option("--config", args.config_path, "run configuration file (key = value lines)");
  app.add_option("--out", args.out_dir, "output directory (default: out)");
  app.add_option("--set", args.sets, "override a config key, e.g. --set search.steps=20")
      ->take_all();
  app.add_option("--seed", args.seed, "override the seed key");

  int (*handler)(const RunConfig&, const std::string&) = nullptr;
  auto add = [&](const char* name, const char* desc,
                 int (*fn)(const RunConfig&, const std::string&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->callback([&handler, fn]() { handler = fn; });
    sub->fallthrough();  // global flags may follow the subcommand name
  };
  add("gen-data", "synthesize the classification dataset and write it as DPDS", cmd_gen_data);
  add("pretrain", "train the teacher on the split's training partition", cmd_pretrain);
  add("search", "learn the per-step pathway weight schedule", cmd_search);
  add("retrain", "train a fresh student under a schedule (or a baseline)", cmd_retrain);
  add("eval", "evaluate a checkpoint on a data partition", cmd_eval);
  add("export-schedule", "summarize a schedule per pathway and per teacher tap",
      cmd_export_schedule);
  add("check-hypergrad", "compare the meta-gradient against direct perturbation",
      cmd_check_hypergrad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = resolve(args);
    return handler(cfg, args.out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const SpecError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
