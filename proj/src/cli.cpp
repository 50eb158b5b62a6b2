#include "anyssr/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "anyssr/checkpoint.hpp"
#include "anyssr/harness.hpp"
#include "anyssr/report.hpp"
#include "anyssr/verify.hpp"

namespace anyssr {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string order;
  std::optional<Index> chunk_size;
  bool generalist_route = false;
  std::string out_dir;
};

std::string default_out_dir() {
  if (const char* env = std::getenv("ANYSSR_OUT_DIR"); env && *env) return env;
  return "anyssr_out";
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig config = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.seed) config.reseed(*o.seed);
  if (o.order == "1") {
    config.order = OrderSpec{1, {}};
  } else if (o.order == "2") {
    config.order = OrderSpec{2, {}};
  } else if (o.order == "custom") {
    if (config.order.which != 0) throw UsageError("--order custom needs an explicit order array in the config");
  } else if (!o.order.empty()) {
    throw UsageError("--order must be 1, 2 or custom");
  }
  if (o.chunk_size) config.router.chunk_rows = *o.chunk_size;
  if (o.generalist_route) config.router.generalist_route = true;
  config.validate();
  return config;
}

TaskStream stream_for(const RunConfig& config, const std::string& stream_path) {
  if (stream_path.empty()) return generate_task_stream(config.stream, config.encoder.vocab, config.stream_seed);
  TaskStream stream = load_stream(stream_path);
  if (!(stream.spec == config.stream) || stream.vocab != config.encoder.vocab) {
    throw UsageError("stream file " + stream_path + " was not generated for this configuration");
  }
  return stream;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool with_router_flags) {
  cmd->add_option("--config", o.config_path, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Master seed; overrides every component seed");
  cmd->add_option("--out", o.out_dir, "Output directory (default $ANYSSR_OUT_DIR or ./anyssr_out)");
  if (with_router_flags) {
    cmd->add_option("--order", o.order, "Task order: 1, 2 or custom (array in config)")
        ->check(CLI::IsMember({"1", "2", "custom"}));
    cmd->add_option("--chunk-size", o.chunk_size, "Rows per recursive router step")->check(CLI::PositiveNumber);
    cmd->add_flag("--generalist-route", o.generalist_route, "Add a router class for the no-adapter path");
  }
}

std::string out_dir(const CommonOptions& o) { return o.out_dir.empty() ? default_out_dir() : o.out_dir; }

int cmd_gen_tasks(const CommonOptions& o, std::ostream& out) {
  const RunConfig config = resolve_config(o);
  const TaskStream stream = generate_task_stream(config.stream, config.encoder.vocab, config.stream_seed);
  const fs::path dir = out_dir(o);
  fs::create_directories(dir);
  save_stream(dir / "stream.json", stream);
  out << "wrote " << (dir / "stream.json").string() << ": " << stream.tasks.size() << " tasks, "
      << config.stream.samples_per_task << " samples each, separation " << fixed4(config.stream.separation) << '\n';
  return exit_code::kOk;
}

int cmd_train(const CommonOptions& o, const std::string& stream_path, const std::string& checkpoint_path,
              const std::string& resume_path, bool phase_checkpoints, std::ostream& out) {
  RunConfig config;
  std::optional<ContinualRun> resumed;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (!o.config_path.empty() && !(resolve_config(o) == ck.config)) {
      throw UsageError("--config differs from the configuration stored in the resumed checkpoint");
    }
    config = ck.config;
    resumed.emplace(std::move(ck.run));
  } else {
    config = resolve_config(o);
  }
  const Model model = make_model(config);
  const TaskStream stream = stream_for(config, stream_path);
  StreamSource source(stream);
  const fs::path dir = out_dir(o);
  fs::create_directories(dir);

  auto on_phase = [&](const ContinualRun& run) {
    out << "phase " << run.phases_done - 1 << " (task " << run.phase_tasks[static_cast<std::size_t>(run.phases_done - 1)]
        << "): routing " << fixed4(run.routing.average.back()) << '\n';
    if (phase_checkpoints) {
      std::ostringstream name;
      name << "phase_" << std::setw(2) << std::setfill('0') << run.phases_done - 1 << ".ckpt";
      save_checkpoint(dir / name.str(), config, run);
    }
  };
  ContinualRun run = resumed ? std::move(*resumed) : begin_continual(model, source, config);
  continue_continual(run, model, source, config, on_phase);

  const fs::path ck_path = checkpoint_path.empty() ? dir / "checkpoint.ckpt" : fs::path(checkpoint_path);
  save_checkpoint(ck_path, config, run);
  write_text_atomic(dir / "config.json", config_to_json(config) + "\n");
  const RunReport report = make_report(run);
  write_report(report, dir);
  out << format_table(report);
  out << "checkpoint: " << ck_path.string() << '\n';
  return exit_code::kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint_path, const std::string& stream_path,
             std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const Model model = make_model(ck.config);
  const TaskStream stream = stream_for(ck.config, stream_path);
  const RouterSnapshot router = ck.run.snapshot();
  std::ostringstream csv;
  csv << "phase,task_id,exact_match,routing_accuracy\n";
  out << std::setw(8) << "phase" << std::setw(8) << "task" << std::setw(14) << "exact_match" << std::setw(12)
      << "routing" << '\n';
  for (Index p = 0; p < ck.run.phases_done; ++p) {
    const TaskId task = ck.run.phase_tasks[static_cast<std::size_t>(p)];
    const auto& eval = stream.tasks.at(static_cast<std::size_t>(task)).eval;
    const TaskEvaluation r = evaluate_task(model, router, ck.run.bank, task, eval, inference_options(ck.config, eval));
    out << std::setw(8) << p << std::setw(8) << task << std::setw(14) << fixed4(r.exact_match) << std::setw(12)
        << fixed4(r.routing_accuracy) << '\n';
    csv << p << ',' << task << ',' << fixed4(r.exact_match) << ',' << fixed4(r.routing_accuracy) << '\n';
  }
  const fs::path dir = out_dir(o);
  fs::create_directories(dir);
  write_text_atomic(dir / "eval.csv", csv.str());
  return exit_code::kOk;
}

int cmd_report(const CommonOptions& o, const std::string& checkpoint_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const RunReport report = make_report(ck.run);
  write_report(report, out_dir(o));
  out << format_table(report);
  return exit_code::kOk;
}

int cmd_verify(std::uint64_t seed, Index instances, std::ostream& out, std::ostream& err) {
  const EquivalenceReport r = run_equivalence_suite(seed, instances);
  out << std::scientific << std::setprecision(3);
  out << "instances:                      " << r.instances << '\n';
  out << "max |joint - recursive|:        " << r.joint_vs_recursive << '\n';
  out << "max |direct - recursive|:       " << r.direct_vs_recursive << '\n';
  out << "max |chunked - default chunk|:  " << r.chunking << '\n';
  out << "max |R - R^T|:                  " << r.symmetry << '\n';
  out << "R positive definite throughout: " << (r.positive_definite ? "yes" : "no") << '\n';
  out << std::defaultfloat;
  if (!r.passes(1e-9)) {
    err << "verification FAILED (tolerance 1e-9)\n";
    return exit_code::kVerification;
  }
  out << "verification passed (tolerance 1e-9)\n";
  return exit_code::kOk;
}

int cmd_sweep(const CommonOptions& o, const std::vector<Index>& splits, const std::vector<Index>& dims,
              std::ostream& out) {
  const RunConfig config = resolve_config(o);
  const TaskStream stream = generate_task_stream(config.stream, config.encoder.vocab, config.stream_seed);
  const SweepResult sweep = run_sweep(stream, config, splits, dims);
  const fs::path dir = out_dir(o);
  fs::create_directories(dir);
  write_text_atomic(dir / "sweep.csv", sweep_csv(sweep));
  out << format_sweep(sweep);
  return exit_code::kOk;
}

int cmd_ablate(const CommonOptions& o, std::ostream& out) {
  const RunConfig config = resolve_config(o);
  const Model model = make_model(config);
  const TaskStream stream = generate_task_stream(config.stream, config.encoder.vocab, config.stream_seed);
  StreamSource source(stream);
  const ContinualRun run = run_continual(model, source, config);
  const RoutingAccuracyTrace bp = run_bp_router_baseline(model, source, config);
  const AccuracyMatrix single = run_single_adapter_baseline(model, source, config);

  RunReport single_report{run.phase_tasks, single, {}, std::nullopt, std::nullopt};
  single_report.op = compute_op(single);
  if (single.size() >= 2) single_report.bwt = compute_bwt(single);

  out << "Routing accuracy per phase (analytic vs gradient-trained router)\n";
  std::ostringstream csv;
  csv << "phase,analytic,gradient\n";
  for (std::size_t p = 0; p < bp.average.size(); ++p) {
    out << "  phase " << p << ": " << fixed4(run.routing.average[p]) << "  " << fixed4(bp.average[p]) << '\n';
    csv << p << ',' << fixed4(run.routing.average[p]) << ',' << fixed4(bp.average[p]) << '\n';
  }
  const RunReport main_report = make_report(run);
  out << "Any-SSR:        OP " << fixed4(*main_report.op)
      << "  BWT " << (main_report.bwt ? fixed4(*main_report.bwt) : std::string("n/a")) << '\n';
  out << "Shared adapter: OP " << fixed4(*single_report.op)
      << "  BWT " << (single_report.bwt ? fixed4(*single_report.bwt) : std::string("n/a")) << '\n';
  const fs::path dir = out_dir(o);
  fs::create_directories(dir);
  write_text_atomic(dir / "routing_ablation.csv", csv.str());
  write_text_atomic(dir / "single_adapter_matrix.csv", accuracy_csv(single_report));
  return exit_code::kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Analytic subspace routing: continual learning with per-task adapters and a recursive router",
               "anyssr"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, report_o, sweep_o, ablate_o;
  auto* gen = app.add_subcommand("gen-tasks", "Generate the synthetic task stream");
  add_common(gen, gen_o, false);

  std::string train_stream, train_checkpoint, train_resume;
  bool phase_checkpoints = false;
  auto* train = app.add_subcommand("train", "Run continual training over the task stream");
  add_common(train, train_o, true);
  train->add_option("--stream", train_stream, "Stream file from gen-tasks (default: regenerate)");
  train->add_option("--checkpoint", train_checkpoint, "Final checkpoint path (default OUT/checkpoint.ckpt)");
  train->add_option("--resume", train_resume, "Continue from a checkpoint");
  train->add_flag("--phase-checkpoints", phase_checkpoints, "Write OUT/phase_NN.ckpt after every phase");

  std::string eval_checkpoint, eval_stream;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the eval splits");
  add_common(eval, eval_o, false);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--stream", eval_stream, "Stream file (default: regenerate from the checkpoint config)");

  std::string report_checkpoint;
  auto* report = app.add_subcommand("report", "Emit accuracy matrix, OP/BWT and routing traces");
  add_common(report, report_o, false);
  report->add_option("--checkpoint", report_checkpoint, "Checkpoint to report on")->required();

  std::uint64_t verify_seed = 2024;
  Index verify_instances = 100;
  auto* verify = app.add_subcommand("verify", "Check the router identities on random instances");
  verify->add_option("--seed", verify_seed, "Instance generator seed");
  verify->add_option("--instances", verify_instances, "Number of random instances")->check(CLI::PositiveNumber);

  std::vector<Index> sweep_splits{1, 2, 3};
  std::vector<Index> sweep_dims{256, 512, 768};
  auto* sweep = app.add_subcommand("sweep", "Grid over split layer and expansion size, reporting OP(BWT)");
  add_common(sweep, sweep_o, true);
  sweep->add_option("--splits", sweep_splits, "Split layers")->delimiter(',');
  sweep->add_option("--dims", sweep_dims, "Expansion sizes")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "Compare against the shared-adapter and gradient-router baselines");
  add_common(ablate, ablate_o, true);

  std::vector<std::string> argv_store{"anyssr"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return exit_code::kUsage;
  }

  try {
    if (*gen) return cmd_gen_tasks(gen_o, out);
    if (*train) return cmd_train(train_o, train_stream, train_checkpoint, train_resume, phase_checkpoints, out);
    if (*eval) return cmd_eval(eval_o, eval_checkpoint, eval_stream, out);
    if (*report) return cmd_report(report_o, report_checkpoint, out);
    if (*verify) return cmd_verify(verify_seed, verify_instances, out, err);
    if (*sweep) return cmd_sweep(sweep_o, sweep_splits, sweep_dims, out);
    if (*ablate) return cmd_ablate(ablate_o, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kIo;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kIo;
  }
  return exit_code::kUsage;
}

}  // namespace anyssr
