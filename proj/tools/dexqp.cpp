// dexqp command-line tool: trace playback, baseline benchmark, synthetic traces, streaming server.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dexqp/model.hpp"
#include "dexqp/playback.hpp"
#include "dexqp/protocol.hpp"
#include "dexqp/synthetic.hpp"
#include "dexqp/trace.hpp"
#include "ws_server.hpp"

namespace fs = std::filesystem;
using namespace dexqp;

namespace {

struct ParamFlags
{
  double rate = 100.0;
  double alpha = 1.0;
  double beta = 0.01;
  double gamma = 5.0;
  double threshold = 0.01;
  double activation = 0.011;
  double scale = 1.0;
  std::string cbf = "on";

  void add_to(CLI::App * app)
  {
    app->add_option("--rate", rate, "control rate [Hz]; dt = 1/rate")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--alpha", alpha, "tracking weight")->capture_default_str();
    app->add_option("--beta", beta, "joint-increment damping")->capture_default_str();
    app->add_option("--gamma", gamma, "barrier decay rate [1/s]")->capture_default_str();
    app->add_option("--threshold", threshold, "safety clearance D_safe [m]")->capture_default_str();
    app->add_option("--activation", activation, "CBF activation distance [m]")->capture_default_str();
    app->add_option("--scale", scale, "keypoint scale applied to input frames")->capture_default_str();
    app->add_option("--cbf", cbf, "collision barrier rows")->capture_default_str()->check(CLI::IsMember({"on", "off"}));
  }

  RetargetParams params() const
  {
    RetargetParams p;
    p.alpha = alpha;
    p.beta = beta;
    p.dt = 1.0 / rate;
    p.gamma = gamma;
    p.safety_threshold = threshold;
    p.activation_distance = activation;
    p.keypoint_scale = scale;
    p.cbf_enabled = cbf == "on";
    p.validate();
    for (const auto & w : p.warnings()) { std::cerr << "warning: " << w << '\n'; }
    return p;
  }
};

std::string slurp(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open " + path); }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::shared_ptr<const HandModel> load_model(const std::string & path)
{
  try {
    return std::make_shared<const HandModel>(parse_model(slurp(path)));
  } catch (const ValidationError & e) {
    throw std::runtime_error(path + ": " + e.what());
  } catch (const ParseError & e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::vector<KeypointFrame> load_trace(const std::string & path, const HandModel & model)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open " + path); }
  return read_trace(in, path, &model);
}

void write_file(const fs::path & path, const std::string & text)
{
  std::ofstream out(path);
  if (!out) { throw std::runtime_error("cannot write " + path.string()); }
  out << text;
  if (!out) { throw std::runtime_error("write failed: " + path.string()); }
}

std::string step_log_text(std::span<const StepResult> steps, const HandModel & model)
{
  std::ostringstream os;
  write_step_log(os, steps, model);
  return os.str();
}

int cmd_run(
  const std::string & model_path, const std::string & trace_path, const std::string & out_dir, const std::string & mode,
  const ParamFlags & flags)
{
  const RetargetParams params = flags.params();
  const auto model = load_model(model_path);
  const auto frames = load_trace(trace_path, *model);
  if (frames.empty()) { throw std::runtime_error(trace_path + ": trace has no frames"); }
  fs::create_directories(out_dir);

  std::optional<PlaybackResult> qp, base;
  if (mode == "qp" || mode == "both") {
    qp = play(model, params, frames, SolverPath::Qp);
    write_file(fs::path(out_dir) / "steps_qp.jsonl", step_log_text(qp->steps, *model));
  }
  if (mode == "baseline" || mode == "both") {
    base = play(model, params, frames, SolverPath::Baseline);
    write_file(fs::path(out_dir) / "steps_baseline.jsonl", step_log_text(base->steps, *model));
  }

  nlohmann::json report;
  if (mode == "both") {
    report = playback_report(*qp, cumulative_gain(qp->motion, base->motion));
    report["baseline"] = playback_report(*base);
  } else {
    report = playback_report(qp ? *qp : *base);
  }
  report["mode"] = mode;
  report["params"] = params_json(params);
  report["frames"] = frames.size();
  write_file(fs::path(out_dir) / "report.json", report.dump(2) + "\n");

  const PlaybackResult & main = qp ? *qp : *base;
  std::cout << "frames: " << frames.size() << "  path: " << to_string(main.path)
            << "  mean latency: " << main.latency.mean * 1e3 << " ms"
            << "  min clearance: " << main.safety.d_self << " m"
            << "  safety >= 0.8: " << main.safety.fraction_above_08 * 100.0 << " %\n";
  return 0;
}

void print_row(const std::string & name, const LatencyStats & s)
{
  std::printf(
    "%-10s %10.4f %10.4f %12.4f %12.2f\n", name.c_str(), s.mean * 1e3, s.std * 1e3, s.p99 * 1e3, s.rt_fraction * 100.0);
}

int cmd_bench(const std::string & model_path, const std::string & trace_path, int reps, const ParamFlags & flags)
{
  const RetargetParams params = flags.params();
  const auto model = load_model(model_path);
  const auto frames = load_trace(trace_path, *model);
  if (frames.empty()) { throw std::runtime_error(trace_path + ": trace has no frames"); }

  int mean_ok = 0;
  int std_ok = 0;
  char rt_header[32];
  std::snprintf(rt_header, sizeof(rt_header), "RT@%gHz(%%)", flags.rate);
  const auto results = compare_latency(model, params, frames, static_cast<std::size_t>(reps));
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto & [qp, nl] = results[r];
    std::printf("repetition %zu/%d (%zu frames)\n", r + 1, reps, frames.size());
    std::printf("%-10s %10s %10s %12s %12s\n", "method", "Mean(ms)", "Std(ms)", "99%ile(ms)", rt_header);
    print_row("qp", qp);
    print_row("baseline", nl);
    mean_ok += qp.mean < nl.mean;
    std_ok += qp.std < nl.std;
  }
  std::printf("ordering: qp mean < baseline mean in %d/%d, qp std < baseline std in %d/%d\n", mean_ok, reps, std_ok, reps);
  return 0;
}

int cmd_gen_trace(const std::string & model_path, const std::string & kind, const TraceOptions & opt, const std::string & out)
{
  const auto model = load_model(model_path);
  const auto frames = generate_trace(*model, parse_gesture(kind), opt);
  std::ostringstream os;
  for (const auto & f : frames) { os << frame_to_line(f) << '\n'; }
  if (out.empty() || out == "-") {
    std::cout << os.str();
  } else {
    write_file(out, os.str());
  }
  return 0;
}

struct SessionHandler : ws::Handler
{
  SessionHandler(std::shared_ptr<const HandModel> model, const RetargetParams & params) : session(std::move(model), params) {}
  std::vector<std::string> on_open() override { return {session.hello()}; }
  std::vector<std::string> on_text(const std::string & text) override { return session.handle(text); }
  ProtocolSession session;
};

int cmd_serve(const std::string & model_path, const std::string & host, int port, const ParamFlags & flags)
{
  const RetargetParams params = flags.params();
  const auto model = load_model(model_path);

  // block the stop signals everywhere, then wait for them on the main thread
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  ws::Server server([model, params] { return std::make_unique<SessionHandler>(model, params); });
  const int bound = server.listen(port, host);
  std::cout << "serving on ws://" << host << ":" << bound << std::endl;
  std::thread loop([&] { server.run(); });
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  loop.join();
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Real-time hand retargeting: QP playback, baseline comparison and streaming"};
  app.require_subcommand(1);

  std::string model_path, trace_path, out_dir = "out", mode = "qp", kind = "pinch", gen_out, host = "127.0.0.1";
  int reps = 5;
  int port = 8765;
  ParamFlags flags;
  TraceOptions topt;

  auto * run = app.add_subcommand("run", "replay a trace and write step logs plus a metrics report");
  run->add_option("--model", model_path, "hand model JSON")->required();
  run->add_option("--trace", trace_path, "keypoint trace (JSON lines)")->required();
  run->add_option("--out", out_dir, "output directory")->capture_default_str();
  run->add_option("--mode", mode, "solver path")->capture_default_str()->check(CLI::IsMember({"qp", "baseline", "both"}));
  flags.add_to(run);

  auto * bench = app.add_subcommand("bench", "latency comparison of the QP path and the nonlinear baseline");
  bench->add_option("--model", model_path, "hand model JSON")->required();
  bench->add_option("--trace", trace_path, "keypoint trace (JSON lines)")->required();
  bench->add_option("--reps", reps, "repetitions")->capture_default_str()->check(CLI::PositiveNumber);
  flags.add_to(bench);

  auto * gen = app.add_subcommand("gen-trace", "synthesize a keypoint trace from a scripted joint trajectory");
  gen->add_option("--model", model_path, "hand model JSON")->required();
  gen->add_option("--kind", kind, "pinch, cross, grasp or track")->capture_default_str();
  gen->add_option("--frames", topt.frames, "number of frames")->capture_default_str();
  gen->add_option("--rate", topt.rate, "frame rate [Hz]")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", topt.seed, "random seed")->capture_default_str();
  gen->add_option("--jitter", topt.jitter, "per-joint jitter amplitude [rad]")->capture_default_str();
  gen->add_option("--out", gen_out, "output file (stdout if omitted)");

  auto * serve = app.add_subcommand("serve", "stream retargeting sessions over WebSocket");
  serve->add_option("--model", model_path, "hand model JSON")->required();
  serve->add_option("--host", host, "bind address")->capture_default_str();
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->capture_default_str();
  flags.add_to(serve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) { return cmd_run(model_path, trace_path, out_dir, mode, flags); }
    if (*bench) { return cmd_bench(model_path, trace_path, reps, flags); }
    if (*gen) { return cmd_gen_trace(model_path, kind, topt, gen_out); }
    if (*serve) { return cmd_serve(model_path, host, port, flags); }
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
