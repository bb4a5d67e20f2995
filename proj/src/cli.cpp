#include "relux/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relux/errors.hpp"
#include "relux/eval.hpp"
#include "relux/extract.hpp"
#include "relux/hardness.hpp"
#include "relux/hybrid.hpp"
#include "relux/model_io.hpp"
#include "relux/oracle.hpp"
#include "relux/train.hpp"
#include "relux/wire.hpp"

namespace relux {
namespace {

using json = nlohmann::json;  // std::map-backed objects: keys always come out sorted

json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json to_json(const LedgerSnapshot& s) {
  json j = json::object();
  for (Phase p : kAllPhases) j[std::string(to_string(p))] = s[p];
  j["total"] = s.total();
  return j;
}

json to_json(const BitHistogram& h) {
  json a = json::array();
  for (auto c : h) a.push_back(c);
  return a;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ExtractionError*>(&e)) return "ExtractionError";
  if (dynamic_cast<const BudgetExhausted*>(&e)) return "BudgetExhausted";
  if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "InvalidArgument";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const OracleError*>(&e)) return "OracleError";
  if (dynamic_cast<const NumericalError*>(&e)) return "NumericalError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "RuntimeError";
}

void write_report(const json& report, const std::string& path, std::ostream& out) {
  if (path.empty()) return;
  if (path == "-") {
    out << report.dump(2) << '\n';
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidArgument("cannot open report file " + path);
  f << report.dump(2) << '\n';
  if (!f) throw InvalidArgument("failed writing report file " + path);
}

bool is_oracle_spec(const std::string& s) { return s.rfind("local:", 0) == 0 || s.rfind("tcp:", 0) == 0; }

/// "tcp:..." or "local:..." opens that oracle; a bare path is a local model.
OracleHandle open_target(const std::string& spec, std::optional<std::size_t> d) {
  if (is_oracle_spec(spec)) return open_oracle(spec, d);
  OracleHandle o = OracleHandle::local(load_model(spec));
  if (d) o.set_input_dim(*d);
  return o;
}

TwoLayerNet load_white_box(const std::string& spec) {
  if (spec.rfind("tcp:", 0) == 0) throw InvalidArgument("this evaluation needs the reference weights, not a remote oracle");
  return load_model(spec.rfind("local:", 0) == 0 ? spec.substr(6) : spec);
}

/// Serves repeated inputs from memory so one pass of queries feeds several metrics.
LogitFn memoized(LogitFn f) {
  auto cache = std::make_shared<std::map<std::vector<double>, Vector>>();
  return [f = std::move(f), cache](const Vector& x) {
    std::vector<double> key(x.data(), x.data() + x.size());
    auto it = cache->find(key);
    if (it == cache->end()) it = cache->emplace(std::move(key), f(x)).first;
    return it->second;
  };
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::vector<std::int64_t> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<std::int64_t> v;
  for (const auto& tok : split(s, ',')) {
    std::size_t used = 0;
    std::int64_t value = 0;
    try {
      value = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (tok.empty() || used != tok.size()) throw InvalidArgument(what + ": not an integer: '" + tok + "'");
    v.push_back(value);
  }
  if (v.empty()) throw InvalidArgument(what + " is empty");
  return v;
}

/// Either d entries (`*` leaves a coordinate free) or k cell indices for
/// coordinates 0..k-1.
std::vector<std::optional<std::size_t>> parse_cells(const std::string& text, std::size_t d, std::size_t k) {
  const auto toks = split(text, ',');
  if (toks.size() != d && toks.size() != k)
    throw InvalidArgument("--cell needs " + std::to_string(k) + " or " + std::to_string(d) + " entries, got " +
                          std::to_string(toks.size()));
  std::vector<std::optional<std::size_t>> cells(d);
  std::size_t active = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] == "*") continue;
    const auto v = parse_int_list(toks[i], "--cell");
    if (v[0] < 0) throw InvalidArgument("cell indices must be nonnegative");
    cells[i] = static_cast<std::size_t>(v[0]);
    ++active;
  }
  if (active != k)
    throw InvalidArgument("--cell constrains " + std::to_string(active) + " coordinates but --k is " + std::to_string(k));
  return cells;
}

InputBox box_from(std::size_t d, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("--box-lo must be below --box-hi");
  return InputBox::uniform(d, lo, hi);
}

std::string vector_text(const Vector& v) {
  std::ostringstream s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s << (i ? " " : "") << v[i];
  return s.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::size_t d = 0, h = 0, k = 0, n = 2000, epochs = 20, batch = 32;
  std::string task, optimizer = "sgd", out, report;
  double lr = 0.1, noise = 0.05, spread = 1.0, temperature = 1.0;
  std::uint64_t init_seed = 0, shuffle_seed = 0, seed = 0;
};

int run_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& report_out) {
  TrainConfig cfg;
  cfg.d = a.d;
  cfg.h = a.h;
  cfg.k = a.k;
  cfg.optimizer = a.optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  cfg.learning_rate = a.lr;
  cfg.batch = a.batch;
  cfg.epochs = a.epochs;
  cfg.init_seed = a.init_seed;
  cfg.shuffle_seed = a.shuffle_seed;
  cfg.temperature = a.temperature;
  cfg.validate();

  LabeledDataset data;
  json seeds = {{"init_seed", a.init_seed}, {"shuffle_seed", a.shuffle_seed}};
  if (a.task.rfind("idx:", 0) == 0) {
    const auto files = split(a.task.substr(4), ',');
    if (files.size() != 2) throw InvalidArgument("--task idx:<images>,<labels>");
    data = idx_dataset(files[0], files[1], a.k);
    if (!data.empty() && static_cast<std::size_t>(data.inputs.front().size()) != a.d)
      throw DimensionError("IDX image", a.d, static_cast<std::size_t>(data.inputs.front().size()));
  } else {
    if (sub.count("--seed") == 0) throw CLI::RequiredError("--seed (data generation for synthetic tasks)");
    SyntheticOptions so;
    so.noise = a.noise;
    so.spread = a.spread;
    data = gen_synthetic(a.d, a.k, a.n, a.seed,
                         a.task == "teacher" ? SyntheticTask::random_teacher : SyntheticTask::gaussian_clusters, so);
    seeds["seed"] = a.seed;
  }
  const TrainResult r = train_victim(cfg, data);
  save_model(r.net, a.out);

  json report = {
      {"command", "train-victim"},
      {"config",
       {{"d", a.d}, {"h", a.h}, {"k", a.k}, {"task", a.task}, {"n", data.size()}, {"epochs", a.epochs},
        {"lr", a.lr}, {"batch", a.batch}, {"optimizer", a.optimizer}, {"noise", a.noise}, {"spread", a.spread},
        {"temperature", a.temperature}}},
      {"seeds", seeds},
      {"metrics", {{"final_loss", r.final_loss}, {"final_accuracy", r.final_accuracy}, {"steps", r.steps}}},
      {"artifacts", {{"model", a.out}}},
  };
  out << "trained " << a.d << "-" << a.h << "-" << a.k << " net: loss " << r.final_loss << ", accuracy "
      << r.final_accuracy << " -> " << a.out << '\n';
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct ServeArgs {
  std::string model, listen, port_file;
  double duration = 0.0;
};

int run_serve(const ServeArgs& a, std::ostream& out) {
  TwoLayerNet net = load_model(a.model);
  const Endpoint ep = Endpoint::parse(a.listen);

  sigset_t stop_signals, previous;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  // Blocked before the server starts so its threads inherit the mask and
  // the signal is picked up here by sigwait.
  pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
  auto server = serve(std::move(net), ep);
  out << "listening tcp:" << server->endpoint().str() << std::endl;
  if (!a.port_file.empty()) {
    std::ofstream f(a.port_file, std::ios::trunc);
    f << server->endpoint().port << '\n';
  }
  if (a.duration > 0.0) {
    timespec ts{};
    ts.tv_sec = static_cast<time_t>(a.duration);
    ts.tv_nsec = static_cast<long>((a.duration - static_cast<double>(ts.tv_sec)) * 1e9);
    while (sigtimedwait(&stop_signals, nullptr, &ts) < 0 && errno == EINTR) {
    }
  } else {
    int sig = 0;
    sigwait(&stop_signals, &sig);
  }
  server->stop();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  out << "served " << server->requests_served() << " requests" << std::endl;
  return kExitOk;
}

struct ExtractArgs {
  std::string oracle, out, report;
  std::size_t d = 0, h = 0;
  std::uint64_t seed = 0, budget = 0;
};

int run_extract(const ExtractArgs& a, std::ostream& out, std::ostream& report_out) {
  OracleHandle oracle = open_target(a.oracle, a.d);
  ExtractConfig cfg;
  cfg.seed = a.seed;
  cfg.budget = a.budget;
  const PhaseCeilings ceil = default_ceilings(a.d, a.h);
  const ExtractionResult r = extract(oracle, a.d, a.h, cfg);
  save_model(r.net, a.out);

  json neurons = json::array();
  for (const auto& n : r.neurons)
    neurons.push_back({{"pivot", n.pivot},
                       {"confidence", n.confidence},
                       {"low_confidence", n.low_confidence},
                       {"global_sign", n.global_sign},
                       {"witness_residual", n.witness_residual},
                       {"line", n.line_id}});
  json report = {
      {"command", "extract"},
      {"config", {{"oracle", a.oracle}, {"d", a.d}, {"h", a.h}, {"budget", a.budget ? a.budget : ceil.total}}},
      {"seeds", {{"seed", a.seed}}},
      {"ledger", to_json(r.ledger)},
      {"ceilings",
       {{"search", ceil.search},
        {"weight_recovery", ceil.weight_recovery},
        {"global_sign", ceil.global_sign},
        {"last_layer", ceil.last_layer},
        {"total", ceil.total}}},
      {"metrics",
       {{"h_expected", r.h_expected},
        {"distinct_found", r.distinct_found},
        {"shortfall", r.shortfall},
        {"lines", r.lines},
        {"duplicate_witnesses", r.duplicate_witnesses},
        {"dead_witnesses", r.dead_witnesses},
        {"remeasured", r.remeasured},
        {"witness_swaps", r.witness_swaps},
        {"global_sign_retries", r.global_sign_retries},
        {"last_layer_residual", r.last_layer_residual},
        {"no_kink", r.no_kink}}},
      {"neurons", neurons},
      {"artifacts", {{"model", a.out}}},
  };
  out << "extracted " << r.distinct_found << "/" << a.h << " neurons with " << r.ledger.total() << " queries -> "
      << a.out << '\n';
  if (r.shortfall) out << "warning: search saw at most " << (a.h - r.shortfall) << " kinks on one line\n";
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct RefineArgs {
  std::string model, oracle, out, report;
  std::size_t n = 4096, iters = 3000;
  double lr = 0.0, box_lo = 0.0, box_hi = 1.0;
  bool scalar_bias = false;
  std::uint64_t seed = 0;
};

int run_refine(const RefineArgs& a, std::ostream& out, std::ostream& report_out) {
  const TwoLayerNet start = load_model(a.model);
  OracleHandle oracle = open_target(a.oracle, start.d());
  RefinementConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.iterations = a.iters;
  cfg.n = a.n;
  cfg.box = box_from(start.d(), a.box_lo, a.box_hi);
  cfg.scalar_bias = a.scalar_bias;
  cfg.seed = a.seed;
  const RefineResult r = refine(start, oracle, cfg);
  save_model(r.net, a.out);
  json report = {
      {"command", "refine"},
      {"config",
       {{"model", a.model},
        {"oracle", a.oracle},
        {"n", a.n},
        {"iters", a.iters},
        {"lr", a.lr},
        {"scalar_bias", a.scalar_bias},
        {"box", {a.box_lo, a.box_hi}}}},
      {"seeds", {{"seed", a.seed}}},
      {"ledger", to_json(r.ledger)},
      {"metrics",
       {{"initial_objective", r.initial_objective},
        {"final_objective", r.final_objective},
        {"iterations", r.iterations},
        {"restarts", r.restarts},
        {"converged", r.converged}}},
      {"artifacts", {{"model", a.out}}},
  };
  out << "refined objective " << r.initial_objective << " -> " << r.final_objective << " in " << r.iterations
      << " steps -> " << a.out << '\n';
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct RectArgs {
  std::size_t d = 0, k = 0, p = 0;
  std::string cell, out, report;
  double margin = kRectangleMargin;
};

int run_rectangle(const RectArgs& a, std::ostream& out, std::ostream& report_out) {
  const RectangleSpec spec = rectangle_from_cells(a.d, a.p, parse_cells(a.cell, a.d, a.k));
  const RectangleNet net = build_rectangle_net(spec, a.margin);
  save_model(net.inner(), a.out);
  json metrics = {{"hidden", net.inner().h()}, {"active", spec.active()}, {"margin", a.margin}};
  // Exhaustive count when the midpoint grid is small enough to enumerate.
  double grid = 1.0;
  for (std::size_t i = 0; i < a.d; ++i) grid *= static_cast<double>(a.p);
  if (grid <= static_cast<double>(std::uint64_t{1} << 24)) {
    const Fraction f = nonzero_fraction([&net](const Vector& x) { return net(x); }, a.d, a.p).reduced();
    metrics["nonzero_fraction"] = {{"numerator", f.numerator}, {"denominator", f.denominator}, {"value", f.value()}};
    out << "rectangle net, nonzero on " << f.numerator << "/" << f.denominator << " of the grid -> " << a.out << '\n';
  } else {
    out << "rectangle net -> " << a.out << '\n';
  }
  json report = {
      {"command", "gen-hard rectangle"},
      {"config", {{"d", a.d}, {"k", a.k}, {"p", a.p}, {"cell", a.cell}}},
      {"seeds", json::object()},
      {"metrics", metrics},
      {"box", {{"lo", to_json(spec.a)}, {"hi", to_json(spec.b)}}},
      {"artifacts", {{"model", a.out}}},
  };
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct SubsetArgs {
  std::string set, out, report;
  std::int64_t target = 0, p = 1;
};

int run_subsetsum(const SubsetArgs& a, std::ostream& out, std::ostream& report_out) {
  const auto v = parse_int_list(a.set, "--set");
  const TwoLayerNet net = build_subsetsum_net(v, a.target, a.p);
  save_model(net, a.out);
  json report = {
      {"command", "gen-hard subsetsum"},
      {"config", {{"set", v}, {"target", a.target}, {"p", a.p}}},
      {"seeds", json::object()},
      {"metrics", {{"d", net.d()}, {"hidden", net.h()}}},
      {"artifacts", {{"model", a.out}}},
  };
  out << "subset-sum net over " << v.size() << " weights -> " << a.out << '\n';
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct EquivArgs {
  std::string a, b, mode = "bruteforce", report;
  std::size_t d = 0;
  double tol = 1e-9;
};

int run_equiv(const EquivArgs& a, std::ostream& out, std::ostream& report_out) {
  const TwoLayerNet na = load_model(a.a);
  const TwoLayerNet nb = load_model(a.b);
  if (na.d() != a.d) throw DimensionError("first model input", a.d, na.d());
  if (nb.d() != a.d) throw DimensionError("second model input", a.d, nb.d());
  const EquivalenceResult r = brute_force_equiv(na, nb, a.tol);
  json metrics = {{"equivalent", r.equivalent}, {"checked", r.checked}};
  if (r.witness) {
    metrics["witness"] = to_json(*r.witness);
    out << "Witness: " << vector_text(*r.witness) << '\n';
  } else {
    out << "Equivalent\n";
  }
  json report = {
      {"command", "verify-equiv"},
      {"config", {{"a", a.a}, {"b", a.b}, {"mode", a.mode}, {"d", a.d}, {"tol", a.tol}}},
      {"seeds", json::object()},
      {"metrics", metrics},
      {"artifacts", json::object()},
  };
  write_report(report, a.report, report_out);
  return kExitOk;
}

struct EvalArgs {
  std::string mode, a, b, report;
  std::size_t n = 10000, iters = 20;
  double eps = 0.1, box_lo = 0.0, box_hi = 1.0;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& report_out) {
  const TwoLayerNet na = load_model(a.a);
  OracleHandle target = open_target(a.b, na.d());
  const InputBox box = box_from(na.d(), a.box_lo, a.box_hi);
  const std::vector<Vector> points = sample_box(box, a.n, a.seed);
  json metrics = json::object();
  json config = {{"a", a.a}, {"b", a.b}, {"n", a.n}, {"box", {a.box_lo, a.box_hi}}};

  if (a.mode == "fidelity") {
    const LogitFn fb = memoized(logits_of(target));
    const double fid = fidelity(logits_of(na), fb, points);
    const LogitGapReport gap = logit_gap(fb, logits_of(na), points);
    metrics = {{"fidelity", fid},
               {"max_abs_logit_gap", gap.max_abs_gap},
               {"max_rel_logit_gap", gap.max_rel_gap},
               {"mean_gap_bits", gap.mean_bits},
               {"min_gap_bits", gap.min_bits},
               {"gap_histogram", to_json(gap.histogram)}};
    out << "fidelity " << fid << " over " << a.n << " points, max relative logit gap " << gap.max_rel_gap << '\n';
  } else if (a.mode == "precision") {
    const TwoLayerNet victim = load_white_box(a.b);
    const PrecisionReport pr = align_and_precision(victim, na);
    const LogitGapReport gap = logit_gap(logits_of(victim), logits_of(na), points);
    metrics = {{"mean_bits", pr.mean_bits},
               {"min_bits", pr.min_bits},
               {"mean_bias_bits", pr.mean_bias_bits},
               {"entries", pr.entry_bits.size()},
               {"unmatched", pr.alignment.unmatched},
               {"weight_histogram", to_json(pr.histogram)},
               {"max_rel_logit_gap", gap.max_rel_gap},
               {"mean_gap_bits", gap.mean_bits},
               {"gap_histogram", to_json(gap.histogram)}};
    out << "mean weight precision " << pr.mean_bits << " bits (min " << pr.min_bits << "), " << pr.alignment.unmatched
        << " unmatched neurons\n";
  } else {
    PgdConfig pgd;
    pgd.epsilon = a.eps;
    pgd.iters = a.iters;
    config["eps"] = a.eps;
    config["iters"] = a.iters;
    const TransferReport tr = transfer_rate(na, logits_of(target), points, pgd, box);
    metrics = {{"attempted", tr.attempted},
               {"source_successes", tr.source_successes},
               {"transferred", tr.transferred},
               {"rate", tr.rate}};
    out << "transfer rate " << tr.rate << " (" << tr.transferred << "/" << tr.source_successes << ")\n";
  }
  json report = {
      {"command", "eval " + a.mode},
      {"config", config},
      {"seeds", {{"seed", a.seed}}},
      {"ledger", to_json(target.ledger().snapshot())},
      {"metrics", metrics},
      {"artifacts", json::object()},
  };
  write_report(report, a.report, report_out);
  return kExitOk;
}

/// Adds the elapsed wall time to a report file that was just written.
void stamp_timing(const std::string& path, double seconds) {
  if (path.empty() || path == "-") return;
  std::ifstream in(path);
  json report = json::parse(in, nullptr, false);
  if (report.is_discarded()) return;
  report["timings"] = {{"wall_seconds", seconds}};
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << report.dump(2) << '\n';
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Black-box extraction and analysis of two-layer ReLU networks", "relux"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  auto help_only = [](CLI::App* s) { s->set_help_flag("--help", "Print this help message and exit"); };

  TrainArgs ta;
  auto* train = app.add_subcommand("train-victim", "Train a victim network on synthetic or IDX data");
  help_only(train);
  train->add_option("--d", ta.d, "input dimension")->required();
  train->add_option("--h", ta.h, "hidden width")->required();
  train->add_option("--k", ta.k, "number of classes")->required();
  train->add_option("--task", ta.task, "gaussian | teacher | idx:<images>,<labels>")
      ->required()
      ->check([](const std::string& s) {
        return (s == "gaussian" || s == "teacher" || s.rfind("idx:", 0) == 0) ? std::string{}
                                                                                 : "unknown task " + s;
      });
  train->add_option("--n", ta.n, "synthetic sample count")->capture_default_str();
  train->add_option("--epochs", ta.epochs)->capture_default_str();
  train->add_option("--lr", ta.lr)->capture_default_str();
  train->add_option("--batch", ta.batch)->capture_default_str();
  train->add_option("--optimizer", ta.optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
  train->add_option("--noise", ta.noise, "cluster spread of points")->capture_default_str();
  train->add_option("--spread", ta.spread, "spread of cluster means")->capture_default_str();
  train->add_option("--temperature", ta.temperature)->capture_default_str();
  train->add_option("--init-seed", ta.init_seed)->required();
  train->add_option("--shuffle-seed", ta.shuffle_seed)->required();
  train->add_option("--seed", ta.seed, "data seed (synthetic tasks)");
  train->add_option("--out", ta.out, "model file")->required();
  train->add_option("--report", ta.report, "JSON report path, '-' for stdout");

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve-oracle", "Serve a model's logits over TCP");
  help_only(serve_cmd);
  serve_cmd->add_option("--model", sa.model)->required();
  serve_cmd->add_option("--listen", sa.listen, "host:port (port 0 picks one)")->required();
  serve_cmd->add_option("--duration", sa.duration, "stop after this many seconds (0 waits for a signal)");
  serve_cmd->add_option("--port-file", sa.port_file, "write the bound port here");

  ExtractArgs ea;
  auto* extract_cmd = app.add_subcommand("extract", "Extract a network from its logit oracle");
  help_only(extract_cmd);
  extract_cmd->add_option("--oracle", ea.oracle, "local:<model-file> | tcp:<host:port>")->required();
  extract_cmd->add_option("--d", ea.d)->required();
  extract_cmd->add_option("--h", ea.h)->required();
  extract_cmd->add_option("--seed", ea.seed)->required();
  extract_cmd->add_option("--budget", ea.budget, "total queries, 0 for 50*d*h")->capture_default_str();
  extract_cmd->add_option("--out", ea.out)->required();
  extract_cmd->add_option("--report", ea.report);

  RefineArgs ra;
  auto* refine_cmd = app.add_subcommand("refine", "Learning-based refinement of an extracted model");
  help_only(refine_cmd);
  refine_cmd->add_option("--model", ra.model)->required();
  refine_cmd->add_option("--oracle", ra.oracle)->required();
  refine_cmd->add_option("--n", ra.n)->capture_default_str();
  refine_cmd->add_option("--iters", ra.iters)->capture_default_str();
  refine_cmd->add_option("--lr", ra.lr, "0 picks a step from the curvature")->capture_default_str();
  refine_cmd->add_option("--seed", ra.seed)->required();
  refine_cmd->add_flag("--scalar-bias", ra.scalar_bias, "one shared bias shift");
  refine_cmd->add_option("--box-lo", ra.box_lo)->capture_default_str();
  refine_cmd->add_option("--box-hi", ra.box_hi)->capture_default_str();
  refine_cmd->add_option("--out", ra.out)->required();
  refine_cmd->add_option("--report", ra.report);

  auto* hard = app.add_subcommand("gen-hard", "Build hard-instance networks");
  help_only(hard);
  hard->require_subcommand(1);
  RectArgs rect;
  auto* rect_cmd = hard->add_subcommand("rectangle", "Box indicator net");
  help_only(rect_cmd);
  rect_cmd->add_option("--d", rect.d)->required();
  rect_cmd->add_option("--k", rect.k, "constrained coordinates")->required();
  rect_cmd->add_option("--p", rect.p, "grid precision")->required();
  rect_cmd->add_option("--cell", rect.cell, "cell per coordinate, e.g. 1,3 or 1,*,3,*")->required();
  rect_cmd->add_option("--margin", rect.margin)->capture_default_str();
  rect_cmd->add_option("--out", rect.out)->required();
  rect_cmd->add_option("--report", rect.report);
  SubsetArgs ss;
  auto* ss_cmd = hard->add_subcommand("subsetsum", "Subset-sum window net");
  help_only(ss_cmd);
  ss_cmd->add_option("--set", ss.set, "v1,v2,...")->required();
  ss_cmd->add_option("--target", ss.target)->required();
  ss_cmd->add_option("--p", ss.p)->required();
  ss_cmd->add_option("--out", ss.out)->required();
  ss_cmd->add_option("--report", ss.report);

  EquivArgs qa;
  auto* equiv = app.add_subcommand("verify-equiv", "Check two models for equality on {0,1}^d");
  help_only(equiv);
  equiv->add_option("a", qa.a)->required();
  equiv->add_option("b", qa.b)->required();
  equiv->add_option("--mode", qa.mode)->check(CLI::IsMember({"bruteforce"}))->capture_default_str();
  equiv->add_option("--d", qa.d)->required();
  equiv->add_option("--tol", qa.tol)->capture_default_str();
  equiv->add_option("--report", qa.report);

  EvalArgs va;
  auto* eval_cmd = app.add_subcommand("eval", "Fidelity, precision or transferability of a model");
  help_only(eval_cmd);
  eval_cmd->add_option("mode", va.mode)->required()->check(CLI::IsMember({"fidelity", "precision", "transfer"}));
  eval_cmd->add_option("--a", va.a, "candidate model")->required();
  eval_cmd->add_option("--b", va.b, "reference model or oracle spec")->required();
  eval_cmd->add_option("--n", va.n)->capture_default_str();
  eval_cmd->add_option("--seed", va.seed)->required();
  eval_cmd->add_option("--eps", va.eps)->capture_default_str();
  eval_cmd->add_option("--iters", va.iters)->capture_default_str();
  eval_cmd->add_option("--box-lo", va.box_lo)->capture_default_str();
  eval_cmd->add_option("--box-hi", va.box_hi)->capture_default_str();
  eval_cmd->add_option("--report", va.report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::string report_path;
  // With the report on stdout, the one-line summary moves to stderr.
  auto summary_for = [&](const std::string& path) -> std::ostream& { return path == "-" ? err : out; };
  try {
    int code = kExitOk;
    if (train->parsed()) {
      report_path = ta.report;
      code = run_train(ta, *train, summary_for(report_path), out);
    } else if (serve_cmd->parsed()) {
      code = run_serve(sa, out);
    } else if (extract_cmd->parsed()) {
      report_path = ea.report;
      code = run_extract(ea, summary_for(report_path), out);
    } else if (refine_cmd->parsed()) {
      report_path = ra.report;
      code = run_refine(ra, summary_for(report_path), out);
    } else if (rect_cmd->parsed()) {
      report_path = rect.report;
      code = run_rectangle(rect, summary_for(report_path), out);
    } else if (ss_cmd->parsed()) {
      report_path = ss.report;
      code = run_subsetsum(ss, summary_for(report_path), out);
    } else if (equiv->parsed()) {
      report_path = qa.report;
      code = run_equiv(qa, summary_for(report_path), out);
    } else if (eval_cmd->parsed()) {
      report_path = va.report;
      code = run_eval(va, summary_for(report_path), out);
    }
    stamp_timing(report_path, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return code;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    json msg = {{"error", {{"kind", error_kind(e)}, {"message", e.what()}}}};
    if (const auto* xe = dynamic_cast<const ExtractionError*>(&e); xe && xe->partial()) {
      msg["error"]["phase"] = xe->partial()->phase;
      msg["error"]["recovered"] = xe->partial()->recovered.size();
      msg["error"]["ledger"] = to_json(xe->partial()->ledger);
    }
    err << msg.dump() << '\n';
    return kExitDomainError;
  }
}

}  // namespace relux
