// Copyright 2026 The PSC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "psc/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "psc/decomp.hpp"
#include "psc/graph.hpp"
#include "psc/graph_exec.hpp"
#include "psc/tensor_io.hpp"
#include "psc/trainer.hpp"
#include "psc/verify.hpp"

namespace psc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Failure that maps to exit code 1 with a one-line message.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto log = std::make_shared<spdlog::logger>("psc", sink);
  log->set_pattern("psc: %l: %v");
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("PSC_LOG")) {
    const std::string v = env;
    if (v == "error") level = spdlog::level::err;
    else if (v == "warn") level = spdlog::level::warn;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
    else log->warn("ignoring PSC_LOG={} (expected error, warn, info or debug)", v);
  }
  log->set_level(level);
  return log;
}

struct Options {
  std::string model;
  std::string kernel;
  std::string out;
  std::string format = "json";
  std::string suite = "all";
  std::string task = "separable";
  std::string variant = "all";
  std::vector<std::size_t> ranks;
  int m = 1;
  int n = 1;
  std::size_t d = 3;
  std::size_t extent = 6;
  std::uint64_t seed = 1;
  std::size_t seeds = 20;
  std::size_t max_len = 0;
  std::size_t epochs = 500;
  bool curves = false;
  bool full_m = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure("cannot open '" + path + "': check the path");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelGraph load_model(const std::string& path) {
  try {
    return parse_model(read_file(path));
  } catch (const GraphError& e) {
    throw Failure("invalid model '" + path + "': " + e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Failure("cannot write '" + path + "': check that the directory exists");
  f << text;
  if (!f) throw Failure("write to '" + path + "' failed");
}

void emit(const Options& o, std::ostream& out, const std::string& text) {
  if (o.out.empty()) {
    out << text;
  } else {
    write_file(o.out, text);
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------

int cmd_decompose(const Options& o, std::ostream& out, spdlog::logger& log) {
  Tensor t;
  if (!o.kernel.empty()) {
    try {
      t = read_tensor(o.kernel);
    } catch (const std::exception& e) {
      throw Failure("cannot read kernel '" + o.kernel + "': " + e.what());
    }
  } else {
    Rng rng(o.seed);
    t = Tensor::random_normal({o.d, o.d, o.d, 1}, rng);
    log.info("no --kernel given; using a random {}x{}x{}x1 kernel from seed {}", o.d, o.d, o.d, o.seed);
  }
  if (t.rank() != 4) {
    throw Failure("kernel must have shape [J1, J2, J3, C], got " + shape_to_string(t.shape()));
  }
  const Kernel4 kernel(t);
  HosvdFactors f;
  double frob = 0.0;
  if (o.ranks.empty()) {
    f = hosvd(kernel);
    frob = relative_error(reconstruct(f), kernel.tensor());
  } else {
    if (o.ranks.size() != 3) throw Failure("--ranks takes three values, e.g. --ranks 2,2,2");
    try {
      auto td = truncated_decompose(kernel, {o.ranks[0], o.ranks[1], o.ranks[2]});
      f = std::move(td.factors);
      frob = td.frob_error;
    } catch (const std::invalid_argument& e) {
      throw Failure(std::string("--ranks: ") + e.what());
    }
  }
  const SlabAssignment asg = default_assignment(f);
  const SlabDecomposition d = slab_decompose(f, asg);

  json slabs = json::array();
  for (const auto& e : asg.entries) slabs.push_back({{"axis", static_cast<int>(e.axis)}, {"index", e.index}});
  const auto r = f.ranks();
  const json report{{"frob_error", frob},
                    {"ranks", {r[0], r[1], r[2]}},
                    {"slab_assignment", slabs},
                    {"per_slab_energy", d.energy}};

  if (!o.out.empty()) {
    const fs::path dir(o.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Failure("cannot create '" + o.out + "': " + ec.message());
    for (std::size_t k = 0; k < 3; ++k) {
      const Matrix& u = f.modes[k];
      write_tensor(dir / ("mode" + std::to_string(k + 1)), Tensor({u.rows, u.cols}, u.data));
    }
    write_tensor(dir / "core", f.core);
    for (std::size_t i = 0; i < d.kernels.size(); ++i) {
      std::ostringstream name;
      name << "slab" << std::setw(2) << std::setfill('0') << i;
      write_tensor(dir / (name.str() + "_vec"), d.kernels[i].vec);
      write_tensor(dir / (name.str() + "_rest"), d.kernels[i].rest);
    }
    write_file((dir / "report.json").string(), dump(report));
    log.info("wrote factors and {} slab kernels to {}", d.kernels.size(), o.out);
  }
  out << dump(report);
  return kExitOk;
}

int cmd_rewrite(const Options& o, std::ostream& out, spdlog::logger& log) {
  if (o.model.empty()) throw CLI::RequiredError("--model");
  const ModelGraph before = load_model(o.model);
  RewriteOptions ro;
  ro.max_len = o.max_len;
  ro.full_M_per_stream = o.full_m;
  const RewriteResult r = rewrite(before, o.m, o.n, ro);
  for (const auto& w : r.warnings) log.warn("{}", w);
  const RewriteReport rep = rewrite_report(before, r.graph, o.max_len);
  if (o.out.empty()) {
    out << dump({{"report", rep.to_json()}, {"model", graph_to_json(r.graph)}});
  } else {
    write_file(o.out, serialize_model(r.graph));
    if (o.format == "table") {
      out << "params before  " << rep.total_before << "\n"
          << "params after   " << rep.total_after << "\n"
          << "reduction      " << std::fixed << std::setprecision(2) << rep.reduction_pct << "%\n"
          << "groups         " << rep.groups_replaced << " replaced, " << rep.groups_skipped << " skipped\n";
    } else {
      out << dump(rep.to_json());
    }
  }
  return kExitOk;
}

int cmd_count(const Options& o, std::ostream& out, spdlog::logger&) {
  if (o.model.empty()) throw CLI::RequiredError("--model");
  const ModelGraph g = load_model(o.model);
  const ParamReport rep = count_params(g);
  std::ostringstream s;
  if (o.format == "table") {
    std::size_t w = 5;
    for (const auto& nd : rep.nodes) w = std::max(w, nd.id.size());
    s << std::left << std::setw(int(w) + 2) << "id" << std::setw(11) << "op" << std::right << std::setw(12)
      << "params" << "\n";
    for (const auto& nd : rep.nodes) {
      s << std::left << std::setw(int(w) + 2) << nd.id << std::setw(11) << to_string(nd.op) << std::right
        << std::setw(12) << nd.params << "\n";
    }
    s << std::left << std::setw(int(w) + 13) << "total" << std::right << std::setw(12) << rep.total << "\n";
  } else {
    json nodes = json::array();
    for (const auto& nd : rep.nodes) nodes.push_back({{"id", nd.id}, {"op", to_string(nd.op)}, {"params", nd.params}});
    s << dump({{"nodes", nodes}, {"total", rep.total}});
  }
  emit(o, out, s.str());
  return kExitOk;
}

void print_suite_table(std::ostream& s, const std::vector<SuiteReport>& reps) {
  s << std::left << std::setw(8) << "suite" << std::right << std::setw(7) << "cases" << std::setw(14) << "max"
    << std::setw(12) << "tolerance" << "  result\n";
  for (const auto& r : reps) {
    s << std::left << std::setw(8) << r.suite << std::right << std::setw(7) << r.cases << std::setw(14)
      << std::setprecision(4) << r.max_residual << std::setw(12) << r.tolerance << "  " << (r.pass ? "pass" : "FAIL")
      << "\n";
  }
}

int cmd_verify(const Options& o, std::ostream& out, spdlog::logger& log) {
  std::vector<std::string> names;
  if (o.suite == "all") {
    names = suite_names();
  } else {
    if (std::find(suite_names().begin(), suite_names().end(), o.suite) == suite_names().end()) {
      throw CLI::ValidationError("--suite", "unknown suite '" + o.suite + "' (expected eq1, eq3, eq4, eq5, hosvd, grad or all)");
    }
    names = {o.suite};
  }
  std::vector<SuiteReport> reps;
  bool ok = true;
  for (const auto& name : names) {
    reps.push_back(run_suite(name, {o.seeds, o.seed}));
    const auto& r = reps.back();
    log.info("suite {}: {} cases, max residual {:.3g}", r.suite, r.cases, r.max_residual);
    if (!r.pass) log.error("suite {} failed: max residual {:.3g} >= {:.3g}", r.suite, r.max_residual, r.tolerance);
    ok = ok && r.pass;
  }
  std::ostringstream s;
  if (o.format == "table") {
    print_suite_table(s, reps);
  } else if (reps.size() == 1) {
    s << dump(reps[0].to_json());
  } else {
    json arr = json::array();
    for (const auto& r : reps) arr.push_back(r.to_json());
    s << dump(arr);
  }
  emit(o, out, s.str());
  return ok ? kExitOk : kExitValidation;
}

// Graph-level check on sampled coordinates of the input and every weight tensor.
json graph_grad_check(const ModelGraph& g, const Options& o, double& worst, std::size_t& kinks) {
  Rng rng(o.seed);
  GraphWeights w = init_graph_weights(g, rng);
  const std::size_t c = g.channels(g.input_node().id);
  Tensor x = Tensor::random_uniform({1, c, o.extent, o.extent, o.extent}, rng);
  GraphTrace trace;
  const Tensor y = graph_forward(g, w, x, &trace);
  const Tensor dy = Tensor::random_normal(y.shape(), rng);
  const GraphGrads grads = graph_backward(g, w, trace, dy);
  constexpr std::size_t kSamples = 8;
  constexpr double kEps = 1e-6;

  const double f0 = dot(y, dy);
  kinks = 0;

  // Coordinates whose one-sided slopes disagree sit on a ReLU or pooling kink
  // and are skipped.
  struct Samples {
    std::vector<double> analytic, numeric;
  };
  auto probe = [&](Tensor& t, const Tensor& analytic) {
    Samples out;
    for (std::size_t s = 0; s < std::min(kSamples, t.size()); ++s) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(t.size()) - 1));
      const double keep = t[i];
      t[i] = keep + kEps;
      const double up = dot(graph_forward(g, w, x), dy);
      t[i] = keep - kEps;
      const double down = dot(graph_forward(g, w, x), dy);
      t[i] = keep;
      const double right = (up - f0) / kEps, left = (f0 - down) / kEps;
      if (std::abs(right - left) > 1e-5 * std::max({std::abs(right), std::abs(left), 1e-6})) {
        ++kinks;
        continue;
      }
      out.analytic.push_back(analytic[i]);
      out.numeric.push_back((up - down) / (2 * kEps));
    }
    return out;
  };
  std::vector<std::pair<json, Samples>> all;
  all.emplace_back("input", probe(x, grads.input));
  auto params = w.tensors();
  const auto gparams = grads.weights.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) all.emplace_back(k, probe(*params[k], *gparams[k]));

  // Relative error, floored at 1e-3 of the largest gradient seen anywhere in
  // the model: deep layers can have gradients near the roundoff of the difference.
  double scale = 0.0;
  for (const auto& [_, s] : all) {
    for (double v : s.numeric) scale = std::max(scale, std::abs(v));
  }
  const double floor = 1e-3 * scale + 1e-12;
  json rec = json::array();
  worst = 0.0;
  for (const auto& [name, s] : all) {
    double e = 0.0;
    for (std::size_t i = 0; i < s.numeric.size(); ++i) {
      const double denom = std::max({std::abs(s.analytic[i]), std::abs(s.numeric[i]), floor});
      e = std::max(e, std::abs(s.analytic[i] - s.numeric[i]) / denom);
    }
    worst = std::max(worst, e);
    rec.push_back({{"tensor", name}, {"error", e}});
  }
  return rec;
}

int cmd_grad(const Options& o, std::ostream& out, spdlog::logger& log) {
  constexpr double kTolerance = 1e-4;
  std::ostringstream s;
  bool ok = true;
  if (o.model.empty()) {
    const SuiteReport r = suite_grad({o.seeds, o.seed});
    ok = r.pass;
    if (o.format == "table") {
      print_suite_table(s, {r});
    } else {
      s << dump(r.to_json());
    }
  } else {
    const ModelGraph g = load_model(o.model);
    double worst = 0.0;
    std::size_t kinks = 0;
    json rec;
    try {
      rec = graph_grad_check(g, o, worst, kinks);
    } catch (const ShapeError& e) {
      throw Failure(std::string("model cannot run on a ") + std::to_string(o.extent) + "^3 input: " + e.what() +
                    " (try --extent)");
    }
    ok = worst < kTolerance;
    s << dump({{"model", o.model}, {"tolerance", kTolerance}, {"max_error", worst}, {"pass", ok}, {"skipped_at_kinks", kinks}, {"tensors", rec}});
  }
  if (!ok) log.error("gradient check failed");
  emit(o, out, s.str());
  return ok ? kExitOk : kExitValidation;
}

int cmd_train(const Options& o, std::ostream& out, spdlog::logger& log) {
  if (o.curves) {
    emit(o, out, dump(matched_curve_report(o.seed, o.epochs)));
    return kExitOk;
  }
  std::vector<Variant> variants;
  if (o.variant == "all") {
    variants = all_variants();
  } else {
    try {
      variants = {parse_variant(o.variant)};
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError("--variant", e.what());
    }
  }
  if (o.task != "separable" && o.task != "blur") {
    throw CLI::ValidationError("--task", "unknown task '" + o.task + "' (expected separable or blur)");
  }
  json runs = json::array();
  std::vector<DemoResult> results;
  bool ok = true;
  for (Variant v : variants) {
    results.push_back(run_demo(o.task, v, o.seed, o.epochs));
    const auto& r = results.back();
    const auto& h = r.history;
    const double fin = h.train_loss.empty() ? h.initial_train_loss : h.train_loss.back();
    log.info("{} on {}: loss {:.4g} -> {:.4g}", to_string(v), o.task, h.initial_train_loss, fin);
    if (h.aborted) {
      log.error("{}: {}", to_string(v), h.message);
      ok = false;
    }
    runs.push_back({{"task", o.task},
                    {"variant", to_string(v)},
                    {"params", r.params},
                    {"initial_train_loss", h.initial_train_loss},
                    {"final_train_loss", fin},
                    {"final_val_loss", h.val_loss.empty() ? 0.0 : h.val_loss.back()},
                    {"epochs", h.train_loss.size()},
                    {"aborted", h.aborted}});
  }
  if (!o.out.empty() && results.size() == 1) {
    write_file(o.out, results[0].history.to_csv());
    out << dump(runs);
  } else if (o.format == "table") {
    std::ostringstream s;
    s << std::left << std::setw(8) << "variant" << std::right << std::setw(8) << "params" << std::setw(14)
      << "initial" << std::setw(14) << "final" << std::setw(14) << "val" << "\n";
    for (const auto& r : runs) {
      s << std::left << std::setw(8) << r["variant"].get<std::string>() << std::right << std::setw(8)
        << r["params"].get<std::size_t>() << std::setprecision(5) << std::setw(14)
        << r["initial_train_loss"].get<double>() << std::setw(14) << r["final_train_loss"].get<double>()
        << std::setw(14) << r["final_val_loss"].get<double>() << "\n";
    }
    emit(o, out, s.str());
  } else {
    emit(o, out, dump(runs));
  }
  return ok ? kExitOk : kExitValidation;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto log = make_logger(err);
  Options o;
  CLI::App app{"Parallel separable 3D convolution toolkit", "psc"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  auto format_opt = [&](CLI::App* c) {
    c->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "table"}));
  };

  auto* dec = app.add_subcommand("decompose", "HOSVD and slab decomposition of a kernel tensor");
  dec->add_option("--kernel", o.kernel, "Kernel tensor [J1, J2, J3, C] (stem, .json or .bin)");
  dec->add_option("--ranks", o.ranks, "Truncation ranks r1,r2,r3")->delimiter(',');
  dec->add_option("--d", o.d, "Extent of the random kernel used without --kernel")->check(CLI::Range(1, 9));
  dec->add_option("--seed", o.seed, "Seed of the random kernel");
  dec->add_option("--out", o.out, "Directory for factor and slab tensors");

  auto* rw = app.add_subcommand("rewrite", "Replace convolution groups with parallel separable blocks");
  rw->add_option("--model", o.model, "Model graph JSON")->required();
  rw->add_option("--m", o.m, "Parallel streams")->check(CLI::Range(1, 3));
  rw->add_option("--n", o.n, "Planar convolutions per stream")->check(CLI::Range(1, 16));
  rw->add_option("--max-len", o.max_len, "Longest group to replace (0: unbounded)");
  rw->add_flag("--full-m", o.full_m, "Give every stream the full M filters");
  rw->add_option("--out", o.out, "Write the rewritten graph here");
  format_opt(rw);

  auto* cp = app.add_subcommand("count-params", "Per-node and total learnable parameters");
  cp->add_option("--model", o.model, "Model graph JSON")->required();
  cp->add_option("--out", o.out, "Write the report here");
  format_opt(cp);

  auto* gc = app.add_subcommand("grad-check", "Backward passes against central differences");
  gc->add_option("--model", o.model, "Check a whole model graph instead of the layer suite");
  gc->add_option("--extent", o.extent, "Input extent for --model")->check(CLI::Range(1, 64));
  gc->add_option("--seed", o.seed, "First seed");
  gc->add_option("--seeds", o.seeds, "Number of seeds")->check(CLI::Range(1, 100000));
  gc->add_option("--out", o.out, "Write the report here");
  format_opt(gc);

  auto* vf = app.add_subcommand("verify", "Run verification suites");
  vf->add_option("--suite", o.suite, "eq1, eq3, eq4, eq5, hosvd, grad or all");
  vf->add_option("--seed", o.seed, "First seed");
  vf->add_option("--seeds", o.seeds, "Number of seeds")->check(CLI::Range(1, 100000));
  vf->add_option("--out", o.out, "Write the report here");
  format_opt(vf);

  auto* td = app.add_subcommand("train-demo", "Train model variants on a synthetic task");
  td->add_option("--task", o.task, "separable or blur");
  td->add_option("--variant", o.variant, "3d, p1sc1, p2sc2, p3sc1 or all");
  td->add_option("--epochs", o.epochs, "Epochs")->check(CLI::Range(1, 1000000));
  td->add_option("--seed", o.seed, "Seed for data, initialization and batching");
  td->add_flag("--curves", o.curves, "Emit 3D vs P2SC2 curves at a matched parameter budget");
  td->add_option("--out", o.out, "CSV history (single variant) or report file");
  format_opt(td);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "psc: " << e.what() << " (see psc --help)\n";
    return kExitUsage;
  }

  try {
    if (dec->parsed()) return cmd_decompose(o, out, *log);
    if (rw->parsed()) return cmd_rewrite(o, out, *log);
    if (cp->parsed()) return cmd_count(o, out, *log);
    if (gc->parsed()) return cmd_grad(o, out, *log);
    if (vf->parsed()) return cmd_verify(o, out, *log);
    if (td->parsed()) return cmd_train(o, out, *log);
  } catch (const CLI::ParseError& e) {
    err << "psc: " << e.what() << " (see psc --help)\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace psc
