// saot: data generation, training, evaluation and analysis front end.
//
// Exit codes: 0 success, 2 invalid input (config, flags, files, shapes),
// 3 numeric failure (divergence, solver non-convergence), 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "saot/analysis.hpp"
#include "saot/darcy.hpp"
#include "saot/dataset.hpp"
#include "saot/train.hpp"

using namespace saot;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------------ helpers

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_threads(const std::string& s) {
  if (s == "auto") return 0;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v == 0) {
    throw ValidationError("--threads must be 'auto' or a positive integer, got '" + s + "'");
  }
  return v;
}

std::vector<std::size_t> parse_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size() || v == 0) {
      throw ValidationError(std::string(what) + ": '" + s + "' is not a list of positive integers");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(std::string(what) + " is empty");
  return out;
}

std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SAOT_DATA_DIR"); env && *env) return env;
  return "data";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

std::string comment_block(const KvConfig& kv) {
  std::string out;
  for (const auto& [k, v] : kv.entries()) out += "# " + k + " = " + v + "\n";
  return out;
}

json kv_json(const KvConfig& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv.entries()) j[k] = v;
  return j;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " '" + path + "' not found");
}

std::vector<GridSample> load_dataset(const std::string& path) {
  require_file(path, "dataset");
  return read_dataset(path);
}

// --------------------------------------------------------------- generate

std::set<std::string> darcy_keys() {
  KvConfig kv;
  write_darcy_config(kv, {});
  std::set<std::string> keys;
  for (const auto& [k, _] : kv.entries()) keys.insert(k);
  keys.insert("sweep_resolutions");
  return keys;
}

struct GenerateOptions {
  std::string config, out, resolutions;
  std::optional<std::uint64_t> seed;
  std::string threads = "1";
};

int cmd_generate(const GenerateOptions& o) {
  const KvConfig kv = o.config.empty() ? KvConfig{} : KvConfig::load(o.config);
  kv.require_known(darcy_keys());
  DarcyConfig cfg = read_darcy_config(kv);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  std::vector<std::size_t> sweep =
      parse_list(o.resolutions.empty() ? kv.get_string("sweep_resolutions", std::to_string(cfg.resolution))
                                       : o.resolutions,
                 "sweep resolutions");
  for (std::size_t r : sweep) {
    if (r < 4 || r % 2) throw ValidationError("sweep resolution " + std::to_string(r) + " must be even and >= 4");
  }
  std::sort(sweep.begin(), sweep.end());
  sweep.erase(std::unique(sweep.begin(), sweep.end()), sweep.end());
  const std::size_t threads = resolve_threads(parse_threads(o.threads));

  const fs::path dir = data_root(o.out);
  fs::create_directories(dir);
  KvConfig effective;
  write_darcy_config(effective, cfg);
  std::string sweep_text;
  for (std::size_t r : sweep) sweep_text += (sweep_text.empty() ? "" : ",") + std::to_string(r);
  effective.set("sweep_resolutions", sweep_text);

  json files = json::array();
  double max_residual = 0.0;
  auto emit = [&](const std::string& name, const std::string& split, std::size_t res,
                  const std::vector<GridSample>& set) {
    const std::string path = (dir / name).string();
    const std::uint64_t sum = write_dataset(set, path);
    KvConfig side = effective;
    side.set("split", split);
    side.set("file_resolution", std::to_string(res));
    side.set("count", std::to_string(set.size()));
    write_text(sidecar_path(path), side.to_string());
    files.push_back({{"path", path}, {"split", split}, {"resolution", res}, {"count", set.size()},
                     {"checksum", hex(sum)}});
  };

  // Training split at the training resolution.
  {
    std::vector<GridSample> set(cfg.n_train);
    std::vector<double> res(cfg.n_train);
    detail::parallel_items(cfg.n_train, threads, [&](std::size_t, std::size_t i) {
      set[i] = darcy_sample(darcy_sample_seed(cfg.seed, false, i), cfg.resolution,
                            cfg.reference_resolution, cfg.coefficient, &res[i]);
    });
    for (double r : res) max_residual = std::max(max_residual, r);
    emit("train.saotds", "train", cfg.resolution, set);
  }
  // Test split: one solve per sample, resampled to every sweep resolution.
  {
    std::vector<std::size_t> all = sweep;
    if (std::find(all.begin(), all.end(), cfg.resolution) == all.end()) all.push_back(cfg.resolution);
    std::vector<std::vector<GridSample>> per(cfg.n_test);
    std::vector<double> res(cfg.n_test);
    detail::parallel_items(cfg.n_test, threads, [&](std::size_t, std::size_t i) {
      per[i] = darcy_samples(darcy_sample_seed(cfg.seed, true, i), all, cfg.reference_resolution,
                             cfg.coefficient, &res[i]);
    });
    for (double r : res) max_residual = std::max(max_residual, r);
    for (std::size_t k = 0; k < all.size(); ++k) {
      std::vector<GridSample> set;
      for (auto& s : per) set.push_back(s[k]);
      if (all[k] == cfg.resolution) emit("test.saotds", "test", all[k], set);
      if (std::find(sweep.begin(), sweep.end(), all[k]) != sweep.end()) {
        emit("test_" + std::to_string(all[k]) + ".saotds", "test", all[k], set);
      }
    }
  }
  json out{{"command", "generate"}, {"config", kv_json(effective)}, {"files", files},
           {"max_solver_residual", max_residual}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

std::set<std::string> train_keys() {
  KvConfig kv;
  write_model_config(kv, {});
  write_train_config(kv, {});
  std::set<std::string> keys;
  for (const auto& [k, _] : kv.entries()) keys.insert(k);
  keys.insert("threads");
  return keys;
}

struct TrainOptions {
  std::string config, data, train_file, test_file, out, variant;
  std::optional<std::uint64_t> seed;
  std::string threads;
  bool quiet = false;
};

struct RunSetup {
  ModelConfig model;
  TrainConfig train;
  std::vector<GridSample> train_set, test_set;
  std::string train_path, test_path;
};

RunSetup prepare_run(const TrainOptions& o) {
  const KvConfig kv = o.config.empty() ? KvConfig{} : KvConfig::load(o.config);
  kv.require_known(train_keys());
  RunSetup s;
  s.model = read_model_config(kv);
  s.train = read_train_config(kv);
  s.train.threads = parse_threads(o.threads.empty() ? kv.get_string("threads", "1") : o.threads);
  if (!o.variant.empty()) s.model.variant = parse_variant(o.variant);
  if (o.seed) s.model.seed = s.train.seed = *o.seed;
  s.model.validate();
  s.train.validate();
  const fs::path root = data_root(o.data);
  s.train_path = o.train_file.empty() ? (root / "train.saotds").string() : o.train_file;
  s.test_path = o.test_file.empty() ? (root / "test.saotds").string() : o.test_file;
  s.train_set = load_dataset(s.train_path);
  if (fs::is_regular_file(s.test_path)) {
    s.test_set = read_dataset(s.test_path);
  } else if (!o.test_file.empty()) {
    throw ValidationError("test dataset '" + s.test_path + "' not found");
  } else {
    s.test_path.clear();
  }
  return s;
}

json run_training(const RunSetup& s, const fs::path& out_dir, bool quiet) {
  fs::create_directories(out_dir);
  KvConfig effective;
  write_model_config(effective, s.model);
  write_train_config(effective, s.train);
  effective.set("threads", s.train.threads == 0 ? "auto" : std::to_string(s.train.threads));
  write_text(out_dir / "config.cfg", effective.to_string());

  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  metrics << "epoch,train_rel_l2,test_rel_l2,wall_seconds\n";
  const std::string tag(variant_name(s.model.variant));
  auto on_epoch = [&](const EpochMetrics& m) {
    metrics << m.epoch << "," << num(m.train_rel_l2) << "," << num(m.test_rel_l2) << ","
            << num(m.wall_seconds) << "\n";
    metrics.flush();
    if (!quiet) {
      std::fprintf(stderr, "[%s] epoch %zu train %.4e test %.4e (%.1fs)\n", tag.c_str(), m.epoch,
                   m.train_rel_l2, m.test_rel_l2, m.wall_seconds);
    }
  };
  TrainResult r = train(s.train_set, s.test_set, s.model, s.train, on_epoch);
  for (Checkpoint* c : {&r.best, &r.last}) {
    c->metadata["train_data"] = s.train_path;
    c->metadata["test_data"] = s.test_path;
  }
  const std::uint64_t last_sum = save_checkpoint(r.last, (out_dir / "last.saotck").string());
  const std::uint64_t best_sum = save_checkpoint(r.best, (out_dir / "best.saotck").string());
  const auto& final_row = r.history.back();
  json summary{{"command", "train"},
               {"variant", tag},
               {"parameters", r.last.params.parameter_count()},
               {"train_samples", s.train_set.size()},
               {"test_samples", s.test_set.size()},
               {"initial_train_rel_l2", r.initial_train_rel_l2},
               {"final_train_rel_l2", r.final_train_rel_l2},
               {"final_test_rel_l2", s.test_set.empty() ? json(nullptr) : json(final_row.test_rel_l2)},
               {"best_epoch", r.best_epoch},
               {"wall_seconds", final_row.wall_seconds},
               {"last_checkpoint", (out_dir / "last.saotck").string()},
               {"last_checksum", hex(last_sum)},
               {"best_checkpoint", (out_dir / "best.saotck").string()},
               {"best_checksum", hex(best_sum)},
               {"config", kv_json(effective)}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

int cmd_train(const TrainOptions& o) {
  const RunSetup s = prepare_run(o);
  const fs::path out = o.out.empty() ? fs::path("runs") / std::string(variant_name(s.model.variant)) : fs::path(o.out);
  std::cout << run_training(s, out, o.quiet).dump(2) << "\n";
  return 0;
}

int cmd_ablation(const TrainOptions& o) {
  RunSetup s = prepare_run(o);
  const fs::path out = o.out.empty() ? fs::path("runs") / "ablation" : fs::path(o.out);
  std::string table = "variant,parameters,initial_train_rel_l2,final_train_rel_l2,test_rel_l2,best_epoch,wall_seconds\n";
  json rows = json::array();
  for (auto v : {AttentionVariant::fourier, AttentionVariant::wavelet, AttentionVariant::spectral}) {
    s.model.variant = v;
    s.model.validate();
    const std::string tag(variant_name(v));
    const json r = run_training(s, out / tag, o.quiet);
    table += tag + "," + std::to_string(r["parameters"].get<std::size_t>()) + "," +
             num(r["initial_train_rel_l2"].get<double>()) + "," + num(r["final_train_rel_l2"].get<double>()) +
             "," + (r["final_test_rel_l2"].is_null() ? "" : num(r["final_test_rel_l2"].get<double>())) + "," +
             std::to_string(r["best_epoch"].get<std::size_t>()) + "," + num(r["wall_seconds"].get<double>()) + "\n";
    rows.push_back(r);
  }
  write_text(out / "ablation.csv", table);
  std::cout << table;
  write_text(out / "ablation.json", json{{"command", "ablation"}, {"runs", rows}}.dump(2) + "\n");
  return 0;
}

// ------------------------------------------------------------------- eval

json checkpoint_config(const Checkpoint& c) {
  KvConfig kv;
  write_model_config(kv, c.model, "model.");
  write_train_config(kv, c.train, "train.");
  return kv_json(kv);
}

Checkpoint open_checkpoint(const std::string& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

std::string resolve_dataset(const std::string& path) {
  if (path.empty()) throw ValidationError("--data is required");
  if (fs::exists(path)) return path;
  const fs::path under_root = fs::path(data_root("")) / path;
  return fs::exists(under_root) ? under_root.string() : path;
}

struct EvalOptions {
  std::string checkpoint, data, out;
};

int cmd_eval(const EvalOptions& o) {
  const Checkpoint c = open_checkpoint(o.checkpoint);
  const std::string data = resolve_dataset(o.data);
  const auto set = load_dataset(data);
  const Model m = c.build_model();
  for (const auto& s : set) m.check_input(s.a);
  std::vector<double> per;
  const double mean = set.empty() ? 0.0 : mean_relative_l2(m, set, &per);
  json out{{"command", "eval"},
           {"checkpoint", o.checkpoint},
           {"checkpoint_checksum", hex(io::stored_checksum(o.checkpoint))},
           {"dataset", data},
           {"dataset_checksum", hex(io::stored_checksum(data))},
           {"config", checkpoint_config(c)},
           {"count", set.size()},
           {"mean_rel_l2", mean},
           {"per_sample_rel_l2", per}};
  const std::string text = out.dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, text);
  std::cout << text;
  return 0;
}

// --------------------------------------------------------------- spectrum

struct SpectrumOptions {
  std::string checkpoint, fa, wa, data, out;
  std::size_t index = 0;
};

int cmd_spectrum(const SpectrumOptions& o) {
  const bool three = !o.fa.empty() || !o.wa.empty();
  if (three && (o.fa.empty() || o.wa.empty() || !o.checkpoint.empty())) {
    throw ValidationError("spectrum: give either --checkpoint, or both --fa and --wa");
  }
  if (!three && o.checkpoint.empty()) throw ValidationError("spectrum: --checkpoint is required");
  const std::string data = resolve_dataset(o.data);
  const auto set = load_dataset(data);
  if (o.index >= set.size()) {
    throw ValidationError("spectrum: sample index " + std::to_string(o.index) + " out of range (dataset has " +
                          std::to_string(set.size()) + ")");
  }
  const GridSample& s = set[o.index];
  if (s.u.dim(2) != 1) throw ValidationError("spectrum: target must have one channel");

  SpectrumReport report;
  report.add("gt", s.u);
  KvConfig echo;
  echo.set("dataset", data);
  echo.set("index", std::to_string(o.index));
  std::vector<std::pair<std::string, std::string>> models;
  if (three) {
    models = {{"fa", o.fa}, {"wa", o.wa}};
  } else {
    models = {{"pred", o.checkpoint}};
  }
  for (const auto& [label, path] : models) {
    const Model m = open_checkpoint(path).build_model();
    NoGradGuard no_grad;
    report.add(label, m.forward(s.a));
    echo.set("checkpoint_" + label, path);
  }
  const std::size_t from = std::max<std::size_t>(1, std::min(s.u.dim(0), s.u.dim(1)) / 4);
  echo.set("high_band_from_shell", std::to_string(from));
  const std::string csv = comment_block(echo) + report.csv();
  if (!o.out.empty()) write_text(o.out, csv);

  json ratios = json::object(), gaps = json::object();
  for (std::size_t i = 1; i < report.labels.size(); ++i) {
    ratios[report.labels[i]] = high_shell_energy_ratio(report.series[0], report.series[i], from);
    gaps[report.labels[i]] = high_shell_log_gap(report.series[0], report.series[i], from);
  }
  json out{{"command", "spectrum"},
           {"config", kv_json(echo)},
           {"columns", report.labels},
           {"shells", report.series[0].size()},
           {"parseval_relative_error", report.parseval_error()},
           {"high_shell_energy_ratio", ratios},
           {"high_shell_log10_gap", gaps},
           {"csv", o.out}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ sweep

struct SweepOptions {
  std::string checkpoint, data, out, resolutions = "16,32,64";
};

int cmd_sweep(const SweepOptions& o) {
  const Checkpoint c = open_checkpoint(o.checkpoint);
  auto res = parse_list(o.resolutions, "sweep resolutions");
  std::sort(res.begin(), res.end());
  res.erase(std::unique(res.begin(), res.end()), res.end());
  const fs::path dir = data_root(o.data);
  std::vector<std::string> missing;
  for (std::size_t r : res) {
    const fs::path p = dir / ("test_" + std::to_string(r) + ".saotds");
    if (!fs::is_regular_file(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("sweep: missing resolution files: " + list);
  }
  SweepReport report;
  if (auto it = c.metadata.find("train_resolution"); it != c.metadata.end()) {
    report.train_resolution = std::strtoull(it->second.c_str(), nullptr, 10);
  }
  const Model m = c.build_model();
  for (std::size_t r : res) {
    const auto set = read_dataset((dir / ("test_" + std::to_string(r) + ".saotds")).string());
    for (const auto& s : set) m.check_input(s.a);
    report.rows.push_back({r, set.empty() ? 0.0 : mean_relative_l2(m, set)});
  }
  report.validate();
  KvConfig echo;
  echo.set("checkpoint", o.checkpoint);
  echo.set("data_dir", dir.string());
  const std::string csv = comment_block(echo) + report.csv();
  if (!o.out.empty()) write_text(o.out, csv);
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back({{"resolution", r.resolution}, {"mean_rel_l2", r.mean_rel_l2}});
  json out{{"command", "sweep"},
           {"config", kv_json(echo)},
           {"train_resolution", report.train_resolution},
           {"rows", rows},
           {"best_resolution", report.best_resolution()},
           {"minimum_at_train_resolution", report.best_resolution() == report.train_resolution}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ bench

struct BenchOptions {
  std::string ns = "1024,2048,4096,8192", out;
  std::size_t width = 64, repeats = 5;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchOptions& o) {
  const auto ns = parse_list(o.ns, "--n");
  const auto rows = bench_mixers(ns, o.width, o.repeats, o.seed);
  KvConfig echo;
  echo.set("width", std::to_string(o.width));
  echo.set("repeats", std::to_string(o.repeats));
  std::string csv = comment_block(echo) + "mixer,n,seconds\n";
  for (const auto& r : rows) csv += r.mixer + "," + std::to_string(r.n) + "," + num(r.seconds) + "\n";
  if (!o.out.empty()) write_text(o.out, csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral attention operator transformer toolkit"};
  app.require_subcommand(1);
  std::string threads_help = "worker threads: a positive integer or 'auto'";

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "generate Darcy train/test datasets");
  g->add_option("--config", gen.config, "generation config (key = value)");
  g->add_option("--seed", gen.seed, "data seed (overrides data_seed)");
  g->add_option("--out", gen.out, "output directory (default $SAOT_DATA_DIR or ./data)");
  g->add_option("--resolutions", gen.resolutions, "comma-separated sweep test resolutions");
  g->add_option("--threads", gen.threads, threads_help);

  TrainOptions tr;
  auto add_train_flags = [&](CLI::App* c) {
    c->add_option("--config", tr.config, "model and training config (key = value)");
    c->add_option("--data", tr.data, "dataset directory with train.saotds [test.saotds]");
    c->add_option("--train-data", tr.train_file, "training dataset file");
    c->add_option("--test-data", tr.test_file, "test dataset file");
    c->add_option("--out", tr.out, "output directory");
    c->add_option("--seed", tr.seed, "model and training seed");
    c->add_option("--threads", tr.threads, threads_help);
    c->add_flag("--quiet", tr.quiet, "no per-epoch progress on stderr");
  };
  auto* t = app.add_subcommand("train", "train one model");
  add_train_flags(t);
  t->add_option("--variant", tr.variant, "attention variant")->check(CLI::IsMember({"fa", "wa", "sa"}));
  auto* ab = app.add_subcommand("ablation", "train fa, wa and sa on the same data and tabulate");
  add_train_flags(ab);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ev.data, "dataset file")->required();
  e->add_option("--out", ev.out, "metrics JSON path");

  SpectrumOptions sp;
  auto* s = app.add_subcommand("spectrum", "energy spectra of ground truth and predictions");
  s->add_option("--checkpoint", sp.checkpoint, "checkpoint for a two-series report");
  s->add_option("--fa", sp.fa, "Fourier-only checkpoint (three-series report)");
  s->add_option("--wa", sp.wa, "wavelet-only checkpoint (three-series report)");
  s->add_option("--data", sp.data, "dataset file")->required();
  s->add_option("--index", sp.index, "sample index");
  s->add_option("--out", sp.out, "CSV path");

  SweepOptions sw;
  auto* w = app.add_subcommand("sweep", "evaluate one checkpoint across test resolutions");
  w->add_option("--checkpoint", sw.checkpoint, "checkpoint file")->required();
  w->add_option("--data", sw.data, "directory with test_<res>.saotds files");
  w->add_option("--resolutions", sw.resolutions, "comma-separated resolutions");
  w->add_option("--out", sw.out, "CSV path");

  BenchOptions bo;
  auto* b = app.add_subcommand("bench", "time linear and Fourier attention against token count");
  b->add_option("--n", bo.ns, "comma-separated token counts");
  b->add_option("--width", bo.width, "channel width D");
  b->add_option("--repeats", bo.repeats, "runs per point (median reported)");
  b->add_option("--seed", bo.seed, "input seed");
  b->add_option("--out", bo.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*ab) return cmd_ablation(tr);
    if (*e) return cmd_eval(ev);
    if (*s) return cmd_spectrum(sp);
    if (*w) return cmd_sweep(sw);
    if (*b) return cmd_bench(bo);
  } catch (const DivergenceError& err) {
    std::cerr << "error: training diverged at step " << err.step() << ": " << err.what() << "\n";
    return 3;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
