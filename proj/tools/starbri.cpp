// starbri: data generation, training, prediction, evaluation, gradient
// checks and scale sweeps.
//
// Exit codes: 0 ok, 1 usage or configuration, 2 I/O or format, 3 failed check.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "starbri/checkpoint.hpp"
#include "starbri/data.hpp"
#include "starbri/gradcheck.hpp"
#include "starbri/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace starbri;

namespace {

constexpr int kUsage = 1;
constexpr int kIo = 2;
constexpr int kCheck = 3;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json gen_to_json(const GenConfig& g) {
  json regimes = json::array();
  for (const auto& r : g.regimes) {
    regimes.push_back({{"min_cells", r.min_cells},
                       {"max_cells", r.max_cells},
                       {"amplitude", {r.amplitude.lo, r.amplitude.hi}},
                       {"sigma", {r.sigma.lo, r.sigma.hi}},
                       {"wind", {r.wind.lo, r.wind.hi}},
                       {"jitter", {r.jitter.lo, r.jitter.hi}},
                       {"growth", {r.growth.lo, r.growth.hi}}});
  }
  return {{"height", g.height}, {"width", g.width},         {"frames", g.frames},
          {"count", g.count},   {"seed", g.seed},           {"class_mix", g.class_mix},
          {"regimes", regimes}};
}

void write_pgm(const fs::path& path, std::span<const float> frame, std::size_t h,
               std::size_t w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (float v : frame) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

void export_pgm(const RadarSequence& seq, const fs::path& dir, const std::string& prefix) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    std::ostringstream name;
    name << prefix << '_' << std::setw(3) << std::setfill('0') << t << ".pgm";
    write_pgm(dir / name.str(), seq.frame(t), seq.height(), seq.width());
  }
}

std::size_t env_threads() {
  if (const char* e = std::getenv("STARBRI_THREADS")) {
    try {
      const long v = std::stol(e);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring STARBRI_THREADS='" << e << "'\n";
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Shared training options

struct TrainFlags {
  std::string data;
  std::string config;
  std::string out;
  std::string log;
  std::string resume;
  std::optional<double> lambda_mse;
  std::optional<double> scale;
  std::string schedule;
  bool no_bridge = false;
  bool single_column = false;
  std::string loss;
  std::optional<std::uint64_t> iterations;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::string optimizer;
  std::optional<double> clip_norm;
  std::string precision;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> eval_interval;
  std::optional<std::uint64_t> checkpoint_interval;
  std::optional<std::size_t> eval_samples;
};

void add_train_flags(CLI::App* app, TrainFlags& f, bool need_out) {
  app->add_option("--data", f.data, "Dataset directory (with manifest.jsonl)")->required();
  app->add_option("--config", f.config, "JSON run configuration");
  if (need_out) app->add_option("--out", f.out, "Checkpoint to write")->required();
  app->add_option("--lambda-mse", f.lambda_mse, "Weight of the MSE term");
  app->add_option("--scale", f.scale, "Sigmoid slope s");
  app->add_option("--scale-schedule", f.schedule, "Linear slope ramp start:end:iterations");
  app->add_flag("--no-bridge", f.no_bridge, "Disable the star-shaped bridge");
  app->add_flag("--single-column", f.single_column, "Use one encoder for every route");
  app->add_option("--loss", f.loss, "mse | msl | both")
      ->check(CLI::IsMember({"mse", "msl", "both"}));
  app->add_option("--iterations", f.iterations);
  app->add_option("--batch-size", f.batch_size);
  app->add_option("--seed", f.seed);
  app->add_option("--lr", f.lr);
  app->add_option("--optimizer", f.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  app->add_option("--clip-norm", f.clip_norm, "Global gradient-norm clip (0 = off)");
  app->add_option("--precision", f.precision)->check(CLI::IsMember({"float32", "float64"}));
  app->add_option("--threads", f.threads, "Worker cap (default: STARBRI_THREADS or 1)");
  app->add_option("--eval-interval", f.eval_interval);
  app->add_option("--checkpoint-interval", f.checkpoint_interval);
  app->add_option("--eval-samples", f.eval_samples, "Test sequences per evaluation (0 = all)");
}

RunConfig resolve(const TrainFlags& f, RunConfig cfg) {
  if (!f.config.empty()) cfg = load_run_config(f.config, cfg);
  if (f.lambda_mse) cfg.loss.lambda_mse = *f.lambda_mse;
  if (f.scale) cfg.loss.scale = *f.scale;
  if (!f.schedule.empty()) cfg.loss.schedule = parse_scale_schedule(f.schedule);
  if (f.no_bridge) cfg.network.use_bridge = false;
  if (f.single_column) cfg.network.multi_column = false;
  if (f.loss == "mse") {
    if (f.lambda_mse && *f.lambda_mse == 0.0) {
      throw std::invalid_argument("--loss mse conflicts with --lambda-mse 0");
    }
    cfg.loss.use_msl = false;
    if (cfg.loss.lambda_mse == 0.0) cfg.loss.lambda_mse = 1.0;
  } else if (f.loss == "msl") {
    if (f.lambda_mse && *f.lambda_mse != 0.0) {
      throw std::invalid_argument("--loss msl conflicts with a nonzero --lambda-mse");
    }
    cfg.loss.use_msl = true;
    cfg.loss.lambda_mse = 0.0;
  } else if (f.loss == "both") {
    cfg.loss.use_msl = true;
  }
  if (f.iterations) cfg.train.iterations = *f.iterations;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.lr) cfg.optim.lr = *f.lr;
  if (f.optimizer == "sgd") cfg.optim.kind = OptimizerKind::Sgd;
  if (f.optimizer == "adam") cfg.optim.kind = OptimizerKind::Adam;
  if (f.clip_norm) cfg.optim.clip_norm = *f.clip_norm;
  if (!f.precision.empty()) cfg.precision = *parse_precision(f.precision);
  cfg.threads = f.threads ? *f.threads : env_threads();
  if (f.eval_interval) cfg.train.eval_interval = *f.eval_interval;
  if (f.checkpoint_interval) cfg.train.checkpoint_interval = *f.checkpoint_interval;
  if (f.eval_samples) cfg.train.eval_samples = *f.eval_samples;
  cfg.validate();
  return cfg;
}

template <typename T>
Checkpoint<T> run_training(RunConfig cfg, const Dataset& data, const fs::path& out,
                           const fs::path& log_path, const std::string& resume) {
  Trainer<T> trainer(cfg, data.train);
  if (!resume.empty()) {
    auto ck = checkpoint_load<T>(resume);
    trainer.restore(std::move(ck.state.params), std::move(ck.state.optim), ck.state.iteration);
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path.string());
  MetricLog metrics(log, to_json_text(cfg));
  const auto save = [&](const Trainer<T>& t) {
    checkpoint_save<T>(out, cfg, {t.params(), t.optim(), t.iteration()});
  };
  TrainLoopOptions<T> opts;
  opts.until = cfg.train.iterations;
  opts.test = data.test;
  opts.log = &metrics;
  opts.checkpoint = save;
  const auto start = std::chrono::steady_clock::now();
  opts.on_step = [&](const StepResult& r) {
    if ((r.iteration + 1) % 100 == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "iter " << r.iteration + 1 << "  loss " << r.loss << "  mse " << r.mse
                << "  s " << r.scale << "  " << secs << " s\n";
    }
  };
  train_loop(trainer, opts);
  save(trainer);
  return {cfg, {trainer.params(), trainer.optim(), trainer.iteration()}};
}

RunConfig config_for_data(const Dataset& data) {
  RunConfig cfg;
  cfg.network.route_thresholds = data.thresholds;
  if (!data.train.empty()) {
    cfg.network.input_h = data.train.front().height();
    cfg.network.input_w = data.train.front().width();
  }
  return cfg;
}

void print_report(std::ostream& os, const EvalReport& r) {
  auto csi = [](const Verification& v) {
    const auto c = v.csi();
    return c ? std::to_string(*c) : std::string("undefined");
  };
  os << "model        mse " << r.model.mse() << "  csi " << csi(r.model) << '\n'
     << "persistence  mse " << r.persistence.mse() << "  csi " << csi(r.persistence) << '\n';
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const std::string& out, const std::string& profile, std::uint64_t seed,
            std::size_t count, double test_fraction, double min_mean) {
  GenConfig g = profile != "desk" ? GenConfig::full_scale() : GenConfig::desk();
  g.seed = seed;
  g.count = count;
  DatasetOptions opts;
  opts.test_fraction = test_fraction;
  opts.min_mean = min_mean;
  const Dataset d = make_dataset(g, opts);
  json cfg = gen_to_json(g);
  cfg["profile"] = profile;
  cfg["test_fraction"] = test_fraction;
  cfg["min_mean"] = min_mean;
  save_dataset(d, out, opts.context, cfg.dump());
  std::vector<RouteStats> stats;
  for (const auto& s : d.train) stats.push_back(route_stats(s, opts.context));
  const auto split = split_by_intensity(d.train, d.thresholds, opts.context);
  std::cout << "train " << d.train.size() << "  test " << d.test.size() << '\n'
            << std::fixed << std::setprecision(1) << "light " << 100 * split.proportions[0]
            << "%  moderate " << 100 * split.proportions[1] << "%  heavy "
            << 100 * split.proportions[2] << "%\n";
  return 0;
}

template <typename T>
int predict_with(const fs::path& ckpt, const fs::path& input, const fs::path& out,
                 const std::string& pgm) {
  const auto ck = checkpoint_load<T>(ckpt);
  const NetworkConfig& net = ck.config.network;
  RadarSequence seq = rseq_read(input);
  if (seq.length() > net.context) seq = seq.slice(0, net.context);
  const Route r = route(seq, net);
  const RadarSequence pred = predict(seq, ck.state.params, net);
  rseq_write(pred, out);
  json side;
  side["run"] = json::parse(to_json_text(ck.config));
  side["input"] = input.string();
  side["route"] = std::string(route_name(r));
  side["checkpoint"] = ckpt.string();
  std::ofstream(out.string() + ".json") << side.dump(2) << '\n';
  if (!pgm.empty()) {
    export_pgm(seq, pgm, "input");
    export_pgm(pred, pgm, "pred");
  }
  std::cout << "route " << route_name(r) << ", wrote " << pred.length() << " frames to "
            << out.string() << '\n';
  return 0;
}

template <typename T>
int eval_with(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report,
              const std::string& split, std::size_t limit) {
  const auto ck = checkpoint_load<T>(ckpt);
  const Dataset d = load_dataset(data_dir);
  const auto& seqs = split == "train" ? d.train : d.test;
  const EvalReport r = evaluate(ck.state.params, ck.config.network, seqs, 16, limit);
  std::ofstream os(report, std::ios::trunc);
  if (!os) throw IoError("cannot open " + report.string());
  os << "# config: " << to_json_text(ck.config) << '\n'
     << "split,route,sequences,mse,csi,undefined_frame_count,persistence_mse,"
        "persistence_csi,persistence_undefined_frame_count\n";
  auto row = [&](const std::string& name, const Verification& m, const Verification& p) {
    os << split << ',' << name << ',' << m.sequences << ',' << std::setprecision(9) << m.mse()
       << ',';
    if (m.csi()) os << *m.csi();
    os << ',' << m.undefined_frames << ',' << p.mse() << ',';
    if (p.csi()) os << *p.csi();
    os << ',' << p.undefined_frames << '\n';
  };
  row("all", r.model, r.persistence);
  for (Route rt : kAllRoutes) {
    const auto k = static_cast<std::size_t>(rt);
    row(std::string(route_name(rt)), r.model_by_route[k], r.persistence_by_route[k]);
  }
  print_report(std::cout, r);
  return 0;
}

int cmd_gradcheck(const std::string& level, std::uint64_t seed, std::size_t instances) {
  std::vector<GradCheckReport> reports;
  if (level == "op" || level == "all") {
    auto r = op_gradient_checks(seed, instances);
    reports.insert(reports.end(), r.begin(), r.end());
  }
  if (level == "cell" || level == "all") {
    auto r = cell_gradient_checks(seed, instances);
    reports.insert(reports.end(), r.begin(), r.end());
  }
  if (level == "e2e" || level == "all") reports.push_back(end_to_end_gradient_check(seed));
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << r.summary() << '\n';
    ok = ok && r.pass();
  }
  if (!ok) throw CheckFailed("gradient check failed");
  return 0;
}

template <typename T>
int sweep_with(RunConfig base, const Dataset& d, const std::vector<double>& values,
               const fs::path& out) {
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw IoError("cannot open " + out.string());
  os << "# config: " << to_json_text(base) << '\n'
     << "s,iterations,final_train_loss,test_mse,test_csi,undefined_frame_count\n";
  for (double s : values) {
    RunConfig cfg = base;
    cfg.loss.scale = s;
    cfg.loss.schedule.reset();
    cfg.validate();
    Trainer<T> trainer(cfg, d.train);
    double last = 0.0;
    while (trainer.iteration() < cfg.train.iterations) last = trainer.step().loss;
    const auto r = evaluate(trainer.params(), cfg.network, d.test, 16, cfg.train.eval_samples);
    os << s << ',' << cfg.train.iterations << ',' << std::setprecision(9) << last << ','
       << r.model.mse() << ',';
    if (r.model.csi()) os << *r.model.csi();
    os << ',' << r.model.undefined_frames << '\n';
    os.flush();
    std::cout << "s=" << s << "  mse " << r.model.mse() << "  csi "
              << r.model.csi().value_or(std::nan("")) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Star-bridge ConvLSTM precipitation nowcasting"};
  app.require_subcommand(1);

  // gen-data
  std::string gen_out, profile = "desk";
  std::uint64_t gen_seed = 1;
  std::size_t gen_count = 1000;
  double test_fraction = 0.2, min_mean = 0.005;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--profile", profile)->check(CLI::IsMember({"desk", "paper-like", "full-scale"}));
  gen->add_option("--seed", gen_seed);
  gen->add_option("--count", gen_count);
  gen->add_option("--test-fraction", test_fraction);
  gen->add_option("--min-mean", min_mean, "Rain-less filter on the training split");

  // train
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model");
  add_train_flags(train, tf, true);
  train->add_option("--log", tf.log, "Metric CSV (default: <out>.csv)");
  train->add_option("--resume", tf.resume, "Continue from a checkpoint");

  // predict
  std::string p_ckpt, p_in, p_out, p_pgm;
  auto* pred = app.add_subcommand("predict", "Forecast the frames after an RSEQ context");
  pred->add_option("--ckpt", p_ckpt)->required();
  pred->add_option("--input", p_in)->required();
  pred->add_option("--out", p_out)->required();
  pred->add_option("--pgm", p_pgm, "Also export input and forecast frames as PGM here");

  // eval
  std::string e_ckpt, e_data, e_report, e_split = "test";
  std::size_t e_limit = 0;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint against persistence");
  ev->add_option("--ckpt", e_ckpt)->required();
  ev->add_option("--data", e_data)->required();
  ev->add_option("--report", e_report)->required();
  ev->add_option("--split", e_split)->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--limit", e_limit);

  // gradcheck
  std::string level = "all";
  std::uint64_t g_seed = 7;
  std::size_t g_instances = 5;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks (64-bit)");
  gc->add_option("--level", level)->check(CLI::IsMember({"op", "cell", "e2e", "all"}));
  gc->add_option("--seed", g_seed);
  gc->add_option("--instances", g_instances);

  // sweep-scale
  TrainFlags sf;
  std::vector<double> values{1, 5, 10, 15, 20, 40};
  std::string s_out;
  auto* sw = app.add_subcommand("sweep-scale", "One short training run per slope value");
  add_train_flags(sw, sf, false);
  sw->add_option("--values", values)->delimiter(',');
  sw->add_option("--out", s_out, "CSV output")->required();

  // export-pgm
  std::string x_in, x_out;
  auto* xp = app.add_subcommand("export-pgm", "Write every frame of an RSEQ file as PGM");
  xp->add_option("--input", x_in)->required();
  xp->add_option("--out", x_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_out, profile, gen_seed, gen_count, test_fraction, min_mean);
    if (*train) {
      const Dataset d = load_dataset(tf.data);
      RunConfig base = config_for_data(d);
      if (!tf.resume.empty()) base = checkpoint_config(tf.resume);
      const RunConfig cfg = resolve(tf, base);
      set_finite_checks(false);
      const fs::path log = tf.log.empty() ? fs::path(tf.out + ".csv") : fs::path(tf.log);
      if (cfg.precision == Precision::Float64) {
        run_training<double>(cfg, d, tf.out, log, tf.resume);
      } else {
        run_training<float>(cfg, d, tf.out, log, tf.resume);
      }
      std::cout << "wrote " << tf.out << " and " << log.string() << '\n';
      return 0;
    }
    if (*pred) {
      return checkpoint_config(p_ckpt).precision == Precision::Float64
                 ? predict_with<double>(p_ckpt, p_in, p_out, p_pgm)
                 : predict_with<float>(p_ckpt, p_in, p_out, p_pgm);
    }
    if (*ev) {
      return checkpoint_config(e_ckpt).precision == Precision::Float64
                 ? eval_with<double>(e_ckpt, e_data, e_report, e_split, e_limit)
                 : eval_with<float>(e_ckpt, e_data, e_report, e_split, e_limit);
    }
    if (*gc) return cmd_gradcheck(level, g_seed, g_instances);
    if (*sw) {
      const Dataset d = load_dataset(sf.data);
      TrainFlags f = sf;
      if (!f.iterations) f.iterations = 300;
      const RunConfig cfg = resolve(f, config_for_data(d));
      set_finite_checks(false);
      return cfg.precision == Precision::Float64 ? sweep_with<double>(cfg, d, values, s_out)
                                                 : sweep_with<float>(cfg, d, values, s_out);
    }
    if (*xp) {
      export_pgm(rseq_read(x_in), x_out, fs::path(x_in).stem().string());
      return 0;
    }
  } catch (const CheckFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheck;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheck;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return 0;
}
