// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...]    (default: all of 1..10)
//
// Criteria 5-8 train full desk-scale models and take a couple of hours on
// one core. Scratch files go to $STARBRI_ACCEPTANCE_DIR (default: a temp dir).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "starbri/checkpoint.hpp"
#include "starbri/data.hpp"
#include "starbri/gradcheck.hpp"
#include "starbri/loss_metrics.hpp"
#include "starbri/network.hpp"
#include "starbri/trainer.hpp"

using namespace starbri;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string fmt_csi(const std::optional<double>& c) { return c ? fmt(*c) : "undefined"; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path workdir() {
  static const fs::path dir = [] {
    const char* env = std::getenv("STARBRI_ACCEPTANCE_DIR");
    fs::path p = env ? fs::path(env) : fs::temp_directory_path() / "starbri_acceptance";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STARBRI_CLI) + " " + args;
  std::cout << "  $ starbri " << args << std::endl;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// --- 1 ---------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  auto reports = op_gradient_checks(20240601, 5);
  const auto cells = cell_gradient_checks(20240602, 5);
  reports.insert(reports.end(), cells.begin(), cells.end());
  std::map<std::string, std::size_t> instances;
  double worst = 0.0;
  bool ok = true;
  for (const auto& r : reports) {
    const std::string op = r.name.substr(0, r.name.find(" #"));
    ++instances[op];
    worst = std::max(worst, r.max_rel_error());
    if (!r.pass() || r.tolerance > 1e-4) {
      ok = false;
      std::cout << "  " << r.summary() << '\n';
    }
  }
  for (const char* op : {"conv2d", "conv_transpose2d", "group_norm", "sigmoid", "tanh", "add",
                         "hadamard", "concat_channels", "split_channels", "cell_step",
                         "bridge_step", "multi_sigmoid_loss"}) {
    if (instances[op] < 5) {
      ok = false;
      std::cout << "  missing instances for " << op << '\n';
    }
  }
  double e2e = 0.0;
  for (bool bridge : {true, false}) {
    const auto r = end_to_end_gradient_check(20240603, bridge);
    e2e = std::max(e2e, r.max_rel_error());
    if (!r.pass() || r.tolerance > 1e-3) {
      ok = false;
      std::cout << "  " << r.summary() << '\n';
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  return {ok, std::to_string(reports.size()) + " op/cell checks, worst " + fmt(worst) +
                  " (< 1e-4); end-to-end worst " + fmt(e2e) + " (< 1e-3); " + fmt(secs, 3) +
                  " s"};
}

// --- 2 ---------------------------------------------------------------------

Outcome csi_oracle() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const double th = 20.0 / 70.0;
  std::size_t mismatches = 0, undefined = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Every tenth pair stays below the threshold to exercise the undefined case.
    const double scale = trial % 10 == 0 ? 0.25 : 1.0;
    std::vector<double> p(64), t(64);
    for (auto& v : p) v = d(rng) * scale;
    for (auto& v : t) v = d(rng) * scale;
    std::size_t hits = 0, misses = 0, fa = 0, cn = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      const bool pp = p[i] >= th, tt = t[i] >= th;
      hits += pp && tt;
      misses += !pp && tt;
      fa += pp && !tt;
      cn += !pp && !tt;
    }
    const auto r = csi<double>(p, t, th);
    bool same = r.counts.hits == hits && r.counts.misses == misses &&
                r.counts.false_alarms == fa && r.counts.correct_negatives == cn;
    const std::size_t denom = hits + misses + fa;
    if (denom == 0) {
      ++undefined;
      same = same && !r.csi.has_value();
    } else {
      same = same && r.csi.has_value() &&
             *r.csi == static_cast<double>(hits) / static_cast<double>(denom);
    }
    mismatches += !same;
  }
  return {mismatches == 0 && undefined > 0,
          "100 pairs, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(undefined) + " undefined cases"};
}

// --- 3 ---------------------------------------------------------------------

Outcome loss_identities() {
  std::mt19937_64 rng(3);
  double identity = 0.0, asym = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_tensor({10, 8, 8}, rng, 0.0, 1.0);
    const auto b = oracle::random_tensor({10, 8, 8}, rng, 0.0, 1.0);
    identity = std::max(identity, std::fabs(multi_sigmoid_loss(a, a, LossConfig{}).value));
    asym = std::max(asym, std::fabs(single_sigmoid_loss(a, b, 20.0 / 70.0, 15.0).value -
                                    single_sigmoid_loss(b, a, 20.0 / 70.0, 15.0).value));
  }
  const double c = 20.0 / 70.0;
  const double diff = oracle::sigmoid((0.5 - c) * 15.0) - oracle::sigmoid((0.3 - c) * 15.0);
  const double oracle_value = diff * diff;
  const double value =
      single_sigmoid_loss(Tensor<double>({1}, 0.5), Tensor<double>({1}, 0.3), c, 15.0).value;
  const bool ok = identity <= 1e-15 && asym <= 1e-12 && std::fabs(value - oracle_value) <= 1e-12 &&
                  std::fabs(value - 0.1665) <= 1e-3;
  return {ok, "L(I,I) max " + fmt(identity) + ", asymmetry max " + fmt(asym) + ", scalar case " +
                  fmt(value, 6) + " (oracle " + fmt(oracle_value, 6) + ", ~0.1665)"};
}

// --- 4 ---------------------------------------------------------------------

template <typename T>
void zero_bridges(ModelParams<T>& p) {
  auto clear = [](BridgeParams<T>& b) {
    b.w1.fill(T(0));
    b.b1.fill(T(0));
    b.beta.fill(T(0));
  };
  for (auto& e : p.encoders) clear(e.bridge);
  clear(p.decoder.bridge);
}

// Stacked ConvLSTM without any bridge; the decoder feeds its top output back.
std::vector<Tensor<double>> plain_stack(std::span<const Tensor<double>> feats,
                                        const StackParams<double>& enc,
                                        const StackParams<double>& dec, std::size_t steps) {
  const Tensor<double>& f0 = feats.front();
  std::vector<CellState<double>> s(
      enc.cells.size(), CellState<double>::zeros(f0.dim(0), enc.cells[0].hidden_channels(),
                                                 f0.dim(2), f0.dim(3)));
  auto run = [&](const Tensor<double>& x, const StackParams<double>& sp) {
    Tensor<double> in = x;
    for (std::size_t l = 0; l < s.size(); ++l) {
      s[l] = cell_step(in, s[l], sp.cells[l]).first;
      in = s[l].h;
    }
    return in;
  };
  for (const auto& x : feats) run(x, enc);
  std::vector<Tensor<double>> out;
  Tensor<double> x = feats.back();
  for (std::size_t k = 0; k < steps; ++k) {
    x = run(x, dec);
    out.push_back(x);
  }
  return out;
}

Outcome zero_bridge() {
  NetworkConfig cfg = NetworkConfig::desk();
  auto p = ModelParams<double>::init(cfg, 4);
  zero_bridges(p);
  NetworkConfig plain = cfg;
  plain.use_bridge = false;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  double net_err = 0.0, stack_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    RadarSequence s;
    s.frames = Tensor<float>({cfg.context, cfg.input_h, cfg.input_w});
    const float level = d(rng);
    for (auto& v : s.frames.values()) v = level * d(rng);
    const auto a = predict<double>(s, p, cfg);
    const auto b = predict<double>(s, p, plain);
    for (std::size_t i = 0; i < a.frames.numel(); ++i)
      net_err = std::max(net_err, std::fabs(static_cast<double>(a.frames[i]) - b.frames[i]));

    // Core recurrence against the independent bridge-free stack.
    const std::size_t hw = cfg.input_h / 4;
    std::vector<Tensor<double>> feats;
    for (std::size_t t = 0; t < cfg.context; ++t)
      feats.push_back(oracle::random_tensor({1, cfg.hidden_channels[0], hw, hw}, rng));
    const Route r = static_cast<Route>(trial % 3);
    const auto enc = encode<double>(feats, r, p, cfg);
    const auto dec = decode<double>(enc.states, enc.bridge, feats.back(), cfg.horizon, p, cfg);
    const auto ref = plain_stack(feats, p.encoders[column_index(r, cfg)], p.decoder, cfg.horizon);
    for (std::size_t k = 0; k < ref.size(); ++k)
      for (std::size_t i = 0; i < ref[k].numel(); ++i)
        stack_err = std::max(stack_err, std::fabs(dec.outputs[k][i] - ref[k][i]));
  }
  return {net_err <= 1e-12 && stack_err <= 1e-12,
          "10 sequences: network vs bridge-free network max diff " + fmt(net_err) +
              ", recurrence vs plain stacked ConvLSTM max diff " + fmt(stack_err)};
}

// --- 5-8: training runs ------------------------------------------------------

struct RunResult {
  double seconds = 0.0;
  double mse = 0.0;
  std::optional<double> csi;
  std::optional<double> heavy_csi;
  double persistence_mse = 0.0;
  std::optional<double> persistence_csi;
  std::vector<double> losses;
};

const Dataset& desk_data() {
  static const Dataset d = [] {
    GenConfig g = GenConfig::desk();
    g.seed = 1;
    return make_dataset(g);
  }();
  return d;
}

RunConfig desk_run(std::uint64_t seed) {
  RunConfig cfg;
  cfg.network.route_thresholds = desk_data().thresholds;
  cfg.train.iterations = 2000;
  cfg.train.batch_size = 8;
  cfg.train.seed = seed;
  return cfg;
}

RunResult train_and_eval(const std::string& label, const RunConfig& cfg) {
  const Dataset& d = desk_data();
  const auto t0 = Clock::now();
  Trainer<float> trainer(cfg, d.train);
  RunResult out;
  while (trainer.iteration() < cfg.train.iterations) {
    out.losses.push_back(trainer.step().loss);
    if (trainer.iteration() % 500 == 0) {
      std::cout << "  [" << label << "] iter " << trainer.iteration() << "  loss "
                << out.losses.back() << "  " << fmt(seconds_since(t0), 4) << " s" << std::endl;
    }
  }
  out.seconds = seconds_since(t0);
  const auto rep = evaluate(trainer.params(), cfg.network, d.test);
  out.mse = rep.model.mse();
  out.csi = rep.model.csi();
  out.heavy_csi = rep.model_by_route[static_cast<std::size_t>(Route::Heavy)].csi();
  out.persistence_mse = rep.persistence.mse();
  out.persistence_csi = rep.persistence.csi();
  std::cout << "  [" << label << "] " << fmt(out.seconds, 4) << " s  test mse " << fmt(out.mse)
            << " csi " << fmt_csi(out.csi) << " heavy csi " << fmt_csi(out.heavy_csi)
            << " | persistence mse " << fmt(out.persistence_mse) << " csi "
            << fmt_csi(out.persistence_csi) << std::endl;
  return out;
}

std::map<std::string, RunResult>& runs() {
  static std::map<std::string, RunResult> r;
  return r;
}

const RunResult& full_run(std::uint64_t seed) {
  const std::string key = "full-s" + std::to_string(seed);
  auto it = runs().find(key);
  if (it == runs().end()) it = runs().emplace(key, train_and_eval(key, desk_run(seed))).first;
  return it->second;
}

const RunResult& variant_run(const std::string& name, std::uint64_t seed,
                             const std::function<void(RunConfig&)>& tweak) {
  const std::string key = name + "-s" + std::to_string(seed);
  auto it = runs().find(key);
  if (it == runs().end()) {
    RunConfig cfg = desk_run(seed);
    tweak(cfg);
    it = runs().emplace(key, train_and_eval(key, cfg)).first;
  }
  return it->second;
}

double csi_or_zero(const std::optional<double>& c) { return c.value_or(0.0); }

Outcome desk_learning() {
  std::vector<double> mse, csi;
  double slowest = 0.0;
  double pmse = 0.0, pcsi = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& r = full_run(seed);
    mse.push_back(r.mse);
    csi.push_back(csi_or_zero(r.csi));
    slowest = std::max(slowest, r.seconds);
    pmse = r.persistence_mse;
    pcsi = csi_or_zero(r.persistence_csi);
  }
  const double m = median(mse), c = median(csi);
  const bool ok = m <= 0.9 * pmse && c >= pcsi + 0.02 && slowest < 20.0 * 60.0;
  return {ok, "median mse " + fmt(m) + " vs persistence " + fmt(pmse) + " (ratio " +
                  fmt(m / pmse, 3) + ", need <= 0.9); median csi " + fmt(c) +
                  " vs persistence " + fmt(pcsi) + " (delta " + fmt(c - pcsi, 3) +
                  ", need >= 0.02); slowest run " + fmt(slowest / 60.0, 3) + " min (< 20)"};
}

Outcome msl_direction() {
  std::vector<double> with, without;
  for (std::uint64_t seed : {1, 2, 3}) {
    with.push_back(csi_or_zero(full_run(seed).csi));
    without.push_back(csi_or_zero(
        variant_run("mse-only", seed, [](RunConfig& c) { c.loss.use_msl = false; }).csi));
  }
  std::string deltas;
  for (std::size_t i = 0; i < 3; ++i) deltas += (i ? ", " : "") + fmt(with[i] - without[i], 3);
  const double a = median(with), b = median(without);
  return {a >= b, "median csi MSL+MSE " + fmt(a) + " vs MSE-only " + fmt(b) + " (delta " +
                      fmt(a - b, 3) + "; per seed " + deltas + ")"};
}

Outcome multi_column_direction() {
  std::vector<double> multi, single;
  for (std::uint64_t seed : {1, 2, 3}) {
    multi.push_back(csi_or_zero(full_run(seed).heavy_csi));
    single.push_back(csi_or_zero(
        variant_run("single-column", seed, [](RunConfig& c) {
          c.network.multi_column = false;
        }).heavy_csi));
  }
  const double a = median(multi), b = median(single);
  return {a >= b, "median heavy-class csi 3-column " + fmt(a) + " vs single-column " + fmt(b) +
                      " (delta " + fmt(a - b, 3) + ")"};
}

Outcome scale_sweep() {
  const Dataset& d = desk_data();
  const fs::path dir = workdir() / "sweep_data";
  fs::remove_all(dir);
  save_dataset(d, dir, 10, "{}");
  const fs::path csv = workdir() / "sweep.csv";
  fs::remove(csv);
  const int code = run_cli("sweep-scale --data " + dir.string() + " --values 1,15,40 --out " +
                           csv.string());
  std::ifstream is(csv);
  std::string line;
  std::size_t rows = 0, finite = 0;
  std::string summary;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("s,", 0) == 0) continue;
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 5) continue;
    bool ok = true;
    for (std::size_t i : {2u, 3u, 4u}) {
      try {
        ok = ok && std::isfinite(std::stod(f[i]));
      } catch (const std::exception&) {
        ok = false;
      }
    }
    finite += ok;
    summary += (summary.empty() ? "" : "; ") + std::string("s=") + f[0] + " mse " + f[3] +
               " csi " + f[4];
  }

  const auto& fixed = full_run(1);
  const auto& ramp = variant_run("schedule-1-40", 1, [](RunConfig& c) {
    c.loss.schedule = ScaleSchedule{1.0, 40.0, c.train.iterations};
  });
  const double gap = std::fabs(csi_or_zero(ramp.csi) - csi_or_zero(fixed.csi));
  const bool ok = code == 0 && rows == 3 && finite == 3 && ramp.csi.has_value() && gap <= 0.05;
  return {ok, "sweep exit " + std::to_string(code) + ", " + std::to_string(finite) + "/" +
                  std::to_string(rows) + " finite rows (" + summary + "); schedule 1->40 csi " +
                  fmt_csi(ramp.csi) + " vs fixed s=15 " + fmt_csi(fixed.csi) + " (gap " +
                  fmt(gap, 3) + ", need <= 0.05)"};
}

// --- 9 ---------------------------------------------------------------------

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome formats() {
  const fs::path dir = workdir() / "formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  std::uniform_real_distribution<float> val(0.0f, 1.0f);
  std::size_t size_ok = 0, rseq_ok = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t t = dim(rng), h = dim(rng), w = dim(rng);
    RadarSequence s;
    s.frames = Tensor<float>({t, h, w});
    for (auto& v : s.frames.values()) v = val(rng);
    const fs::path p = dir / ("s" + std::to_string(i) + ".rseq");
    rseq_write(s, p);
    size_ok += fs::file_size(p) == 20 + 4 * t * h * w && rseq_file_size(t, h, w) == 20 + 4 * t * h * w;
    const auto back = rseq_read(p);
    rseq_ok += back.frames.shape() == s.frames.shape() &&
               std::memcmp(back.frames.data(), s.frames.data(), 4 * t * h * w) == 0;
  }

  // Tiny 64-bit run: checkpoint round trip and resume against an unbroken trace.
  RunConfig cfg;
  cfg.network.layers = 2;
  cfg.network.hidden_channels = {4, 4};
  cfg.network.input_h = cfg.network.input_w = 16;
  cfg.network.context = 3;
  cfg.network.horizon = 2;
  cfg.network.channels_per_group = 2;
  cfg.network.route_thresholds = {0.3, 0.05, 0.5, 0.1};
  cfg.train.batch_size = 3;
  cfg.precision = Precision::Float64;
  std::vector<RadarSequence> train;
  for (int i = 0; i < 12; ++i) {
    RadarSequence s;
    s.frames = Tensor<float>({5, 16, 16});
    const float level = val(rng);
    for (auto& v : s.frames.values()) v = level * val(rng);
    s.source_id = "t" + std::to_string(i);
    train.push_back(std::move(s));
  }
  Trainer<double> unbroken(cfg, train);
  std::vector<double> want, got;
  for (int i = 0; i < 8; ++i) want.push_back(unbroken.step().loss);
  {
    Trainer<double> first(cfg, train);
    for (int i = 0; i < 4; ++i) got.push_back(first.step().loss);
    checkpoint_save<double>(dir / "a.sbck", cfg, {first.params(), first.optim(), first.iteration()});
  }
  auto ck = checkpoint_load<double>(dir / "a.sbck");
  checkpoint_save<double>(dir / "b.sbck", ck.config, ck.state);
  const bool sbck_ok = slurp(dir / "a.sbck") == slurp(dir / "b.sbck");
  Trainer<double> second(ck.config, train);
  second.restore(std::move(ck.state.params), std::move(ck.state.optim), ck.state.iteration);
  for (int i = 0; i < 4; ++i) got.push_back(second.step().loss);
  bool params_ok = true;
  std::vector<const Tensor<double>*> pa, pb;
  unbroken.params().visit([&](std::string_view, const Tensor<double>& t) { pa.push_back(&t); });
  second.params().visit([&](std::string_view, const Tensor<double>& t) { pb.push_back(&t); });
  for (std::size_t i = 0; i < pa.size(); ++i) params_ok = params_ok && *pa[i] == *pb[i];
  const bool resume_ok = got == want && params_ok;

  const bool ok = size_ok == 20 && rseq_ok == 20 && sbck_ok && resume_ok;
  return {ok, "RSEQ sizes " + std::to_string(size_ok) + "/20, round trips " +
                  std::to_string(rseq_ok) + "/20; SBCK save-load-save " +
                  (sbck_ok ? "byte-identical" : "DIFFERS") + "; resume trace " +
                  (resume_ok ? "identical over 8 iterations" : "DIFFERS")};
}

// --- 10 --------------------------------------------------------------------

Outcome routing_partition() {
  GenConfig g = GenConfig::desk();
  g.count = 1000;
  g.seed = 10;
  const auto seqs = synth_generate(g);
  std::vector<RouteStats> stats;
  for (const auto& s : seqs) stats.push_back(route_stats(s, 10));
  const auto th = calibrate_thresholds(stats);
  const auto split = split_by_intensity(seqs, th, 10);

  std::vector<int> seen(seqs.size(), 0);
  bool ordered = true;
  for (const auto& m : split.members) {
    ordered = ordered && std::is_sorted(m.begin(), m.end());
    for (std::size_t i : m) ++seen[i];
  }
  const bool partition = ordered && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  const std::array<double, 3> target{0.592, 0.254, 0.154};
  bool within = true;
  std::string props;
  for (std::size_t k = 0; k < 3; ++k) {
    within = within && std::fabs(split.proportions[k] - target[k]) <= 0.02;
    props += (k ? "/" : "") + fmt(100.0 * split.proportions[k], 3);
  }
  return {partition && within, std::string("1000 sequences, partition ") +
                                   (partition ? "disjoint and exhaustive" : "BROKEN") +
                                   ", proportions " + props + "% (target 59.2/25.4/15.4 +- 2)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"CSI oracle equivalence", csi_oracle},
      {"loss identities", loss_identities},
      {"zero-bridge equivalence", zero_bridge},
      {"desk-scale learning", desk_learning},
      {"MSL direction", msl_direction},
      {"multi-column direction", multi_column_direction},
      {"scale-factor sweep", scale_sweep},
      {"formats", formats},
      {"routing/partition", routing_partition},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  if (selected.empty())
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.insert(i);

  set_finite_checks(false);
  std::size_t failed = 0;
  std::vector<std::string> lines;
  for (std::size_t i : selected) {
    if (i < 1 || i > criteria.size()) {
      std::cerr << "unknown criterion " << i << '\n';
      return 1;
    }
    const auto& [name, fn] = criteria[i - 1];
    std::cout << "criterion " << i << " (" << name << ") running..." << std::endl;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  criterion " << i << ": " << name << " -- "
         << o.detail;
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return failed == 0 ? 0 : 1;
}
