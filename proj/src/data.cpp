#include "starbri/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace starbri {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Generator

GenConfig GenConfig::desk() {
  GenConfig g;
  // light: one or two faint, slow, nearly steady cells
  g.regimes[0] = {1, 2, {0.10, 0.40}, {2.0, 3.5}, {0.3, 0.9}, {0.0, 0.2}, {-0.01, 0.01}};
  // moderate: a few stronger cells, slow evolution
  g.regimes[1] = {2, 3, {0.30, 0.65}, {2.5, 4.5}, {0.5, 1.3}, {0.0, 0.3}, {-0.03, 0.03}};
  // heavy: many intense, fast, quickly growing or decaying cells
  g.regimes[2] = {3, 5, {0.50, 0.95}, {3.0, 5.5}, {0.8, 1.8}, {0.0, 0.4}, {-0.06, 0.06}};
  return g;
}

GenConfig GenConfig::full_scale() {
  GenConfig g = desk();
  g.height = 100;
  g.width = 100;
  const double k = 100.0 / 32.0;
  for (auto& r : g.regimes) {
    r.sigma = {r.sigma.lo * k, r.sigma.hi * k};
    r.wind = {r.wind.lo * k, r.wind.hi * k};
    r.jitter = {r.jitter.lo * k, r.jitter.hi * k};
  }
  return g;
}

void GenConfig::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("gen: empty grid");
  if (frames == 0) throw std::invalid_argument("gen: frames must be >= 1");
  double sum = 0.0;
  std::array<bool, 3> possible{};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& r = regimes[k];
    if (r.min_cells > r.max_cells || r.amplitude.lo > r.amplitude.hi ||
        r.sigma.lo > r.sigma.hi || r.wind.lo > r.wind.hi ||
        r.jitter.lo > r.jitter.hi || r.growth.lo > r.growth.hi) {
      throw std::invalid_argument("gen: regime " +
                                  std::string(route_name(static_cast<Route>(k))) +
                                  " has an inverted range");
    }
    if (r.amplitude.lo < 0.0 || (r.sigma.lo <= 0.0 && r.max_cells > 0)) {
      throw std::invalid_argument("gen: amplitudes must be >= 0 and widths > 0");
    }
    possible[k] = r.max_cells > 0 && r.amplitude.hi > 0.0;
    sum += class_mix[k];
  }
  bool ok = std::abs(sum - 1.0) < 1e-6;
  for (std::size_t k = 0; k < 3; ++k) {
    if (class_mix[k] < 0.0 || class_mix[k] > 1.0) ok = false;
    // A class whose regime cannot produce any echo collapses into light.
    if (k > 0 && !possible[k] && class_mix[k] > 0.0) ok = false;
  }
  if (!ok) {
    std::ostringstream os;
    os << "gen: infeasible class mix (" << class_mix[0] << ", " << class_mix[1]
       << ", " << class_mix[2] << "); achievable: each fraction in [0, 1], sum 1";
    for (std::size_t k = 1; k < 3; ++k) {
      if (!possible[k]) {
        os << ", " << route_name(static_cast<Route>(k))
           << " = 0 (regime has no cells)";
      }
    }
    throw std::invalid_argument(os.str());
  }
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index,
                       std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

double draw(std::mt19937_64& rng, Range r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

std::vector<Route> regime_plan(const GenConfig& cfg) {
  std::array<std::size_t, 3> n{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    n[k] = static_cast<std::size_t>(
        std::floor(cfg.class_mix[k] * static_cast<double>(cfg.count)));
    assigned += n[k];
  }
  // Largest remainders take the leftover slots.
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ra = cfg.class_mix[a] * cfg.count - n[a];
    const double rb = cfg.class_mix[b] * cfg.count - n[b];
    return ra > rb;
  });
  for (std::size_t i = 0; assigned < cfg.count; ++i, ++assigned) ++n[order[i % 3]];

  std::vector<Route> plan;
  plan.reserve(cfg.count);
  for (std::size_t k = 0; k < 3; ++k) plan.insert(plan.end(), n[k], static_cast<Route>(k));
  auto rng = stream(cfg.seed, 0, 0x9e37);
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

RadarSequence synth_sequence(const GenConfig& cfg, std::size_t index,
                             Route regime) {
  const RegimeSpec& spec = cfg.regimes[static_cast<std::size_t>(regime)];
  auto rng = stream(cfg.seed, index, 1);

  struct Cell {
    double x, y, vx, vy, amp, sigma, growth;
  };
  const std::size_t n_cells =
      spec.max_cells == 0
          ? 0
          : std::uniform_int_distribution<std::size_t>(spec.min_cells,
                                                       spec.max_cells)(rng);
  const double angle = draw(rng, {0.0, 2.0 * std::numbers::pi});
  const double wind = draw(rng, spec.wind);
  const double wx = wind * std::cos(angle);
  const double wy = wind * std::sin(angle);
  const double w = static_cast<double>(cfg.width);
  const double h = static_cast<double>(cfg.height);
  const double span_t = static_cast<double>(cfg.frames - 1);

  std::vector<Cell> cells;
  for (std::size_t k = 0; k < n_cells; ++k) {
    Cell c{};
    // Start upwind so that the cell crosses the grid during the sequence.
    const double cx = draw(rng, {0.15 * w, 0.85 * w}) - 0.5 * wx * span_t;
    const double cy = draw(rng, {0.15 * h, 0.85 * h}) - 0.5 * wy * span_t;
    const double ja = draw(rng, {0.0, 2.0 * std::numbers::pi});
    const double js = draw(rng, spec.jitter);
    c.x = cx;
    c.y = cy;
    c.vx = wx + js * std::cos(ja);
    c.vy = wy + js * std::sin(ja);
    c.amp = draw(rng, spec.amplitude);
    c.sigma = draw(rng, spec.sigma);
    c.growth = draw(rng, spec.growth);
    cells.push_back(c);
  }

  Tensor<float> frames({cfg.frames, cfg.height, cfg.width});
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    float* f = frames.data() + t * cfg.height * cfg.width;
    const double td = static_cast<double>(t);
    for (const Cell& c : cells) {
      const double a = c.amp * std::exp(c.growth * td);
      const double px = c.x + c.vx * td;
      const double py = c.y + c.vy * td;
      const double inv = 1.0 / (2.0 * c.sigma * c.sigma);
      for (std::size_t y = 0; y < cfg.height; ++y) {
        const double dy = static_cast<double>(y) - py;
        const double ey = std::exp(-dy * dy * inv);
        if (ey < 1e-9) continue;
        for (std::size_t x = 0; x < cfg.width; ++x) {
          const double dx = static_cast<double>(x) - px;
          f[y * cfg.width + x] +=
              static_cast<float>(a * ey * std::exp(-dx * dx * inv));
        }
      }
    }
    for (std::size_t i = 0; i < cfg.height * cfg.width; ++i) {
      f[i] = std::clamp(f[i], 0.0f, 1.0f);
    }
  }

  RadarSequence seq;
  seq.frames = std::move(frames);
  seq.origin = SequenceOrigin::Synthetic;
  char id[64];
  std::snprintf(id, sizeof id, "synth-s%llu-%06zu",
                static_cast<unsigned long long>(cfg.seed), index);
  seq.source_id = id;
  return seq;
}

std::vector<RadarSequence> synth_generate(const GenConfig& cfg) {
  cfg.validate();
  const auto plan = regime_plan(cfg);
  std::vector<RadarSequence> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    out.push_back(synth_sequence(cfg, i, plan[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing, filtering, splitting

std::vector<RadarSequence> sliding_window(const RadarSequence& seq,
                                          std::size_t length,
                                          std::size_t stride) {
  if (length == 0) throw std::invalid_argument("sliding_window: length must be >= 1");
  if (stride == 0) throw std::invalid_argument("sliding_window: stride must be >= 1");
  std::vector<RadarSequence> out;
  const std::size_t n = seq.length();
  if (n < length) return out;
  for (std::size_t i = 0; i + length <= n; i += stride) {
    RadarSequence w = seq.slice(i, length);
    w.source_id = seq.source_id + "@" + std::to_string(i);
    out.push_back(std::move(w));
  }
  return out;
}

double mean_intensity(const RadarSequence& seq) {
  if (seq.frames.empty()) return 0.0;
  double s = 0.0;
  for (float v : seq.frames.values()) s += v;
  return s / static_cast<double>(seq.frames.numel());
}

std::vector<RadarSequence> filter_rainless(std::span<const RadarSequence> seqs,
                                           double min_mean) {
  std::vector<RadarSequence> out;
  for (const auto& s : seqs) {
    if (mean_intensity(s) >= min_mean) out.push_back(s);
  }
  return out;
}

IntensitySplit split_by_intensity(std::span<const RadarSequence> seqs,
                                  const RouteThresholds& thresholds,
                                  std::size_t frames) {
  IntensitySplit out;
  out.stats.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.stats.push_back(route_stats(seqs[i], frames));
    const Route r = classify(out.stats.back(), thresholds);
    out.members[static_cast<std::size_t>(r)].push_back(i);
  }
  if (!seqs.empty()) {
    for (std::size_t k = 0; k < 3; ++k) {
      out.proportions[k] = static_cast<double>(out.members[k].size()) /
                           static_cast<double>(seqs.size());
    }
  }
  return out;
}

RouteThresholds calibrate_thresholds(std::span<const RouteStats> stats,
                                     std::array<double, 3> target) {
  if (stats.empty()) throw std::invalid_argument("calibrate: no statistics");
  const std::size_t n = stats.size();
  std::vector<double> mu(n), delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = stats[i].mu;
    delta[i] = stats[i].delta;
  }
  std::sort(mu.begin(), mu.end());
  std::sort(delta.begin(), delta.end());

  auto inside = [&](std::size_t k) {
    std::size_t c = 0;
    for (const auto& s : stats) c += (s.mu <= mu[k] && s.delta <= delta[k]);
    return static_cast<double>(c) / static_cast<double>(n);
  };
  // Smallest quantile index in [lo, n) whose box holds >= goal, then the
  // closer of it and its predecessor.
  auto search = [&](double goal, std::size_t lo) {
    std::size_t a = lo, b = n - 1;
    while (a < b) {
      const std::size_t m = a + (b - a) / 2;
      if (inside(m) >= goal) {
        b = m;
      } else {
        a = m + 1;
      }
    }
    if (a > lo && std::abs(inside(a - 1) - goal) <= std::abs(inside(a) - goal)) --a;
    return a;
  };
  auto corner = [&](const std::vector<double>& v, std::size_t k) {
    return k + 1 < n ? 0.5 * (v[k] + v[k + 1]) : v[k];
  };

  const double sum = target[0] + target[1] + target[2];
  const std::size_t k1 = search(target[0] / sum, 0);
  const std::size_t k2 = search((target[0] + target[1]) / sum, k1);
  RouteThresholds th;
  th.m1 = corner(mu, k1);
  th.d1 = corner(delta, k1);
  th.m2 = corner(mu, k2);
  th.d2 = corner(delta, k2);
  return th;
}

// ---------------------------------------------------------------------------
// RSEQ

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) {
    throw std::invalid_argument(std::string("rseq: ") + what + " exceeds 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t rseq_file_size(std::size_t t, std::size_t h, std::size_t w) {
  return kRseqHeaderBytes + t * h * w * sizeof(float);
}

void rseq_write(const RadarSequence& seq, const std::filesystem::path& path) {
  if (seq.frames.rank() != 3) {
    throw ShapeError("rseq_write: frames must be [T, H, W], got " +
                     shape_str(seq.frames.shape()));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("rseq_write: cannot open " + path.string());
  os.write("RSEQ", 4);
  put_u32(os, kRseqVersion);
  put_u32(os, checked_u32(seq.length(), "T"));
  put_u32(os, checked_u32(seq.height(), "H"));
  put_u32(os, checked_u32(seq.width(), "W"));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(seq.frames.data()),
             static_cast<std::streamsize>(seq.frames.numel() * sizeof(float)));
  } else {
    for (float v : seq.frames.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw IoError("rseq_write: write failed for " + path.string());
}

RadarSequence rseq_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("rseq_read: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "RSEQ", 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, "rseq: bad magic" + where);
  }
  if (bytes.size() < 8) {
    throw FormatError(FormatError::Kind::Truncated, "rseq: truncated header" + where);
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kRseqVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "rseq: version " + std::to_string(version) +
                          " not supported (expected " +
                          std::to_string(kRseqVersion) + ")" + where);
  }
  if (bytes.size() < kRseqHeaderBytes) {
    throw FormatError(FormatError::Kind::Truncated, "rseq: truncated header" + where);
  }
  const std::size_t t = get_u32(bytes.data() + 8);
  const std::size_t h = get_u32(bytes.data() + 12);
  const std::size_t w = get_u32(bytes.data() + 16);
  if (t == 0 || h == 0 || w == 0) {
    throw FormatError(FormatError::Kind::Malformed,
                      "rseq: zero dimension in header" + where);
  }
  const std::size_t expected = rseq_file_size(t, h, w);
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::Truncated,
                      "rseq: payload truncated (" + std::to_string(bytes.size()) +
                          " of " + std::to_string(expected) + " bytes)" + where);
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::Malformed,
                      "rseq: " + std::to_string(bytes.size() - expected) +
                          " trailing bytes" + where);
  }
  std::vector<float> data(t * h * w);
  const unsigned char* p = bytes.data() + kRseqHeaderBytes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  }
  RadarSequence seq;
  seq.frames = Tensor<float>({t, h, w}, std::move(data));
  seq.origin = SequenceOrigin::File;
  seq.source_id = path.stem().string();
  return seq;
}

// ---------------------------------------------------------------------------
// Manifest

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot open " + path.string());
  json head;
  head["kind"] = "header";
  head["context"] = m.context;
  head["thresholds"] = {{"m1", m.thresholds.m1}, {"d1", m.thresholds.d1},
                        {"m2", m.thresholds.m2}, {"d2", m.thresholds.d2}};
  head["config"] = m.config_json.empty() ? json::object() : json::parse(m.config_json);
  os << head.dump() << '\n';
  for (const auto& e : m.entries) {
    json j;
    j["path"] = e.path;
    j["mu"] = e.stats.mu;
    j["delta"] = e.stats.delta;
    j["route"] = std::string(route_name(e.route));
    j["split"] = e.split;
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("manifest: write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "header") {
          throw FormatError(FormatError::Kind::Malformed,
                            "manifest: first record must be the header");
        }
        m.context = j.at("context").get<std::size_t>();
        const auto& t = j.at("thresholds");
        m.thresholds = {t.at("m1").get<double>(), t.at("d1").get<double>(),
                        t.at("m2").get<double>(), t.at("d2").get<double>()};
        m.config_json = j.at("config").dump();
        have_header = true;
        continue;
      }
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.stats = {j.at("mu").get<double>(), j.at("delta").get<double>()};
      const auto r = parse_route(j.at("route").get<std::string>());
      if (!r) {
        throw FormatError(FormatError::Kind::Malformed,
                          "manifest: unknown route on line " + std::to_string(lineno));
      }
      e.route = *r;
      e.split = j.at("split").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw FormatError(FormatError::Kind::Malformed,
                      "manifest " + path.string() + " line " +
                          std::to_string(lineno) + ": " + ex.what());
  }
  if (!have_header) {
    throw FormatError(FormatError::Kind::Truncated,
                      "manifest: missing header in " + path.string());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Datasets

Dataset make_dataset(const GenConfig& gen, const DatasetOptions& opts) {
  if (!(opts.test_fraction >= 0.0 && opts.test_fraction < 1.0)) {
    throw std::invalid_argument("dataset: test_fraction must be in [0, 1)");
  }
  std::vector<RadarSequence> all = synth_generate(gen);
  std::vector<std::size_t> perm(all.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  auto rng = stream(gen.seed, 0, 0x5eed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::llround(opts.test_fraction * static_cast<double>(all.size())));
  std::vector<bool> is_test(all.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = true;

  Dataset d;
  std::vector<RadarSequence> train;
  for (std::size_t i = 0; i < all.size(); ++i) {
    (is_test[i] ? d.test : train).push_back(std::move(all[i]));
  }
  d.train = filter_rainless(train, opts.min_mean);
  if (opts.calibrate && !d.train.empty()) {
    std::vector<RouteStats> stats;
    stats.reserve(d.train.size());
    for (const auto& s : d.train) stats.push_back(route_stats(s, opts.context));
    d.thresholds = calibrate_thresholds(stats);
  }
  return d;
}

Manifest save_dataset(const Dataset& data, const std::filesystem::path& dir,
                      std::size_t context, const std::string& config_json) {
  namespace fs = std::filesystem;
  Manifest m;
  m.thresholds = data.thresholds;
  m.context = context;
  m.config_json = config_json;
  for (const char* split : {"train", "test"}) {
    fs::create_directories(dir / split);
    const auto& seqs = std::string(split) == "train" ? data.train : data.test;
    for (const auto& s : seqs) {
      const std::string rel = std::string(split) + "/" + s.source_id + ".rseq";
      rseq_write(s, dir / rel);
      ManifestEntry e;
      e.path = rel;
      e.stats = route_stats(s, context);
      e.route = classify(e.stats, data.thresholds);
      e.split = split;
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest(m, dir / "manifest.jsonl");
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir / "manifest.jsonl");
  Dataset d;
  d.thresholds = m.thresholds;
  for (const auto& e : m.entries) {
    RadarSequence s = rseq_read(dir / e.path);
    s.source_id = e.path;
    if (e.split == "train") {
      d.train.push_back(std::move(s));
    } else if (e.split == "test") {
      d.test.push_back(std::move(s));
    } else {
      throw FormatError(FormatError::Kind::Malformed,
                        "manifest: unknown split '" + e.split + "'");
    }
  }
  return d;
}

}  // namespace starbri
