#include "starbri/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace starbri {

using nlohmann::json;

std::string_view precision_name(Precision p) {
  return p == Precision::Float64 ? "float64" : "float32";
}

std::optional<Precision> parse_precision(std::string_view name) {
  if (name == "float32" || name == "32" || name == "f32") return Precision::Float32;
  if (name == "float64" || name == "64" || name == "f64") return Precision::Float64;
  return std::nullopt;
}

void RunConfig::validate() const {
  network.validate();
  loss.validate();
  if (train.batch_size < 1) throw std::invalid_argument("training: batch_size must be >= 1");
  if (!(optim.lr >= 0.0)) throw std::invalid_argument("optimizer: lr must be >= 0");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 &&
        optim.beta2 < 1.0)) {
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw std::invalid_argument("optimizer: eps must be > 0");
  if (optim.clip_norm < 0.0) throw std::invalid_argument("optimizer: clip_norm must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (train.class_weights) {
    double s = 0.0;
    for (double w : *train.class_weights) {
      if (w < 0.0) throw std::invalid_argument("training: class weights must be >= 0");
      s += w;
    }
    if (s <= 0.0) throw std::invalid_argument("training: class weights sum to zero");
  }
}

namespace {

json to_json(const RunConfig& c) {
  const auto& n = c.network;
  json net = {
      {"layers", n.layers},
      {"hidden_channels", n.hidden_channels},
      {"cell_kernel", n.cell_kernel},
      {"input_h", n.input_h},
      {"input_w", n.input_w},
      {"horizon", n.horizon},
      {"context", n.context},
      {"channels_per_group", n.channels_per_group},
      {"use_bridge", n.use_bridge},
      {"multi_column", n.multi_column},
      {"route_thresholds",
       {{"m1", n.route_thresholds.m1},
        {"d1", n.route_thresholds.d1},
        {"m2", n.route_thresholds.m2},
        {"d2", n.route_thresholds.d2}}},
  };
  json loss = {
      {"critical_points", c.loss.critical_points},
      {"scale", c.loss.scale},
      {"lambda_mse", c.loss.lambda_mse},
      {"use_msl", c.loss.use_msl},
      {"raw_scale", c.loss.raw_scale},
      {"schedule", nullptr},
  };
  if (c.loss.schedule) {
    loss["schedule"] = {{"start", c.loss.schedule->start},
                        {"end", c.loss.schedule->end},
                        {"iterations", c.loss.schedule->iterations}};
  }
  json opt = {
      {"kind", c.optim.kind == OptimizerKind::Adam ? "adam" : "sgd"},
      {"lr", c.optim.lr},
      {"beta1", c.optim.beta1},
      {"beta2", c.optim.beta2},
      {"eps", c.optim.eps},
      {"clip_norm", c.optim.clip_norm},
  };
  json train = {
      {"batch_size", c.train.batch_size},
      {"iterations", c.train.iterations},
      {"eval_interval", c.train.eval_interval},
      {"log_interval", c.train.log_interval},
      {"eval_samples", c.train.eval_samples},
      {"seed", c.train.seed},
      {"checkpoint_interval", c.train.checkpoint_interval},
      {"class_weights", nullptr},
  };
  if (c.train.class_weights) train["class_weights"] = *c.train.class_weights;
  return {{"network", net},     {"loss", loss},
          {"optimizer", opt},   {"training", train},
          {"precision", std::string(precision_name(c.precision))},
          {"threads", c.threads}};
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& section) {
  if (!j.is_object()) {
    throw std::invalid_argument("config: section '" + section + "' must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw std::invalid_argument("config: unknown key '" + it.key() +
                                  "' in section '" + section + "'");
    }
  }
}

template <typename V>
void take(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

std::string to_json_text(const RunConfig& cfg, int indent) {
  return to_json(cfg).dump(indent);
}

RunConfig run_config_from_json(std::string_view text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  try {
    reject_unknown(j, {"network", "loss", "optimizer", "training", "precision", "threads"},
                   "<top>");
    if (j.contains("network")) {
      const json& n = j["network"];
      reject_unknown(n,
                     {"layers", "hidden_channels", "cell_kernel", "input_h", "input_w",
                      "horizon", "context", "channels_per_group", "use_bridge",
                      "multi_column", "route_thresholds"},
                     "network");
      auto& o = c.network;
      take(n, "layers", o.layers);
      take(n, "hidden_channels", o.hidden_channels);
      if (n.contains("layers") && !n.contains("hidden_channels")) {
        o.hidden_channels.assign(o.layers, o.hidden_channels.front());
      }
      take(n, "cell_kernel", o.cell_kernel);
      take(n, "input_h", o.input_h);
      take(n, "input_w", o.input_w);
      take(n, "horizon", o.horizon);
      take(n, "context", o.context);
      take(n, "channels_per_group", o.channels_per_group);
      take(n, "use_bridge", o.use_bridge);
      take(n, "multi_column", o.multi_column);
      if (n.contains("route_thresholds")) {
        const json& t = n["route_thresholds"];
        reject_unknown(t, {"m1", "d1", "m2", "d2"}, "network.route_thresholds");
        take(t, "m1", o.route_thresholds.m1);
        take(t, "d1", o.route_thresholds.d1);
        take(t, "m2", o.route_thresholds.m2);
        take(t, "d2", o.route_thresholds.d2);
      }
    }
    if (j.contains("loss")) {
      const json& l = j["loss"];
      reject_unknown(l, {"critical_points", "scale", "lambda_mse", "use_msl", "raw_scale",
                         "schedule"},
                     "loss");
      take(l, "critical_points", c.loss.critical_points);
      take(l, "scale", c.loss.scale);
      take(l, "lambda_mse", c.loss.lambda_mse);
      take(l, "use_msl", c.loss.use_msl);
      take(l, "raw_scale", c.loss.raw_scale);
      if (l.contains("schedule")) {
        if (l["schedule"].is_null()) {
          c.loss.schedule.reset();
        } else {
          const json& s = l["schedule"];
          reject_unknown(s, {"start", "end", "iterations"}, "loss.schedule");
          ScaleSchedule sch;
          take(s, "start", sch.start);
          take(s, "end", sch.end);
          take(s, "iterations", sch.iterations);
          c.loss.schedule = sch;
        }
      }
    }
    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      reject_unknown(o, {"kind", "lr", "beta1", "beta2", "eps", "clip_norm"}, "optimizer");
      if (o.contains("kind")) {
        const auto k = o["kind"].get<std::string>();
        if (k == "adam") {
          c.optim.kind = OptimizerKind::Adam;
        } else if (k == "sgd") {
          c.optim.kind = OptimizerKind::Sgd;
        } else {
          throw std::invalid_argument("config: optimizer.kind must be adam or sgd");
        }
      }
      take(o, "lr", c.optim.lr);
      take(o, "beta1", c.optim.beta1);
      take(o, "beta2", c.optim.beta2);
      take(o, "eps", c.optim.eps);
      take(o, "clip_norm", c.optim.clip_norm);
    }
    if (j.contains("training")) {
      const json& t = j["training"];
      reject_unknown(t, {"batch_size", "iterations", "eval_interval", "log_interval",
                         "eval_samples", "seed", "checkpoint_interval", "class_weights"},
                     "training");
      take(t, "batch_size", c.train.batch_size);
      take(t, "iterations", c.train.iterations);
      take(t, "eval_interval", c.train.eval_interval);
      take(t, "log_interval", c.train.log_interval);
      take(t, "eval_samples", c.train.eval_samples);
      take(t, "seed", c.train.seed);
      take(t, "checkpoint_interval", c.train.checkpoint_interval);
      if (t.contains("class_weights")) {
        if (t["class_weights"].is_null()) {
          c.train.class_weights.reset();
        } else {
          c.train.class_weights = t["class_weights"].get<std::array<double, 3>>();
        }
      }
    }
    if (j.contains("precision")) {
      const auto p = parse_precision(j["precision"].get<std::string>());
      if (!p) throw std::invalid_argument("config: precision must be float32 or float64");
      c.precision = *p;
    }
    take(j, "threads", c.threads);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str(), std::move(base));
}

ScaleSchedule parse_scale_schedule(std::string_view text) {
  const auto bad = [&] {
    return std::invalid_argument("scale schedule '" + std::string(text) +
                                 "' must look like start:end:iterations");
  };
  const auto p1 = text.find(':');
  if (p1 == std::string_view::npos) throw bad();
  const auto p2 = text.find(':', p1 + 1);
  if (p2 == std::string_view::npos) throw bad();
  ScaleSchedule s;
  try {
    std::size_t used = 0;
    const std::string a(text.substr(0, p1)), b(text.substr(p1 + 1, p2 - p1 - 1)),
        n(text.substr(p2 + 1));
    s.start = std::stod(a, &used);
    if (used != a.size()) throw bad();
    s.end = std::stod(b, &used);
    if (used != b.size()) throw bad();
    const auto r = std::from_chars(n.data(), n.data() + n.size(), s.iterations);
    if (r.ec != std::errc() || r.ptr != n.data() + n.size()) throw bad();
  } catch (const std::logic_error&) {
    throw bad();
  }
  if (!(s.start > 0.0 && s.end > 0.0) || s.iterations == 0) throw bad();
  return s;
}

}  // namespace starbri
