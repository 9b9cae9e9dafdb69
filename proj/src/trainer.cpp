#include "starbri/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <random>
#include <stdexcept>
#include <thread>

namespace starbri {

namespace {

std::vector<const RadarSequence*> pick(std::span<const RadarSequence> seqs,
                                       std::span<const std::size_t> idx) {
  std::vector<const RadarSequence*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&seqs[i]);
  return out;
}

template <typename T>
RadarSequence to_sequence(const Tensor<T>& pred, std::size_t b,
                          const RadarSequence& like) {
  const std::size_t l = pred.dim(0), n = pred.dim(1), h = pred.dim(2),
                    w = pred.dim(3);
  std::vector<float> data(l * h * w);
  for (std::size_t t = 0; t < l; ++t) {
    const T* src = pred.data() + (t * n + b) * h * w;
    std::copy(src, src + h * w, data.begin() + t * h * w);
  }
  RadarSequence s;
  s.frames = Tensor<float>({l, h, w}, std::move(data));
  s.origin = like.origin;
  s.source_id = like.source_id;
  return s;
}

void check_sequence(const RadarSequence& s, const NetworkConfig& cfg) {
  if (s.length() < cfg.context + cfg.horizon || s.height() != cfg.input_h ||
      s.width() != cfg.input_w) {
    throw std::invalid_argument(
        "sequence " + s.source_id + " has shape " + shape_str(s.frames.shape()) +
        "; need at least " + std::to_string(cfg.context + cfg.horizon) +
        " frames of " + std::to_string(cfg.input_h) + "x" +
        std::to_string(cfg.input_w));
  }
}

}  // namespace

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const NetworkConfig& cfg,
                    std::span<const RadarSequence> seqs, std::size_t batch,
                    std::size_t limit) {
  if (batch == 0) batch = 1;
  const std::size_t n = limit ? std::min(limit, seqs.size()) : seqs.size();
  std::array<std::vector<std::size_t>, 3> groups;
  std::vector<Route> routes(n);
  for (std::size_t i = 0; i < n; ++i) {
    check_sequence(seqs[i], cfg);
    routes[i] = route(seqs[i], cfg);
    groups[column_index(routes[i], cfg)].push_back(i);
  }
  EvalReport rep;
  for (std::size_t col = 0; col < 3; ++col) {
    const auto& members = groups[col];
    for (std::size_t off = 0; off < members.size(); off += batch) {
      const std::size_t cnt = std::min(batch, members.size() - off);
      const std::span<const std::size_t> idx(members.data() + off, cnt);
      const auto ptrs = pick(seqs, idx);
      const Tensor<T> ctx = time_major_batch<T>(ptrs, 0, cfg.context);
      const auto fwd = forward_batch(ctx, routes[idx[0]], params, cfg);
      for (std::size_t b = 0; b < cnt; ++b) {
        const RadarSequence& s = seqs[idx[b]];
        const RadarSequence truth = s.slice(cfg.context, cfg.horizon);
        const RadarSequence pred = to_sequence(fwd.prediction, b, s);
        const RadarSequence base =
            persistence_baseline(s.slice(0, cfg.context), cfg.horizon);
        const auto r = static_cast<std::size_t>(routes[idx[b]]);
        rep.model.add(pred, truth);
        rep.persistence.add(base, truth);
        rep.model_by_route[r].add(pred, truth);
        rep.persistence_by_route[r].add(base, truth);
      }
    }
  }
  return rep;
}

template <typename T>
Trainer<T>::Trainer(RunConfig cfg, std::vector<RadarSequence> train)
    : cfg_(std::move(cfg)), train_(std::move(train)) {
  cfg_.validate();
  if (train_.empty()) throw std::invalid_argument("train: empty training set");
  std::stable_sort(train_.begin(), train_.end(),
                   [](const RadarSequence& a, const RadarSequence& b) {
                     return a.source_id < b.source_id;
                   });
  routes_.reserve(train_.size());
  for (std::size_t i = 0; i < train_.size(); ++i) {
    check_sequence(train_[i], cfg_.network);
    routes_.push_back(route(train_[i], cfg_.network));
    by_route_[static_cast<std::size_t>(routes_.back())].push_back(i);
  }
  if (cfg_.train.class_weights) {
    class_weights_ = *cfg_.train.class_weights;
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (class_weights_[k] > 0.0 && by_route_[k].empty()) {
        std::cerr << "warning: no training sequences routed "
                  << route_name(static_cast<Route>(k))
                  << "; its sampling weight is dropped\n";
        class_weights_[k] = 0.0;
      }
      total += class_weights_[k];
    }
    if (total <= 0.0) {
      throw std::invalid_argument("train: every weighted class is empty");
    }
    for (double& w : class_weights_) w /= total;
  }
  params_ = ModelParams<T>::init(cfg_.network, cfg_.train.seed);
}

template <typename T>
std::vector<std::size_t> Trainer<T>::sample(std::uint64_t iteration) const {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.train.seed),
                    static_cast<std::uint32_t>(cfg_.train.seed >> 32),
                    static_cast<std::uint32_t>(iteration),
                    static_cast<std::uint32_t>(iteration >> 32), 0x7a11u};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> out(cfg_.train.batch_size);
  if (!cfg_.train.class_weights) {
    std::uniform_int_distribution<std::size_t> pick_any(0, train_.size() - 1);
    for (auto& i : out) i = pick_any(rng);
    return out;
  }
  std::discrete_distribution<std::size_t> pick_class(class_weights_.begin(),
                                                     class_weights_.end());
  for (auto& i : out) {
    const auto& members = by_route_[pick_class(rng)];
    i = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
  }
  return out;
}

template <typename T>
double Trainer<T>::scale_at(std::uint64_t iteration) const {
  return cfg_.loss.schedule ? scale_schedule(iteration, *cfg_.loss.schedule)
                            : cfg_.loss.scale;
}

template <typename T>
StepResult Trainer<T>::step() {
  const NetworkConfig& net = cfg_.network;
  StepResult res;
  res.iteration = iteration_;
  res.scale = scale_at(iteration_);
  const auto batch = sample(iteration_);

  // Group by encoder column, keeping batch order inside each group.
  std::array<std::vector<std::size_t>, 3> groups;
  std::array<Route, 3> group_route{};
  for (std::size_t i : batch) {
    const Route r = routes_[i];
    ++res.route_counts[static_cast<std::size_t>(r)];
    const std::size_t col = column_index(r, net);
    if (groups[col].empty()) group_route[col] = r;
    groups[col].push_back(i);
  }

  const double denom = static_cast<double>(batch.size() * net.horizon);
  struct GroupOut {
    ModelParams<T> grads;
    double loss = 0.0;
    double sq = 0.0;
  };
  std::array<GroupOut, 3> outs;
  auto run_group = [&](std::size_t col) {
    const auto ptrs = pick(train_, groups[col]);
    const Tensor<T> ctx = time_major_batch<T>(ptrs, 0, net.context);
    const Tensor<T> target = time_major_batch<T>(ptrs, net.context, net.horizon);
    auto fwd = forward_batch(ctx, group_route[col], params_, net);
    auto lv = multi_sigmoid_loss(target, fwd.prediction, cfg_.loss, res.scale);
    const T scale = static_cast<T>(1.0 / denom);
    for (auto& g : lv.grad.values()) g *= scale;
    GroupOut& o = outs[col];
    o.loss = static_cast<double>(lv.value);
    const T* p = fwd.prediction.data();
    const T* y = target.data();
    for (std::size_t k = 0; k < target.numel(); ++k) {
      const double d = static_cast<double>(p[k]) - static_cast<double>(y[k]);
      o.sq += d * d;
    }
    o.grads = ModelParams<T>::zeros_like(params_);
    backward_batch(fwd.tape, params_, net, lv.grad, o.grads);
  };

  std::vector<std::size_t> active;
  for (std::size_t col = 0; col < 3; ++col) {
    if (!groups[col].empty()) active.push_back(col);
  }
  if (cfg_.threads > 1 && active.size() > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      workers.emplace_back([&, k] {
        try {
          run_group(active[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t col : active) run_group(col);
  }

  // Fixed summation order keeps the update independent of scheduling.
  ModelParams<T>& grads = outs[active[0]].grads;
  double loss = outs[active[0]].loss, sq = outs[active[0]].sq;
  for (std::size_t k = 1; k < active.size(); ++k) {
    add_into<T>(grads, outs[active[k]].grads);
    loss += outs[active[k]].loss;
    sq += outs[active[k]].sq;
  }
  res.loss = loss / denom;
  res.mse = sq / static_cast<double>(batch.size());
  if (!std::isfinite(res.loss)) {
    throw NumericError("train: non-finite loss at iteration " +
                       std::to_string(iteration_));
  }
  adam_step<T>(params_, grads, optim_, cfg_.optim);
  ++iteration_;
  return res;
}

template <typename T>
void Trainer<T>::restore(ModelParams<T> params, OptimState<T> optim,
                         std::uint64_t iteration) {
  const auto want = tensor_list<T>(params_);
  const auto got = tensor_list<T>(params);
  if (want.size() != got.size()) throw ShapeError("restore: parameter structure mismatch");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i]->shape() != got[i]->shape()) {
      throw ShapeError("restore: parameter shape mismatch at slot " + std::to_string(i));
    }
  }
  params_ = std::move(params);
  optim_ = std::move(optim);
  iteration_ = iteration;
}

MetricLog::MetricLog(std::ostream& os, const std::string& config_json) : os_(os) {
  os_ << "# config: " << config_json << '\n'
      << "iteration,split,loss,mse,csi,undefined_frame_count,s,route_counts\n";
}

void MetricLog::train_row(const StepResult& r) {
  os_ << r.iteration + 1 << ",train," << std::setprecision(9) << r.loss << ','
      << r.mse << ",,," << r.scale << ',' << r.route_counts[0] << '/'
      << r.route_counts[1] << '/' << r.route_counts[2] << '\n';
}

void MetricLog::eval_row(std::uint64_t iteration, const std::string& split,
                         const Verification& v, double scale) {
  os_ << iteration << ',' << split << ",," << std::setprecision(9) << v.mse()
      << ',';
  if (const auto c = v.csi()) os_ << *c;
  os_ << ',' << v.undefined_frames << ',' << scale << ",\n";
  os_.flush();
}

template <typename T>
void train_loop(Trainer<T>& trainer, const TrainLoopOptions<T>& opts) {
  const TrainConfig& tc = trainer.config().train;
  StepResult acc;
  std::size_t since = 0;
  auto eval = [&] {
    if (!opts.log || opts.test.empty()) return;
    const auto rep = evaluate(trainer.params(), trainer.config().network,
                              opts.test, 16, tc.eval_samples);
    const double s = trainer.scale_at(trainer.iteration());
    opts.log->eval_row(trainer.iteration(), "test", rep.model, s);
  };
  while (trainer.iteration() < opts.until) {
    const StepResult r = trainer.step();
    if (opts.on_step) opts.on_step(r);
    acc.loss += r.loss;
    acc.mse += r.mse;
    for (std::size_t k = 0; k < 3; ++k) acc.route_counts[k] += r.route_counts[k];
    ++since;
    const std::uint64_t done = trainer.iteration();
    if (opts.log && tc.log_interval && (done % tc.log_interval == 0 || done == opts.until)) {
      StepResult row = acc;
      row.iteration = r.iteration;
      row.loss /= static_cast<double>(since);
      row.mse /= static_cast<double>(since);
      row.scale = r.scale;
      opts.log->train_row(row);
      acc = StepResult{};
      since = 0;
    }
    if (tc.eval_interval && done % tc.eval_interval == 0 && done != opts.until) eval();
    if (opts.checkpoint && tc.checkpoint_interval && done % tc.checkpoint_interval == 0) {
      opts.checkpoint(trainer);
    }
  }
  eval();
}

template EvalReport evaluate<float>(const ModelParams<float>&, const NetworkConfig&,
                                    std::span<const RadarSequence>, std::size_t,
                                    std::size_t);
template EvalReport evaluate<double>(const ModelParams<double>&, const NetworkConfig&,
                                     std::span<const RadarSequence>, std::size_t,
                                     std::size_t);
template class Trainer<float>;
template class Trainer<double>;
template void train_loop<float>(Trainer<float>&, const TrainLoopOptions<float>&);
template void train_loop<double>(Trainer<double>&, const TrainLoopOptions<double>&);

}  // namespace starbri
