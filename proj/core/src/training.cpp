#include "hdformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hdformer/metrics.hpp"

namespace hdf {

void LossConfig::validate(std::int64_t frames) const {
  if (lambda < 0.0) throw ConfigError("loss lambda must be >= 0");
  if (lambda > 0.0) {
    if (motion_intervals.empty())
      throw ConfigError("motion loss enabled but no intervals configured");
    for (std::int64_t d : motion_intervals) {
      if (d < 1)
        throw ConfigError("motion intervals must be >= 1");
      if (d >= frames)
        throw ConfigError(format_msg("motion interval ", d,
                                     " must be smaller than the window of ",
                                     frames, " frames"));
    }
  }
}

OptimizerMethod optimizer_method_from_string(const std::string& s) {
  if (s == "adam") return OptimizerMethod::adam;
  if (s == "adamod") return OptimizerMethod::adamod;
  throw ConfigError(
      format_msg("unknown optimizer '", s, "'; expected adam|adamod"));
}

std::string to_string(OptimizerMethod m) {
  return m == OptimizerMethod::adam ? "adam" : "adamod";
}

void OptimizerConfig::validate() const {
  if (base_lr <= 0.0) throw ConfigError("base learning rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (decay <= 0.0) throw ConfigError("decay factor must be positive");
  int prev = -1;
  for (int m : milestones) {
    if (m <= prev)
      throw ConfigError("milestones must be strictly ascending");
    if (m >= epochs)
      throw ConfigError(format_msg("milestone ", m,
                                   " is not below the epoch count ", epochs));
    prev = m;
  }
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
}

double learning_rate_at(const OptimizerConfig& cfg, int epoch) {
  int hits = 0;
  for (int m : cfg.milestones)
    if (m <= epoch) ++hits;
  return cfg.base_lr * std::pow(cfg.decay, hits);
}

namespace {

void check_loss_shapes(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError(format_msg("loss shapes disagree: ",
                                shape_str(pred.shape()), " vs ",
                                shape_str(gt.shape())));
  if (pred.rank() != 4 || pred.extent(-1) != 3)
    throw ShapeError(format_msg("loss expects [B,T,J,3], got ",
                                shape_str(pred.shape())));
}

Tensor pairwise_distance(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return sqrt_elem(sum_lastdim(mul(d, d)));
}

}  // namespace

Tensor mpjpe_loss(const Tensor& pred, const Tensor& gt) {
  check_loss_shapes(pred, gt);
  return mean_all(pairwise_distance(pred, gt));
}

Tensor motion_loss(const Tensor& pred, const Tensor& gt,
                   std::span<const std::int64_t> intervals) {
  check_loss_shapes(pred, gt);
  const std::int64_t frames = pred.extent(1);
  if (frames < 2)
    throw ValueError("motion loss needs at least two frames");
  if (intervals.empty()) throw ValueError("motion loss needs intervals");
  Tensor acc;
  for (std::int64_t delta : intervals) {
    if (delta < 1 || delta >= frames)
      throw ValueError(format_msg("motion interval ", delta,
                                  " invalid for ", frames, " frames"));
    std::vector<std::int64_t> hi, lo;
    for (std::int64_t t = 0; t + delta < frames; ++t) {
      lo.push_back(t);
      hi.push_back(t + delta);
    }
    Tensor dp = sub(index_select(pred, 1, hi), index_select(pred, 1, lo));
    Tensor dg = sub(index_select(gt, 1, hi), index_select(gt, 1, lo));
    Tensor term = mean_all(pairwise_distance(dp, dg));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(intervals.size()));
}

Tensor total_loss(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
  Tensor position = mpjpe_loss(pred, gt);
  if (cfg.lambda == 0.0) return position;
  Tensor motion = motion_loss(pred, gt, cfg.motion_intervals);
  return add(position, scale(motion, cfg.lambda));
}

Optimizer::Optimizer(ParamRegistry& params, OptimizerConfig cfg)
    : params_(&params), cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& [name, t] : params.entries()) {
    Slot slot;
    slot.param = t;
    // weight decay is scoped to convolution weight stacks
    slot.decay = name.size() >= 7 &&
                 name.compare(name.size() - 7, 7, ".conv.w") == 0;
    const auto n = static_cast<std::size_t>(t.numel());
    slot.m.assign(n, 0.0);
    slot.v.assign(n, 0.0);
    if (cfg_.method == OptimizerMethod::adamod) slot.rate_ema.assign(n, 0.0);
    slots_.push_back(std::move(slot));
  }
}

void Optimizer::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

void Optimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    auto& w = slot.param.raw();
    const auto& g = slot.param.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g[i];
      if (slot.decay) gi += cfg_.weight_decay * w[i];
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      double rate = lr / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.method == OptimizerMethod::adamod) {
        slot.rate_ema[i] =
            cfg_.beta3 * slot.rate_ema[i] + (1.0 - cfg_.beta3) * rate;
        rate = std::min(rate, slot.rate_ema[i]);
      }
      w[i] -= rate * mhat;
    }
  }
}

namespace {

struct Batch {
  Tensor x2d;
  Tensor gt3d;
  std::int64_t size = 0;
};

Batch collect_batch(const WindowedDataset& data,
                    std::span<const std::size_t> ids) {
  const Tensor& first_x = data.windows[ids[0]].x2d;
  const std::int64_t t = first_x.extent(0), j = first_x.extent(1);
  const std::int64_t b = static_cast<std::int64_t>(ids.size());
  std::vector<double> x, y;
  x.reserve(static_cast<std::size_t>(b * t * j * 2));
  y.reserve(static_cast<std::size_t>(b * t * j * 3));
  for (std::size_t id : ids) {
    const Window& w = data.windows[id];
    x.insert(x.end(), w.x2d.raw().begin(), w.x2d.raw().end());
    y.insert(y.end(), w.gt3d.raw().begin(), w.gt3d.raw().end());
  }
  Batch batch;
  batch.x2d = Tensor::from_data({b, t, j, 2}, std::move(x));
  batch.gt3d = Tensor::from_data({b, t, j, 3}, std::move(y));
  batch.size = b;
  return batch;
}

double eval_mpjpe(HDFormer& model, const WindowedDataset& data,
                  std::int64_t batch_size) {
  double acc = 0.0;
  std::int64_t count = 0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < data.windows.size(); i += static_cast<std::size_t>(batch_size)) {
    ids.clear();
    for (std::size_t k = i;
         k < std::min(i + static_cast<std::size_t>(batch_size),
                      data.windows.size());
         ++k)
      ids.push_back(k);
    Batch batch = collect_batch(data, ids);
    Tensor pred = model.predict(batch.x2d);
    acc += mpjpe(pred, batch.gt3d) * static_cast<double>(batch.size);
    count += batch.size;
  }
  return acc / static_cast<double>(count);
}

void fisher_yates(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
}

}  // namespace

TrainReport train(HDFormer& model, const WindowedDataset& data,
                  const WindowedDataset* val, const TrainOptions& options) {
  if (data.windows.empty())
    throw ValueError("train: the dataset contains no windows");
  options.optimizer.validate();
  options.loss.validate(data.frames);
  if (data.frames != model.config().frames)
    throw ConfigError(format_msg("dataset windows have ", data.frames,
                                 " frames, model expects ",
                                 model.config().frames));

  Optimizer opt(model.params(), options.optimizer);
  std::mt19937_64 shuffle_rng(split_seed(options.seed, 0x5d5f));
  std::vector<std::size_t> order(data.windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  const bool has_val = val != nullptr && !val->windows.empty();
  bool stop = false;

  for (int epoch = 0; epoch < options.optimizer.epochs && !stop; ++epoch) {
    const auto wall_start = std::chrono::steady_clock::now();
    const double lr = learning_rate_at(options.optimizer, epoch);
    fisher_yates(order, shuffle_rng);

    double sum_mpjpe = 0.0, sum_motion = 0.0, sum_total = 0.0;
    std::int64_t seen = 0;
    for (std::size_t begin = 0; begin < order.size() && !stop;
         begin += static_cast<std::size_t>(options.optimizer.batch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(options.optimizer.batch_size),
                   order.size());
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      Batch batch = collect_batch(data, ids);

      model.clear_tape();
      opt.zero_grad();
      RunContext ctx;
      ctx.train = true;
      ctx.dropout_rng = &model.dropout_rng();
      Tensor pred = model.forward(batch.x2d, ctx);
      Tensor lp = mpjpe_loss(pred, batch.gt3d);
      Tensor loss = lp;
      double motion_value = 0.0;
      if (options.loss.lambda > 0.0) {
        Tensor lm = motion_loss(pred, batch.gt3d, options.loss.motion_intervals);
        motion_value = lm.scalar_value();
        loss = add(lp, scale(lm, options.loss.lambda));
      }
      const double total_value = loss.scalar_value();
      if (!std::isfinite(total_value))
        throw ValueError(format_msg(
            "non-finite training loss (", total_value, ") at epoch ", epoch,
            ", step ", report.steps, "; aborting"));
      model.tape().backward(loss);
      opt.step(lr);
      model.clear_tape();
      ++model.step;
      ++report.steps;

      sum_mpjpe += lp.scalar_value() * static_cast<double>(batch.size);
      sum_motion += motion_value * static_cast<double>(batch.size);
      sum_total += total_value * static_cast<double>(batch.size);
      seen += batch.size;

      if (options.optimizer.max_steps > 0 &&
          report.steps >= static_cast<std::uint64_t>(options.optimizer.max_steps))
        stop = true;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_mpjpe = sum_mpjpe / static_cast<double>(seen);
    rec.train_motion = sum_motion / static_cast<double>(seen);
    rec.train_total = sum_total / static_cast<double>(seen);
    rec.val_mpjpe = eval_mpjpe(model, has_val ? *val : data,
                               options.optimizer.batch_size);
    rec.has_val = has_val;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      wall_start)
            .count();
    report.epochs.push_back(rec);

    if (options.verbose) {
      std::cerr << "[hdformer] epoch " << epoch << " lr " << lr
                << " train_mpjpe " << rec.train_mpjpe << " val_mpjpe "
                << rec.val_mpjpe << "\n";
    }

    if (!options.out_dir.empty()) {
      std::filesystem::create_directories(options.out_dir);
      const std::string last = options.out_dir + "/last.ckpt";
      save_checkpoint(last, model);
      report.last_checkpoint = last;
      if (report.best_epoch < 0 || rec.val_mpjpe < report.best_val_mpjpe) {
        report.best_epoch = epoch;
        report.best_val_mpjpe = rec.val_mpjpe;
        const std::string best = options.out_dir + "/best.ckpt";
        save_checkpoint(best, model);
        report.best_checkpoint = best;
      }
    } else if (report.best_epoch < 0 || rec.val_mpjpe < report.best_val_mpjpe) {
      report.best_epoch = epoch;
      report.best_val_mpjpe = rec.val_mpjpe;
    }

    if (options.optimizer.target_train_mpjpe > 0.0 &&
        rec.train_mpjpe <= options.optimizer.target_train_mpjpe)
      stop = true;
  }

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    // losses.txt excludes wall time so same-seed runs are bit-identical
    const std::string loss_path = options.out_dir + "/losses.txt";
    std::ofstream loss_out(loss_path);
    char buf[256];
    for (const auto& r : report.epochs) {
      std::snprintf(buf, sizeof buf,
                    "epoch=%d lr=%.17g train_mpjpe=%.17g train_motion=%.17g "
                    "train_total=%.17g val_mpjpe=%.17g\n",
                    r.epoch, r.lr, r.train_mpjpe, r.train_motion, r.train_total,
                    r.val_mpjpe);
      loss_out << buf;
    }
    report.loss_log = loss_path;

    const std::string report_path = options.out_dir + "/report.txt";
    std::ofstream rep_out(report_path);
    for (const auto& r : report.epochs) {
      std::snprintf(buf, sizeof buf,
                    "epoch=%d lr=%.17g train_mpjpe=%.17g train_motion=%.17g "
                    "train_total=%.17g val_mpjpe=%.17g wall_seconds=%.3f\n",
                    r.epoch, r.lr, r.train_mpjpe, r.train_motion, r.train_total,
                    r.val_mpjpe, r.wall_seconds);
      rep_out << buf;
    }
    report.report = report_path;
  }
  return report;
}

}  // namespace hdf
