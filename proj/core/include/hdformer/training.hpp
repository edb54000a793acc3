#pragma once

#include <span>

#include "hdformer/dataio.hpp"
#include "hdformer/network.hpp"

namespace hdf {

struct LossConfig {
  double lambda = 0.1;  // motion-loss weight
  std::vector<std::int64_t> motion_intervals = {1};

  void validate(std::int64_t frames) const;
};

enum class OptimizerMethod { adam, adamod };
OptimizerMethod optimizer_method_from_string(const std::string& s);
std::string to_string(OptimizerMethod m);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::adam;
  double base_lr = 5e-3;
  std::vector<int> milestones = {80, 90, 100};
  double decay = 0.1;
  int epochs = 110;
  std::int64_t batch_size = 256;
  double weight_decay = 1e-5;  // convolution weights only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double beta3 = 0.9999;        // adamod: smoothing of per-element rates
  std::int64_t max_steps = 0;   // 0 = no cap
  double target_train_mpjpe = 0.0;  // 0 = off; stop once reached

  void validate() const;
};

/// base * decay^(number of milestones <= epoch).
double learning_rate_at(const OptimizerConfig& cfg, int epoch);

// --- losses (tape-recorded, differentiable) -----------------------------------

/// Mean over batch, time, joints of the per-joint Euclidean distance.
Tensor mpjpe_loss(const Tensor& pred, const Tensor& gt);

/// Mean L2 error of temporal displacement vectors at the given intervals.
Tensor motion_loss(const Tensor& pred, const Tensor& gt,
                   std::span<const std::int64_t> intervals);

Tensor total_loss(const Tensor& pred, const Tensor& gt, const LossConfig& cfg);

// --- optimizer -----------------------------------------------------------------

/// Adam with optional AdaMod-style bounded per-element rates. Weight decay is
/// L2-into-gradient and touches convolution weight stacks only.
class Optimizer {
 public:
  Optimizer(ParamRegistry& params, OptimizerConfig cfg);

  void step(double lr);
  void zero_grad();
  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Tensor param;
    bool decay = false;
    std::vector<double> m, v, rate_ema;
  };
  ParamRegistry* params_;
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

// --- the loop ------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_mpjpe = 0.0;
  double train_motion = 0.0;
  double train_total = 0.0;
  double val_mpjpe = 0.0;
  bool has_val = false;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::uint64_t steps = 0;
  int best_epoch = -1;
  double best_val_mpjpe = 0.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string loss_log;  // path of the bit-reproducible loss curve
  std::string report;    // path of the full per-epoch record (adds wall time)
};

struct TrainOptions {
  OptimizerConfig optimizer;
  LossConfig loss;
  std::string out_dir;  // empty: keep everything in memory
  std::uint64_t seed = 0;
  bool verbose = false;
};

/// Epoch/milestone schedule over shuffled minibatches. Deterministic for a
/// fixed seed: batch order, dropout draws, and therefore the loss curve are
/// reproducible bit-for-bit. Aborts on non-finite loss. `val`: optional
/// held-out windows evaluated with MPJPE each epoch (train windows are used
/// when null, so the report always carries a validation-style number).
TrainReport train(HDFormer& model, const WindowedDataset& data,
                  const WindowedDataset* val, const TrainOptions& options);

}  // namespace hdf
