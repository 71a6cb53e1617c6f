#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rep3d/autodiff.hpp"
#include "rep3d/lrbm.hpp"
#include "rep3d/reparam.hpp"
#include "rep3d/tensor.hpp"

namespace rep3d::enc {

// vanilla: plain large kernel. fixed: kernel masked by the frozen
// reciprocal-distance prior. lrbm: prior plus learnable generator, beta and
// generator co-trained.
enum class Arm { Vanilla, Fixed, Lrbm };

std::string arm_name(Arm a);
Arm arm_from_name(const std::string& s);

struct StageConfig {
  int blocks = 1;
  std::size_t channels = 8;
};

struct EncoderConfig {
  std::vector<StageConfig> stages{{1, 8}, {1, 16}};
  std::size_t k = 7; // 21 allowed but slow
  Arm arm = Arm::Vanilla;
  double beta_init = 1.0; // prior sharpness used by fixed/lrbm arms
  std::size_t gen_k = 7;
  int gen_depth = 2;
  std::size_t in_channels = 1;
  double norm_eps = 1e-6;

  void validate() const;
};

struct BlockParams {
  Tensor norm_gain, norm_bias; // C
  Tensor w;                    // C x 1 x K^3
  double beta = lrbm::kDefaultBetaInit;
  lrbm::GeneratorParams gen; // lrbm arm only (empty otherwise)
};

struct ModelParams {
  Tensor stem_w, stem_b; // 3^3 stride-2 projection
  std::vector<std::vector<BlockParams>> stages;
  std::vector<Tensor> down_w, down_b; // stride-2 2^3 convs between stages
  Tensor head_w, head_b;              // 1^3 conv to class logits

  static ModelParams init(const EncoderConfig& cfg, std::uint64_t seed);
  std::size_t parameter_count(const EncoderConfig& cfg) const;
};

// Tape-registered mirror of ModelParams. `all` lists (name, value) pairs in
// a fixed order; names are stable and prefix-tagged ("genN.." / "betaN..")
// so the trainer can group them.
struct ModelValues {
  ad::Value stem_w, stem_b;
  struct BlockValues {
    ad::Value norm_gain, norm_bias, w;
    ad::Value beta; // lrbm only
    lrbm::GeneratorValues gen;
  };
  std::vector<std::vector<BlockValues>> stages;
  std::vector<ad::Value> down_w, down_b;
  ad::Value head_w, head_b;
  std::vector<std::pair<std::string, ad::Value>> all;
};

ModelValues register_model(ad::Tape& t, const ModelParams& p,
                           const EncoderConfig& cfg, bool trainable);

// norm -> depthwise conv (arm-dependent kernel) -> GELU
ad::Value block_forward(ad::Tape& t, ad::Value x, const ModelValues::BlockValues& b,
                        const EncoderConfig& cfg);

// stem -> stages (+ stride-2 downsample between stages) -> nearest upsample
// back to input resolution -> 1^3 conv logits.
ad::Value model_forward(ad::Tape& t, ad::Value x, const ModelValues& m,
                        const EncoderConfig& cfg);

// Convenience non-training forward.
Tensor forward_logits(const Tensor& x, const ModelParams& p, const EncoderConfig& cfg);

// Replaces every block kernel with W (elementwise) M and drops prior and
// generator. The returned pair forwards identically to the training-mode
// model (same arithmetic) under the vanilla arm.
std::pair<ModelParams, EncoderConfig> fold_model(const ModelParams& p,
                                                 const EncoderConfig& cfg);

// --- synthetic task ---------------------------------------------------------

struct ToyTask {
  std::size_t volume = 16;
  int num_spheres = 2;
  double radius_min = 2.5;
  double radius_max = 4.5;
  double noise = 0.3;
};

// volumes: soft spheres plus Gaussian noise; labels: binary sphere masks.
std::pair<Tensor, Tensor> synth_task_generate(const ToyTask& task, std::uint64_t seed);

// 2|P.L| / (|P| + |L|), smoothing 1e-5.
double soft_dice(const Tensor& pred, const Tensor& label, double smooth = 1e-5);

// --- training ---------------------------------------------------------------

struct TrainRecord {
  int step;
  double loss;
  double dice;
  double wall_ms;
};

struct TrainCurve {
  std::vector<TrainRecord> records;
  Arm arm;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double final_dice = 0.0;
};

struct TrainConfig {
  int steps = 600;
  double lr = 1e-4; // AdamW peak rate
  AdamConfig adam;  // weight decay 0.08 default
  double gen_lr = -1.0; // generator/beta rate; < 0 means same as lr
  int record_every = 100;
  ToyTask task;
};

// Deterministic: identical (cfg, tc, seed) produce identical curves and
// parameters. Loss is soft-Dice of the sigmoid logits. Divergence (NaN)
// throws with the offending step index.
TrainCurve train_toy(const EncoderConfig& cfg, const TrainConfig& tc,
                     std::uint64_t seed, ModelParams* trained = nullptr);

// --- checkpoints ------------------------------------------------------------

// Directory of RT3D tensors plus a key=value manifest.
void save_checkpoint(const std::string& dir, const ModelParams& p,
                     const EncoderConfig& cfg);
std::pair<ModelParams, EncoderConfig> load_checkpoint(const std::string& dir);

} // namespace rep3d::enc
