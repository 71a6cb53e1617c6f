// rep3d: verification and experiment harness for the re-parameterized
// 3D depthwise-conv dynamics library. Every subcommand writes its artifacts
// plus a manifest.txt into the run directory and exits 0 (pass),
// 1 (verification failure) or 2 (usage/config error).

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/encoder.hpp"
#include "rep3d/erf.hpp"
#include "rep3d/io.hpp"
#include "rep3d/kernels.hpp"
#include "rep3d/lrbm.hpp"
#include "rep3d/reparam.hpp"
#include "rep3d/rng.hpp"
#include "rep3d/tensor.hpp"

namespace fs = std::filesystem;
using namespace rep3d;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

fs::path resolve_out(const std::string& flag, const std::string& cmd) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("REPFIELD3D_OUT")) return fs::path(env) / cmd;
  return fs::path("runs") / cmd;
}

using KvList = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& dir, const std::string& cmd, const KvList& kv) {
  fs::create_directories(dir);
  std::ofstream f(dir / "manifest.txt");
  f << "command = " << cmd << "\n";
  for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
  f << "backend = " << kernels::backend_name(kernels::active_backend()) << "\n";
  std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  f << "timestamp = " << buf << "\n";
}

std::string fmt(double v) { return io::fmt_double(v); }

// Writes a tensor both as RT3D and as flat-index CSV.
void export_tensor(const fs::path& dir, const std::string& name, const Tensor& t) {
  io::write_rt3d((dir / (name + ".rt3d")).string(), t);
  io::CsvWriter csv((dir / (name + ".csv")).string());
  csv.row({"index", "value"});
  for (std::size_t i = 0; i < t.size(); ++i)
    csv.row({std::to_string(i), fmt(t[i])});
}

// --- gradcheck ---------------------------------------------------------------

ad::GradcheckReport gradcheck_conv(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const Tensor x = rng.normal({1, 2, 4, 4, 4});
  const Tensor w = scale(rng.normal({2, 1, 3, 3, 3}), 0.3);
  return ad::gradcheck(
      {{"conv.dX", x}, {"conv.dW", w}},
      [](ad::Tape& t, const std::vector<ad::Value>& p) {
        return ad::vsum(t, ad::sigmoid(t, ad::dwconv(t, p[0], p[1])));
      },
      1e-5, tol);
}

ad::GradcheckReport gradcheck_lrbm(std::uint64_t seed, double tol) {
  const std::size_t channels = 2, k = 3;
  Rng rng(seed);
  auto gen = lrbm::GeneratorParams::init(channels, 3, 2, seed);
  // perturb away from the zero init so every path carries signal
  for (auto& l : gen.layers) {
    l.w = axpy(l.w, rng.normal(l.w.shape()), 0.2);
    l.bias = axpy(l.bias, rng.normal(l.bias.shape()), 0.1);
  }
  const Tensor dist = lrbm::distance_map(k);
  const Tensor x = rng.normal({1, channels, 4, 4, 4});
  const Tensor w = scale(rng.normal({channels, 1, k, k, k}), 0.3);

  std::vector<std::pair<std::string, Tensor>> params = {
      {"lrbm.beta", Tensor::scalar(0.8)}, {"lrbm.kernel", w}};
  for (std::size_t i = 0; i < gen.layers.size(); ++i) {
    const std::string base = "lrbm.gen" + std::to_string(i);
    params.emplace_back(base + ".w", gen.layers[i].w);
    params.emplace_back(base + ".gain", gen.layers[i].gain);
    params.emplace_back(base + ".bias", gen.layers[i].bias);
  }
  return ad::gradcheck(
      params,
      [&](ad::Tape& t, const std::vector<ad::Value>& p) {
        lrbm::GeneratorValues gv;
        for (std::size_t i = 0; i < gen.layers.size(); ++i)
          gv.layers.push_back({p[2 + 3 * i], p[3 + 3 * i], p[4 + 3 * i]});
        ad::Value prior = ad::prior_from_beta(t, p[0], dist, channels, lrbm::kBetaFloor);
        ad::Value m = ad::add(t, prior, lrbm::generator_forward(t, prior, gv));
        ad::Value weff = ad::mul(t, p[1], m); // product rule through W (.) M
        ad::Value y = ad::dwconv(t, t.constant(x), weff);
        return ad::vsum(t, ad::sigmoid(t, y));
      },
      1e-5, tol);
}

ad::GradcheckReport gradcheck_block(std::uint64_t seed, double tol) {
  enc::EncoderConfig cfg;
  cfg.stages = {{1, 2}};
  cfg.k = 3;
  cfg.gen_k = 3;
  cfg.gen_depth = 2;
  cfg.arm = enc::Arm::Lrbm;
  cfg.beta_init = 0.8;
  enc::ModelParams mp = enc::ModelParams::init(cfg, seed);
  enc::BlockParams& b = mp.stages[0][0];
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& l : b.gen.layers) {
    l.w = axpy(l.w, rng.normal(l.w.shape()), 0.2);
    l.bias = axpy(l.bias, rng.normal(l.bias.shape()), 0.1);
  }
  // lift the kernel off its tiny fan-in init so no element's finite
  // difference sits at the roundoff floor
  b.w = axpy(b.w, rng.normal(b.w.shape()), 0.3);
  const Tensor x = rng.normal({1, 2, 4, 4, 4});
  // random linear readout: a summed-sigmoid objective leaves saturated
  // elements whose finite differences sit at the roundoff floor
  const Tensor r = rng.normal({1, 2, 4, 4, 4});

  std::vector<std::pair<std::string, Tensor>> params = {
      {"block.norm_gain", b.norm_gain},
      {"block.norm_bias", b.norm_bias},
      {"block.kernel", b.w},
      {"block.beta", Tensor::scalar(b.beta)}};
  for (std::size_t i = 0; i < b.gen.layers.size(); ++i) {
    const std::string base = "block.gen" + std::to_string(i);
    params.emplace_back(base + ".w", b.gen.layers[i].w);
    params.emplace_back(base + ".gain", b.gen.layers[i].gain);
    params.emplace_back(base + ".bias", b.gen.layers[i].bias);
  }
  return ad::gradcheck(
      params,
      [&](ad::Tape& t, const std::vector<ad::Value>& p) {
        enc::ModelValues::BlockValues bv;
        bv.norm_gain = p[0];
        bv.norm_bias = p[1];
        bv.w = p[2];
        bv.beta = p[3];
        for (std::size_t i = 0; i < b.gen.layers.size(); ++i)
          bv.gen.layers.push_back({p[4 + 3 * i], p[5 + 3 * i], p[6 + 3 * i]});
        ad::Value y = enc::block_forward(t, t.constant(x), bv, cfg);
        return ad::vsum(t, ad::mul(t, y, t.constant(r)));
      },
      1e-5, tol);
}

int cmd_gradcheck(const std::string& scope, double tol, std::uint64_t seed,
                  const std::string& out_flag) {
  const fs::path out = resolve_out(out_flag, "gradcheck");
  std::vector<ad::GradcheckReport> reports;
  if (scope == "conv" || scope == "all") reports.push_back(gradcheck_conv(seed, tol));
  if (scope == "lrbm" || scope == "all") reports.push_back(gradcheck_lrbm(seed, tol));
  if (scope == "block" || scope == "all") reports.push_back(gradcheck_block(seed, tol));

  write_manifest(out, "gradcheck",
                 {{"scope", scope}, {"tol", fmt(tol)}, {"seed", std::to_string(seed)}});
  io::CsvWriter csv((out / "gradcheck.csv").string());
  csv.row({"name", "max_rel_err", "pass"});
  bool all_pass = true;
  for (const auto& r : reports)
    for (const auto& row : r.rows) {
      csv.row({row.name, fmt(row.max_rel_err), row.pass ? "1" : "0"});
      std::printf("%-24s rel_err=%s  %s\n", row.name.c_str(),
                  fmt(row.max_rel_err).c_str(), row.pass ? "pass" : "FAIL");
      all_pass = all_pass && row.pass;
    }
  return all_pass ? kExitPass : kExitFail;
}

// --- merge-verify ------------------------------------------------------------

CslaLossFn mse_loss(const Tensor& target) {
  return [target](ad::Tape& t, ad::Value y) {
    ad::Value d = ad::sub(t, y, t.constant(target));
    return ad::vsum(t, ad::mul(t, d, d));
  };
}

// dL/dW' on the merged kernel itself (the GR path's gradient source).
Tensor merged_grad(const Tensor& x, const DepthwiseKernel& w_prime,
                   const CslaLossFn& loss) {
  ad::Tape t;
  ad::Value w = t.param(w_prime.weights);
  ad::Value y = ad::dwconv(t, t.constant(x), w);
  t.backward(loss(t, y));
  return t.grad(w);
}

int cmd_merge_verify(CSLAConfig cfg, std::uint64_t seed, int steps,
                     const std::string& out_flag) {
  cfg.validate();
  const std::size_t channels = 2, vol = 8;
  Rng rng(seed);
  const Tensor x = rng.normal({1, channels, vol, vol, vol});
  const Tensor target = rng.normal({1, channels, vol, vol, vol});
  CSLAState s = CSLAState::init(cfg, channels, seed ^ 1);

  const Tensor fwd_two = csla_forward(x, s, cfg);
  const Tensor fwd_merged = dwconv3d(x, merge_so(s, cfg));
  const double fwd_diff = max_abs_diff(fwd_two, fwd_merged);

  const CslaLossFn loss = mse_loss(target);
  const LRField field = effective_lr_field(cfg);
  DepthwiseKernel w_prime = merge_so(s, cfg);
  double traj_diff = 0.0;
  for (int i = 0; i < steps; ++i) {
    const Tensor g = merged_grad(x, w_prime, loss);
    w_prime = so_grad_reparam_step(w_prime, g, field);
    const BranchGrads bg = csla_branch_grads(x, s, cfg, loss);
    branch_sgd_step(s, bg, cfg);
    traj_diff = std::max(traj_diff,
                         max_abs_diff(w_prime.weights, merge_so(s, cfg).weights));
  }

  const fs::path out = resolve_out(out_flag, "merge-verify");
  write_manifest(out, "merge-verify",
                 {{"k_l", std::to_string(cfg.k_l)},
                  {"k_s", std::to_string(cfg.k_s)},
                  {"alpha_l", fmt(cfg.alpha_l)},
                  {"alpha_s", fmt(cfg.alpha_s)},
                  {"lambda_l", fmt(cfg.lambda_l)},
                  {"lambda_s", fmt(cfg.lambda_s)},
                  {"field_convention",
                   cfg.field_convention == FieldConvention::DerivedAlphaSquared
                       ? "derived-alpha-squared"
                       : "as-written-eq11"},
                  {"seed", std::to_string(seed)},
                  {"steps", std::to_string(steps)},
                  {"forward_max_diff", fmt(fwd_diff)},
                  {"trajectory_max_diff", fmt(traj_diff)}});
  std::printf("forward max diff     = %s\n", fmt(fwd_diff).c_str());
  std::printf("trajectory max diff  = %s (%d SGD steps)\n", fmt(traj_diff).c_str(),
              steps);
  const bool pass = fwd_diff < 1e-10 && traj_diff < 1e-10;
  std::printf("%s\n", pass ? "pass" : "FAIL");
  return pass ? kExitPass : kExitFail;
}

// --- export commands ---------------------------------------------------------

int cmd_lr_field(const CSLAConfig& cfg, const std::string& out_flag) {
  cfg.validate();
  const LRField f = effective_lr_field(cfg);
  const fs::path out = resolve_out(out_flag, "lr-field");
  const std::size_t c = (cfg.k_l - 1) / 2;
  const double central = f.field[(c * cfg.k_l + c) * cfg.k_l + c];
  const double peripheral = f.field[0];
  write_manifest(out, "lr-field",
                 {{"k_l", std::to_string(cfg.k_l)},
                  {"k_s", std::to_string(cfg.k_s)},
                  {"alpha_l", fmt(cfg.alpha_l)},
                  {"alpha_s", fmt(cfg.alpha_s)},
                  {"lambda_l", fmt(cfg.lambda_l)},
                  {"lambda_s", fmt(cfg.lambda_s)},
                  {"field_convention",
                   cfg.field_convention == FieldConvention::DerivedAlphaSquared
                       ? "derived-alpha-squared"
                       : "as-written-eq11"}});
  export_tensor(out, "lr_field", f.field);
  std::printf("central = %s, peripheral = %s\n", fmt(central).c_str(),
              fmt(peripheral).c_str());
  return kExitPass;
}

int cmd_prior(std::size_t k, double beta, const std::string& out_flag) {
  const auto ps = lrbm::prior_mask(lrbm::distance_map(k), beta, 1);
  const fs::path out = resolve_out(out_flag, "prior");
  write_manifest(out, "prior", {{"k", std::to_string(k)}, {"beta", fmt(beta)}});
  export_tensor(out, "prior", ps.p);
  const std::size_t c = (k - 1) / 2;
  std::printf("center = %s\n", fmt(ps.p[(c * k + c) * k + c]).c_str());
  return kExitPass;
}

int cmd_mask(std::size_t k, double beta, std::size_t gen_k, int gen_depth,
             std::uint64_t seed, const std::string& init, const std::string& out_flag) {
  auto gen = lrbm::GeneratorParams::init(1, gen_k, gen_depth, seed);
  if (init == "random") {
    Rng rng(seed ^ 0xabcdef);
    auto& last = gen.layers.back();
    last.w = scale(rng.normal(last.w.shape()), 0.1);
  } else if (init != "zero-generator") {
    throw CLI::ValidationError("--init must be zero-generator or random");
  }
  const auto ps = lrbm::prior_mask(lrbm::distance_map(k), beta, 1);
  const auto mask = lrbm::modulation_mask(ps, gen);
  const fs::path out = resolve_out(out_flag, "mask");
  write_manifest(out, "mask",
                 {{"k", std::to_string(k)},
                  {"beta", fmt(beta)},
                  {"gen_k", std::to_string(gen_k)},
                  {"gen_depth", std::to_string(gen_depth)},
                  {"seed", std::to_string(seed)},
                  {"init", init}});
  export_tensor(out, "prior", ps.p);
  export_tensor(out, "mask", mask.m);
  std::printf("max |mask - prior| = %s\n", fmt(max_abs_diff(mask.m, ps.p)).c_str());
  return kExitPass;
}

// --- erf ---------------------------------------------------------------------

int cmd_erf(int layers, std::size_t k, std::size_t volume, int samples,
            std::uint64_t seed, double threshold, std::size_t axis,
            const std::string& kernel_kind, double masked_beta,
            const std::string& checkpoint, const std::string& out_flag) {
  std::vector<DepthwiseKernel> stack;
  std::size_t channels = 1;
  std::string desc;
  if (!checkpoint.empty()) {
    auto [mp, mcfg] = enc::load_checkpoint(checkpoint);
    auto [folded, fcfg] = enc::fold_model(mp, mcfg);
    channels = fcfg.stages[0].channels;
    for (const auto& b : folded.stages[0])
      stack.push_back(DepthwiseKernel::from(b.w));
    desc = "checkpoint stage-0 effective kernels (" + checkpoint + ")";
  } else {
    Rng rng(seed ^ 0x51ed);
    for (int i = 0; i < layers; ++i) {
      DepthwiseKernel dk = DepthwiseKernel::delta(channels, k);
      if (kernel_kind == "random") {
        // everywhere-nonzero bank
        Tensor w = rng.normal({channels, 1, k, k, k});
        for (std::size_t j = 0; j < w.size(); ++j)
          w[j] = 0.5 + 0.5 * std::abs(w[j]);
        if (masked_beta > 0.0)
          w = mul(w, lrbm::prior_mask(lrbm::distance_map(k), masked_beta, channels).p);
        dk = DepthwiseKernel::from(std::move(w));
      } else if (kernel_kind != "delta") {
        throw CLI::ValidationError("--kernel must be random or delta");
      }
      stack.push_back(std::move(dk));
    }
    desc = std::to_string(layers) + "-layer K=" + std::to_string(k) + " " +
           kernel_kind + " stack";
  }

  erf::ModelFn model = [&](ad::Tape& t, ad::Value x) {
    ad::Value h = x;
    for (const auto& dk : stack) h = ad::dwconv(t, h, t.constant(dk.weights));
    return h;
  };
  const erf::ERFMap m =
      erf::erf_accumulate(model, {1, channels, volume, volume, volume}, samples,
                          seed, desc);
  const erf::SupportReport sup = erf::erf_support(m, threshold);

  const fs::path out = resolve_out(out_flag, "erf");
  write_manifest(out, "erf",
                 {{"model", desc},
                  {"volume", std::to_string(volume)},
                  {"samples", std::to_string(samples)},
                  {"seed", std::to_string(seed)},
                  {"threshold", fmt(threshold)},
                  {"axis", std::to_string(axis)}});
  erf::export_slices(m, axis, (out / "erf").string());
  io::write_rt3d((out / "erf_map.rt3d").string(), m.map);
  std::printf("support voxels = %zu\n", sup.voxels.size());
  std::printf("bbox = [%zu..%zu] x [%zu..%zu] x [%zu..%zu]\n", sup.bbox_min[0],
              sup.bbox_max[0], sup.bbox_min[1], sup.bbox_max[1], sup.bbox_min[2],
              sup.bbox_max[2]);
  std::printf("half-mass radius = %s\n", fmt(sup.half_mass_radius).c_str());
  return kExitPass;
}

// --- train-toy / fold --------------------------------------------------------

void write_curve_csv(const fs::path& path, const enc::TrainCurve& c) {
  io::CsvWriter csv(path.string());
  csv.row({"step", "loss", "dice", "wall_ms"});
  for (const auto& r : c.records)
    csv.row({std::to_string(r.step), fmt(r.loss), fmt(r.dice), fmt(r.wall_ms)});
}

int cmd_train_toy(const std::string& arm_str, int steps, std::uint64_t seed,
                  int seeds, double lr, double gen_lr, int record_every,
                  std::size_t k, std::size_t volume, double beta_init,
                  bool save_ckpt, const std::string& out_flag) {
  const fs::path out = resolve_out(out_flag, "train-toy");
  std::vector<enc::Arm> arms;
  if (arm_str == "all")
    arms = {enc::Arm::Vanilla, enc::Arm::Fixed, enc::Arm::Lrbm};
  else
    arms = {enc::arm_from_name(arm_str)};

  enc::TrainConfig tc;
  tc.steps = steps;
  tc.lr = lr;
  tc.gen_lr = gen_lr;
  tc.record_every = record_every;
  tc.task.volume = volume;

  write_manifest(out, "train-toy",
                 {{"arm", arm_str},
                  {"steps", std::to_string(steps)},
                  {"seed", std::to_string(seed)},
                  {"seeds", std::to_string(seeds)},
                  {"lr", fmt(lr)},
                  {"gen_lr", fmt(gen_lr)},
                  {"record_every", std::to_string(record_every)},
                  {"k", std::to_string(k)},
                  {"volume", std::to_string(volume)},
                  {"beta_init", fmt(beta_init)}});

  struct Result {
    enc::Arm arm;
    std::uint64_t seed;
    double loss, dice;
  };
  std::vector<Result> results;
  for (enc::Arm arm : arms) {
    enc::EncoderConfig cfg;
    cfg.arm = arm;
    cfg.k = k;
    cfg.beta_init = beta_init;
    for (int si = 0; si < seeds; ++si) {
      const std::uint64_t s = seed + static_cast<std::uint64_t>(si);
      enc::ModelParams trained;
      const enc::TrainCurve curve = enc::train_toy(cfg, tc, s, &trained);
      const std::string tag = enc::arm_name(arm) + "_seed" + std::to_string(s);
      write_curve_csv(out / ("curve_" + tag + ".csv"), curve);
      if (save_ckpt)
        enc::save_checkpoint((out / ("checkpoint_" + tag)).string(), trained, cfg);
      results.push_back({arm, s, curve.final_loss, curve.final_dice});
      std::printf("%-8s seed=%llu final loss=%s dice=%s\n",
                  enc::arm_name(arm).c_str(), static_cast<unsigned long long>(s),
                  fmt(curve.final_loss).c_str(), fmt(curve.final_dice).c_str());
    }
  }

  if (arms.size() > 1) {
    io::CsvWriter csv((out / "ordering_summary.csv").string());
    csv.row({"seed", "vanilla_loss", "fixed_loss", "lrbm_loss", "lrbm_le_vanilla"});
    int wins = 0;
    double dice_fixed = 0.0, dice_lrbm = 0.0;
    for (int si = 0; si < seeds; ++si) {
      const std::uint64_t s = seed + static_cast<std::uint64_t>(si);
      auto find = [&](enc::Arm a) {
        for (const auto& r : results)
          if (r.arm == a && r.seed == s) return r;
        throw std::logic_error("missing result");
      };
      const Result v = find(enc::Arm::Vanilla), f = find(enc::Arm::Fixed),
                   l = find(enc::Arm::Lrbm);
      const bool win = l.loss <= v.loss;
      wins += win ? 1 : 0;
      dice_fixed += f.dice;
      dice_lrbm += l.dice;
      csv.row({std::to_string(s), fmt(v.loss), fmt(f.loss), fmt(l.loss),
               win ? "1" : "0"});
    }
    std::printf("lrbm <= vanilla (final loss): %d/%d seeds\n", wins, seeds);
    std::printf("mean final dice: lrbm=%s fixed=%s\n",
                fmt(dice_lrbm / seeds).c_str(), fmt(dice_fixed / seeds).c_str());
  }
  return kExitPass;
}

int cmd_fold(const std::string& checkpoint, std::uint64_t seed, int n_inputs,
             const std::string& out_flag) {
  auto [mp, cfg] = enc::load_checkpoint(checkpoint);
  auto [folded, fcfg] = enc::fold_model(mp, cfg);
  const fs::path out = resolve_out(out_flag, "fold");
  write_manifest(out, "fold",
                 {{"checkpoint", checkpoint},
                  {"seed", std::to_string(seed)},
                  {"inputs", std::to_string(n_inputs)}});
  enc::save_checkpoint((out / "folded").string(), folded, fcfg);

  Rng rng(seed);
  double max_diff = 0.0;
  const std::size_t v = 16;
  for (int i = 0; i < n_inputs; ++i) {
    const Tensor x = rng.normal({1, cfg.in_channels, v, v, v});
    max_diff = std::max(max_diff, max_abs_diff(enc::forward_logits(x, mp, cfg),
                                               enc::forward_logits(x, folded, fcfg)));
  }
  std::printf("fold equivalence max diff = %s over %d inputs\n",
              fmt(max_diff).c_str(), n_inputs);
  const bool pass = max_diff == 0.0;
  std::printf("%s\n", pass ? "pass" : "FAIL");
  return pass ? kExitPass : kExitFail;
}

void add_config(CLI::App* sub) {
  sub->add_option("--config", "flat key = value config file; flags override")
      ->check(CLI::ExistingFile);
}

// Applies a flat `key = value` config file (with # comments) to a parsed
// subcommand. Command-line flags win over file values; an unknown or
// malformed key is a usage error naming the offending line.
void apply_config(CLI::App* sub) {
  auto* copt = sub->get_option_no_throw("--config");
  if (copt == nullptr || copt->count() == 0) return;
  const std::string path = copt->as<std::string>();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = CLI::detail::trim_copy(line);
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(where + ": expected `key = value`");
    const std::string key = CLI::detail::trim_copy(line.substr(0, eq));
    const std::string val = CLI::detail::trim_copy(line.substr(eq + 1));
    if (key.empty() || key == "config")
      throw std::runtime_error(where + ": bad config key `" + key + "`");
    auto* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw std::runtime_error(where + ": unknown config key `" + key + "`");
    if (opt->count() > 0) continue;
    opt->add_result(val);
    opt->run_callback();
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"rep3d: re-parameterized 3D depthwise-conv dynamics harness"};
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 1;

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_scope = "all";
  double gc_tol = 1e-6;
  gc->add_option("--scope", gc_scope, "conv|lrbm|block|all")
      ->check(CLI::IsMember({"conv", "lrbm", "block", "all"}));
  gc->add_option("--tol", gc_tol, "relative-error tolerance");
  gc->add_option("--seed", seed);
  gc->add_option("--out", out, "output directory");
  add_config(gc);

  // merge-verify
  auto* mv = app.add_subcommand("merge-verify",
                                "two-branch vs merged kernel: forward + trajectory");
  CSLAConfig mv_cfg;
  int mv_steps = 10;
  std::string mv_conv = "derived-alpha-squared";
  mv->add_option("--k-l", mv_cfg.k_l, "large kernel size (odd)");
  mv->add_option("--k-s", mv_cfg.k_s, "small kernel size (odd)");
  mv->add_option("--alpha-l", mv_cfg.alpha_l);
  mv->add_option("--alpha-s", mv_cfg.alpha_s);
  mv->add_option("--lambda-l", mv_cfg.lambda_l);
  mv->add_option("--lambda-s", mv_cfg.lambda_s);
  mv->add_option("--steps", mv_steps);
  mv->add_option("--field-convention", mv_conv, "derived-alpha-squared|as-written-eq11")
      ->check(CLI::IsMember({"derived-alpha-squared", "as-written-eq11"}));
  mv->add_option("--seed", seed);
  mv->add_option("--out", out);
  add_config(mv);

  // lr-field
  auto* lf = app.add_subcommand("lr-field", "export the effective learning-rate field");
  CSLAConfig lf_cfg;
  std::string lf_conv = "derived-alpha-squared";
  lf->add_option("--k-l", lf_cfg.k_l);
  lf->add_option("--k-s", lf_cfg.k_s);
  lf->add_option("--alpha-l", lf_cfg.alpha_l);
  lf->add_option("--alpha-s", lf_cfg.alpha_s);
  lf->add_option("--lambda-l", lf_cfg.lambda_l);
  lf->add_option("--lambda-s", lf_cfg.lambda_s);
  lf->add_option("--field-convention", lf_conv, "derived-alpha-squared|as-written-eq11")
      ->check(CLI::IsMember({"derived-alpha-squared", "as-written-eq11"}));
  lf->add_option("--out", out);
  add_config(lf);

  // prior
  auto* pr = app.add_subcommand("prior", "export the reciprocal-distance prior");
  std::size_t pr_k = 7;
  double pr_beta = lrbm::kDefaultBetaInit;
  pr->add_option("--k", pr_k, "kernel size (odd)");
  pr->add_option("--beta", pr_beta, "decay sharpness");
  pr->add_option("--out", out);
  add_config(pr);

  // mask
  auto* mk = app.add_subcommand("mask", "export the modulation mask M = P + f(P)");
  std::size_t mk_k = 7, mk_gen_k = 7;
  int mk_depth = 2;
  double mk_beta = lrbm::kDefaultBetaInit;
  std::string mk_init = "zero-generator";
  mk->add_option("--k", mk_k);
  mk->add_option("--beta", mk_beta);
  mk->add_option("--gen-k", mk_gen_k);
  mk->add_option("--gen-depth", mk_depth);
  mk->add_option("--init", mk_init, "zero-generator|random")
      ->check(CLI::IsMember({"zero-generator", "random"}));
  mk->add_option("--seed", seed);
  mk->add_option("--out", out);
  add_config(mk);

  // erf
  auto* er = app.add_subcommand("erf", "effective receptive field probe");
  int er_layers = 2, er_samples = 32;
  std::size_t er_k = 3, er_vol = 9, er_axis = 0;
  double er_thresh = 0.01, er_beta = 0.0;
  std::string er_kernel = "random", er_ckpt;
  er->add_option("--layers", er_layers, "depthwise conv stack depth");
  er->add_option("--k", er_k, "kernel size (odd)");
  er->add_option("--volume", er_vol, "input edge length (odd)");
  er->add_option("--samples", er_samples);
  er->add_option("--seed", seed);
  er->add_option("--threshold", er_thresh, "relative support threshold");
  er->add_option("--axis", er_axis, "slice axis for PGM export");
  er->add_option("--kernel", er_kernel, "random|delta")
      ->check(CLI::IsMember({"random", "delta"}));
  er->add_option("--masked-beta", er_beta,
                 "if > 0, mask random kernels with the prior at this beta");
  er->add_option("--checkpoint", er_ckpt, "probe a trained checkpoint instead");
  er->add_option("--out", out);
  add_config(er);

  // train-toy
  auto* tt = app.add_subcommand("train-toy", "toy segmentation training lab");
  std::string tt_arm = "vanilla";
  int tt_steps = 600, tt_seeds = 1, tt_every = 100;
  double tt_lr = 1e-4, tt_gen_lr = -1.0, tt_beta = 1.0;
  std::size_t tt_k = 7, tt_vol = 16;
  bool tt_ckpt = false;
  tt->add_option("--arm", tt_arm, "vanilla|fixed|lrbm|all")
      ->check(CLI::IsMember({"vanilla", "fixed", "lrbm", "all"}));
  tt->add_option("--steps", tt_steps);
  tt->add_option("--seed", seed, "base seed");
  tt->add_option("--seeds", tt_seeds, "number of consecutive seeds");
  tt->add_option("--lr", tt_lr);
  tt->add_option("--gen-lr", tt_gen_lr, "generator/beta rate; <0 same as --lr, 0 frozen");
  tt->add_option("--record-every", tt_every);
  tt->add_option("--k", tt_k, "block kernel size (7 default, 21 for spot checks)");
  tt->add_option("--volume", tt_vol);
  tt->add_option("--beta-init", tt_beta);
  tt->add_flag("--save-checkpoint", tt_ckpt, "save trained checkpoints");
  tt->add_option("--out", out);
  add_config(tt);

  // fold
  auto* fd = app.add_subcommand("fold", "fold a checkpoint and verify equivalence");
  std::string fd_ckpt;
  int fd_inputs = 10;
  fd->add_option("--checkpoint", fd_ckpt)->required();
  fd->add_option("--inputs", fd_inputs);
  fd->add_option("--seed", seed);
  fd->add_option("--out", out);
  add_config(fd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    for (auto* sub : app.get_subcommands()) apply_config(sub);
    if (gc->parsed()) return cmd_gradcheck(gc_scope, gc_tol, seed, out);
    if (mv->parsed()) {
      mv_cfg.field_convention = mv_conv == "derived-alpha-squared"
                                    ? FieldConvention::DerivedAlphaSquared
                                    : FieldConvention::AsWrittenEq11;
      return cmd_merge_verify(mv_cfg, seed, mv_steps, out);
    }
    if (lf->parsed()) {
      lf_cfg.field_convention = lf_conv == "derived-alpha-squared"
                                    ? FieldConvention::DerivedAlphaSquared
                                    : FieldConvention::AsWrittenEq11;
      return cmd_lr_field(lf_cfg, out);
    }
    if (pr->parsed()) return cmd_prior(pr_k, pr_beta, out);
    if (mk->parsed())
      return cmd_mask(mk_k, mk_beta, mk_gen_k, mk_depth, seed, mk_init, out);
    if (er->parsed())
      return cmd_erf(er_layers, er_k, er_vol, er_samples, seed, er_thresh, er_axis,
                     er_kernel, er_beta, er_ckpt, out);
    if (tt->parsed())
      return cmd_train_toy(tt_arm, tt_steps, seed, tt_seeds, tt_lr, tt_gen_lr,
                           tt_every, tt_k, tt_vol, tt_beta, tt_ckpt, out);
    if (fd->parsed()) return cmd_fold(fd_ckpt, seed, fd_inputs, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
