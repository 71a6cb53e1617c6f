// Acceptance gate: one line per criterion, exit 0 iff all pass.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rep3d/autodiff.hpp"
#include "rep3d/conv3d.hpp"
#include "rep3d/encoder.hpp"
#include "rep3d/erf.hpp"
#include "rep3d/io.hpp"
#include "rep3d/lrbm.hpp"
#include "rep3d/reparam.hpp"
#include "rep3d/rng.hpp"
#include "rep3d/tensor.hpp"

using namespace rep3d;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const char* name, bool pass, const std::string& detail = "") {
  std::printf("%s: %s%s%s\n", pass ? "PASS" : "FAIL", name,
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

CslaLossFn mse_loss(const Tensor& target) {
  return [target](ad::Tape& t, ad::Value y) {
    ad::Value d = ad::sub(t, y, t.constant(target));
    return ad::vsum(t, ad::mul(t, d, d));
  };
}

Tensor merged_grad(const Tensor& x, const DepthwiseKernel& w_prime,
                   const CslaLossFn& loss) {
  ad::Tape t;
  ad::Value w = t.param(w_prime.weights);
  t.backward(loss(t, ad::dwconv(t, t.constant(x), w)));
  return t.grad(w);
}

// 1. Forward merge equivalence
void check_forward_merge() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (std::size_t k_l : {5u, 7u})
      for (std::size_t k_s : {1u, 3u})
        for (double a_l : {0.5, 1.0, 2.0})
          for (double a_s : {0.5, 1.0, 2.0}) {
            CSLAConfig cfg;
            cfg.k_l = k_l;
            cfg.k_s = k_s;
            cfg.alpha_l = a_l;
            cfg.alpha_s = a_s;
            CSLAState s = CSLAState::init(cfg, 1, seed);
            Rng rng(seed ^ 0xf0);
            const Tensor x = rng.normal({1, 1, 8, 8, 8});
            worst = std::max(worst, max_abs_diff(csla_forward(x, s, cfg),
                                                 dwconv3d(x, merge_so(s, cfg))));
          }
  report("forward merge equivalence (20 seeds, K/alpha grid)", worst < 1e-12,
         "max diff " + io::fmt_double(worst));
}

// 2. Trajectory equivalence, derived-alpha-squared field
void check_trajectory() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CSLAConfig cfg; // lambda 0.0002 / 0.0006, alpha 1
    CSLAState s = CSLAState::init(cfg, 1, seed);
    Rng rng(seed ^ 0xf1);
    const Tensor x = rng.normal({1, 1, 8, 8, 8});
    const CslaLossFn loss = mse_loss(rng.normal({1, 1, 8, 8, 8}));
    const LRField field = effective_lr_field(cfg);
    DepthwiseKernel w_prime = merge_so(s, cfg);
    for (int i = 0; i < 10; ++i) {
      w_prime = so_grad_reparam_step(w_prime, merged_grad(x, w_prime, loss), field);
      branch_sgd_step(s, csla_branch_grads(x, s, cfg, loss), cfg);
      worst = std::max(worst,
                       max_abs_diff(w_prime.weights, merge_so(s, cfg).weights));
    }
  }
  report("10-step trajectory equivalence (20 seeds)", worst < 1e-10,
         "max kernel divergence " + io::fmt_double(worst));
}

// 3. Gradient checks
void check_gradients() {
  const std::size_t channels = 2, k = 3;
  Rng rng(41);
  const Tensor x = rng.normal({1, channels, 4, 4, 4});
  const Tensor w = scale(rng.normal({channels, 1, k, k, k}), 0.3);
  double worst = 0.0;
  auto absorb = [&](const ad::GradcheckReport& r) {
    for (const auto& row : r.rows) worst = std::max(worst, row.max_rel_err);
  };

  absorb(ad::gradcheck({{"dX", x}, {"dW", w}},
                       [](ad::Tape& t, const std::vector<ad::Value>& p) {
                         return ad::vsum(t,
                                         ad::sigmoid(t, ad::dwconv(t, p[0], p[1])));
                       }));

  auto gen = lrbm::GeneratorParams::init(channels, 3, 2, 42);
  for (auto& l : gen.layers) {
    l.w = axpy(l.w, rng.normal(l.w.shape()), 0.2);
    l.bias = axpy(l.bias, rng.normal(l.bias.shape()), 0.1);
  }
  const Tensor dist = lrbm::distance_map(k);
  std::vector<std::pair<std::string, Tensor>> lrbm_params = {
      {"beta", Tensor::scalar(0.7)}, {"kernel", w}};
  for (const auto& l : gen.layers) {
    lrbm_params.emplace_back("gw", l.w);
    lrbm_params.emplace_back("gg", l.gain);
    lrbm_params.emplace_back("gb", l.bias);
  }
  absorb(ad::gradcheck(
      lrbm_params, [&](ad::Tape& t, const std::vector<ad::Value>& p) {
        lrbm::GeneratorValues gv;
        for (std::size_t i = 0; i < gen.layers.size(); ++i)
          gv.layers.push_back({p[2 + 3 * i], p[3 + 3 * i], p[4 + 3 * i]});
        ad::Value prior =
            ad::prior_from_beta(t, p[0], dist, channels, lrbm::kBetaFloor);
        ad::Value m = ad::add(t, prior, lrbm::generator_forward(t, prior, gv));
        // effective-kernel product rule, then through the conv
        ad::Value y = ad::dwconv(t, t.constant(x), ad::mul(t, p[1], m));
        return ad::vsum(t, ad::sigmoid(t, y));
      }));

  enc::EncoderConfig cfg;
  cfg.stages = {{1, channels}};
  cfg.k = 3;
  cfg.gen_k = 3;
  cfg.arm = enc::Arm::Lrbm;
  cfg.beta_init = 0.8;
  auto mp = enc::ModelParams::init(cfg, 43);
  auto& b = mp.stages[0][0];
  for (auto& l : b.gen.layers) {
    l.w = axpy(l.w, rng.normal(l.w.shape()), 0.2);
    l.bias = axpy(l.bias, rng.normal(l.bias.shape()), 0.1);
  }
  std::vector<std::pair<std::string, Tensor>> blk_params = {
      {"ng", b.norm_gain}, {"nb", b.norm_bias}, {"w", b.w},
      {"beta", Tensor::scalar(b.beta)}};
  for (const auto& l : b.gen.layers) {
    blk_params.emplace_back("gw", l.w);
    blk_params.emplace_back("gg", l.gain);
    blk_params.emplace_back("gb", l.bias);
  }
  absorb(ad::gradcheck(
      blk_params, [&](ad::Tape& t, const std::vector<ad::Value>& p) {
        enc::ModelValues::BlockValues bv;
        bv.norm_gain = p[0];
        bv.norm_bias = p[1];
        bv.w = p[2];
        bv.beta = p[3];
        for (std::size_t i = 0; i < b.gen.layers.size(); ++i)
          bv.gen.layers.push_back({p[4 + 3 * i], p[5 + 3 * i], p[6 + 3 * i]});
        return ad::vsum(
            t, ad::sigmoid(t, enc::block_forward(t, t.constant(x), bv, cfg)));
      }));

  report("gradient checks (conv, lrbm path, product rule, full block)",
         worst < 1e-6, "max rel err " + io::fmt_double(worst));
}

// 4. Adam scale cancellation
void check_adam_scale() {
  Rng rng(44);
  std::vector<double> grads(100);
  for (auto& g : grads) g = rng.next_normal();
  const auto tight = adam_scale_invariance_check(grads, 10.0, 1e-8);
  const auto loose = adam_scale_invariance_check(grads, 10.0, 1e-2);
  report("adam scale cancellation (eps 1e-8) + eps caveat (1e-2)",
         tight.max_rel_deviation < 1e-6 && loose.max_rel_deviation > 1e-3,
         "deviation " + io::fmt_double(tight.max_rel_deviation) + " vs " +
             io::fmt_double(loose.max_rel_deviation));
}

// 5. Prior properties
void check_prior() {
  bool ok = true;
  std::string detail;
  for (std::size_t k : {3u, 5u, 7u, 9u}) {
    const Tensor d = lrbm::distance_map(k);
    const auto ps = lrbm::prior_mask(d, 0.9, 1);
    const std::size_t c = (k - 1) / 2;
    ok = ok && ps.p[(c * k + c) * k + c] == 1.0;
    for (std::size_t i = 0; i < d.size() && ok; ++i)
      for (std::size_t j = 0; j < d.size(); ++j)
        if ((d[i] < d[j] && ps.p[i] <= ps.p[j]) ||
            (d[i] == d[j] && ps.p[i] != ps.p[j])) {
          ok = false;
          break;
        }
    for (std::size_t z = 0; z < k && ok; ++z)
      for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) {
          const double v = ps.p[(z * k + y) * k + x];
          if (v != ps.p[(z * k + y) * k + (k - 1 - x)] ||
              v != ps.p[(z * k + (k - 1 - y)) * k + x] ||
              v != ps.p[((k - 1 - z) * k + y) * k + x]) {
            ok = false;
            break;
          }
        }
  }
  const auto p3 = lrbm::prior_mask(lrbm::distance_map(3), 1.0, 1);
  const double corner_err = std::abs(p3.p[0] - 1.0 / (1.0 + std::sqrt(3.0)));
  ok = ok && corner_err < 1e-12;
  report("prior: center 1, strict monotone, reflection symmetric, corner value",
         ok, "corner err " + io::fmt_double(corner_err));
}

// 6. LRBM init contract
void check_init_contract() {
  const auto gen = lrbm::GeneratorParams::init(4, 7, 2, 45);
  const auto ps = lrbm::prior_mask(lrbm::distance_map(7), 1e-3, 4);
  const bool mask_ok = max_abs_diff(lrbm::modulation_mask(ps, gen).m, ps.p) == 0.0;

  enc::EncoderConfig lcfg;
  lcfg.stages = {{1, 4}};
  lcfg.k = 7;
  lcfg.arm = enc::Arm::Lrbm;
  lcfg.beta_init = 0.5;
  auto fcfg = lcfg;
  fcfg.arm = enc::Arm::Fixed;
  const auto lp = enc::ModelParams::init(lcfg, 46);
  // identical draws except generator tensors: strip the generator
  auto fp = lp;
  for (auto& st : fp.stages)
    for (auto& b : st) b.gen = lrbm::GeneratorParams{};
  const Tensor x = seeded_normal(47, {1, 1, 8, 8, 8});
  const bool arm_ok = max_abs_diff(enc::forward_logits(x, lp, lcfg),
                                   enc::forward_logits(x, fp, fcfg)) == 0.0;
  report("lrbm init contract: M == P and lrbm arm == fixed arm, bitwise",
         mask_ok && arm_ok);
}

// 7. Fold equivalence
void check_fold() {
  enc::EncoderConfig cfg;
  cfg.stages = {{1, 4}, {1, 8}};
  cfg.k = 3;
  cfg.gen_k = 3;
  cfg.arm = enc::Arm::Lrbm;
  cfg.beta_init = 0.5;
  enc::TrainConfig tc;
  tc.steps = 3;
  tc.task.volume = 8;
  tc.task.radius_min = 1.5;
  tc.task.radius_max = 2.5;
  enc::ModelParams p;
  enc::train_toy(cfg, tc, 48, &p);
  const auto [folded, fcfg] = enc::fold_model(p, cfg);
  double worst = 0.0;
  Rng rng(49);
  for (int i = 0; i < 10; ++i) {
    const Tensor x = rng.normal({1, 1, 8, 8, 8});
    worst = std::max(worst, max_abs_diff(enc::forward_logits(x, p, cfg),
                                         enc::forward_logits(x, folded, fcfg)));
  }
  std::size_t gen_params = 0;
  for (const auto& st : folded.stages)
    for (const auto& b : st)
      for (const auto& l : b.gen.layers)
        gen_params += l.w.size() + l.gain.size() + l.bias.size();
  report("fold equivalence: identical logits, zero generator parameters",
         worst == 0.0 && gen_params == 0, "max diff " + io::fmt_double(worst));
}

// 8. ERF support ground truth + masked radius
void check_erf() {
  Rng rng(50);
  auto nonzero_bank = [&](std::size_t k) {
    Tensor w = rng.normal({1, 1, k, k, k});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.5 * std::abs(w[i]);
    return w;
  };
  auto stack_model = [](std::vector<Tensor> banks) {
    return erf::ModelFn([banks = std::move(banks)](ad::Tape& t, ad::Value x) {
      ad::Value h = x;
      for (const auto& b : banks) h = ad::dwconv(t, h, t.constant(b));
      return h;
    });
  };
  // brute-force support: perturb each voxel, watch the central output
  auto brute_support = [](const erf::ModelFn& model, std::size_t v) {
    auto center = [&](const Tensor& in) {
      ad::Tape t;
      const Tensor o = t.value(model(t, t.constant(in)));
      const std::size_t c = (v - 1) / 2;
      return o[(c * v + c) * v + c];
    };
    const double base = center(Tensor({1, 1, v, v, v}));
    std::vector<std::array<std::size_t, 3>> sup;
    for (std::size_t z = 0; z < v; ++z)
      for (std::size_t y = 0; y < v; ++y)
        for (std::size_t x = 0; x < v; ++x) {
          Tensor in({1, 1, v, v, v});
          in[(z * v + y) * v + x] = 1.0;
          if (std::abs(center(in) - base) > 1e-12) sup.push_back({z, y, x});
        }
    return sup;
  };

  bool ok = true;
  std::string detail;
  for (int layers : {1, 2}) {
    std::vector<Tensor> banks;
    for (int i = 0; i < layers; ++i) banks.push_back(nonzero_bank(3));
    const auto model = stack_model(banks);
    const auto m = erf::erf_accumulate(model, {1, 1, 9, 9, 9}, 8, 51);
    const auto sup = erf::erf_support(m, 1e-9);
    const auto brute = brute_support(model, 9);
    const std::size_t edge = static_cast<std::size_t>(2 * layers + 1);
    ok = ok && sup.voxels.size() == edge * edge * edge && sup.voxels == brute;
    detail += std::to_string(layers) + "-layer:" + std::to_string(sup.voxels.size()) +
              " ";
  }
  int shrink = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng r2(seed);
    const auto prior = lrbm::prior_mask(lrbm::distance_map(5), 0.05, 1).p;
    std::vector<Tensor> plain, masked;
    for (int i = 0; i < 2; ++i) {
      Tensor w = r2.normal({1, 1, 5, 5, 5});
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = 0.5 + 0.5 * std::abs(w[j]);
      plain.push_back(w);
      masked.push_back(mul(w, prior));
    }
    const auto mp = erf::erf_accumulate(stack_model(plain), {1, 1, 11, 11, 11}, 8, seed);
    const auto mm =
        erf::erf_accumulate(stack_model(masked), {1, 1, 11, 11, 11}, 8, seed);
    if (erf::erf_support(mm, 0.01).half_mass_radius <
        erf::erf_support(mp, 0.01).half_mass_radius)
      ++shrink;
  }
  ok = ok && shrink == 5;
  report("erf: 3^3 / 5^3 supports vs brute force, masked radius shrinks 5/5",
         ok, detail + "shrink " + std::to_string(shrink) + "/5");
}

// 9. Qualitative ordering on the toy task
void check_ordering() {
  enc::EncoderConfig base;
  enc::TrainConfig tc;
  tc.steps = 600;
  int lrbm_wins = 0;
  double dice_fixed = 0.0, dice_lrbm = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double losses[3], dices[3];
    int i = 0;
    for (enc::Arm arm : {enc::Arm::Vanilla, enc::Arm::Fixed, enc::Arm::Lrbm}) {
      enc::EncoderConfig cfg = base;
      cfg.arm = arm;
      const auto curve = enc::train_toy(cfg, tc, seed);
      losses[i] = curve.final_loss;
      dices[i] = curve.final_dice;
      ++i;
    }
    if (losses[2] <= losses[0]) ++lrbm_wins;
    dice_fixed += dices[1] / 5.0;
    dice_lrbm += dices[2] / 5.0;
    std::printf("  seed %llu: vanilla %.4f fixed %.4f lrbm %.4f (loss)\n",
                static_cast<unsigned long long>(seed), losses[0], losses[1],
                losses[2]);
    std::fflush(stdout);
  }
  const bool ok = lrbm_wins >= 4 && dice_lrbm >= dice_fixed - 0.01;
  report("toy-task ordering: lrbm <= vanilla >= 4/5 seeds, lrbm dice >= fixed - 0.01",
         ok,
         "wins " + std::to_string(lrbm_wins) + "/5, mean dice lrbm " +
             io::fmt_double(dice_lrbm) + " fixed " + io::fmt_double(dice_fixed));
}

// 10. Determinism of artifacts
void check_determinism() {
  const fs::path dir = fs::temp_directory_path() / "rep3d_acceptance";
  fs::create_directories(dir);
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };

  bool ok = true;
  // training curve + checkpoint
  enc::EncoderConfig cfg;
  cfg.stages = {{1, 4}};
  cfg.k = 3;
  cfg.arm = enc::Arm::Lrbm;
  cfg.gen_k = 3;
  enc::TrainConfig tc;
  tc.steps = 5;
  tc.task.volume = 8;
  tc.task.radius_min = 1.5;
  tc.task.radius_max = 2.5;
  for (int run = 0; run < 2; ++run) {
    enc::ModelParams p;
    enc::train_toy(cfg, tc, 52, &p);
    enc::save_checkpoint((dir / ("ckpt" + std::to_string(run))).string(), p, cfg);
  }
  for (const auto& e : fs::directory_iterator(dir / "ckpt0"))
    ok = ok && bytes(e.path()) == bytes(dir / "ckpt1" / e.path().filename());

  // erf artifacts
  Rng rng(53);
  Tensor bank = rng.normal({1, 1, 3, 3, 3});
  for (std::size_t i = 0; i < bank.size(); ++i) bank[i] = 0.5 + std::abs(bank[i]);
  for (int run = 0; run < 2; ++run) {
    const auto m = erf::erf_accumulate(
        [&](ad::Tape& t, ad::Value x) {
          return ad::dwconv(t, x, t.constant(bank));
        },
        {1, 1, 9, 9, 9}, 8, 54);
    erf::export_slices(m, 0, (dir / ("erf" + std::to_string(run))).string());
    io::write_rt3d((dir / ("erf" + std::to_string(run) + ".rt3d")).string(), m.map);
  }
  for (const char* suffix : {"_slice.pgm", "_slice.csv", "_radial.csv", ".rt3d"})
    ok = ok && bytes(dir / (std::string("erf0") + suffix)) ==
                   bytes(dir / (std::string("erf1") + suffix));
  report("determinism: repeated runs produce byte-identical artifacts", ok);
}

} // namespace

int main() {
  check_forward_merge();
  check_trajectory();
  check_gradients();
  check_adam_scale();
  check_prior();
  check_init_contract();
  check_fold();
  check_erf();
  check_ordering();
  check_determinism();
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
