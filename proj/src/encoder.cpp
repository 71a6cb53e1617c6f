#include "rep3d/encoder.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "rep3d/io.hpp"
#include "rep3d/rng.hpp"

namespace rep3d::enc {

namespace {

// manifests must round-trip doubles exactly
std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

namespace fs = std::filesystem;

std::string arm_name(Arm a) {
  switch (a) {
    case Arm::Vanilla: return "vanilla";
    case Arm::Fixed: return "fixed";
    case Arm::Lrbm: return "lrbm";
  }
  return "?";
}

Arm arm_from_name(const std::string& s) {
  if (s == "vanilla") return Arm::Vanilla;
  if (s == "fixed") return Arm::Fixed;
  if (s == "lrbm") return Arm::Lrbm;
  throw std::invalid_argument("unknown arm: " + s);
}

void EncoderConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("encoder needs at least one stage");
  if (k % 2 == 0) throw std::invalid_argument("block kernel size must be odd");
  if (gen_k % 2 == 0) throw std::invalid_argument("generator kernel size must be odd");
  if (gen_depth < 1 || gen_depth > 3)
    throw std::invalid_argument("generator depth must be 1..3");
  for (const auto& s : stages)
    if (s.blocks < 1 || s.channels == 0)
      throw std::invalid_argument("invalid stage config");
}

ModelParams ModelParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  const std::size_t c0 = cfg.stages[0].channels;
  p.stem_w = scale(rng.normal({c0, cfg.in_channels, 3, 3, 3}),
                   1.0 / std::sqrt(27.0 * static_cast<double>(cfg.in_channels)));
  p.stem_b = Tensor({c0});
  const double kstd = 1.0 / std::sqrt(static_cast<double>(cfg.k * cfg.k * cfg.k));
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const std::size_t c = cfg.stages[si].channels;
    std::vector<BlockParams> blocks;
    for (int bi = 0; bi < cfg.stages[si].blocks; ++bi) {
      BlockParams b;
      b.norm_gain = Tensor::full({c}, 1.0);
      b.norm_bias = Tensor({c});
      b.w = scale(rng.normal({c, 1, cfg.k, cfg.k, cfg.k}), kstd);
      b.beta = cfg.beta_init;
      // generator seed is derived, not drawn: the main stream stays
      // identical across arms so vanilla/fixed/lrbm share every other draw
      if (cfg.arm == Arm::Lrbm)
        b.gen = lrbm::GeneratorParams::init(
            c, cfg.gen_k, cfg.gen_depth,
            seed ^ (0x9e3779b97f4a7c15ULL * (131 * si + static_cast<std::size_t>(bi) + 1)));
      blocks.push_back(std::move(b));
    }
    p.stages.push_back(std::move(blocks));
    if (si + 1 < cfg.stages.size()) {
      const std::size_t cn = cfg.stages[si + 1].channels;
      p.down_w.push_back(scale(rng.normal({cn, c, 2, 2, 2}),
                               1.0 / std::sqrt(8.0 * static_cast<double>(c))));
      p.down_b.push_back(Tensor({cn}));
    }
  }
  const std::size_t clast = cfg.stages.back().channels;
  p.head_w = scale(rng.normal({1, clast, 1, 1, 1}),
                   1.0 / std::sqrt(static_cast<double>(clast)));
  p.head_b = Tensor({1});
  return p;
}

std::size_t ModelParams::parameter_count(const EncoderConfig& cfg) const {
  std::size_t n = stem_w.size() + stem_b.size() + head_w.size() + head_b.size();
  for (const auto& w : down_w) n += w.size();
  for (const auto& b : down_b) n += b.size();
  for (const auto& stage : stages)
    for (const auto& b : stage) {
      n += b.norm_gain.size() + b.norm_bias.size() + b.w.size();
      if (cfg.arm == Arm::Lrbm) n += 1 + b.gen.parameter_count(); // beta + theta
    }
  return n;
}

namespace {

// Mutable references over every trainable tensor, in the exact order
// register_model emits values. Scalar betas are adapted through `scalar`.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  double* scalar = nullptr;
};

std::vector<ParamRef> collect_params(ModelParams& p, const EncoderConfig& cfg) {
  std::vector<ParamRef> out;
  out.push_back({"stem_w", &p.stem_w, nullptr});
  out.push_back({"stem_b", &p.stem_b, nullptr});
  for (std::size_t si = 0; si < p.stages.size(); ++si) {
    for (std::size_t bi = 0; bi < p.stages[si].size(); ++bi) {
      auto& b = p.stages[si][bi];
      const std::string tag = std::to_string(si) + "." + std::to_string(bi);
      out.push_back({"norm_gain." + tag, &b.norm_gain, nullptr});
      out.push_back({"norm_bias." + tag, &b.norm_bias, nullptr});
      out.push_back({"kernel." + tag, &b.w, nullptr});
      if (cfg.arm == Arm::Lrbm) {
        out.push_back({"beta." + tag, nullptr, &b.beta});
        for (std::size_t li = 0; li < b.gen.layers.size(); ++li) {
          auto& l = b.gen.layers[li];
          const std::string g = "gen." + tag + "." + std::to_string(li);
          out.push_back({g + ".w", &l.w, nullptr});
          out.push_back({g + ".gain", &l.gain, nullptr});
          out.push_back({g + ".bias", &l.bias, nullptr});
        }
      }
    }
    if (si < p.down_w.size()) {
      out.push_back({"down_w." + std::to_string(si), &p.down_w[si], nullptr});
      out.push_back({"down_b." + std::to_string(si), &p.down_b[si], nullptr});
    }
  }
  out.push_back({"head_w", &p.head_w, nullptr});
  out.push_back({"head_b", &p.head_b, nullptr});
  return out;
}

} // namespace

ModelValues register_model(ad::Tape& t, const ModelParams& p,
                           const EncoderConfig& cfg, bool trainable) {
  auto reg = [&](const Tensor& v) { return t.leaf(v, trainable); };
  ModelValues m;
  m.stem_w = reg(p.stem_w);
  m.stem_b = reg(p.stem_b);
  for (const auto& stage : p.stages) {
    std::vector<ModelValues::BlockValues> bvs;
    for (const auto& b : stage) {
      ModelValues::BlockValues bv;
      bv.norm_gain = reg(b.norm_gain);
      bv.norm_bias = reg(b.norm_bias);
      bv.w = reg(b.w);
      if (cfg.arm == Arm::Lrbm) {
        bv.beta = t.leaf(Tensor::scalar(b.beta), trainable);
        for (const auto& l : b.gen.layers)
          bv.gen.layers.push_back({reg(l.w), reg(l.gain), reg(l.bias)});
      }
      bvs.push_back(bv);
    }
    m.stages.push_back(std::move(bvs));
  }
  for (std::size_t i = 0; i < p.down_w.size(); ++i) {
    m.down_w.push_back(reg(p.down_w[i]));
    m.down_b.push_back(reg(p.down_b[i]));
  }
  m.head_w = reg(p.head_w);
  m.head_b = reg(p.head_b);

  // name list mirrors collect_params order
  ModelParams& mp = const_cast<ModelParams&>(p);
  auto refs = collect_params(mp, cfg);
  std::vector<ad::Value> flat;
  flat.push_back(m.stem_w);
  flat.push_back(m.stem_b);
  for (std::size_t si = 0; si < m.stages.size(); ++si) {
    for (auto& bv : m.stages[si]) {
      flat.push_back(bv.norm_gain);
      flat.push_back(bv.norm_bias);
      flat.push_back(bv.w);
      if (cfg.arm == Arm::Lrbm) {
        flat.push_back(bv.beta);
        for (auto& l : bv.gen.layers) {
          flat.push_back(l.w);
          flat.push_back(l.gain);
          flat.push_back(l.bias);
        }
      }
    }
    if (si < m.down_w.size()) {
      flat.push_back(m.down_w[si]);
      flat.push_back(m.down_b[si]);
    }
  }
  flat.push_back(m.head_w);
  flat.push_back(m.head_b);
  if (flat.size() != refs.size())
    throw std::logic_error("register_model: parameter enumeration mismatch");
  for (std::size_t i = 0; i < flat.size(); ++i)
    m.all.emplace_back(refs[i].name, flat[i]);
  return m;
}

ad::Value block_forward(ad::Tape& t, ad::Value x, const ModelValues::BlockValues& b,
                        const EncoderConfig& cfg) {
  ad::Value h = ad::layer_norm(t, x, 1, 3, b.norm_gain, b.norm_bias, cfg.norm_eps);
  ad::Value weff = b.w;
  const std::size_t channels = t.value(b.w).dim(0);
  if (cfg.arm == Arm::Fixed) {
    const Tensor mask = lrbm::prior_mask(lrbm::distance_map(cfg.k), cfg.beta_init,
                                         channels).p;
    weff = ad::mul(t, b.w, t.constant(mask));
  } else if (cfg.arm == Arm::Lrbm) {
    ad::Value p = ad::prior_from_beta(t, b.beta, lrbm::distance_map(cfg.k),
                                      channels, lrbm::kBetaFloor);
    ad::Value m = ad::add(t, p, lrbm::generator_forward(t, p, b.gen));
    weff = ad::mul(t, b.w, m);
  }
  return ad::gelu(t, ad::dwconv(t, h, weff));
}

ad::Value model_forward(ad::Tape& t, ad::Value x, const ModelValues& m,
                        const EncoderConfig& cfg) {
  ad::Value h = ad::dense_conv(t, x, m.stem_w, m.stem_b, 2, 1);
  std::size_t downs = 1;
  for (std::size_t si = 0; si < m.stages.size(); ++si) {
    for (const auto& bv : m.stages[si]) h = block_forward(t, h, bv, cfg);
    if (si < m.down_w.size()) {
      h = ad::dense_conv(t, h, m.down_w[si], m.down_b[si], 2, 0);
      ++downs;
    }
  }
  h = ad::upsample_nearest(t, h, std::size_t{1} << downs);
  return ad::dense_conv(t, h, m.head_w, m.head_b, 1, 0);
}

Tensor forward_logits(const Tensor& x, const ModelParams& p, const EncoderConfig& cfg) {
  ad::Tape t;
  ModelValues m = register_model(t, p, cfg, false);
  return t.value(model_forward(t, t.constant(x), m, cfg));
}

std::pair<ModelParams, EncoderConfig> fold_model(const ModelParams& p,
                                                 const EncoderConfig& cfg) {
  ModelParams out = p;
  EncoderConfig ocfg = cfg;
  for (std::size_t si = 0; si < out.stages.size(); ++si)
    for (auto& b : out.stages[si]) {
      if (cfg.arm == Arm::Fixed) {
        const Tensor mask =
            lrbm::prior_mask(lrbm::distance_map(cfg.k), cfg.beta_init, b.w.dim(0)).p;
        b.w = mul(b.w, mask);
      } else if (cfg.arm == Arm::Lrbm) {
        const auto ps = lrbm::prior_mask(lrbm::distance_map(cfg.k), b.beta, b.w.dim(0));
        const auto mask = lrbm::modulation_mask(ps, b.gen);
        b.w = lrbm::fold_for_inference(DepthwiseKernel::from(b.w), mask.m).weights;
      }
      b.gen = lrbm::GeneratorParams{}; // generator discarded
    }
  ocfg.arm = Arm::Vanilla;
  return {std::move(out), ocfg};
}

std::pair<Tensor, Tensor> synth_task_generate(const ToyTask& task, std::uint64_t seed) {
  const std::size_t v = task.volume;
  if (task.radius_max * 2.0 >= static_cast<double>(v))
    throw std::invalid_argument("synth_task_generate: radii do not fit in volume");
  Rng rng(seed);
  Tensor x({1, 1, v, v, v});
  Tensor label({1, 1, v, v, v});
  struct Sphere {
    double cz, cy, cx, r;
  };
  std::vector<Sphere> spheres;
  for (int i = 0; i < task.num_spheres; ++i) {
    const double r =
        task.radius_min + (task.radius_max - task.radius_min) * rng.next_uniform();
    auto coord = [&] { return r + (static_cast<double>(v) - 1.0 - 2.0 * r) * rng.next_uniform(); };
    spheres.push_back({coord(), coord(), coord(), r});
  }
  for (std::size_t z = 0; z < v; ++z)
    for (std::size_t y = 0; y < v; ++y)
      for (std::size_t xx = 0; xx < v; ++xx) {
        double intensity = 0.0;
        double lab = 0.0;
        for (const auto& s : spheres) {
          const double dz = static_cast<double>(z) - s.cz;
          const double dy = static_cast<double>(y) - s.cy;
          const double dx = static_cast<double>(xx) - s.cx;
          const double dist = std::sqrt(dz * dz + dy * dy + dx * dx);
          // soft edge of one voxel
          const double soft = std::clamp(s.r + 0.5 - dist, 0.0, 1.0);
          intensity = std::max(intensity, soft);
          if (dist <= s.r) lab = 1.0;
        }
        const std::size_t idx = (z * v + y) * v + xx;
        x[idx] = intensity + task.noise * rng.next_normal();
        label[idx] = lab;
      }
  return {std::move(x), std::move(label)};
}

double soft_dice(const Tensor& pred, const Tensor& label, double smooth) {
  if (!pred.same_shape(label))
    throw std::invalid_argument("soft_dice: shape mismatch");
  double inter = 0.0, ps = 0.0, ls = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * label[i];
    ps += pred[i];
    ls += label[i];
  }
  return (2.0 * inter + smooth) / (ps + ls + smooth);
}

namespace {

struct EvalResult {
  double loss, dice;
};

EvalResult evaluate(const ModelParams& p, const EncoderConfig& cfg,
                    const Tensor& x, const Tensor& label) {
  const Tensor logits = forward_logits(x, p, cfg);
  const Tensor pred = sigmoid_val(logits);
  const double dice = soft_dice(pred, label);
  return {1.0 - dice, dice};
}

bool is_generator_param(const std::string& name) {
  return name.rfind("gen.", 0) == 0 || name.rfind("beta.", 0) == 0;
}

} // namespace

TrainCurve train_toy(const EncoderConfig& cfg, const TrainConfig& tc,
                     std::uint64_t seed, ModelParams* trained) {
  cfg.validate();
  ModelParams p = ModelParams::init(cfg, seed);
  auto refs = collect_params(p, cfg);

  std::vector<AdamState> opt;
  for (const auto& r : refs) {
    Tensor proto = r.tensor ? *r.tensor : Tensor::scalar(*r.scalar);
    opt.push_back(AdamState::like(proto, tc.adam));
  }

  Rng data_rng(seed ^ 0xd1b54a32d192ed03ULL);
  const auto [eval_x, eval_label] = synth_task_generate(tc.task, data_rng.next_u64());

  TrainCurve curve;
  curve.arm = cfg.arm;
  curve.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0).count();
  };

  const EvalResult e0 = evaluate(p, cfg, eval_x, eval_label);
  curve.records.push_back({0, e0.loss, e0.dice, wall_ms()});

  for (int step = 1; step <= tc.steps; ++step) {
    const auto [x, label] = synth_task_generate(tc.task, data_rng.next_u64());
    ad::Tape t;
    ModelValues m = register_model(t, p, cfg, true);
    ad::Value logits = model_forward(t, t.constant(x), m, cfg);
    ad::Value loss = ad::soft_dice_loss(t, ad::sigmoid(t, logits), label);
    const double lval = t.value(loss)[0];
    if (!std::isfinite(lval))
      throw std::runtime_error("train_toy: loss diverged at step " +
                               std::to_string(step));
    t.backward(loss);

    for (std::size_t i = 0; i < refs.size(); ++i) {
      const ad::Value v = m.all[i].second;
      const double lr =
          (tc.gen_lr >= 0.0 && is_generator_param(refs[i].name)) ? tc.gen_lr : tc.lr;
      if (lr == 0.0) continue;
      Tensor cur = refs[i].tensor ? *refs[i].tensor : Tensor::scalar(*refs[i].scalar);
      Tensor grad = t.has_grad(v) ? t.grad(v) : Tensor(cur.shape());
      Tensor next = adamw_step(cur, grad, opt[i], lr);
      if (refs[i].tensor)
        *refs[i].tensor = std::move(next);
      else
        *refs[i].scalar = next[0];
    }

    if (step % tc.record_every == 0 || step == tc.steps) {
      const EvalResult e = evaluate(p, cfg, eval_x, eval_label);
      curve.records.push_back({step, e.loss, e.dice, wall_ms()});
    }
  }
  curve.final_loss = curve.records.back().loss;
  curve.final_dice = curve.records.back().dice;
  if (trained) *trained = std::move(p);
  return curve;
}

// --- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::string& dir, const ModelParams& p,
                     const EncoderConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write checkpoint manifest");
  manifest << "format = rep3d-checkpoint-v1\n";
  manifest << "arm = " << arm_name(cfg.arm) << "\n";
  manifest << "k = " << cfg.k << "\n";
  manifest << "gen_k = " << cfg.gen_k << "\n";
  manifest << "gen_depth = " << cfg.gen_depth << "\n";
  manifest << "beta_init = " << fmt_exact(cfg.beta_init) << "\n";
  manifest << "norm_eps = " << fmt_exact(cfg.norm_eps) << "\n";
  manifest << "in_channels = " << cfg.in_channels << "\n";
  manifest << "stages =";
  for (const auto& s : cfg.stages) manifest << " " << s.blocks << ":" << s.channels;
  manifest << "\n";
  for (std::size_t si = 0; si < p.stages.size(); ++si)
    for (std::size_t bi = 0; bi < p.stages[si].size(); ++bi)
      manifest << "beta." << si << "." << bi << " = "
               << fmt_exact(p.stages[si][bi].beta) << "\n";

  ModelParams& mp = const_cast<ModelParams&>(p);
  for (const auto& r : collect_params(mp, cfg)) {
    if (!r.tensor) continue; // betas live in the manifest
    io::write_rt3d((fs::path(dir) / (r.name + ".rt3d")).string(), *r.tensor);
  }
}

std::pair<ModelParams, EncoderConfig> load_checkpoint(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot read checkpoint manifest in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  EncoderConfig cfg;
  cfg.arm = arm_from_name(kv.at("arm"));
  cfg.k = std::stoul(kv.at("k"));
  cfg.gen_k = std::stoul(kv.at("gen_k"));
  cfg.gen_depth = std::stoi(kv.at("gen_depth"));
  cfg.beta_init = std::stod(kv.at("beta_init"));
  cfg.norm_eps = std::stod(kv.at("norm_eps"));
  cfg.in_channels = std::stoul(kv.at("in_channels"));
  cfg.stages.clear();
  std::istringstream ss(kv.at("stages"));
  std::string tok;
  while (ss >> tok) {
    const auto colon = tok.find(':');
    cfg.stages.push_back({std::stoi(tok.substr(0, colon)),
                          std::stoul(tok.substr(colon + 1))});
  }
  cfg.validate();

  ModelParams p = ModelParams::init(cfg, 0);
  for (std::size_t si = 0; si < p.stages.size(); ++si)
    for (std::size_t bi = 0; bi < p.stages[si].size(); ++bi) {
      const auto it = kv.find("beta." + std::to_string(si) + "." + std::to_string(bi));
      if (it != kv.end()) p.stages[si][bi].beta = std::stod(it->second);
    }
  for (const auto& r : collect_params(p, cfg)) {
    if (!r.tensor) continue;
    *r.tensor = io::read_rt3d((fs::path(dir) / (r.name + ".rt3d")).string());
  }
  return {std::move(p), cfg};
}

} // namespace rep3d::enc
