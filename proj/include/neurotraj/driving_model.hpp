#pragma once

// Potential-map window encoder, sinusoidal trajectory head, derivative-aware
// loss and the mini-batch training loop.

#include "neurotraj/diffnet.hpp"
#include "neurotraj/metrics.hpp"
#include "neurotraj/scenario.hpp"
#include "neurotraj/trajectory.hpp"

#include <functional>
#include <optional>
#include <random>
#include <span>

namespace neurotraj {

enum class Ablation { none, no_intention, no_v0, no_cos, no_hos, big_hos };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_intention: return "no-intention";
    case Ablation::no_v0: return "no-v0";
    case Ablation::no_cos: return "no-cos";
    case Ablation::no_hos: return "no-hos";
    case Ablation::big_hos: return "big-hos";
  }
  return "?";
}

/// Accepts both `no-v0` and `no_v0` spellings.
inline Ablation ablation_from_string(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  for (auto a : {Ablation::none, Ablation::no_intention, Ablation::no_v0, Ablation::no_cos, Ablation::no_hos,
                 Ablation::big_hos})
    if (s == to_string(a)) return a;
  throw Error("unknown ablation '" + s + "'");
}

struct LossConfig {
  double lambda1 = 0.5;  // velocity
  double lambda2 = 0.1;  // acceleration
};

struct ModelConfig {
  GridSpec grid;
  int frames = kWindowFrames;
  std::vector<int> conv_channels{8, 16, 32, 64};
  int kernel = 4;
  int stride = 2;
  int feature = 128;
  int gru_hidden = 128;
  int gru_layers = 1;
  int head_width = 256;
  int basis_count = 32;
  double horizon = kHorizon;
  double omega_scale = 20.0;
  double coef_scale = 4.0;  // multiplies emitted weights and biases
  double omega_init_min = 0.5;
  double omega_init_max = 3.0 * kPi;
  double head_out_gain = 0.1;
  double leaky_slope = 0.2;
  double dropout = 0.0;  // on r, training only

  /// 8x8 maps, four bases and narrow layers; small enough to finite-difference
  /// every parameter.
  static ModelConfig tiny() {
    ModelConfig c;
    c.grid = GridSpec{8, 8, 4.0, {0.0, -16.0}};
    c.conv_channels = {2, 4, 4, 8};
    c.feature = 8;
    c.gru_hidden = 8;
    c.head_width = 16;
    c.basis_count = 4;
    return c;
  }

  int condition_size() const { return 1 + gru_hidden; }
  int head_outputs() const { return 4 * basis_count + 2; }
};

inline io::json model_config_to_json(const ModelConfig& c) {
  return {{"grid", grid_spec_to_json(c.grid)},
          {"frames", c.frames},
          {"conv_channels", c.conv_channels},
          {"kernel", c.kernel},
          {"stride", c.stride},
          {"feature", c.feature},
          {"gru_hidden", c.gru_hidden},
          {"gru_layers", c.gru_layers},
          {"head_width", c.head_width},
          {"basis_count", c.basis_count},
          {"horizon", c.horizon},
          {"omega_scale", c.omega_scale},
          {"coef_scale", c.coef_scale},
          {"omega_init_min", c.omega_init_min},
          {"omega_init_max", c.omega_init_max},
          {"head_out_gain", c.head_out_gain},
          {"leaky_slope", c.leaky_slope},
          {"dropout", c.dropout}};
}

/// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const io::json& j, ModelConfig c = {}) {
  if (!j.is_object()) throw Error("model config must be an object");
  if (j.contains("grid")) c.grid = grid_spec_from_json(j.at("grid"));
  auto opt = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = io::get_field<std::decay_t<decltype(slot)>>(j, key);
  };
  opt("frames", c.frames);
  opt("conv_channels", c.conv_channels);
  opt("kernel", c.kernel);
  opt("stride", c.stride);
  opt("feature", c.feature);
  opt("gru_hidden", c.gru_hidden);
  opt("gru_layers", c.gru_layers);
  opt("head_width", c.head_width);
  opt("basis_count", c.basis_count);
  opt("horizon", c.horizon);
  opt("omega_scale", c.omega_scale);
  opt("coef_scale", c.coef_scale);
  opt("omega_init_min", c.omega_init_min);
  opt("omega_init_max", c.omega_init_max);
  opt("head_out_gain", c.head_out_gain);
  opt("leaky_slope", c.leaky_slope);
  opt("dropout", c.dropout);
  if (c.frames < 1 || c.conv_channels.empty() || c.feature < 1 || c.gru_hidden < 1 || c.gru_layers < 1 ||
      c.head_width < 1 || c.basis_count < 1 || !(c.horizon > 0.0) || !(c.omega_scale > 0.0) ||
      !(c.coef_scale > 0.0) || c.dropout < 0.0 || c.dropout >= 1.0)
    throw Error("invalid model config");
  return c;
}

// ---------------------------------------------------------------------------
// Loss

/// Mean over label samples of |dp|^2 + l1 |dv|^2 + l2 |da|^2. When `grad` is
/// given, adds scale * dL/dcoefficients to it.
inline double trajectory_loss(const ContinuousTrajectory& traj, std::span<const TrajectorySample> label,
                              const LossConfig& cfg, TrajectoryGrad* grad = nullptr, double scale = 1.0) {
  if (label.empty()) throw Error("loss needs at least one label sample");
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0) throw Error("loss weights must be nonnegative");
  const double inv_k = 1.0 / static_cast<double>(label.size());
  double total = 0.0;
  for (const auto& s : label) {
    if (s.t < 0.0 || s.t > traj.horizon) throw Error("label time outside the trajectory horizon");
    const auto e = eval(traj, s.t);
    const Vec2 rp = e.position - s.position;
    const Vec2 rv = e.velocity - s.velocity;
    const Vec2 ra = e.acceleration - s.acceleration;
    double term = rp.squaredNorm();
    KinematicGrad up;
    up.position = 2.0 * scale * inv_k * rp;
    // Zero-weight terms are skipped outright so they cannot leak into gradients.
    if (cfg.lambda1 != 0.0) {
      term += cfg.lambda1 * rv.squaredNorm();
      up.velocity = 2.0 * scale * inv_k * cfg.lambda1 * rv;
    }
    if (cfg.lambda2 != 0.0) {
      term += cfg.lambda2 * ra.squaredNorm();
      up.acceleration = 2.0 * scale * inv_k * cfg.lambda2 * ra;
    }
    total += term;
    if (grad) backward_through_eval(traj, s.t, up, *grad);
  }
  return total * inv_k;
}

inline LossConfig effective_loss(const LossConfig& base, Ablation a) {
  if (a == Ablation::no_hos) return {0.0, 0.0};
  if (a == Ablation::big_hos) return {base.lambda1 * 10.0, base.lambda2 * 10.0};
  return base;
}

// ---------------------------------------------------------------------------
// Model

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace detail

class DrivingModel {
 public:
  using Tensor = diffnet::Tensor;

  struct Batch {
    Tensor maps;  // [B * frames, 1, rows, cols], episode-major
    std::vector<double> v0;
    int size = 0;
  };

  /// Activations kept for backward().
  struct Pass {
    diffnet::Sequential::Cache conv;
    std::vector<std::vector<diffnet::LayerCache>> gru;  // [layer][frame]
    std::vector<double> dropout_mask;
    diffnet::Sequential::Cache head;
    Tensor condition;  // [B, 1 + hidden]
    Tensor head_out;   // [B, 4M + 2]
    std::vector<ContinuousTrajectory> trajectories;
  };

  explicit DrivingModel(ModelConfig cfg = {}, Ablation ablation = Ablation::none, std::uint64_t seed = 0)
      : cfg_(std::move(cfg)), ablation_(ablation) {
    build();
    std::mt19937_64 rng(seed);
    conv_.init(store_, rng);
    for (const auto& g : gru_) diffnet::init_layer(g, store_, rng);
    head_.init(store_, rng);
    init_head_output();
  }

  const ModelConfig& config() const { return cfg_; }
  Ablation ablation() const { return ablation_; }
  BasisKind basis() const { return ablation_ == Ablation::no_cos ? BasisKind::leaky_relu : BasisKind::cosine; }
  diffnet::ParamStore& params() { return store_; }
  const diffnet::ParamStore& params() const { return store_; }

  void zero_params() {
    for (auto& e : store_.entries()) e.value.fill(0.0);
  }

  Batch make_batch(std::span<const std::vector<PotentialMap>* const> windows, std::span<const double> v0s) const {
    if (windows.size() != v0s.size()) throw Error("window and speed counts differ");
    if (windows.empty()) throw Error("empty batch");
    const auto& g = cfg_.grid;
    Batch b;
    b.size = static_cast<int>(windows.size());
    b.maps = Tensor({b.size * cfg_.frames, 1, g.rows, g.cols});
    b.v0.resize(windows.size());
    const bool blank = ablation_ == Ablation::no_intention;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const auto& w = *windows[i];
      if (static_cast<int>(w.size()) != cfg_.frames)
        throw Error("expected a window of " + std::to_string(cfg_.frames) + " maps, got " +
                    std::to_string(w.size()));
      for (int f = 0; f < cfg_.frames; ++f) {
        if (!(w[f].spec == g)) throw Error("potential map grid does not match the model");
        if (!blank)
          std::copy(w[f].values.begin(), w[f].values.end(),
                    b.maps.data.begin() + static_cast<std::ptrdiff_t>((i * cfg_.frames + f) * g.size()));
      }
      b.v0[i] = ablation_ == Ablation::no_v0 ? 0.0 : v0s[i];
    }
    return b;
  }

  Batch make_batch(std::span<const Episode* const> episodes) const {
    std::vector<const std::vector<PotentialMap>*> windows;
    std::vector<double> v0s;
    for (const auto* ep : episodes) {
      windows.push_back(&ep->map_window);
      v0s.push_back(ep->v0);
    }
    return make_batch(windows, v0s);
  }

  /// `dropout_rng` enables dropout (training); without it the pass is pure.
  Pass forward(const Batch& batch, bool keep_cache, std::mt19937_64* dropout_rng = nullptr) const {
    Pass p;
    const int B = batch.size, F = cfg_.frames, H = cfg_.gru_hidden;
    const Tensor feat = conv_.forward(store_, batch.maps, keep_cache ? &p.conv : nullptr);
    if (keep_cache) p.gru.assign(gru_.size(), std::vector<diffnet::LayerCache>(F));

    // Per-frame inputs of the current GRU layer, each [B, width].
    std::vector<Tensor> seq(F);
    for (int f = 0; f < F; ++f) {
      seq[f] = Tensor({B, cfg_.feature});
      for (int b = 0; b < B; ++b)
        seq[f].rows().row(b) = feat.rows().row(b * F + f);
    }
    for (std::size_t l = 0; l < gru_.size(); ++l) {
      const int in = gru_[l].in_channels;
      Tensor h({B, H});
      for (int f = 0; f < F; ++f) {
        Tensor xh({B, in + H});
        xh.rows().leftCols(in) = seq[f].rows();
        xh.rows().rightCols(H) = h.rows();
        h = diffnet::forward_layer(gru_[l], store_, xh, keep_cache ? &p.gru[l][f] : nullptr);
        seq[f] = h;
      }
    }
    const Tensor& r = seq[F - 1];

    p.condition = Tensor({B, cfg_.condition_size()});
    if (dropout_rng && cfg_.dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - cfg_.dropout);
      p.dropout_mask.resize(static_cast<std::size_t>(B) * H);
      for (auto& m : p.dropout_mask) m = keep(*dropout_rng) ? 1.0 / (1.0 - cfg_.dropout) : 0.0;
    }
    for (int b = 0; b < B; ++b) {
      p.condition.data[static_cast<std::size_t>(b) * (H + 1)] = batch.v0[b];
      for (int k = 0; k < H; ++k) {
        const double m = p.dropout_mask.empty() ? 1.0 : p.dropout_mask[static_cast<std::size_t>(b) * H + k];
        p.condition.data[static_cast<std::size_t>(b) * (H + 1) + 1 + k] = r.data[static_cast<std::size_t>(b) * H + k] * m;
      }
    }
    p.head_out = head_.forward(store_, p.condition, keep_cache ? &p.head : nullptr);
    p.trajectories.reserve(B);
    for (int b = 0; b < B; ++b) p.trajectories.push_back(decode_head(p.head_out, b));
    return p;
  }

  /// Accumulates parameter gradients given dL/d(coefficients) per trajectory.
  void backward(const Pass& p, std::span<const TrajectoryGrad> grads) {
    const int B = static_cast<int>(p.trajectories.size()), F = cfg_.frames, H = cfg_.gru_hidden;
    const int M = cfg_.basis_count;
    if (static_cast<int>(grads.size()) != B) throw Error("gradient count does not match the batch");
    Tensor gout({B, cfg_.head_outputs()});
    for (int b = 0; b < B; ++b) {
      const auto& g = grads[b];
      double* o = gout.data.data() + static_cast<std::size_t>(b) * cfg_.head_outputs();
      const double* u = p.head_out.data.data() + static_cast<std::size_t>(b) * cfg_.head_outputs();
      for (int i = 0; i < M; ++i) {
        o[i] = g.omega[i] * cfg_.omega_scale * diffnet::detail::sigmoid(u[i]);
        o[M + i] = g.phase[i];
        o[2 * M + i] = g.wx[i] * cfg_.coef_scale;
        o[3 * M + i] = g.wy[i] * cfg_.coef_scale;
      }
      o[4 * M] = g.bx * cfg_.coef_scale;
      o[4 * M + 1] = g.by * cfg_.coef_scale;
    }
    const Tensor gcond = head_.backward(store_, p.head, gout);

    std::vector<Tensor> gseq(F, Tensor({B, H}));
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < H; ++k) {
        const double m = p.dropout_mask.empty() ? 1.0 : p.dropout_mask[static_cast<std::size_t>(b) * H + k];
        gseq[F - 1].data[static_cast<std::size_t>(b) * H + k] =
            gcond.data[static_cast<std::size_t>(b) * (H + 1) + 1 + k] * m;
      }
    for (std::size_t l = gru_.size(); l-- > 0;) {
      const int in = gru_[l].in_channels;
      Tensor carry({B, H});
      std::vector<Tensor> gin_seq(F);
      for (int f = F; f-- > 0;) {
        Tensor gh = gseq[f];
        gh.rows() += carry.rows();
        const Tensor gin = diffnet::backward_layer(gru_[l], store_, p.gru[l][f], gh);
        gin_seq[f] = Tensor({B, in});
        gin_seq[f].rows() = gin.rows().leftCols(in);
        carry.rows() = gin.rows().rightCols(H);
      }
      gseq = std::move(gin_seq);
    }
    Tensor gfeat({B * F, cfg_.feature});
    for (int b = 0; b < B; ++b)
      for (int f = 0; f < F; ++f) gfeat.rows().row(b * F + f) = gseq[f].rows().row(b);
    conv_.backward(store_, p.conv, gfeat);
  }

  std::vector<double> encode(const std::vector<PotentialMap>& window, double v0) const {
    const std::vector<PotentialMap>* w[] = {&window};
    const double v[] = {v0};
    return forward(make_batch(w, v), false).condition.data;
  }

  ContinuousTrajectory predict(std::span<const double> condition) const {
    if (static_cast<int>(condition.size()) != cfg_.condition_size())
      throw Error("condition length " + std::to_string(condition.size()) + " does not match the model");
    const Tensor c({1, cfg_.condition_size()}, std::vector<double>(condition.begin(), condition.end()));
    return decode_head(head_.forward(store_, c), 0);
  }

  ContinuousTrajectory infer(const std::vector<PotentialMap>& window, double v0) const {
    return predict(encode(window, v0));
  }

  /// Mean loss over episodes; gradients accumulate into params when `grad`.
  double loss(std::span<const Episode* const> episodes, const LossConfig& base, bool grad = false,
              std::mt19937_64* dropout_rng = nullptr) {
    const auto pass = forward(make_batch(episodes), grad, dropout_rng);
    const LossConfig lc = effective_loss(base, ablation_);
    const double scale = 1.0 / static_cast<double>(episodes.size());
    double total = 0.0;
    std::vector<TrajectoryGrad> grads;
    for (std::size_t b = 0; b < episodes.size(); ++b) {
      grads.emplace_back(cfg_.basis_count);
      total += trajectory_loss(pass.trajectories[b], episodes[b]->label, lc, grad ? &grads.back() : nullptr,
                               scale);
    }
    if (grad) backward(pass, grads);
    return total * scale;
  }

  std::string serialize() const {
    io::json header{{"format", "neurotraj-model"},
                    {"version", 1},
                    {"config", model_config_to_json(cfg_)},
                    {"ablation", to_string(ablation_)}};
    io::json layers = io::json::array();
    for (const auto& l : conv_.layers()) layers.push_back(l.to_json());
    for (const auto& l : gru_) layers.push_back(l.to_json());
    for (const auto& l : head_.layers()) layers.push_back(l.to_json());
    header["layers"] = std::move(layers);
    return diffnet::encode_params(store_, std::move(header));
  }

  static DrivingModel deserialize(std::string_view bytes) {
    const auto blob = io::HeaderedBlob::decode(bytes);
    if (!blob.header.is_object() || blob.header.value("format", "") != "neurotraj-model")
      throw Error("not a model file");
    DrivingModel m(model_config_from_json(blob.header.at("config")),
                   ablation_from_string(io::get_field<std::string>(blob.header, "ablation")));
    diffnet::decode_params(bytes, m.store_);
    return m;
  }

  void save(const io::fs::path& path) const { io::write_file_atomic(path, serialize()); }

  static DrivingModel load(const io::fs::path& path) {
    try {
      return deserialize(io::read_file(path));
    } catch (const Error& e) {
      throw Error(path.string() + ": " + e.what());
    }
  }

 private:
  void build() {
    const auto& g = cfg_.grid;
    std::vector<diffnet::LayerSpec> conv;
    int c = 1, h = g.rows, w = g.cols;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      auto spec = diffnet::LayerSpec::conv2d("enc.conv" + std::to_string(i), c, cfg_.conv_channels[i], h, w,
                                             cfg_.kernel, cfg_.stride);
      conv.push_back(spec);
      conv.push_back(diffnet::LayerSpec::leaky_relu(spec.out, cfg_.leaky_slope));
      c = spec.out_channels;
      h = spec.out_height();
      w = spec.out_width();
    }
    conv.push_back(diffnet::LayerSpec::dense("enc.proj", c * h * w, cfg_.feature));
    conv.push_back(diffnet::LayerSpec::leaky_relu(cfg_.feature, cfg_.leaky_slope));
    conv_ = diffnet::Sequential(std::move(conv));

    gru_.clear();
    for (int l = 0; l < cfg_.gru_layers; ++l)
      gru_.push_back(diffnet::LayerSpec::gru_cell("enc.gru" + std::to_string(l), l == 0 ? cfg_.feature : cfg_.gru_hidden,
                                                  cfg_.gru_hidden));

    head_ = diffnet::Sequential({diffnet::LayerSpec::dense("head.fc0", cfg_.condition_size(), cfg_.head_width),
                                 diffnet::LayerSpec::leaky_relu(cfg_.head_width, cfg_.leaky_slope),
                                 diffnet::LayerSpec::dense("head.fc1", cfg_.head_width, cfg_.head_width),
                                 diffnet::LayerSpec::leaky_relu(cfg_.head_width, cfg_.leaky_slope),
                                 diffnet::LayerSpec::dense("head.out", cfg_.head_width, cfg_.head_outputs())});
  }

  // Frequencies start spread over [omega_init_min, omega_init_max]. Cosine
  // phases alternate 0 and -pi/2 (cos and sin pairs); leaky-ReLU phases put
  // each kink somewhere inside the horizon.
  void init_head_output() {
    const int M = cfg_.basis_count;
    auto& w = store_.value("head.out.W");
    for (auto& x : w.data) x *= cfg_.head_out_gain;
    auto& b = store_.value("head.out.b");
    for (int i = 0; i < M; ++i) {
      const double frac = M > 1 ? static_cast<double>(i) / (M - 1) : 0.0;
      const double omega = cfg_.omega_init_min + frac * (cfg_.omega_init_max - cfg_.omega_init_min);
      b.data[i] = detail::softplus_inverse(omega / cfg_.omega_scale);
      b.data[M + i] = basis() == BasisKind::cosine ? (i % 2 ? -kPi / 2.0 : 0.0)
                                                   : -omega * (static_cast<double>(i) + 0.5) / M;
    }
  }

  ContinuousTrajectory decode_head(const Tensor& out, int b) const {
    const int M = cfg_.basis_count;
    const double* u = out.data.data() + static_cast<std::size_t>(b) * cfg_.head_outputs();
    ContinuousTrajectory t(M, cfg_.horizon, basis());
    for (int i = 0; i < M; ++i) {
      t.omega[i] = cfg_.omega_scale * detail::softplus(u[i]);
      t.phase[i] = u[M + i];
      t.wx[i] = cfg_.coef_scale * u[2 * M + i];
      t.wy[i] = cfg_.coef_scale * u[3 * M + i];
    }
    t.bx = cfg_.coef_scale * u[4 * M];
    t.by = cfg_.coef_scale * u[4 * M + 1];
    return t;
  }

  ModelConfig cfg_;
  Ablation ablation_;
  diffnet::Sequential conv_;
  std::vector<diffnet::LayerSpec> gru_;
  diffnet::Sequential head_;
  diffnet::ParamStore store_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int batch_size = 32;
  double lr = 3e-4;
  int max_epochs = 40;
  int patience = 10;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;  // shared by ablations so they see the same split
  LossConfig loss;
};

inline io::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},    {"lr", c.lr},
          {"max_epochs", c.max_epochs},    {"patience", c.patience},
          {"val_fraction", c.val_fraction}, {"test_fraction", c.test_fraction},
          {"split_seed", c.split_seed},    {"lambda1", c.loss.lambda1},
          {"lambda2", c.loss.lambda2}};
}

inline TrainConfig train_config_from_json(const io::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw Error("train config must be an object");
  auto opt = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = io::get_field<std::decay_t<decltype(slot)>>(j, key);
  };
  opt("batch_size", c.batch_size);
  opt("lr", c.lr);
  opt("max_epochs", c.max_epochs);
  opt("patience", c.patience);
  opt("val_fraction", c.val_fraction);
  opt("test_fraction", c.test_fraction);
  opt("split_seed", c.split_seed);
  opt("lambda1", c.loss.lambda1);
  opt("lambda2", c.loss.lambda2);
  if (c.batch_size < 1 || !(c.lr > 0.0) || c.max_epochs < 0 || c.patience < 1 || c.val_fraction < 0.0 ||
      c.test_fraction < 0.0 || c.val_fraction + c.test_fraction >= 1.0 || c.loss.lambda1 < 0.0 ||
      c.loss.lambda2 < 0.0)
    throw Error("invalid train config");
  return c;
}

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

/// Shuffled 70/10/20-style split, deterministic in `seed`.
inline DatasetSplit split_dataset(std::size_t n, double val_fraction, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  DatasetSplit s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test),
               idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline DatasetSplit split_dataset(std::size_t n, const TrainConfig& c) {
  return split_dataset(n, c.val_fraction, c.test_fraction, c.split_seed);
}

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ade = 0.0;
};

struct TrainResult {
  DrivingModel model;
  std::vector<TrainLogRow> log;
  double initial_loss = 0.0;  // training-set loss before the first update
  int best_epoch = 0;
  DatasetSplit split;
};

inline std::vector<const Episode*> select(std::span<const Episode> all, std::span<const std::size_t> idx) {
  std::vector<const Episode*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&all[i]);
  return out;
}

/// Predictions in chunks; inference never touches gradients.
inline std::vector<ContinuousTrajectory> predict_all(const DrivingModel& model, std::span<const Episode* const> eps,
                                                     std::size_t chunk = 64) {
  std::vector<ContinuousTrajectory> out;
  out.reserve(eps.size());
  for (std::size_t i = 0; i < eps.size(); i += chunk) {
    const auto part = eps.subspan(i, std::min(chunk, eps.size() - i));
    auto pass = model.forward(model.make_batch(part), false);
    for (auto& t : pass.trajectories) out.push_back(std::move(t));
  }
  return out;
}

struct EvalSummary {
  double loss = 0.0;
  MetricsReport metrics;
};

inline EvalSummary evaluate_model(const DrivingModel& model, std::span<const Episode* const> eps,
                                  const LossConfig& base) {
  if (eps.empty()) throw Error("nothing to evaluate");
  const auto trajs = predict_all(model, eps);
  const LossConfig lc = effective_loss(base, model.ablation());
  EvalSummary s;
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    s.loss += trajectory_loss(trajs[i], eps[i]->label, lc);
    reports.push_back(evaluate(trajs[i], *eps[i]));
  }
  s.loss /= static_cast<double>(eps.size());
  s.metrics = aggregate(reports);
  return s;
}

/// Mini-batch Adam with early stopping on validation loss; returns the
/// best-validation parameters. `on_epoch` sees each log row as it is made.
inline TrainResult train(std::span<const Episode> data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         Ablation ablation, std::uint64_t seed,
                         const std::function<void(const TrainLogRow&)>& on_epoch = {}) {
  if (data.empty()) throw Error("cannot train on an empty dataset");
  TrainResult res{DrivingModel(mcfg, ablation, seed), {}, 0.0, 0, split_dataset(data.size(), tcfg)};
  if (res.split.train.empty()) throw Error("training split is empty");
  auto& model = res.model;
  const auto train_eps = select(data, res.split.train);
  // Tiny datasets may have no validation episodes; fall back to training loss.
  const auto val_eps = res.split.val.empty() ? train_eps : select(data, res.split.val);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const diffnet::AdamConfig adam{tcfg.lr};
  res.initial_loss = evaluate_model(model, train_eps, tcfg.loss).loss;

  double best = std::numeric_limits<double>::infinity();
  std::optional<diffnet::ParamStore> best_params;
  int since_best = 0;
  std::vector<std::size_t> order(train_eps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(tcfg.batch_size)) {
      std::vector<const Episode*> batch;
      for (std::size_t k = i; k < std::min(order.size(), i + tcfg.batch_size); ++k) batch.push_back(train_eps[order[k]]);
      model.params().zero_grad();
      const double l = model.loss(batch, tcfg.loss, true, &rng);
      if (!std::isfinite(l)) throw Error("training diverged at epoch " + std::to_string(epoch));
      diffnet::adam_step(model.params(), adam);
      sum += l * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const auto val = evaluate_model(model, val_eps, tcfg.loss);
    TrainLogRow row{epoch, sum / static_cast<double>(seen), val.loss, val.metrics.E_ad};
    res.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (val.loss < best) {
      best = val.loss;
      best_params = model.params();
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tcfg.patience) {
      break;
    }
  }
  if (best_params) model.params() = std::move(*best_params);
  return res;
}

inline std::string train_log_csv(std::span<const TrainLogRow> log) {
  std::string out = "epoch,train_loss,val_loss,val_ADE\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.val_ade);
    out += buf;
  }
  return out;
}

}  // namespace neurotraj
