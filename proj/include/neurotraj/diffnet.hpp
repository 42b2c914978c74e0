#pragma once

// Minimal differentiable-network substrate: a flat parameter store, four
// layer kinds with hand-written forward/backward passes, Adam, and a central
// finite-difference checker. Tensors are batch-first and row-major.

#include "neurotraj/common.hpp"
#include "neurotraj/io.hpp"

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace neurotraj::diffnet {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw Error("tensor data length does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  /// Product of all dimensions but the first (batch).
  int row_size() const { return shape.empty() ? 0 : static_cast<int>(size() / shape[0]); }

  MatMap matrix(int rows, int cols) { return MatMap(data.data(), rows, cols); }
  ConstMatMap matrix(int rows, int cols) const { return ConstMatMap(data.data(), rows, cols); }
  /// View as [batch, row_size].
  MatMap rows() { return matrix(shape[0], row_size()); }
  ConstMatMap rows() const { return matrix(shape[0], row_size()); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// ---------------------------------------------------------------------------
// Parameter store

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value, grad, m, v;
  };

  Entry& add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    Entry e{name, Tensor(shape), Tensor(shape), Tensor(shape), Tensor(shape)};
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  long step = 0;

 private:
  std::deque<Entry> entries_;  // stable references across add()
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Layers

enum class LayerKind { dense, conv2d, leaky_relu, gru_cell };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::gru_cell: return "gru_cell";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "leaky_relu") return LayerKind::leaky_relu;
  if (s == "gru_cell") return LayerKind::gru_cell;
  throw Error("unknown layer kind '" + s + "'");
}

/// Layer description. Parameter tensors are named `<name>.<part>`.
///   dense:      in -> out               params W [out,in], b [out]
///   conv2d:     [C,H,W] -> [OC,OH,OW]   params W [OC, C*k*k], b [OC]; SAME padding
///   leaky_relu: elementwise, `slope`
///   gru_cell:   [x (in) | h (out)] -> h' (out)
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::string name;
  int in = 0, out = 0;
  int in_channels = 0, out_channels = 0, in_height = 0, in_width = 0;
  int kernel = 4, stride = 2;
  double slope = 0.2;

  static LayerSpec dense(std::string name, int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.name = std::move(name);
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec conv2d(std::string name, int in_c, int out_c, int h, int w, int kernel = 4,
                          int stride = 2) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.name = std::move(name);
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.in_height = h;
    s.in_width = w;
    s.kernel = kernel;
    s.stride = stride;
    s.in = in_c * h * w;
    s.out = out_c * s.out_height() * s.out_width();
    return s;
  }
  static LayerSpec leaky_relu(int width, double slope = 0.2) {
    LayerSpec s;
    s.kind = LayerKind::leaky_relu;
    s.name = "lrelu";
    s.in = s.out = width;
    s.slope = slope;
    return s;
  }
  static LayerSpec gru_cell(std::string name, int input, int hidden) {
    LayerSpec s;
    s.kind = LayerKind::gru_cell;
    s.name = std::move(name);
    s.in = input + hidden;
    s.out = hidden;
    s.in_channels = input;
    return s;
  }

  int out_height() const { return (in_height + stride - 1) / stride; }
  int out_width() const { return (in_width + stride - 1) / stride; }
  /// SAME padding: leading pad along one axis.
  int pad_before(int in_size, int out_size) const {
    const int total = std::max((out_size - 1) * stride + kernel - in_size, 0);
    return total / 2;
  }

  io::json to_json() const {
    io::json j{{"kind", to_string(kind)}, {"name", name}, {"in", in}, {"out", out}};
    if (kind == LayerKind::conv2d) {
      j["in_channels"] = in_channels;
      j["out_channels"] = out_channels;
      j["in_height"] = in_height;
      j["in_width"] = in_width;
      j["kernel"] = kernel;
      j["stride"] = stride;
    }
    if (kind == LayerKind::leaky_relu) j["slope"] = slope;
    if (kind == LayerKind::gru_cell) j["input"] = in_channels;
    return j;
  }
};

/// Per-layer activations retained by forward() for backward().
struct LayerCache {
  Tensor input;
  std::vector<Tensor> aux;
  bool valid = false;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = dist(rng);
}

/// Gathers SAME-padded 4x4 patches: result [C*k*k, N*OH*OW].
inline RowMatrix im2col(const LayerSpec& s, const Tensor& input) {
  const int n = input.dim(0), c_in = s.in_channels, h = s.in_height, w = s.in_width;
  const int oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  const int ph = s.pad_before(h, oh), pw = s.pad_before(w, ow);
  const int p = oh * ow;
  RowMatrix cols = RowMatrix::Zero(c_in * k * k, static_cast<Eigen::Index>(n) * p);
  for (int b = 0; b < n; ++b) {
    const double* src = input.data.data() + static_cast<std::size_t>(b) * c_in * h * w;
    for (int c = 0; c < c_in; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* dst = cols.data() + (static_cast<std::size_t>((c * k + ky) * k + kx) * n + b) * p;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s.stride + ky - ph;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride + kx - pw;
              if (ix < 0 || ix >= w) continue;
              dst[oy * ow + ox] = src[(c * h + iy) * w + ix];
            }
          }
        }
  }
  return cols;
}

inline void col2im(const LayerSpec& s, const RowMatrix& cols, Tensor& grad_input) {
  const int n = grad_input.dim(0), c_in = s.in_channels, h = s.in_height, w = s.in_width;
  const int oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  const int ph = s.pad_before(h, oh), pw = s.pad_before(w, ow);
  const int p = oh * ow;
  for (int b = 0; b < n; ++b) {
    double* dst = grad_input.data.data() + static_cast<std::size_t>(b) * c_in * h * w;
    for (int c = 0; c < c_in; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double* src = cols.data() + (static_cast<std::size_t>((c * k + ky) * k + kx) * n + b) * p;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s.stride + ky - ph;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride + kx - pw;
              if (ix < 0 || ix >= w) continue;
              dst[(c * h + iy) * w + ix] += src[oy * ow + ox];
            }
          }
        }
  }
}

}  // namespace detail

/// Registers the layer's parameters and initializes them from `rng`.
inline void init_layer(const LayerSpec& s, ParamStore& store, std::mt19937_64& rng) {
  const double gain = 1.0 / std::sqrt(1.0 + s.slope * s.slope);
  switch (s.kind) {
    case LayerKind::dense: {
      auto& w = store.add(s.name + ".W", {s.out, s.in});
      store.add(s.name + ".b", {s.out});
      detail::init_uniform(w.value, gain * std::sqrt(6.0 / s.in), rng);
      break;
    }
    case LayerKind::conv2d: {
      const int fan_in = s.in_channels * s.kernel * s.kernel;
      auto& w = store.add(s.name + ".W", {s.out_channels, fan_in});
      store.add(s.name + ".b", {s.out_channels});
      detail::init_uniform(w.value, gain * std::sqrt(6.0 / fan_in), rng);
      break;
    }
    case LayerKind::leaky_relu:
      break;
    case LayerKind::gru_cell: {
      const int hid = s.out, inp = s.in_channels;
      const double bound = 1.0 / std::sqrt(static_cast<double>(hid));
      for (const char* g : {"z", "r", "n"}) {
        detail::init_uniform(store.add(s.name + ".W" + g, {hid, inp}).value, bound, rng);
        detail::init_uniform(store.add(s.name + ".U" + g, {hid, hid}).value, bound, rng);
        store.add(s.name + ".b" + g, {hid});
      }
      store.add(s.name + ".bun", {hid});
      break;
    }
  }
}

inline Tensor forward_layer(const LayerSpec& s, const ParamStore& store, const Tensor& input,
                            LayerCache* cache) {
  if (input.shape.empty() || input.row_size() != s.in)
    throw Error("shape mismatch at layer '" + s.name + "' (" + to_string(s.kind) + "): expected " +
                std::to_string(s.in) + " features, got " + shape_str(input.shape));
  const int n = input.dim(0);
  Tensor out;
  if (cache) {
    cache->input = input;
    cache->aux.clear();
    cache->valid = true;
  }
  switch (s.kind) {
    case LayerKind::dense: {
      const auto& w = store.value(s.name + ".W");
      const auto& b = store.value(s.name + ".b");
      out = Tensor({n, s.out});
      out.rows().noalias() = input.rows() * w.matrix(s.out, s.in).transpose();
      out.rows().rowwise() += b.matrix(1, s.out).row(0);
      break;
    }
    case LayerKind::conv2d: {
      const auto& w = store.value(s.name + ".W");
      const auto& b = store.value(s.name + ".b");
      const int p = s.out_height() * s.out_width();
      const int ck = s.in_channels * s.kernel * s.kernel;
      const RowMatrix cols = detail::im2col(s, input);
      RowMatrix prod = w.matrix(s.out_channels, ck) * cols;  // [OC, N*P]
      out = Tensor({n, s.out_channels, s.out_height(), s.out_width()});
      for (int b_i = 0; b_i < n; ++b_i)
        for (int oc = 0; oc < s.out_channels; ++oc) {
          double* dst = out.data.data() + (static_cast<std::size_t>(b_i) * s.out_channels + oc) * p;
          const double* src = prod.data() + (static_cast<std::size_t>(oc) * n + b_i) * p;
          const double bias = b.data[oc];
          for (int i = 0; i < p; ++i) dst[i] = src[i] + bias;
        }
      break;
    }
    case LayerKind::leaky_relu: {
      out = input;
      for (auto& v : out.data)
        if (v < 0.0) v *= s.slope;
      break;
    }
    case LayerKind::gru_cell: {
      const int hid = s.out, inp = s.in_channels;
      const RowMatrix x = input.rows().leftCols(inp);
      const RowMatrix h = input.rows().rightCols(hid);
      auto m = [&](const char* part, int r, int c) { return store.value(s.name + part).matrix(r, c); };
      auto bias = [&](const char* part) { return store.value(s.name + part).matrix(1, hid).row(0); };
      RowMatrix az = x * m(".Wz", hid, inp).transpose() + h * m(".Uz", hid, hid).transpose();
      az.rowwise() += bias(".bz");
      RowMatrix ar = x * m(".Wr", hid, inp).transpose() + h * m(".Ur", hid, hid).transpose();
      ar.rowwise() += bias(".br");
      RowMatrix hn = h * m(".Un", hid, hid).transpose();
      hn.rowwise() += bias(".bun");
      RowMatrix z = az.unaryExpr(&detail::sigmoid);
      RowMatrix r = ar.unaryExpr(&detail::sigmoid);
      RowMatrix an = x * m(".Wn", hid, inp).transpose();
      an.rowwise() += bias(".bn");
      an.array() += r.array() * hn.array();
      RowMatrix nn = an.array().tanh();
      out = Tensor({n, hid});
      out.rows() = (1.0 - z.array()) * nn.array() + z.array() * h.array();
      if (cache) {
        auto keep = [&](const RowMatrix& mat) {
          Tensor t({n, hid});
          t.rows() = mat;
          cache->aux.push_back(std::move(t));
        };
        keep(z);
        keep(r);
        keep(nn);
        keep(hn);
      }
      break;
    }
  }
  return out;
}

/// Returns d(loss)/d(input) and accumulates parameter gradients into `store`.
inline Tensor backward_layer(const LayerSpec& s, ParamStore& store, const LayerCache& cache,
                             const Tensor& grad_out) {
  if (!cache.valid) throw Error("backward without forward cache at layer '" + s.name + "'");
  const Tensor& input = cache.input;
  const int n = input.dim(0);
  if (grad_out.size() != static_cast<std::size_t>(n) * s.out)
    throw Error("gradient shape mismatch at layer '" + s.name + "'");
  Tensor grad_in(input.shape);
  switch (s.kind) {
    case LayerKind::dense: {
      auto& w = store.entry(s.name + ".W");
      auto& b = store.entry(s.name + ".b");
      const auto gout = grad_out.matrix(n, s.out);
      w.grad.matrix(s.out, s.in).noalias() += gout.transpose() * input.rows();
      b.grad.matrix(1, s.out).row(0) += gout.colwise().sum();
      grad_in.rows().noalias() = gout * w.value.matrix(s.out, s.in);
      break;
    }
    case LayerKind::conv2d: {
      auto& w = store.entry(s.name + ".W");
      auto& b = store.entry(s.name + ".b");
      const int p = s.out_height() * s.out_width();
      const int ck = s.in_channels * s.kernel * s.kernel;
      RowMatrix gprod(s.out_channels, static_cast<Eigen::Index>(n) * p);
      for (int b_i = 0; b_i < n; ++b_i)
        for (int oc = 0; oc < s.out_channels; ++oc) {
          const double* src = grad_out.data.data() + (static_cast<std::size_t>(b_i) * s.out_channels + oc) * p;
          double* dst = gprod.data() + (static_cast<std::size_t>(oc) * n + b_i) * p;
          std::copy(src, src + p, dst);
        }
      const RowMatrix cols = detail::im2col(s, input);
      w.grad.matrix(s.out_channels, ck).noalias() += gprod * cols.transpose();
      b.grad.matrix(1, s.out_channels).row(0) += gprod.rowwise().sum().transpose();
      const RowMatrix gcols = w.value.matrix(s.out_channels, ck).transpose() * gprod;
      detail::col2im(s, gcols, grad_in);
      break;
    }
    case LayerKind::leaky_relu: {
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in.data[i] = input.data[i] < 0.0 ? s.slope * grad_out.data[i] : grad_out.data[i];
      break;
    }
    case LayerKind::gru_cell: {
      const int hid = s.out, inp = s.in_channels;
      const RowMatrix x = input.rows().leftCols(inp);
      const RowMatrix h = input.rows().rightCols(hid);
      const Eigen::ArrayXXd z = cache.aux[0].rows();
      const Eigen::ArrayXXd r = cache.aux[1].rows();
      const Eigen::ArrayXXd nn = cache.aux[2].rows();
      const Eigen::ArrayXXd hn = cache.aux[3].rows();
      const Eigen::ArrayXXd gh = grad_out.matrix(n, hid);
      auto e = [&](const char* part) -> ParamStore::Entry& { return store.entry(s.name + part); };

      const RowMatrix dan = (gh * (1.0 - z) * (1.0 - nn * nn)).matrix();
      const RowMatrix daz = (gh * (h.array() - nn) * z * (1.0 - z)).matrix();
      const RowMatrix dhn = (dan.array() * r).matrix();
      const RowMatrix dar = (dan.array() * hn * r * (1.0 - r)).matrix();

      RowMatrix gx = RowMatrix::Zero(n, inp);
      RowMatrix ghp = (gh * z).matrix();

      auto accumulate = [&](const char* wname, const char* uname, const char* bname,
                            const RowMatrix& da, bool input_part) {
        auto& w = e(wname);
        w.grad.matrix(hid, inp).noalias() += da.transpose() * x;
        gx.noalias() += da * w.value.matrix(hid, inp);
        if (uname) {
          auto& u = e(uname);
          u.grad.matrix(hid, hid).noalias() += da.transpose() * h;
          ghp.noalias() += da * u.value.matrix(hid, hid);
        }
        if (input_part) e(bname).grad.matrix(1, hid).row(0) += da.colwise().sum();
      };
      accumulate(".Wz", ".Uz", ".bz", daz, true);
      accumulate(".Wr", ".Ur", ".br", dar, true);
      accumulate(".Wn", nullptr, ".bn", dan, true);
      auto& un = e(".Un");
      un.grad.matrix(hid, hid).noalias() += dhn.transpose() * h;
      ghp.noalias() += dhn * un.value.matrix(hid, hid);
      e(".bun").grad.matrix(1, hid).row(0) += dhn.colwise().sum();
      auto gi = grad_in.rows();
      gi.leftCols(inp) = gx;
      gi.rightCols(hid) = ghp;
      break;
    }
  }
  return grad_in;
}

/// A chain of layers applied in order.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i)
      if (layers_[i].in != layers_[i - 1].out)
        throw Error("layer '" + layers_[i].name + "' input width " + std::to_string(layers_[i].in) +
                    " does not match previous output " + std::to_string(layers_[i - 1].out));
  }

  struct Cache {
    std::vector<LayerCache> layers;
  };

  const std::vector<LayerSpec>& layers() const { return layers_; }
  int in() const { return layers_.empty() ? 0 : layers_.front().in; }
  int out() const { return layers_.empty() ? 0 : layers_.back().out; }

  void init(ParamStore& store, std::mt19937_64& rng) const {
    for (const auto& l : layers_) init_layer(l, store, rng);
  }

  Tensor forward(const ParamStore& store, const Tensor& input, Cache* cache = nullptr) const {
    if (cache) cache->layers.assign(layers_.size(), {});
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      x = forward_layer(layers_[i], store, x, cache ? &cache->layers[i] : nullptr);
    return x;
  }

  Tensor backward(ParamStore& store, const Cache& cache, const Tensor& grad_out) const {
    if (cache.layers.size() != layers_.size()) throw Error("backward without forward cache");
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) g = backward_layer(layers_[i], store, cache.layers[i], g);
    return g;
  }

 private:
  std::vector<LayerSpec> layers_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter; zeroes gradients.
inline void adam_step(ParamStore& store, const AdamConfig& cfg = {}) {
  ++store.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad.data[i];
      double& m = e.m.data[i];
      double& v = e.v.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      e.value.data[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    }
    e.grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning round-off into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the gradients left in `store` by `loss_and_grad` against central
/// differences of `loss`. `stride` > 1 checks every stride-th element.
inline GradCheckResult check_gradients(ParamStore& store,
                                       const std::function<double()>& loss_and_grad,
                                       const std::function<double()>& loss, double eps = 1e-4,
                                       std::size_t stride = 1) {
  store.zero_grad();
  loss_and_grad();
  std::vector<Tensor> analytic;
  for (const auto& e : store.entries()) analytic.push_back(e.grad);
  GradCheckResult res;
  for (std::size_t p = 0; p < store.entries().size(); ++p) {
    auto& e = store.entries()[p];
    for (std::size_t i = 0; i < e.value.size(); i += stride) {
      const double old = e.value.data[i];
      e.value.data[i] = old + eps;
      const double up = loss();
      e.value.data[i] = old - eps;
      const double down = loss();
      e.value.data[i] = old;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[p].data[i], numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = e.name;
        res.worst_index = i;
      }
    }
  }
  store.zero_grad();
  return res;
}

// ---------------------------------------------------------------------------
// Parameter file: one JSON header line, then float64 payloads in header order.

inline std::string encode_params(const ParamStore& store, io::json header) {
  io::json tensors = io::json::array();
  std::string payload;
  for (const auto& e : store.entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape}});
    io::append_f64_le(payload, e.value.data);
  }
  header["tensors"] = std::move(tensors);
  io::HeaderedBlob blob{std::move(header), std::move(payload)};
  return blob.encode();
}

/// Fills values of an already-initialized store from a parameter file.
inline io::json decode_params(std::string_view bytes, ParamStore& store) {
  const auto blob = io::HeaderedBlob::decode(bytes);
  const auto& tensors = blob.header.at("tensors");
  std::size_t offset = 0;
  if (tensors.size() != store.entries().size()) throw Error("model tensor count mismatch");
  for (const auto& t : tensors) {
    const auto name = io::get_field<std::string>(t, "name");
    const auto shape = io::get_field<std::vector<int>>(t, "shape");
    auto& e = store.entry(name);
    if (e.value.shape != shape) throw Error("shape mismatch for tensor '" + name + "'");
    const std::size_t bytes_needed = e.value.size() * 8;
    if (offset + bytes_needed > blob.payload.size()) throw Error("model payload truncated at '" + name + "'");
    io::read_f64_le(std::string_view(blob.payload).substr(offset, bytes_needed), e.value.data);
    offset += bytes_needed;
  }
  if (offset != blob.payload.size()) throw Error("trailing bytes in model payload");
  return blob.header;
}

}  // namespace neurotraj::diffnet
