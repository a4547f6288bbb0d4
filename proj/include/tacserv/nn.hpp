#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"

namespace tacserv {

enum class Activation : int { Linear = 0, Tanh = 1 };

/// Layer-by-layer description of a fully-connected network.
struct MlpSpec {
  std::vector<int> widths;               // input, hidden..., output
  std::vector<Activation> activations;   // one per layer (widths.size()-1)
  std::vector<bool> batch_norm;          // one per layer

  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  /// tanh hidden layers, linear output; batch norm on hidden layers iff bn.
  static MlpSpec standard(const std::vector<int>& widths, bool bn) {
    MlpSpec s;
    s.widths = widths;
    const int L = static_cast<int>(widths.size()) - 1;
    for (int l = 0; l < L; ++l) {
      const bool hidden = l + 1 < L;
      s.activations.push_back(hidden ? Activation::Tanh : Activation::Linear);
      s.batch_norm.push_back(hidden && bn);
    }
    return s;
  }
};

constexpr double kBnEps = 1e-8;
constexpr double kBnMomentum = 0.99;

struct MlpParams {
  std::vector<MatX> w;       // w[l]: widths[l+1] x widths[l]
  std::vector<VecX> b;
  std::vector<VecX> bn_scale, bn_shift, bn_mean, bn_var;  // empty vec if no bn
  bool training = true;

  static MlpParams init(const MlpSpec& spec, Rng& rng) {
    MlpParams p;
    for (int l = 0; l < spec.n_layers(); ++l) {
      const int nin = spec.widths[l], nout = spec.widths[l + 1];
      const double lim = std::sqrt(6.0 / (nin + nout));
      MatX w(nout, nin);
      for (int i = 0; i < nout; ++i)
        for (int j = 0; j < nin; ++j) w(i, j) = uniform(rng, -lim, lim);
      p.w.push_back(std::move(w));
      p.b.push_back(VecX::Zero(nout));
      if (spec.batch_norm[l]) {
        p.bn_scale.push_back(VecX::Ones(nout));
        p.bn_shift.push_back(VecX::Zero(nout));
        p.bn_mean.push_back(VecX::Zero(nout));
        p.bn_var.push_back(VecX::Ones(nout));
      } else {
        p.bn_scale.emplace_back();
        p.bn_shift.emplace_back();
        p.bn_mean.emplace_back();
        p.bn_var.emplace_back();
      }
    }
    return p;
  }
};

struct MlpGrads {
  std::vector<MatX> w;
  std::vector<VecX> b, bn_scale, bn_shift;

  static MlpGrads zeros_like(const MlpParams& p) {
    MlpGrads g;
    for (size_t l = 0; l < p.w.size(); ++l) {
      g.w.push_back(MatX::Zero(p.w[l].rows(), p.w[l].cols()));
      g.b.push_back(VecX::Zero(p.b[l].size()));
      g.bn_scale.push_back(VecX::Zero(p.bn_scale[l].size()));
      g.bn_shift.push_back(VecX::Zero(p.bn_shift[l].size()));
    }
    return g;
  }

  void add_scaled(const MlpGrads& o, double s) {
    for (size_t l = 0; l < w.size(); ++l) {
      w[l] += s * o.w[l];
      b[l] += s * o.b[l];
      if (bn_scale[l].size()) bn_scale[l] += s * o.bn_scale[l];
      if (bn_shift[l].size()) bn_shift[l] += s * o.bn_shift[l];
    }
  }
};

/// Everything backward() needs; produced by forward(). Columns are samples.
struct ForwardCache {
  MatX input;
  std::vector<MatX> bn_xhat;      // normalized pre-activations
  std::vector<VecX> bn_invstd;
  std::vector<MatX> post_act;
  bool training = false;
};

/// Forward pass over a batch (columns are samples). In training mode the
/// batch-norm layers use batch statistics and update the running averages.
inline MatX forward(MlpParams& params, const MlpSpec& spec, const MatX& input,
                    ForwardCache* cache = nullptr) {
  if (input.rows() != spec.input_dim())
    throw TacservError("forward: input width mismatch");
  MatX x = input;
  if (cache) {
    *cache = ForwardCache{};
    cache->input = input;
    cache->training = params.training;
  }
  for (int l = 0; l < spec.n_layers(); ++l) {
    MatX h = (params.w[l] * x).colwise() + params.b[l];
    MatX xhat;
    VecX invstd;
    if (spec.batch_norm[l]) {
      if (params.training) {
        const VecX mu = h.rowwise().mean();
        MatX centered = h.colwise() - mu;
        const VecX var = centered.array().square().rowwise().mean();
        invstd = (var.array() + kBnEps).rsqrt();
        xhat = centered.array().colwise() * invstd.array();
        params.bn_mean[l] = kBnMomentum * params.bn_mean[l] + (1 - kBnMomentum) * mu;
        params.bn_var[l] = kBnMomentum * params.bn_var[l] + (1 - kBnMomentum) * var;
      } else {
        invstd = (params.bn_var[l].array() + kBnEps).rsqrt();
        xhat = (h.colwise() - params.bn_mean[l]).array().colwise() * invstd.array();
      }
      h = (xhat.array().colwise() * params.bn_scale[l].array()).colwise() +
          params.bn_shift[l].array();
    }
    MatX out = spec.activations[l] == Activation::Tanh ? h.array().tanh().matrix() : h;
    if (cache) {
      cache->bn_xhat.push_back(std::move(xhat));
      cache->bn_invstd.push_back(std::move(invstd));
      cache->post_act.push_back(out);
    }
    x = std::move(out);
  }
  return x;
}

/// Recomputes the batch-norm running statistics exactly over a reference
/// batch (typically the full training set). The moving averages maintained
/// during training lag the final parameters, which keeps oscillating under
/// RMSProp's constant-magnitude steps; setting the statistics to the true
/// population moments of the final network makes inference match the
/// training-mode behavior.
inline void calibrate_bn(MlpParams& params, const MlpSpec& spec, const MatX& input) {
  if (input.rows() != spec.input_dim())
    throw TacservError("calibrate_bn: input width mismatch");
  MatX x = input;
  for (int l = 0; l < spec.n_layers(); ++l) {
    MatX h = (params.w[l] * x).colwise() + params.b[l];
    if (spec.batch_norm[l]) {
      const VecX mu = h.rowwise().mean();
      MatX centered = h.colwise() - mu;
      const VecX var = centered.array().square().rowwise().mean();
      params.bn_mean[l] = mu;
      params.bn_var[l] = var;
      const VecX invstd = (var.array() + kBnEps).rsqrt();
      const MatX xhat = centered.array().colwise() * invstd.array();
      h = (xhat.array().colwise() * params.bn_scale[l].array()).colwise() +
          params.bn_shift[l].array();
    }
    x = spec.activations[l] == Activation::Tanh ? h.array().tanh().matrix() : h;
  }
}

/// Reverse-mode gradients. Returns gradients w.r.t. the input batch and
/// accumulates parameter gradients into `grads`.
inline MatX backward(const MlpParams& params, const MlpSpec& spec,
                     const ForwardCache& cache, const MatX& upstream,
                     MlpGrads& grads) {
  MatX g = upstream;
  const int n = static_cast<int>(cache.input.cols());
  for (int l = spec.n_layers() - 1; l >= 0; --l) {
    if (spec.activations[l] == Activation::Tanh)
      g = (g.array() * (1.0 - cache.post_act[l].array().square())).matrix();
    if (spec.batch_norm[l]) {
      const MatX& xhat = cache.bn_xhat[l];
      const VecX& invstd = cache.bn_invstd[l];
      grads.bn_scale[l] += (g.array() * xhat.array()).rowwise().sum().matrix();
      grads.bn_shift[l] += g.rowwise().sum();
      MatX gx = g.array().colwise() * params.bn_scale[l].array();
      if (cache.training) {
        // Batch statistics path.
        const VecX sum_gx = gx.rowwise().sum();
        const VecX sum_gx_xhat = (gx.array() * xhat.array()).rowwise().sum();
        g = (invstd.array() / n).matrix().asDiagonal() *
            (double(n) * gx - (xhat.array().colwise() * sum_gx_xhat.array()).matrix() -
             sum_gx.replicate(1, n).eval());
        // replicate of sum_gx: subtract per-feature mean of gx
      } else {
        g = gx.array().colwise() * invstd.array();
      }
    }
    const MatX& x_in = l == 0 ? cache.input : cache.post_act[l - 1];
    grads.w[l] += g * x_in.transpose();
    grads.b[l] += g.rowwise().sum();
    g = params.w[l].transpose() * g;
  }
  return g;
}

/// Jacobian of the network output w.r.t. a single input point.
/// Requires inference mode so the Jacobian depends only on the point.
inline MatX input_jacobian(MlpParams& params, const MlpSpec& spec, const VecX& input) {
  if (params.training)
    throw TacservError("input_jacobian requires inference mode");
  ForwardCache cache;
  forward(params, spec, input, &cache);
  const int nout = spec.output_dim();
  MatX jac(nout, spec.input_dim());
  for (int i = 0; i < nout; ++i) {
    MatX up = MatX::Zero(nout, 1);
    up(i, 0) = 1.0;
    MlpGrads scratch = MlpGrads::zeros_like(params);
    jac.row(i) = backward(params, spec, cache, up, scratch).transpose();
  }
  return jac;
}

// ---------------------------------------------------------------------------
// RMSProp
// ---------------------------------------------------------------------------

struct RmsPropState {
  std::vector<MatX> acc_w;
  std::vector<VecX> acc_b, acc_scale, acc_shift;
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-8;

  static RmsPropState init(const MlpParams& p, double lr = 1e-3) {
    RmsPropState s;
    s.lr = lr;
    for (size_t l = 0; l < p.w.size(); ++l) {
      s.acc_w.push_back(MatX::Zero(p.w[l].rows(), p.w[l].cols()));
      s.acc_b.push_back(VecX::Zero(p.b[l].size()));
      s.acc_scale.push_back(VecX::Zero(p.bn_scale[l].size()));
      s.acc_shift.push_back(VecX::Zero(p.bn_shift[l].size()));
    }
    return s;
  }
};

inline void rmsprop_step(MlpParams& params, const MlpGrads& grads, RmsPropState& st) {
  auto upd = [&st](auto& p, const auto& g, auto& acc) {
    acc = st.rho * acc + (1 - st.rho) * g.array().square().matrix();
    p -= (st.lr * g.array() / (acc.array() + st.eps).sqrt()).matrix();
  };
  for (size_t l = 0; l < params.w.size(); ++l) {
    upd(params.w[l], grads.w[l], st.acc_w[l]);
    upd(params.b[l], grads.b[l], st.acc_b[l]);
    if (params.bn_scale[l].size()) {
      upd(params.bn_scale[l], grads.bn_scale[l], st.acc_scale[l]);
      upd(params.bn_shift[l], grads.bn_shift[l], st.acc_shift[l]);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned binary, 64-bit little-endian floats.
// Header: widths, activation codes, batch-norm flags; then parameter tensors
// in declaration order, then running statistics.
// ---------------------------------------------------------------------------

namespace detail {
inline void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline void put_mat(std::ofstream& out, const MatX& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}
inline void get_mat(std::ifstream& in, MatX& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), 8);
      m(i, j) = v;
    }
}
inline void put_vec(std::ofstream& out, const VecX& v) {
  MatX m = v;
  put_mat(out, m);
}
inline void get_vec(std::ifstream& in, VecX& v) {
  MatX m(v.size(), 1);
  get_mat(in, m);
  v = m.col(0);
}
}  // namespace detail

inline void save_mlp(std::ofstream& out, const MlpSpec& spec, const MlpParams& p) {
  using namespace detail;
  put_u64(out, 0x5443564D4C503031ull);  // "TCVMLP01"
  put_u64(out, spec.widths.size());
  for (int w : spec.widths) put_u64(out, static_cast<std::uint64_t>(w));
  for (int l = 0; l < spec.n_layers(); ++l)
    put_u64(out, static_cast<std::uint64_t>(spec.activations[l]));
  for (int l = 0; l < spec.n_layers(); ++l)
    put_u64(out, spec.batch_norm[l] ? 1 : 0);
  for (int l = 0; l < spec.n_layers(); ++l) {
    put_mat(out, p.w[l]);
    put_vec(out, p.b[l]);
    if (spec.batch_norm[l]) {
      put_vec(out, p.bn_scale[l]);
      put_vec(out, p.bn_shift[l]);
    }
  }
  for (int l = 0; l < spec.n_layers(); ++l) {
    if (spec.batch_norm[l]) {
      put_vec(out, p.bn_mean[l]);
      put_vec(out, p.bn_var[l]);
    }
  }
}

inline void load_mlp(std::ifstream& in, MlpSpec& spec, MlpParams& p) {
  using namespace detail;
  if (get_u64(in) != 0x5443564D4C503031ull) throw TacservError("bad mlp checkpoint magic");
  const int nw = static_cast<int>(get_u64(in));
  spec.widths.resize(nw);
  for (int i = 0; i < nw; ++i) spec.widths[i] = static_cast<int>(get_u64(in));
  const int L = nw - 1;
  spec.activations.resize(L);
  spec.batch_norm.resize(L);
  for (int l = 0; l < L; ++l) spec.activations[l] = static_cast<Activation>(get_u64(in));
  for (int l = 0; l < L; ++l) spec.batch_norm[l] = get_u64(in) != 0;
  p = MlpParams{};
  for (int l = 0; l < L; ++l) {
    MatX w(spec.widths[l + 1], spec.widths[l]);
    get_mat(in, w);
    p.w.push_back(std::move(w));
    VecX b(spec.widths[l + 1]);
    get_vec(in, b);
    p.b.push_back(std::move(b));
    if (spec.batch_norm[l]) {
      VecX sc(spec.widths[l + 1]), sh(spec.widths[l + 1]);
      get_vec(in, sc);
      get_vec(in, sh);
      p.bn_scale.push_back(std::move(sc));
      p.bn_shift.push_back(std::move(sh));
    } else {
      p.bn_scale.emplace_back();
      p.bn_shift.emplace_back();
    }
    p.bn_mean.emplace_back();
    p.bn_var.emplace_back();
  }
  for (int l = 0; l < L; ++l) {
    if (spec.batch_norm[l]) {
      VecX mu(spec.widths[l + 1]), var(spec.widths[l + 1]);
      get_vec(in, mu);
      get_vec(in, var);
      p.bn_mean[l] = std::move(mu);
      p.bn_var[l] = std::move(var);
    }
  }
  if (!in) throw TacservError("truncated mlp checkpoint");
}

}  // namespace tacserv
