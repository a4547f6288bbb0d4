#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/datapipe.hpp"
#include "tacserv/embedding.hpp"
#include "tacserv/nn.hpp"

namespace tacserv {

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

/// Locally-linear dynamics parameters, unpacked from the 30-dim output of the
/// parameter network: vec(A) row-major (9), vec(B) row-major (18), c (3).
struct LocallyLinearParams {
  Mat3 a = Mat3::Zero();
  Eigen::Matrix<double, 3, 6> b = Eigen::Matrix<double, 3, 6>::Zero();
  Vec3 c = Vec3::Zero();

  static LocallyLinearParams unpack(const VecX& v) {
    if (v.size() != 30) throw TacservError("LL params: expected a 30-vector");
    LocallyLinearParams p;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p.a(i, j) = v(3 * i + j);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 6; ++j) p.b(i, j) = v(9 + 6 * i + j);
    p.c = v.segment<3>(27);
    return p;
  }

  VecX pack() const {
    VecX v(30);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v(3 * i + j) = a(i, j);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 6; ++j) v(9 + 6 * i + j) = b(i, j);
    v.segment<3>(27) = c;
    return v;
  }
};

enum class DynVariant { LL, NL };
enum class IdKind { LL, NG, NJ };

struct DynamicsConfig {
  DynVariant variant = DynVariant::NL;
  IdKind id_kind = IdKind::NJ;
  double w_lfd = 1e8;
  double w_id = 1e6;
  double beta = 0.1;
  double alpha_max_action = 0.05;  // NG: output norm cap used to scale the gradient
  bool use_id_loss = true;         // off = the no-ID-loss ablation
  int c_train = 2;
  int batch_size = 128;
  long iterations = 20000;
  double lr = 1e-3;
  int trace_every = 100;
};

struct DynamicsModel {
  DynamicsConfig cfg;
  MlpSpec spec;      // LL: 3->8->15->23->30, NL: 9->15->3, tanh hidden
  MlpParams params;
  // Per-dimension latent unit (set from the training latents). The net sees
  // z / z_scale and predicts the scaled latent velocity; working in O(1)
  // units per dimension keeps RMSProp's near-constant step size small
  // relative to each regressed quantity (the pressure dimension is an order
  // of magnitude smaller than the map dimensions). All public entry points
  // take raw latents.
  Vec3 z_scale = Vec3::Ones();
  // Per-dimension action unit (set from the training actions). Linear twist
  // components are ~1e-3 m/s while angular ones are ~1e-1 rad/s; feeding the
  // nets a / a_scale keeps every action input O(1) so the linear columns of
  // the learned action Jacobian are as well-conditioned as the angular ones.
  Vec6 a_scale = Vec6::Ones();

  static DynamicsModel init(const DynamicsConfig& cfg, Rng& rng) {
    DynamicsModel m;
    m.cfg = cfg;
    if (cfg.variant == DynVariant::LL)
      m.spec = MlpSpec::standard({3, 8, 15, 23, 30}, false);
    else
      m.spec = MlpSpec::standard({9, 15, 3}, false);
    m.params = MlpParams::init(m.spec, rng);
    m.params.training = false;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Forward dynamics
// ---------------------------------------------------------------------------

inline LocallyLinearParams ll_params_at(DynamicsModel& model, const Vec3& z) {
  const Vec3& zs = model.z_scale;
  const MatX out =
      forward(model.params, model.spec, MatX(Vec3(z.cwiseQuotient(zs))));
  LocallyLinearParams p = LocallyLinearParams::unpack(out.col(0));
  // The net's params describe scaled dynamics z' = z / z_scale on scaled
  // actions a' = a / a_scale; convert so
  // A z + B a + c is the raw latent velocity: A = S A' S^-1, B = S B' Sa^-1.
  p.a = zs.asDiagonal() * p.a * zs.cwiseInverse().asDiagonal();
  p.b = zs.asDiagonal() * p.b * model.a_scale.cwiseInverse().asDiagonal();
  p.c = zs.cwiseProduct(p.c);
  return p;
}

/// Latent velocity: LL form A z + B a + c, or the non-linear net on [z; a].
inline Vec3 lfd(DynamicsModel& model, const Vec3& z, const Vec6& a) {
  if (model.cfg.variant == DynVariant::LL) {
    const auto p = ll_params_at(model, z);
    return p.a * z + p.b * a + p.c;
  }
  VecX x(9);
  x.head<3>() = z.cwiseQuotient(model.z_scale);
  x.tail<6>() = a.cwiseQuotient(model.a_scale);
  return model.z_scale.cwiseProduct(
      forward(model.params, model.spec, MatX(x)).col(0));
}

/// Discretized forward dynamics f_dfd: explicit Euler step.
inline Vec3 integrate(DynamicsModel& model, const Vec3& z, const Vec6& a, double dt) {
  return z + lfd(model, z, a) * dt;
}

/// Chained prediction: repeated integration feeding predictions back.
inline std::vector<Vec3> chain_predict(DynamicsModel& model, const Vec3& z1,
                                       const std::vector<Vec6>& actions, double dt) {
  std::vector<Vec3> out;
  Vec3 z = z1;
  for (const auto& a : actions) {
    z = integrate(model, z, a, dt);
    out.push_back(z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverse dynamics controllers
// ---------------------------------------------------------------------------

namespace detail {
/// Shared closed form a = B^T (B B^T + (beta/dt^2) I)^-1 r via Cholesky.
inline Vec6 lqr_action(const Eigen::Matrix<double, 3, 6>& b, const Vec3& r,
                       double dt, double beta) {
  const Mat3 m = b * b.transpose() + (beta / (dt * dt)) * Mat3::Identity();
  return b.transpose() * m.llt().solve(r);
}
}  // namespace detail

/// One-step LQR on the locally-linear model.
inline Vec6 id_ll(DynamicsModel& model, const Vec3& z_target, const Vec3& z,
                  double dt, double beta) {
  if (model.cfg.variant != DynVariant::LL)
    throw TacservError("id_ll requires the LL variant");
  const auto p = ll_params_at(model, z);
  const Vec3 r = (z_target - z) / dt - p.a * z - p.c;
  return detail::lqr_action(p.b, r, dt, beta);
}

/// Negative-gradient controller on the non-linear model: the gradient of the
/// latent distance w.r.t. the action at a = 0, rescaled so the output norm is
/// min(raw scaled norm, max_action).
inline Vec6 id_ng(DynamicsModel& model, const Vec3& z_target, const Vec3& z,
                  double dt, double alpha, double max_action = -1.0) {
  if (model.cfg.variant != DynVariant::NL)
    throw TacservError("id_ng requires the NL variant");
  const Vec3& zs = model.z_scale;
  VecX x(9);
  x.head<3>() = z.cwiseQuotient(zs);
  x.tail<6>().setZero();
  const MatX jac = input_jacobian(model.params, model.spec, x);  // 3 x 9
  const Eigen::Matrix<double, 3, 6> j_a =
      zs.asDiagonal() * jac.rightCols<6>() * model.a_scale.cwiseInverse().asDiagonal();
  const Vec3 e =
      z +
      zs.cwiseProduct(forward(model.params, model.spec, MatX(x)).col(0)) * dt -
      z_target;
  Vec6 a = -alpha * 2.0 * dt * j_a.transpose() * e;
  if (max_action > 0.0 && a.norm() > max_action) a *= max_action / a.norm();
  return a;
}

/// Jacobian-linearized controller on the non-linear model (one-step LQR on
/// the tangent-space discretization around the previous state/action).
inline Vec6 id_nj(DynamicsModel& model, const Vec3& z_target, const Vec3& z,
                  const Vec3& z_prev, const Vec6& a_prev, double dt, double beta) {
  if (model.cfg.variant != DynVariant::NL)
    throw TacservError("id_nj requires the NL variant");
  const Vec3& zs = model.z_scale;
  VecX x(9);
  x.head<3>() = z_prev.cwiseQuotient(zs);
  x.tail<6>() = a_prev.cwiseQuotient(model.a_scale);
  const MatX jac = input_jacobian(model.params, model.spec, x);
  const Mat3 j_z =
      zs.asDiagonal() * jac.leftCols<3>() * zs.cwiseInverse().asDiagonal();
  const Eigen::Matrix<double, 3, 6> j_a =
      zs.asDiagonal() * jac.rightCols<6>() * model.a_scale.cwiseInverse().asDiagonal();
  const Mat3 a_bar = Mat3::Identity() / dt + j_z;
  const Vec3 c_bar = -a_bar * z_prev - j_a * a_prev;
  const Vec3 r = (z_target - z) / dt - a_bar * z - c_bar;
  return detail::lqr_action(j_a, r, dt, beta);
}

// ---------------------------------------------------------------------------
// Losses (reporting form)
// ---------------------------------------------------------------------------

/// Chained forward-dynamics loss over transition tuples. The encoder is
/// evaluated in inference mode and receives no gradients.
inline double loss_lfd(DynamicsModel& model, AutoencoderModel& enc,
                       const std::vector<TransitionTuple>& tuples, int c) {
  double loss = 0.0;
  for (const auto& t : tuples) {
    if (c <= 1) {
      const Vec3 z = encode(enc, t.s_curr);
      const Vec3 y = encode(enc, t.s_next);
      loss += (integrate(model, z, t.a_curr, t.dt) - y).squaredNorm();
    } else {
      const Vec3 z0 = encode(enc, t.s_prev);
      const Vec3 y1 = encode(enc, t.s_curr);
      const Vec3 y2 = encode(enc, t.s_next);
      const Vec3 z1 = integrate(model, z0, t.a_prev, t.dt);
      const Vec3 z2 = integrate(model, z1, t.a_curr, t.dt);
      loss += (z1 - y1).squaredNorm() + (z2 - y2).squaredNorm();
    }
  }
  return loss;
}

/// f_id dispatch used by the ID loss and the servo loop.
inline Vec6 f_id(DynamicsModel& model, const Vec3& z_target, const Vec3& z,
                 const Vec3& z_prev, const Vec6& a_prev, double dt) {
  switch (model.cfg.id_kind) {
    case IdKind::LL:
      return id_ll(model, z_target, z, dt, model.cfg.beta);
    case IdKind::NG:
      return id_ng(model, z_target, z, dt, 1.0, model.cfg.alpha_max_action);
    case IdKind::NJ:
      return id_nj(model, z_target, z, z_prev, a_prev, dt, model.cfg.beta);
  }
  throw TacservError("unknown id kind");
}

/// Direction-matching inverse-dynamics loss; tuples with near-zero action are
/// skipped (0/0 guard in the normalization).
inline double loss_id(DynamicsModel& model, AutoencoderModel& enc,
                      const std::vector<TransitionTuple>& tuples) {
  double loss = 0.0;
  for (const auto& t : tuples) {
    const double an = t.a_curr.norm();
    if (an < 1e-8) continue;
    const Vec3 z_t = encode(enc, t.s_curr);
    const Vec3 z_prev = encode(enc, t.s_prev);
    const Vec3 z_target = encode(enc, t.s_next);
    const Vec6 a_hat = f_id(model, z_target, z_t, z_prev, t.a_prev, t.dt);
    const double hn = a_hat.norm();
    if (hn < 1e-12) continue;
    loss += (a_hat / hn - t.a_curr / an).squaredNorm();
  }
  return loss;
}

// ---------------------------------------------------------------------------
// KKT verification surface (appendix equations as numeric oracles)
// ---------------------------------------------------------------------------

struct KktResiduals {
  double constraint = 0.0;   // dL/d lambda: dynamics constraint
  double stationarity_a = 0.0;  // dL/d a: beta a - dt B^T lambda
  double stationarity_z = 0.0;  // dL/d z_{t+1}: lambda - (z_T - z_{t+1})
};

/// Evaluate the Lagrangian stationarity conditions of the one-step problem at
/// a candidate action. lambda is taken from the z_{t+1} condition, making the
/// full derivation executable as three residuals.
inline KktResiduals kkt_residuals(const Mat3& a_mat,
                                  const Eigen::Matrix<double, 3, 6>& b_mat,
                                  const Vec3& c_vec, const Vec3& z, const Vec3& z_target,
                                  double dt, double beta, const Vec6& action) {
  const Vec3 z_next = z + (a_mat * z + b_mat * action + c_vec) * dt;
  const Vec3 lambda = z_target - z_next;
  KktResiduals r;
  r.constraint = (z_next - z - (a_mat * z + b_mat * action + c_vec) * dt).norm();
  r.stationarity_a = (beta * action - dt * b_mat.transpose() * lambda).norm();
  r.stationarity_z = (lambda - (z_target - z_next)).norm();
  return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct DynLossTrace {
  long iter = 0;
  double lfd = 0.0, id = 0.0, total = 0.0;
};

namespace detail {

/// Plain view of a single-hidden-layer tanh net (the NL dynamics net). The
/// exact backprop of a loss through the net's input-Jacobian needs the
/// second-order terms below, which are derived for this architecture.
struct TwoLayerView {
  const MatX& w1;
  const VecX& b1;
  const MatX& w2;
  const VecX& b2;
};

inline TwoLayerView nl_view(const DynamicsModel& m) {
  if (m.spec.n_layers() != 2 || m.spec.activations[0] != Activation::Tanh ||
      m.spec.batch_norm[0] || m.spec.batch_norm[1])
    throw TacservError("NL dynamics net must be tanh-hidden two-layer without bn");
  return {m.params.w[0], m.params.b[0], m.params.w[1], m.params.b[1]};
}

/// Forward value + input Jacobian of the two-layer net at x.
inline void nl_value_jacobian(const TwoLayerView& v, const VecX& x, Vec3* out,
                              MatX* jac, VecX* y_hidden = nullptr) {
  const VecX h = v.w1 * x + v.b1;
  const VecX y = h.array().tanh();
  if (out) *out = v.w2 * y + v.b2;
  if (jac) {
    const VecX d = 1.0 - y.array().square();
    *jac = v.w2 * d.asDiagonal() * v.w1;
  }
  if (y_hidden) *y_hidden = y;
}

/// Accumulate d(loss)/d(params) given d(loss)/d(J) where J = W2 D W1 is the
/// input Jacobian at x (second-order backprop through the Jacobian).
inline void backprop_through_jacobian(const TwoLayerView& v, const VecX& x,
                                      const VecX& y, const MatX& g_jac,
                                      MatX& dw1, VecX& db1, MatX& dw2) {
  const VecX d = 1.0 - y.array().square();
  const VecX dprime = -2.0 * y.array() * d.array();
  // dW2_{im} = (G W1^T)_{im} D_m
  dw2 += (g_jac * v.w1.transpose()) * d.asDiagonal();
  // t_m = (W2^T G W1^T)_{mm}
  const VecX t = ((v.w2.transpose() * g_jac).cwiseProduct(v.w1)).rowwise().sum();
  // dW1_{ml} = D_m (W2^T G)_{ml} + t_m D'_m x_l
  dw1 += d.asDiagonal() * (v.w2.transpose() * g_jac) + (t.cwiseProduct(dprime)) * x.transpose();
  db1 += t.cwiseProduct(dprime);
}

/// Backprop through the shared closed form a = B^T M^-1 r, M = B B^T + g I.
/// Returns dL/dB and dL/dr given dL/da.
inline void lqr_action_backward(const Eigen::Matrix<double, 3, 6>& b, const Vec3& r,
                                double gamma, const Vec6& g_a,
                                Eigen::Matrix<double, 3, 6>& g_b, Vec3& g_r) {
  const Mat3 m = b * b.transpose() + gamma * Mat3::Identity();
  const auto llt = m.llt();
  const Vec3 y = llt.solve(r);
  const Vec3 q = llt.solve(b * g_a);
  g_b = y * g_a.transpose() - (q * y.transpose() + y * q.transpose()) * b;
  g_r = q;
}

}  // namespace detail

/// Train the dynamics model on transition tuples with a frozen encoder:
/// RMSProp on w_LFD * L_LFD + w_ID * L_ID. The same parameters serve the
/// forward model and the controller (f_dfd and f_id share theta_d).
inline DynamicsModel train_dynamics(const std::vector<TransitionTuple>& tuples,
                                    AutoencoderModel& enc, const DynamicsConfig& cfg,
                                    std::uint64_t seed,
                                    std::vector<DynLossTrace>* traces = nullptr) {
  if (cfg.iterations <= 0 || cfg.lr <= 0.0 || cfg.batch_size <= 0)
    throw TacservError("train_dynamics: iterations, lr and batch_size must be positive");
  Rng rng(seed);
  DynamicsModel model = DynamicsModel::init(cfg, rng);
  if (cfg.variant == DynVariant::LL && cfg.id_kind != IdKind::LL)
    throw TacservError("LL variant requires the LL controller");
  if (cfg.variant == DynVariant::NL && cfg.id_kind == IdKind::LL)
    throw TacservError("NL variant requires the NG or NJ controller");

  // Frozen encoder: precompute the latents once.
  std::vector<int> train_idx;
  for (size_t i = 0; i < tuples.size(); ++i)
    if (tuples[i].split == Train) train_idx.push_back(static_cast<int>(i));
  if (train_idx.empty()) throw TacservError("train_dynamics: no training tuples");
  std::vector<Vec3> z_prev(tuples.size()), z_curr(tuples.size()), z_next(tuples.size());
  for (size_t i = 0; i < tuples.size(); ++i) {
    z_prev[i] = encode(enc, tuples[i].s_prev);
    z_curr[i] = encode(enc, tuples[i].s_curr);
    z_next[i] = encode(enc, tuples[i].s_next);
  }

  // Train in scaled latent coordinates z' = z ./ z_scale: the loop below then
  // regresses O(1) quantities in every dimension. The direction loss converts
  // back to raw units around the closed-form controllers so training
  // optimizes exactly the controller used at inference.
  Vec3 zs_v = Vec3::Zero();
  for (int i : train_idx)
    zs_v = zs_v.cwiseMax(z_prev[i].cwiseAbs())
               .cwiseMax(z_curr[i].cwiseAbs())
               .cwiseMax(z_next[i].cwiseAbs());
  for (int d = 0; d < 3; ++d)
    if (zs_v(d) > 0.0) model.z_scale(d) = zs_v(d);
  const Vec3 zs = model.z_scale;
  for (size_t i = 0; i < tuples.size(); ++i) {
    z_prev[i] = z_prev[i].cwiseQuotient(zs);
    z_curr[i] = z_curr[i].cwiseQuotient(zs);
    z_next[i] = z_next[i].cwiseQuotient(zs);
  }
  Vec6 as_v = Vec6::Zero();
  for (int i : train_idx)
    as_v = as_v.cwiseMax(tuples[i].a_prev.cwiseAbs())
               .cwiseMax(tuples[i].a_curr.cwiseAbs());
  for (int d = 0; d < 6; ++d)
    if (as_v(d) > 0.0) model.a_scale(d) = as_v(d);
  const Vec6 as = model.a_scale;
  std::vector<Vec6> a_prev_s(tuples.size()), a_curr_s(tuples.size());
  for (size_t i = 0; i < tuples.size(); ++i) {
    a_prev_s[i] = tuples[i].a_prev.cwiseQuotient(as);
    a_curr_s[i] = tuples[i].a_curr.cwiseQuotient(as);
  }

  RmsPropState opt = RmsPropState::init(model.params, cfg.lr);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(train_idx.size()) - 1);

  for (long iter = 0; iter < cfg.iterations; ++iter) {
    MlpGrads grads = MlpGrads::zeros_like(model.params);
    double l_lfd = 0.0, l_id = 0.0;

    std::vector<int> batch(cfg.batch_size);
    for (int j = 0; j < cfg.batch_size; ++j) batch[j] = train_idx[pick(rng)];

    // --- forward-dynamics loss, chained for c_train steps ---
    for (int j = 0; j < cfg.batch_size; ++j) {
      const auto& t = tuples[batch[j]];
      const double dt = t.dt;
      if (cfg.c_train <= 1) {
        ForwardCache cache;
        VecX x(model.spec.input_dim());
        Vec3 zdot;
        if (cfg.variant == DynVariant::NL) {
          x.head<3>() = z_curr[batch[j]];
          x.tail<6>() = a_curr_s[batch[j]];
          zdot = forward(model.params, model.spec, MatX(x), &cache).col(0);
        } else {
          x = z_curr[batch[j]];
          const auto p =
              LocallyLinearParams::unpack(forward(model.params, model.spec, MatX(x), &cache).col(0));
          zdot = p.a * z_curr[batch[j]] + p.b * a_curr_s[batch[j]] + p.c;
        }
        const Vec3 pred = z_curr[batch[j]] + zdot * dt;
        const Vec3 err = pred - z_next[batch[j]];
        l_lfd += err.squaredNorm();
        const Vec3 g_zdot = 2.0 * cfg.w_lfd * dt * err;
        if (cfg.variant == DynVariant::NL) {
          backward(model.params, model.spec, cache, MatX(g_zdot), grads);
        } else {
          LocallyLinearParams gp;
          gp.a = g_zdot * z_curr[batch[j]].transpose();
          gp.b = g_zdot * a_curr_s[batch[j]].transpose();
          gp.c = g_zdot;
          backward(model.params, model.spec, cache, MatX(gp.pack()), grads);
        }
      } else {
        // Two chained steps starting from z_{t-1}.
        const Vec3 z0 = z_prev[batch[j]];
        const Vec3 y1 = z_curr[batch[j]];
        const Vec3 y2 = z_next[batch[j]];
        ForwardCache cache1, cache2;
        auto fd_step = [&](const Vec3& z, const Vec6& a, ForwardCache& cache,
                           LocallyLinearParams* llp) -> Vec3 {
          if (cfg.variant == DynVariant::NL) {
            VecX x(9);
            x.head<3>() = z;
            x.tail<6>() = a;
            return forward(model.params, model.spec, MatX(x), &cache).col(0);
          }
          const auto p = LocallyLinearParams::unpack(
              forward(model.params, model.spec, MatX(VecX(z)), &cache).col(0));
          if (llp) *llp = p;
          return p.a * z + p.b * a + p.c;
        };
        LocallyLinearParams p1, p2;
        const Vec3 zd1 = fd_step(z0, a_prev_s[batch[j]], cache1, &p1);
        const Vec3 z1 = z0 + zd1 * dt;
        const Vec3 zd2 = fd_step(z1, a_curr_s[batch[j]], cache2, &p2);
        const Vec3 z2 = z1 + zd2 * dt;
        const Vec3 e1 = z1 - y1, e2 = z2 - y2;
        l_lfd += e1.squaredNorm() + e2.squaredNorm();

        // Backward step 2.
        const Vec3 g_z2 = 2.0 * cfg.w_lfd * e2;
        Vec3 g_z1 = g_z2;  // identity path of the Euler step
        const Vec3 g_zd2 = dt * g_z2;
        if (cfg.variant == DynVariant::NL) {
          MatX up(3, 1);
          up.col(0) = g_zd2;
          const MatX gin = backward(model.params, model.spec, cache2, up, grads);
          g_z1 += gin.block<3, 1>(0, 0);
        } else {
          LocallyLinearParams gp;
          gp.a = g_zd2 * z1.transpose();
          gp.b = g_zd2 * a_curr_s[batch[j]].transpose();
          gp.c = g_zd2;
          const MatX gin = backward(model.params, model.spec, cache2, MatX(gp.pack()), grads);
          g_z1 += p2.a.transpose() * g_zd2 + gin.col(0).head<3>();
        }
        // Backward step 1.
        g_z1 += 2.0 * cfg.w_lfd * e1;
        const Vec3 g_zd1 = dt * g_z1;
        if (cfg.variant == DynVariant::NL) {
          MatX up(3, 1);
          up.col(0) = g_zd1;
          backward(model.params, model.spec, cache1, up, grads);
        } else {
          LocallyLinearParams gp;
          gp.a = g_zd1 * z0.transpose();
          gp.b = g_zd1 * a_prev_s[batch[j]].transpose();
          gp.c = g_zd1;
          backward(model.params, model.spec, cache1, MatX(gp.pack()), grads);
        }
      }
    }

    // --- inverse-dynamics direction loss ---
    if (cfg.use_id_loss) {
      for (int j = 0; j < cfg.batch_size; ++j) {
        const auto& t = tuples[batch[j]];
        const double an = t.a_curr.norm();
        if (an < 1e-8) continue;
        const Vec3 z_t = z_curr[batch[j]];
        const Vec3 z_pm = z_prev[batch[j]];
        const Vec3 z_tg = z_next[batch[j]];
        const double dt = t.dt;
        const double gamma = cfg.beta / (dt * dt);
        const Vec6 v_dir = t.a_curr / an;

        if (cfg.variant == DynVariant::LL) {
          ForwardCache cache;
          const auto p = LocallyLinearParams::unpack(
              forward(model.params, model.spec, MatX(VecX(z_t)), &cache).col(0));
          const Vec3 r = (z_tg - z_t) / dt - p.a * z_t - p.c;
          // Raw-unit controller: B_raw = S B' Sa^-1, r_raw = S r'.
          const Eigen::Matrix<double, 3, 6> b_raw =
              zs.asDiagonal() * p.b * as.cwiseInverse().asDiagonal();
          const Vec3 r_raw = zs.cwiseProduct(r);
          const Vec6 a_hat = detail::lqr_action(b_raw, r_raw, dt, cfg.beta);
          const double hn = a_hat.norm();
          if (hn < 1e-12) continue;
          const Vec6 u = a_hat / hn;
          l_id += (u - v_dir).squaredNorm();
          const Vec6 gu = 2.0 * (u - v_dir);
          const Vec6 g_a = cfg.w_id * (gu - u * gu.dot(u)) / hn;
          Eigen::Matrix<double, 3, 6> g_b_raw;
          Vec3 g_r_raw;
          detail::lqr_action_backward(b_raw, r_raw, gamma, g_a, g_b_raw, g_r_raw);
          const Eigen::Matrix<double, 3, 6> g_b =
              zs.asDiagonal() * g_b_raw * as.cwiseInverse().asDiagonal();
          const Vec3 g_r = zs.cwiseProduct(g_r_raw);
          LocallyLinearParams gp;
          gp.a = -g_r * z_t.transpose();
          gp.b = g_b;
          gp.c = -g_r;
          backward(model.params, model.spec, cache, MatX(gp.pack()), grads);
        } else {
          const auto view = detail::nl_view(model);
          VecX x(9);
          if (cfg.id_kind == IdKind::NJ) {
            x.head<3>() = z_pm;
            x.tail<6>() = a_prev_s[batch[j]];
            Vec3 val;
            MatX jac;
            VecX y_hidden;
            detail::nl_value_jacobian(view, x, &val, &jac, &y_hidden);
            const Mat3 j_z = jac.leftCols<3>();
            const Eigen::Matrix<double, 3, 6> j_a = jac.rightCols<6>();
            const Mat3 a_bar = Mat3::Identity() / dt + j_z;
            const Vec3 c_bar = -a_bar * z_pm - j_a * a_prev_s[batch[j]];
            const Vec3 r = (z_tg - z_t) / dt - a_bar * z_t - c_bar;
            // Raw-unit controller: J_a_raw = S J'_a Sa^-1, r_raw = S r'.
            const Eigen::Matrix<double, 3, 6> ja_raw =
                zs.asDiagonal() * j_a * as.cwiseInverse().asDiagonal();
            const Vec3 r_raw = zs.cwiseProduct(r);
            const Vec6 a_hat = detail::lqr_action(ja_raw, r_raw, dt, cfg.beta);
            const double hn = a_hat.norm();
            if (hn < 1e-12) continue;
            const Vec6 u = a_hat / hn;
            l_id += (u - v_dir).squaredNorm();
            const Vec6 gu = 2.0 * (u - v_dir);
            const Vec6 g_a = cfg.w_id * (gu - u * gu.dot(u)) / hn;
            Eigen::Matrix<double, 3, 6> g_b_raw;
            Vec3 g_r_raw;
            detail::lqr_action_backward(ja_raw, r_raw, gamma, g_a, g_b_raw, g_r_raw);
            const Eigen::Matrix<double, 3, 6> g_b =
                zs.asDiagonal() * g_b_raw * as.cwiseInverse().asDiagonal();
            const Vec3 g_r = zs.cwiseProduct(g_r_raw);
            // r = (z_tg - z_t)/dt - A_bar (z_t - z_pm) + J_a a_prev
            const Mat3 g_abar = g_r * (z_pm - z_t).transpose();
            const Eigen::Matrix<double, 3, 6> g_ja_from_r =
                g_r * a_prev_s[batch[j]].transpose();
            MatX g_jac = MatX::Zero(3, 9);
            g_jac.leftCols<3>() = g_abar;       // dJ_z = dA_bar
            g_jac.rightCols<6>() = g_b + g_ja_from_r;
            detail::backprop_through_jacobian(view, x, y_hidden, g_jac, grads.w[0],
                                              grads.b[0], grads.w[1]);
          } else {  // NG: direction of -J_a^T e; positive scaling drops out
            x.head<3>() = z_t;
            x.tail<6>().setZero();
            Vec3 val;
            MatX jac;
            VecX y_hidden;
            detail::nl_value_jacobian(view, x, &val, &jac, &y_hidden);
            const Eigen::Matrix<double, 3, 6> j_a = jac.rightCols<6>();
            const Vec3 e = z_t + val * dt - z_tg;
            // Raw-unit gradient direction:
            // -J_a_raw^T e_raw = -Sa^-1 J'_a^T S^2 e'.
            const Vec3 e_s2 = zs.cwiseProduct(zs).cwiseProduct(e);
            const Vec6 w = (-j_a.transpose() * e_s2).cwiseQuotient(as);
            const double hn = w.norm();
            if (hn < 1e-12) continue;
            const Vec6 u = w / hn;
            l_id += (u - v_dir).squaredNorm();
            const Vec6 gu = 2.0 * (u - v_dir);
            const Vec6 g_w = cfg.w_id * (gu - u * gu.dot(u)) / hn;
            const Vec6 g_ws = g_w.cwiseQuotient(as);
            MatX g_jac = MatX::Zero(3, 9);
            g_jac.rightCols<6>() = -e_s2 * g_ws.transpose();
            detail::backprop_through_jacobian(view, x, y_hidden, g_jac, grads.w[0],
                                              grads.b[0], grads.w[1]);
            // e depends on the net value: dL/d val = -dt S^2 J'_a (g_w / Sa)
            const Vec3 g_val =
                -dt * zs.cwiseProduct(zs).cwiseProduct(Vec3(j_a * g_ws));
            const VecX d = 1.0 - y_hidden.array().square();
            grads.w[1] += g_val * y_hidden.transpose();
            grads.b[1] += g_val;
            const VecX gh = (view.w2.transpose() * g_val).cwiseProduct(d);
            grads.w[0] += gh * x.transpose();
            grads.b[0] += gh;
          }
        }
      }
    }

    rmsprop_step(model.params, grads, opt);

    if (iter % cfg.trace_every == 0 || iter + 1 == cfg.iterations) {
      const double total = cfg.w_lfd * l_lfd + cfg.w_id * l_id;
      if (!std::isfinite(total))
        throw DivergenceError("train_dynamics: loss diverged (NaN/inf) at iter " +
                           std::to_string(iter));
      if (traces) traces->push_back({iter, l_lfd, l_id, total});
    }
  }
  return model;
}

inline void save_dyn_traces(const std::vector<DynLossTrace>& traces,
                            const std::string& path) {
  CsvTable t;
  t.columns = {"iter", "L_LFD", "L_ID", "total"};
  for (const auto& tr : traces)
    t.rows.push_back({double(tr.iter), tr.lfd, tr.id, tr.total});
  t.save(path);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline void save_dynamics(const DynamicsModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TacservError("cannot write checkpoint: " + path);
  detail::put_u64(out, 0x54435644594E3031ull);  // "TCVDYN01"
  detail::put_u64(out, model.cfg.variant == DynVariant::LL ? 0 : 1);
  detail::put_u64(out, static_cast<std::uint64_t>(model.cfg.id_kind));
  double meta[13] = {model.cfg.w_lfd, model.cfg.w_id, model.cfg.beta,
                     model.cfg.alpha_max_action, model.z_scale(0),
                     model.z_scale(1), model.z_scale(2)};
  for (int i = 0; i < 6; ++i) meta[7 + i] = model.a_scale(i);
  out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
  save_mlp(out, model.spec, model.params);
}

inline DynamicsModel load_dynamics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TacservError("cannot open checkpoint: " + path);
  if (detail::get_u64(in) != 0x54435644594E3031ull)
    throw TacservError("bad dynamics checkpoint magic");
  DynamicsModel m;
  m.cfg.variant = detail::get_u64(in) == 0 ? DynVariant::LL : DynVariant::NL;
  m.cfg.id_kind = static_cast<IdKind>(detail::get_u64(in));
  double meta[13];
  in.read(reinterpret_cast<char*>(meta), sizeof(meta));
  m.cfg.w_lfd = meta[0];
  m.cfg.w_id = meta[1];
  m.cfg.beta = meta[2];
  m.cfg.alpha_max_action = meta[3];
  m.z_scale = Vec3(meta[4], meta[5], meta[6]);
  for (int i = 0; i < 6; ++i) m.a_scale(i) = meta[7 + i];
  load_mlp(in, m.spec, m.params);
  m.params.training = false;
  return m;
}

}  // namespace tacserv
