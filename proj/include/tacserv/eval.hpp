#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/csv.hpp"
#include "tacserv/datapipe.hpp"
#include "tacserv/dynamics.hpp"
#include "tacserv/embedding.hpp"
#include "tacserv/skin_sim.hpp"

namespace tacserv {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Normalized mean squared error: per-dimension MSE divided by the
/// ground-truth variance of that dimension, averaged over dimensions.
/// Columns are samples.
inline double nmse(const MatX& predictions, const MatX& ground_truth) {
  if (predictions.rows() != ground_truth.rows() ||
      predictions.cols() != ground_truth.cols())
    throw TacservError("nmse: shape mismatch");
  const int dims = static_cast<int>(ground_truth.rows());
  const int n = static_cast<int>(ground_truth.cols());
  if (n < 2) throw TacservError("nmse: need at least 2 samples");
  double acc = 0.0;
  for (int d = 0; d < dims; ++d) {
    const double mean = ground_truth.row(d).mean();
    const double var =
        (ground_truth.row(d).array() - mean).square().mean();
    if (var <= 0.0) throw TacservError("nmse: zero-variance ground truth");
    const double mse =
        (predictions.row(d) - ground_truth.row(d)).array().square().mean();
    acc += mse / var;
  }
  return acc / dims;
}

enum class TwistPart { Linear, Angular };

/// Average cosine distance between predicted and ground-truth action parts,
/// weighted by the norm of the ground truth.
inline double weighted_cosine_distance(const std::vector<Vec6>& predicted,
                                       const std::vector<Vec6>& ground_truth,
                                       TwistPart part) {
  if (predicted.size() != ground_truth.size())
    throw TacservError("weighted_cosine_distance: size mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const Vec3 p = part == TwistPart::Linear ? predicted[i].head<3>().eval()
                                             : predicted[i].tail<3>().eval();
    const Vec3 g = part == TwistPart::Linear ? ground_truth[i].head<3>().eval()
                                             : ground_truth[i].tail<3>().eval();
    const double w = g.norm();
    if (w < 1e-8) continue;
    const double pn = p.norm();
    const double cosv = pn < 1e-12 ? 0.0 : p.dot(g) / (pn * w);
    num += w * (1.0 - cosv);
    den += w;
  }
  if (den <= 0.0) throw TacservError("weighted_cosine_distance: no usable pairs");
  return num / den;
}

// ---------------------------------------------------------------------------
// Chained forward-dynamics evaluation
// ---------------------------------------------------------------------------

/// NMSE of chained prediction step k vs the encoded ground truth, k = 1..c.
/// Chains start at z_{t-1}; step 3 uses the tuples' lookahead extension.
inline std::vector<double> eval_chained_fd(DynamicsModel& model, AutoencoderModel& enc,
                                           const std::vector<TransitionTuple>& tuples,
                                           int c_test) {
  std::vector<const TransitionTuple*> usable;
  for (const auto& t : tuples)
    if (c_test < 3 || t.has_ext) usable.push_back(&t);
  if (usable.size() < 2) throw TacservError("eval_chained_fd: too few tuples");
  const int n = static_cast<int>(usable.size());
  std::vector<MatX> preds(c_test, MatX(3, n)), truth(c_test, MatX(3, n));
  for (int i = 0; i < n; ++i) {
    const auto& t = *usable[i];
    std::vector<Vec6> actions = {t.a_prev, t.a_curr};
    std::vector<Vec3> target = {encode(enc, t.s_curr), encode(enc, t.s_next)};
    if (c_test >= 3) {
      actions.push_back(t.a_next);
      target.push_back(encode(enc, t.s_next2));
    }
    actions.resize(c_test);
    target.resize(c_test);
    const auto chain = chain_predict(model, encode(enc, t.s_prev), actions, t.dt);
    for (int k = 0; k < c_test; ++k) {
      preds[k].col(i) = chain[k];
      truth[k].col(i) = target[k];
    }
  }
  std::vector<double> out;
  for (int k = 0; k < c_test; ++k) out.push_back(nmse(preds[k], truth[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Inverse-dynamics evaluation (Fig.-5-style report)
// ---------------------------------------------------------------------------

struct IdEvalRow {
  std::string controller;  // LL | NG | NJ | NJ_noID
  std::string condition;   // fwddynpred | AEpred | fwd_vs_ae
  std::string part;        // linear | angular
  double wcd = 0.0;
};

/// Evaluate one controller under the three target conditions.
inline std::vector<IdEvalRow> eval_id_one(DynamicsModel& model, AutoencoderModel& enc,
                                          const std::vector<TransitionTuple>& tuples,
                                          const std::string& name) {
  std::vector<Vec6> pred_fwd, pred_ae, gt;
  for (const auto& t : tuples) {
    if (t.a_curr.norm() < 1e-8) continue;
    const Vec3 z_t = encode(enc, t.s_curr);
    const Vec3 z_prev = encode(enc, t.s_prev);
    const Vec3 z_fwd = integrate(model, z_t, t.a_curr, t.dt);
    const Vec3 z_ae = encode(enc, t.s_next);
    pred_fwd.push_back(f_id(model, z_fwd, z_t, z_prev, t.a_prev, t.dt));
    pred_ae.push_back(f_id(model, z_ae, z_t, z_prev, t.a_prev, t.dt));
    gt.push_back(t.a_curr);
  }
  std::vector<IdEvalRow> rows;
  for (auto part : {TwistPart::Linear, TwistPart::Angular}) {
    const std::string pname = part == TwistPart::Linear ? "linear" : "angular";
    rows.push_back({name, "fwddynpred", pname,
                    weighted_cosine_distance(pred_fwd, gt, part)});
    rows.push_back({name, "AEpred", pname, weighted_cosine_distance(pred_ae, gt, part)});
    // fwddynpred vs AEpred: agreement of the two target conditions.
    rows.push_back({name, "fwd_vs_ae", pname,
                    weighted_cosine_distance(pred_fwd, pred_ae, part)});
  }
  return rows;
}

inline void save_id_eval_csv(const std::vector<IdEvalRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TacservError("cannot write csv: " + path);
  out << "controller,condition,part,wcd\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.controller << "," << r.condition << "," << r.part << "," << r.wcd << "\n";
}

// ---------------------------------------------------------------------------
// Closed-loop tactile servoing in the simulator
// ---------------------------------------------------------------------------

struct ServoRunConfig {
  TactileSample target;        // target tactile sample (with ground-truth contact)
  double dt = 0.31;
  int max_steps = 200;
  double success_tol = 0.003;  // geodesic meters
  double lin_clip = 0.05;      // m/s
  double ang_clip = 0.3;       // rad/s
  double smoother_alpha = 0.0; // causal first-order smoothing of s (0 = off)
  int max_contact_loss = 5;
};

struct ServoStep {
  int step = 0;
  double latent_dist = 0.0;
  double geo_dist = 0.0;
  Vec6 action = Vec6::Zero();
};

struct ServoResult {
  std::vector<ServoStep> log;
  bool success = false;
  bool aborted = false;       // contact lost for too long
  int steps_to_success = -1;
};

/// Closed loop: sense -> encode -> inverse dynamics -> clip -> base-frame
/// command -> pose step. Success is judged on the ground-truth geodesic
/// distance between current and target contact points.
inline ServoResult servo_run(AutoencoderModel& enc, DynamicsModel& model,
                             const SkinSurface& surface, const Vec3& anchor_world,
                             const FingerPose& initial_pose, const ServoRunConfig& cfg) {
  ServoResult res;
  const Vec3 z_target = encode(enc, cfg.target.s);
  // One distance field from the target contact point serves every step's
  // ground-truth geodesic lookup.
  const auto target_field = dijkstra(
      surface.mesh_graph(), surface.nearest_vertex(cfg.target.contact.contact_point));
  FingerPose pose = initial_pose;
  Vec3 z_prev = Vec3::Zero();
  Vec6 a_prev = Vec6::Zero();
  bool have_prev = false;
  VecX s_smooth;
  int lost = 0;

  for (int step = 0; step <= cfg.max_steps; ++step) {
    const TactileSample sample = sense(surface, pose, anchor_world);
    if (cfg.smoother_alpha > 0.0 && s_smooth.size() == sample.s.size())
      s_smooth = cfg.smoother_alpha * s_smooth + (1.0 - cfg.smoother_alpha) * sample.s;
    else
      s_smooth = sample.s;
    const Vec3 z_t = encode(enc, s_smooth);

    double geo = std::numeric_limits<double>::infinity();
    if (sample.contact.in_contact) {
      geo = target_field[surface.nearest_vertex(sample.contact.contact_point)];
      lost = 0;
    } else {
      ++lost;
    }

    ServoStep ls;
    ls.step = step;
    ls.latent_dist = (z_t - z_target).norm();
    ls.geo_dist = geo;
    res.log.push_back(ls);

    if (sample.contact.in_contact && geo <= cfg.success_tol) {
      res.success = true;
      res.steps_to_success = step;
      return res;
    }
    if (lost > cfg.max_contact_loss) {
      res.aborted = true;
      return res;
    }
    if (step == cfg.max_steps) break;

    Vec6 a = f_id(model, z_target, z_t, have_prev ? z_prev : z_t,
                  have_prev ? a_prev : Vec6::Zero(), cfg.dt);
    // Per-part norm clipping to the configured magnitude limits.
    const double ln = a.head<3>().norm(), an = a.tail<3>().norm();
    if (ln > cfg.lin_clip) a.head<3>() *= cfg.lin_clip / ln;
    if (an > cfg.ang_clip) a.tail<3>() *= cfg.ang_clip / an;
    res.log.back().action = a;

    // The robot interface tracks base-frame twists; convert and invert as the
    // hardware loop would.
    const Vec6 xb = ee_to_base_twist(a, pose.R);
    const Vec6 xe = base_to_ee_twist(xb, pose.R);
    ActionTwist cmd;
    cmd.v = xe;
    pose = step_pose(pose, cmd, cfg.dt);
    z_prev = z_t;
    a_prev = a;
    have_prev = true;
  }
  return res;
}

inline void save_servo_csv(const ServoResult& res, const std::string& path) {
  CsvTable t;
  t.columns = {"step", "latent_dist", "geo_dist", "a0", "a1", "a2", "a3", "a4", "a5"};
  for (const auto& s : res.log)
    t.rows.push_back({double(s.step), s.latent_dist, s.geo_dist, s.action(0),
                      s.action(1), s.action(2), s.action(3), s.action(4), s.action(5)});
  t.save(path);
}

/// Synthesize a target tactile sample for a target contact point: pose a
/// virtual finger so the anchor penetrates at the requested surface point.
inline TactileSample make_target_sample(const SkinSurface& surface,
                                        const Vec3& anchor_world,
                                        double target_theta, double target_phi,
                                        double depth) {
  const Vec3 p = surface.at(target_theta, target_phi);
  const Vec3 n = surface.outward_normal(p);
  FingerPose pose;
  pose.R = Mat3::Identity();
  pose.t = anchor_world - (p + (-depth) * n);  // anchor `depth` inside
  return sense(surface, pose, anchor_world);
}

}  // namespace tacserv
