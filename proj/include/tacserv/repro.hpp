#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/datapipe.hpp"
#include "tacserv/dynamics.hpp"
#include "tacserv/embedding.hpp"
#include "tacserv/eval.hpp"
#include "tacserv/geodesy.hpp"
#include "tacserv/skin_sim.hpp"
#include "tacserv/svg.hpp"

namespace tacserv {

// ---------------------------------------------------------------------------
// Full desk-scale reproduction: data generation, training, evaluation, and
// the release gate checks. Shared by the CLI `repro-all` subcommand and the
// release-check test binary.
// ---------------------------------------------------------------------------

struct ReproConfig {
  SurfaceParams surface;
  int n_demos = 21;
  std::uint64_t data_seed = 42;
  PipelineConfig pipeline;
  int bin_size = 500;
  // Demo contacts cluster along trajectories; a generous neighbor count is
  // needed so shortest paths can cross between trajectories instead of
  // detouring along them.
  int m_neighbors = 80;
  long ae_iterations = 20000;
  long dyn_iterations = 20000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int mds_pairs = 10000;
  int servo_runs = 20;
  int servo_max_steps = 200;
  double servo_tol = 0.003;
  double servo_dt = 0.31;
  std::string out_dir;  // reports written here when non-empty
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

namespace repro_detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// --- demo corpus ----------------------------------------------------------

inline std::vector<RawDemo> generate_demos(const SkinSurface& surface,
                                           int n_demos, std::uint64_t seed) {
  std::vector<RawDemo> demos;
  for (int d = 0; d < n_demos; ++d) {
    DemoParams dp;
    dp.region = d % 7;
    const DemoKind kind = d % 2 == 0 ? DemoKind::Rotational : DemoKind::Translational;
    demos.push_back(scripted_demo(surface, kind, dp, seed + d));
  }
  return demos;
}

// --- check 1: reconstruction quality --------------------------------------

inline CheckResult check_recon(AutoencoderModel& ae, const Dataset& ds) {
  CheckResult r{"ae_reconstruction_nmse"};
  r.pass = true;
  for (int split : {Train, Val, Test}) {
    std::vector<const AeSample*> sub;
    for (const auto& s : ds.samples)
      if (s.split == split) sub.push_back(&s);
    const int e = static_cast<int>(sub[0]->s.size());
    MatX truth(e, sub.size()), pred(e, sub.size());
    for (size_t i = 0; i < sub.size(); ++i) {
      truth.col(i) = sub[i]->s;
      pred.col(i) = decode(ae, encode(ae, sub[i]->s));
    }
    const double v = nmse(pred, truth);
    r.detail += (r.detail.empty() ? "" : " ") + fmt(v);
    if (!(v < 0.25)) r.pass = false;
  }
  r.detail = "train/val/test recon NMSE: " + r.detail + " (< 0.25)";
  return r;
}

// --- check 2: map-distance fidelity ---------------------------------------

inline CheckResult check_mds(AutoencoderModel& ae, const Dataset& ds,
                             const std::vector<GeodesicBin>& bins, int n_pairs,
                             double threshold) {
  CheckResult r{"mds_distance_nmse"};
  Rng rng(777);
  const auto pairs = sample_siamese_pairs(bins, n_pairs, rng);
  MatX pred(1, n_pairs), truth(1, n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const auto& bin = bins[pairs[i].bin];
    const Vec3 za = encode(ae, ds.samples[bin.indices[pairs[i].a]].s);
    const Vec3 zb = encode(ae, ds.samples[bin.indices[pairs[i].b]].s);
    pred(0, i) = (za.head<2>() - zb.head<2>()).norm();
    truth(0, i) = pairs[i].geodesic;
  }
  const double v = nmse(pred, truth);
  r.pass = v < threshold;
  r.detail = "xy-distance vs geodesic NMSE " + fmt(v) + " (< " + fmt(threshold) + ")";
  return r;
}

// --- checks 5/6: closed-form optimality and gradient integrity ------------

inline MatX random_mat(int rows, int cols, Rng& rng, double lim = 1.0) {
  MatX m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, -lim, lim);
  return m;
}

/// One-step objective of the LQR problem behind the LL/NJ closed forms.
inline double lqr_objective(const Mat3& a_mat, const Eigen::Matrix<double, 3, 6>& b_mat,
                            const Vec3& c_vec, const Vec3& z, const Vec3& z_target,
                            double dt, double beta, const Vec6& action) {
  const Vec3 z_next = z + (a_mat * z + b_mat * action + c_vec) * dt;
  return 0.5 * (z_target - z_next).squaredNorm() + 0.5 * beta * action.squaredNorm();
}

inline CheckResult check_controller_optimality(int n_instances) {
  CheckResult r{"controller_optimality"};
  Rng rng(31337);
  double max_kkt = 0.0;
  bool perturb_ok = true;
  DynamicsConfig nl_cfg;
  nl_cfg.variant = DynVariant::NL;
  nl_cfg.id_kind = IdKind::NJ;
  DynamicsModel nl = DynamicsModel::init(nl_cfg, rng);

  for (int i = 0; i < n_instances; ++i) {
    const double dt = uniform(rng, 0.2, 0.5);
    const double beta = 0.1;
    const Vec3 z = random_mat(3, 1, rng).col(0);
    const Vec3 z_tg = random_mat(3, 1, rng).col(0);

    Mat3 a_mat;
    Eigen::Matrix<double, 3, 6> b_mat;
    Vec3 c_vec;
    Vec6 action;
    if (i % 2 == 0) {
      // Random locally-linear instance.
      a_mat = random_mat(3, 3, rng);
      b_mat = random_mat(3, 6, rng);
      c_vec = random_mat(3, 1, rng).col(0);
      const Vec3 rr = (z_tg - z) / dt - a_mat * z - c_vec;
      action = detail::lqr_action(b_mat, rr, dt, beta);
    } else {
      // Tangent-space linearization of the non-linear net around a random
      // previous state/action; same LQR structure with A-bar/B-bar/c-bar.
      const Vec3 z_prev = random_mat(3, 1, rng).col(0);
      const Vec6 a_prev = random_mat(6, 1, rng).col(0);
      VecX x(9);
      x.head<3>() = z_prev;
      x.tail<6>() = a_prev;
      const MatX jac = input_jacobian(nl.params, nl.spec, x);
      a_mat = Mat3::Identity() / dt + jac.leftCols<3>();
      b_mat = jac.rightCols<6>();
      c_vec = -a_mat * z_prev - b_mat * a_prev;
      action = id_nj(nl, z_tg, z, z_prev, a_prev, dt, beta);
    }

    const auto kkt = kkt_residuals(a_mat, b_mat, c_vec, z, z_tg, dt, beta, action);
    max_kkt = std::max({max_kkt, kkt.constraint, kkt.stationarity_a, kkt.stationarity_z});
    const double j_star =
        lqr_objective(a_mat, b_mat, c_vec, z, z_tg, dt, beta, action);
    for (int k = 0; k < 10; ++k) {
      Vec6 delta = random_mat(6, 1, rng).col(0);
      delta *= 1e-3 / delta.norm();
      if (lqr_objective(a_mat, b_mat, c_vec, z, z_tg, dt, beta, action + delta) <
          j_star - 1e-12) {
        perturb_ok = false;
      }
    }
  }
  r.pass = max_kkt <= 1e-8 && perturb_ok;
  r.detail = "max KKT residual " + fmt(max_kkt) + " (<= 1e-8), perturbation " +
             (perturb_ok ? "ok" : "FAILED");
  return r;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Max relative error between analytic and central-difference gradients for
/// random parameter entries and input entries of one network shape.
inline double grad_check_shape(const std::vector<int>& widths, bool bn, Rng& rng,
                               int probes) {
  const MlpSpec spec = MlpSpec::standard(widths, bn);
  MlpParams params = MlpParams::init(spec, rng);
  params.training = bn;  // exercise the batch-statistics path when present
  const int cols = 5;
  const MatX input = random_mat(spec.input_dim(), cols, rng);
  const MatX gmat = random_mat(spec.output_dim(), cols, rng);
  auto loss = [&]() {
    return (forward(params, spec, input).array() * gmat.array()).sum();
  };

  ForwardCache cache;
  forward(params, spec, input, &cache);
  MlpGrads grads = MlpGrads::zeros_like(params);
  const MatX g_in = backward(params, spec, cache, gmat, grads);

  // Floor the relative-error denominator at the gradient scale: entries that
  // are numerically zero are otherwise dominated by FD round-off noise.
  double gmax = 1.0;
  for (size_t l = 0; l < grads.w.size(); ++l) {
    gmax = std::max(gmax, grads.w[l].cwiseAbs().maxCoeff());
    gmax = std::max(gmax, grads.b[l].cwiseAbs().maxCoeff());
  }
  const double floor = 1e-6 * gmax;

  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](double& ref, double analytic) {
    const double save = ref;
    ref = save + h;
    const double lp = loss();
    ref = save - h;
    const double lm = loss();
    ref = save;
    worst = std::max(worst, rel_err((lp - lm) / (2 * h), analytic, floor));
  };

  std::uniform_int_distribution<int> layer_dist(0, spec.n_layers() - 1);
  for (int k = 0; k < probes; ++k) {
    const int l = layer_dist(rng);
    const int i = std::uniform_int_distribution<int>(0, spec.widths[l + 1] - 1)(rng);
    const int j = std::uniform_int_distribution<int>(0, spec.widths[l] - 1)(rng);
    probe(params.w[l](i, j), grads.w[l](i, j));
    probe(params.b[l](i), grads.b[l](i));
    if (spec.batch_norm[l]) {
      probe(params.bn_scale[l](i), grads.bn_scale[l](i));
      probe(params.bn_shift[l](i), grads.bn_shift[l](i));
    }
  }
  // Input gradients: FD moves one input entry, loss recomputed batch-wide.
  MatX in_copy = input;
  auto loss_in = [&]() {
    return (forward(params, spec, in_copy).array() * gmat.array()).sum();
  };
  for (int k = 0; k < probes; ++k) {
    const int i = std::uniform_int_distribution<int>(0, spec.input_dim() - 1)(rng);
    const int c = std::uniform_int_distribution<int>(0, cols - 1)(rng);
    const double save = in_copy(i, c);
    in_copy(i, c) = save + h;
    const double lp = loss_in();
    in_copy(i, c) = save - h;
    const double lm = loss_in();
    in_copy(i, c) = save;
    worst = std::max(worst, rel_err((lp - lm) / (2 * h), g_in(i, c), floor));
  }
  return worst;
}

inline CheckResult check_gradients(int n_electrodes, int instances) {
  CheckResult r{"gradient_integrity"};
  Rng rng(4242);
  double worst = 0.0;
  const std::vector<std::pair<std::vector<int>, bool>> shapes = {
      {{n_electrodes, 19, 12, 6, 3}, true},
      {{3, 6, 12, 19, n_electrodes}, true},
      {{3, 8, 15, 23, 30}, false},
      {{9, 15, 3}, false},
  };
  const int per_shape = std::max(1, instances / static_cast<int>(shapes.size()));
  for (const auto& [widths, bn] : shapes)
    for (int i = 0; i < per_shape / 5; ++i)
      worst = std::max(worst, grad_check_shape(widths, bn, rng, 5));

  // Gradient-controller action direction: analytic 2 dt J_a^T e at a = 0 vs
  // finite differences of the one-step latent distance.
  DynamicsConfig cfg;
  cfg.variant = DynVariant::NL;
  cfg.id_kind = IdKind::NG;
  for (int i = 0; i < instances; ++i) {
    DynamicsModel m = DynamicsModel::init(cfg, rng);
    const Vec3 z = random_mat(3, 1, rng).col(0);
    const Vec3 z_tg = random_mat(3, 1, rng).col(0);
    const double dt = uniform(rng, 0.2, 0.5);
    VecX x(9);
    x.head<3>() = z;
    x.tail<6>().setZero();
    const MatX jac = input_jacobian(m.params, m.spec, x);
    const Eigen::Matrix<double, 3, 6> j_a = jac.rightCols<6>();
    const Vec3 e = z + forward(m.params, m.spec, MatX(x)).col(0) * dt - z_tg;
    const Vec6 analytic = 2.0 * dt * j_a.transpose() * e;
    auto dist2 = [&](const Vec6& a) {
      VecX xa(9);
      xa.head<3>() = z;
      xa.tail<6>() = a;
      const Vec3 zn = z + forward(m.params, m.spec, MatX(xa)).col(0) * dt;
      return (zn - z_tg).squaredNorm();
    };
    const double h = 1e-5;
    const double floor = 1e-6 * std::max(1.0, analytic.cwiseAbs().maxCoeff());
    for (int d = 0; d < 6; ++d) {
      Vec6 ap = Vec6::Zero(), am = Vec6::Zero();
      ap(d) = h;
      am(d) = -h;
      worst = std::max(
          worst, rel_err((dist2(ap) - dist2(am)) / (2 * h), analytic(d), floor));
    }
  }
  r.pass = worst <= 1e-4;
  r.detail = "max gradient relative error " + fmt(worst) + " (<= 1e-4)";
  return r;
}

// --- check 7: geodesy graph vs analytic great circles ---------------------

inline CheckResult check_geodesy_sphere(int n_points, int m_neighbors) {
  CheckResult r{"geodesy_sphere_agreement"};
  const double radius = 0.01;
  const double theta_max = 1.1;
  // Equal-area spiral sampling: quasi-uniform spacing keeps the graph-metric
  // stretch of the k-NN shortest paths well below the 5% agreement bound
  // (purely random sampling has local density gaps that push it past 8%).
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const double cos_min = std::cos(theta_max);
  std::vector<Vec3> pts;
  pts.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double c = 1.0 - (i + 0.5) / n_points * (1.0 - cos_min);
    const double th = std::acos(c);
    const double ph = i * golden;
    pts.emplace_back(radius * std::sin(th) * std::cos(ph),
                     radius * std::sin(th) * std::sin(ph), radius * c);
  }
  const AdjGraph g = knn_graph(pts, m_neighbors);
  const MatX d = geodesic_matrix(g);

  // Hop counts (unweighted BFS) to restrict to pairs >= 5 edges apart.
  const int n = static_cast<int>(pts.size());
  double worst = 0.0;
  int checked = 0;
  for (int src = 0; src < n; src += 7) {
    std::vector<int> hops(n, -1);
    std::queue<int> q;
    hops[src] = 0;
    q.push(src);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (const auto& e : g.adj[u])
        if (hops[e.to] < 0) {
          hops[e.to] = hops[u] + 1;
          q.push(e.to);
        }
    }
    for (int j = 0; j < n; j += 3) {
      if (hops[j] < 5) continue;
      const double cosang =
          std::clamp(pts[src].dot(pts[j]) / (radius * radius), -1.0, 1.0);
      const double true_d = radius * std::acos(cosang);
      worst = std::max(worst, std::abs(d(src, j) - true_d) / true_d);
      ++checked;
    }
  }
  r.pass = checked > 100 && worst <= 0.05;
  r.detail = "max relative deviation " + fmt(worst) + " over " +
             std::to_string(checked) + " pairs (<= 0.05)";
  return r;
}

// --- check 8: closed-loop servoing ----------------------------------------

struct ServoBatchStats {
  int n_runs = 0;
  int n_success = 0;
  int n_monotone = 0;
};

/// All 20-step windows of the in-contact geodesic log must be non-increasing
/// end-to-end (g[t+20] <= g[t]).
inline bool windows_non_increasing(const ServoResult& res, int window = 20) {
  std::vector<double> g;
  for (const auto& s : res.log)
    if (std::isfinite(s.geo_dist)) g.push_back(s.geo_dist);
  for (size_t t = 0; t + window < g.size(); ++t)
    if (g[t + window] > g[t] + 1e-12) return false;
  return true;
}

inline ServoBatchStats servo_batch(AutoencoderModel& ae, DynamicsModel& dyn,
                                   const SkinSurface& surface, bool rotational,
                                   const ReproConfig& cfg,
                                   std::vector<ServoResult>* out_runs = nullptr) {
  const auto& sp = surface.params();
  const Vec3 anchor_world(0.05, 0.02, 0.03);
  const double depth = 0.0015;
  const double th0 = sp.theta_max * 0.45;
  ServoBatchStats stats;
  for (int run = 0; run < cfg.servo_runs; ++run) {
    Rng rng(9000 + run);
    const double ph0 = uniform(rng, 0.0, 2.0 * M_PI);
    // Rotation-reachable targets move along theta (finger tilts over the
    // cap); translation-reachable targets move along phi (lateral swipe).
    double th_t = th0, ph_t = ph0;
    const double sign = run % 2 == 0 ? 1.0 : -1.0;
    if (rotational)
      th_t = th0 + sign * sp.theta_max * 0.18;
    else
      ph_t = ph0 + sign * 0.55;

    ServoRunConfig rc;
    rc.target = make_target_sample(surface, anchor_world, th_t, ph_t, depth);
    rc.dt = cfg.servo_dt;
    rc.max_steps = cfg.servo_max_steps;
    rc.success_tol = cfg.servo_tol;

    const Vec3 p0 = surface.at(th0, ph0);
    const Vec3 n0 = surface.outward_normal(p0);
    FingerPose pose;
    pose.R = Mat3::Identity();
    pose.t = anchor_world - p0 + depth * n0;

    const ServoResult res = servo_run(ae, dyn, surface, anchor_world, pose, rc);
    ++stats.n_runs;
    if (res.success) ++stats.n_success;
    if (windows_non_increasing(res)) ++stats.n_monotone;
    if (out_runs) out_runs->push_back(res);
  }
  return stats;
}

}  // namespace repro_detail

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_full_check(const ReproConfig& cfg,
                                               std::ostream* log = nullptr) {
  namespace rd = repro_detail;
  namespace fs = std::filesystem;
  auto note = [&](const std::string& msg) {
    if (log) (*log) << msg << std::endl;
  };
  const bool write = !cfg.out_dir.empty();
  if (write) fs::create_directories(cfg.out_dir);

  // --- data ---
  note("[repro] generating scripted demos...");
  SkinSurface surface(cfg.surface);
  const auto demos = rd::generate_demos(surface, cfg.n_demos, cfg.data_seed);
  note("[repro] building dataset...");
  const Dataset ds = build_dataset(demos, cfg.pipeline);
  note("[repro] dataset: " + std::to_string(ds.samples.size()) + " samples, " +
       std::to_string(ds.tuples.size()) + " tuples");
  std::vector<Vec3> contacts;
  contacts.reserve(ds.samples.size());
  for (const auto& s : ds.samples) contacts.push_back(s.contact);
  note("[repro] binning + geodesic matrices...");
  const auto bins = bin_split(contacts, cfg.bin_size, cfg.m_neighbors, cfg.data_seed);

  std::vector<TransitionTuple> test_tuples;
  for (const auto& t : ds.tuples)
    if (t.split == Test) test_tuples.push_back(t);

  // --- training over seeds and ablations ---
  AutoencoderConfig ae_cfg;
  ae_cfg.iterations = cfg.ae_iterations;
  AutoencoderConfig ae_cfg_nolat = ae_cfg;
  ae_cfg_nolat.use_mds = false;
  ae_cfg_nolat.use_cdp = false;

  struct SeedModels {
    AutoencoderModel ae_lat, ae_nolat;
    DynamicsModel dyn_lat_id, dyn_lat_noid, dyn_nolat_id, dyn_nolat_noid;
    std::vector<double> fd_lat_id, fd_lat_noid, fd_nolat_id, fd_nolat_noid;
    std::vector<IdEvalRow> id_rows_id, id_rows_noid;
  };
  std::vector<SeedModels> per_seed;

  DynamicsConfig dyn_cfg;
  dyn_cfg.variant = DynVariant::NL;
  dyn_cfg.id_kind = IdKind::NJ;
  dyn_cfg.iterations = cfg.dyn_iterations;
  DynamicsConfig dyn_cfg_noid = dyn_cfg;
  dyn_cfg_noid.use_id_loss = false;

  for (std::uint64_t seed : cfg.seeds) {
    note("[repro] training (seed " + std::to_string(seed) + ")...");
    SeedModels sm{
        train_autoencoder(ds, bins, ae_cfg, seed),
        train_autoencoder(ds, bins, ae_cfg_nolat, seed),
        DynamicsModel{}, DynamicsModel{}, DynamicsModel{}, DynamicsModel{},
        {}, {}, {}, {}, {}, {}};
    sm.dyn_lat_id = train_dynamics(ds.tuples, sm.ae_lat, dyn_cfg, seed);
    sm.dyn_lat_noid = train_dynamics(ds.tuples, sm.ae_lat, dyn_cfg_noid, seed);
    sm.dyn_nolat_id = train_dynamics(ds.tuples, sm.ae_nolat, dyn_cfg, seed);
    sm.dyn_nolat_noid = train_dynamics(ds.tuples, sm.ae_nolat, dyn_cfg_noid, seed);
    sm.fd_lat_id = eval_chained_fd(sm.dyn_lat_id, sm.ae_lat, test_tuples, 3);
    sm.fd_lat_noid = eval_chained_fd(sm.dyn_lat_noid, sm.ae_lat, test_tuples, 3);
    sm.fd_nolat_id = eval_chained_fd(sm.dyn_nolat_id, sm.ae_nolat, test_tuples, 3);
    sm.fd_nolat_noid = eval_chained_fd(sm.dyn_nolat_noid, sm.ae_nolat, test_tuples, 3);
    sm.id_rows_id = eval_id_one(sm.dyn_lat_id, sm.ae_lat, test_tuples, "NJ");
    sm.id_rows_noid = eval_id_one(sm.dyn_lat_noid, sm.ae_lat, test_tuples, "NJ_noID");
    per_seed.push_back(std::move(sm));
  }

  std::vector<CheckResult> results;

  // 1. Reconstruction quality.
  results.push_back(rd::check_recon(per_seed[0].ae_lat, ds));
  note("[check] " + results.back().name + ": " + results.back().detail);

  // 2. Map-distance fidelity.
  results.push_back(
      rd::check_mds(per_seed[0].ae_lat, ds, bins, cfg.mds_pairs, 0.05));
  note("[check] " + results.back().name + ": " + results.back().detail);

  // 3. Chained-prediction ablation ordering over seeds.
  {
    CheckResult r{"chained_fd_ablation_ordering"};
    auto mean3 = [&](std::vector<double> SeedModels::* field) {
      double acc = 0.0;
      for (const auto& sm : per_seed) {
        const auto& v = sm.*field;
        for (double x : v) acc += x / v.size();
      }
      return acc / per_seed.size();
    };
    const double lat_id = mean3(&SeedModels::fd_lat_id);
    const double nolat_id = mean3(&SeedModels::fd_nolat_id);
    const double lat_noid = mean3(&SeedModels::fd_lat_noid);
    const double nolat_noid = mean3(&SeedModels::fd_nolat_noid);
    r.pass = lat_id < nolat_id && lat_noid < nolat_noid;
    r.detail = "mean chained NMSE: structured " + rd::fmt(lat_id) + "/" +
               rd::fmt(lat_noid) + " vs unstructured " + rd::fmt(nolat_id) + "/" +
               rd::fmt(nolat_noid) + " (with/without direction loss)";
    results.push_back(r);
    note("[check] " + r.name + ": " + r.detail);
  }

  // 4. Direction-loss ablation on the controller.
  {
    CheckResult r{"id_loss_ablation_ordering"};
    auto mean_wcd = [&](std::vector<IdEvalRow> SeedModels::* field,
                        const std::string& part) {
      double acc = 0.0;
      int n = 0;
      for (const auto& sm : per_seed)
        for (const auto& row : sm.*field)
          if (row.condition == "AEpred" && row.part == part) {
            acc += row.wcd;
            ++n;
          }
      return acc / n;
    };
    const double id_lin = mean_wcd(&SeedModels::id_rows_id, "linear");
    const double id_ang = mean_wcd(&SeedModels::id_rows_id, "angular");
    const double noid_lin = mean_wcd(&SeedModels::id_rows_noid, "linear");
    const double noid_ang = mean_wcd(&SeedModels::id_rows_noid, "angular");
    r.pass = id_lin < noid_lin && id_ang < noid_ang;
    r.detail = "AEpred wcd lin " + rd::fmt(id_lin) + " vs " + rd::fmt(noid_lin) +
               ", ang " + rd::fmt(id_ang) + " vs " + rd::fmt(noid_ang);
    results.push_back(r);
    note("[check] " + r.name + ": " + r.detail);
  }

  // 5. Controller closed-form optimality.
  results.push_back(rd::check_controller_optimality(1000));
  note("[check] " + results.back().name + ": " + results.back().detail);

  // 6. Gradient integrity.
  results.push_back(rd::check_gradients(cfg.surface.n_electrodes, 100));
  note("[check] " + results.back().name + ": " + results.back().detail);

  // 7. Geodesy oracle agreement on a spherical cap.
  results.push_back(rd::check_geodesy_sphere(500, 18));
  note("[check] " + results.back().name + ": " + results.back().detail);

  // 8. Closed-loop servoing properties.
  {
    CheckResult r{"closed_loop_servoing"};
    note("[repro] servo runs...");
    std::vector<ServoResult> rot_runs, trans_runs;
    const auto rot = rd::servo_batch(per_seed[0].ae_lat, per_seed[0].dyn_lat_id,
                                     surface, true, cfg, &rot_runs);
    const auto trans = rd::servo_batch(per_seed[0].ae_lat, per_seed[0].dyn_lat_id,
                                       surface, false, cfg, &trans_runs);
    auto frac = [](int a, int b) { return double(a) / std::max(1, b); };
    const double need = 0.7;
    r.pass = frac(rot.n_success, rot.n_runs) >= need &&
             frac(trans.n_success, trans.n_runs) >= need &&
             frac(rot.n_monotone, rot.n_runs) >= need &&
             frac(trans.n_monotone, trans.n_runs) >= need;
    r.detail = "success rot " + rd::fmt(frac(rot.n_success, rot.n_runs)) + " trans " +
               rd::fmt(frac(trans.n_success, trans.n_runs)) + ", monotone rot " +
               rd::fmt(frac(rot.n_monotone, rot.n_runs)) + " trans " +
               rd::fmt(frac(trans.n_monotone, trans.n_runs)) + " (>= 0.7)";
    results.push_back(r);
    note("[check] " + r.name + ": " + r.detail);

    if (write) {
      for (size_t i = 0; i < rot_runs.size(); ++i)
        save_servo_csv(rot_runs[i],
                       cfg.out_dir + "/servo_rot_" + std::to_string(i) + ".csv");
      for (size_t i = 0; i < trans_runs.size(); ++i)
        save_servo_csv(trans_runs[i],
                       cfg.out_dir + "/servo_trans_" + std::to_string(i) + ".csv");
    }
  }

  // --- reports ---
  if (write) {
    {
      CsvTable t;
      t.columns = {"split", "recon_nmse"};
      for (int split : {Train, Val, Test}) {
        std::vector<const AeSample*> sub;
        for (const auto& s : ds.samples)
          if (s.split == split) sub.push_back(&s);
        const int e = static_cast<int>(sub[0]->s.size());
        MatX truth(e, sub.size()), pred(e, sub.size());
        for (size_t i = 0; i < sub.size(); ++i) {
          truth.col(i) = sub[i]->s;
          pred.col(i) = decode(per_seed[0].ae_lat, encode(per_seed[0].ae_lat, sub[i]->s));
        }
        t.rows.push_back({double(split), nmse(pred, truth)});
      }
      t.save(cfg.out_dir + "/eval_ae.csv");
    }
    {
      CsvTable t;
      t.columns = {"variant", "chain_step", "nmse"};
      auto add = [&](int variant, const std::vector<double>& v) {
        for (size_t k = 0; k < v.size(); ++k)
          t.rows.push_back({double(variant), double(k + 1), v[k]});
      };
      add(0, per_seed[0].fd_lat_id);     // structured latent + direction loss
      add(1, per_seed[0].fd_lat_noid);   // structured latent only
      add(2, per_seed[0].fd_nolat_id);   // unstructured + direction loss
      add(3, per_seed[0].fd_nolat_noid); // unstructured only
      t.save(cfg.out_dir + "/eval_fd.csv");

      SvgPlot plot;
      plot.title = "Chained prediction NMSE by variant";
      const char* labels[] = {"struct+dir", "struct", "unstruct+dir", "unstruct"};
      for (int v = 0; v < 4; ++v) {
        SvgPlot::Series s;
        s.label = labels[v];
        s.color = svg_palette(v);
        for (const auto& row : t.rows)
          if (static_cast<int>(row[0]) == v) {
            s.x.push_back(row[1]);
            s.y.push_back(row[2]);
          }
        plot.series.push_back(std::move(s));
      }
      plot.save(cfg.out_dir + "/eval_fd.svg");
    }
    {
      auto rows = per_seed[0].id_rows_id;
      const auto& noid = per_seed[0].id_rows_noid;
      rows.insert(rows.end(), noid.begin(), noid.end());
      save_id_eval_csv(rows, cfg.out_dir + "/eval_id.csv");
    }
    export_embedding_csv(per_seed[0].ae_lat, ds.samples,
                         cfg.out_dir + "/fig3_embedding.csv");
    {
      KeyValueConfig manifest;
      manifest.set("n_demos", static_cast<long>(cfg.n_demos));
      manifest.set("n_samples", static_cast<long>(ds.samples.size()));
      manifest.set("n_tuples", static_cast<long>(ds.tuples.size()));
      manifest.set("ae_iterations", static_cast<long>(cfg.ae_iterations));
      manifest.set("dyn_iterations", static_cast<long>(cfg.dyn_iterations));
      for (const auto& r : results)
        manifest.set("check_" + r.name, r.pass ? std::string("pass") : std::string("fail"));
      manifest.save(cfg.out_dir + "/manifest.txt");
    }
  }
  return results;
}

}  // namespace tacserv
