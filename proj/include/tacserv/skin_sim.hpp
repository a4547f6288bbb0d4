#pragma once

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/config.hpp"
#include "tacserv/graph.hpp"

namespace tacserv {

// ---------------------------------------------------------------------------
// Surface geometry
// ---------------------------------------------------------------------------

/// Capped superellipsoid fingertip:
///   F(p) = |x/ax|^r + |y/ay|^r + |z/az|^r - 1 = 0,  polar angle in [0, theta_max].
/// With ax = ay = az and r = 2 the cap is spherical, which gives an analytic
/// geodesic (great-circle arc) used by the oracle tests.
struct SurfaceParams {
  double ax = 0.010;
  double ay = 0.010;
  double az = 0.014;
  double exponent = 2.0;
  double theta_max = 1.1;
  int n_electrodes = 19;
  int mesh_nt = 64;    // polar rings
  int mesh_np = 128;   // azimuthal steps
  double kernel_sigma = 0.004;   // geodesic kernel width of the electrodes (m)
  double pressure_gain = 1.0;    // activation units per meter of penetration
  double noise_std = 0.0;        // additive Gaussian noise on s (0 = off)

  static SurfaceParams load(const std::string& path) {
    const auto cfg = KeyValueConfig::load(path);
    SurfaceParams p;
    p.ax = cfg.get_double("ax", p.ax);
    p.ay = cfg.get_double("ay", p.ay);
    p.az = cfg.get_double("az", p.az);
    p.exponent = cfg.get_double("exponent", p.exponent);
    p.theta_max = cfg.get_double("theta_max", p.theta_max);
    p.n_electrodes = static_cast<int>(cfg.get_int("n_electrodes", p.n_electrodes));
    p.mesh_nt = static_cast<int>(cfg.get_int("mesh_nt", p.mesh_nt));
    p.mesh_np = static_cast<int>(cfg.get_int("mesh_np", p.mesh_np));
    p.kernel_sigma = cfg.get_double("kernel_sigma", p.kernel_sigma);
    p.pressure_gain = cfg.get_double("pressure_gain", p.pressure_gain);
    p.noise_std = cfg.get_double("noise_std", p.noise_std);
    return p;
  }

  void save(const std::string& path) const {
    KeyValueConfig cfg;
    cfg.set("ax", ax);
    cfg.set("ay", ay);
    cfg.set("az", az);
    cfg.set("exponent", exponent);
    cfg.set("theta_max", theta_max);
    cfg.set("n_electrodes", n_electrodes);
    cfg.set("mesh_nt", mesh_nt);
    cfg.set("mesh_np", mesh_np);
    cfg.set("kernel_sigma", kernel_sigma);
    cfg.set("pressure_gain", pressure_gain);
    cfg.set("noise_std", noise_std);
    cfg.save(path);
  }
};

/// Pose of the finger (end-effector) frame in the base frame.
struct FingerPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 to_finger(const Vec3& p_world) const { return R.transpose() * (p_world - t); }
  Vec3 to_world(const Vec3& p_finger) const { return R * p_finger + t; }
};

struct ContactState {
  bool in_contact = false;
  Vec3 contact_point = Vec3::Zero();  // finger frame, on the surface
  double pressure = 0.0;              // >= 0, activation units
};

struct TactileSample {
  double timestamp = 0.0;
  VecX s;             // offset-subtracted electrode activations, E values
  double pressure = 0.0;
  ContactState contact;
  FingerPose pose;
};

class SkinSurface {
 public:
  explicit SkinSurface(const SurfaceParams& params = SurfaceParams{}) : p_(params) {
    if (p_.n_electrodes < 3) throw TacservError("need at least 3 electrodes");
    build_mesh();
    place_electrodes();
    precompute_electrode_fields();
  }

  const SurfaceParams& params() const { return p_; }
  int n_electrodes() const { return p_.n_electrodes; }
  const std::vector<Vec3>& electrode_positions() const { return electrodes_; }
  const std::vector<Vec3>& mesh_vertices() const { return verts_; }
  const AdjGraph& mesh_graph() const { return graph_; }

  /// Implicit surface function, negative inside.
  double implicit(const Vec3& q) const {
    const double r = p_.exponent;
    return std::pow(std::abs(q.x() / p_.ax), r) + std::pow(std::abs(q.y() / p_.ay), r) +
           std::pow(std::abs(q.z() / p_.az), r) - 1.0;
  }

  /// Point on the surface for polar/azimuth direction angles.
  Vec3 at(double theta, double phi) const {
    const Vec3 d(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                 std::cos(theta));
    return radial_scale(d) * d;
  }

  Vec3 outward_normal(const Vec3& q) const {
    const double r = p_.exponent;
    auto comp = [r](double v, double a) {
      const double u = std::abs(v / a);
      return (v >= 0 ? 1.0 : -1.0) * (r / a) * std::pow(u, r - 1.0);
    };
    Vec3 n(comp(q.x(), p_.ax), comp(q.y(), p_.ay), comp(q.z(), p_.az));
    return n.normalized();
  }

  /// Nearest surface point to a query (finger frame). Returns the point and
  /// its (theta, phi) chart coordinates; theta is clamped to the cap.
  Vec3 nearest_point(const Vec3& q, double* theta_out = nullptr,
                     double* phi_out = nullptr) const {
    double th = std::acos(std::clamp(q.z() / std::max(q.norm(), 1e-300), -1.0, 1.0));
    double ph = std::atan2(q.y(), q.x());
    th = std::clamp(th, 0.0, p_.theta_max);
    // Gauss-Newton on squared distance in the (theta, phi) chart.
    double lambda = 1e-8;
    Vec3 pt = at(th, ph);
    double f = (pt - q).squaredNorm();
    for (int iter = 0; iter < 40; ++iter) {
      const double h = 1e-6;
      const Vec3 r0 = pt - q;
      const Vec3 jt = (at(th + h, ph) - at(th - h, ph)) / (2 * h);
      const Vec3 jp = (at(th, ph + h) - at(th, ph - h)) / (2 * h);
      Eigen::Matrix<double, 3, 2> J;
      J.col(0) = jt;
      J.col(1) = jp;
      const Eigen::Matrix2d H = J.transpose() * J + lambda * Eigen::Matrix2d::Identity();
      const Vec2 g = J.transpose() * r0;
      if (g.norm() < 1e-14) break;
      const Vec2 step = H.ldlt().solve(g);
      double nth = std::clamp(th - step(0), 0.0, p_.theta_max);
      double nph = ph - step(1);
      const Vec3 npt = at(nth, nph);
      const double nf = (npt - q).squaredNorm();
      if (nf < f) {
        th = nth;
        ph = nph;
        pt = npt;
        f = nf;
        lambda = std::max(lambda * 0.5, 1e-12);
      } else {
        lambda *= 10.0;
        if (lambda > 1e6) break;
      }
    }
    if (theta_out) *theta_out = th;
    if (phi_out) *phi_out = ph;
    return pt;
  }

  /// Shortest-path distance between two on-surface points over the dense
  /// evaluation mesh. Rejects points that are off the surface.
  double geodesic_oracle(const Vec3& a, const Vec3& b) const {
    check_on_surface(a);
    check_on_surface(b);
    if ((a - b).norm() < 1e-12) return 0.0;
    const int va = nearest_vertex(a);
    const int vb = nearest_vertex(b);
    if (va == vb) return (a - b).norm();
    const auto dist = dijkstra(graph_, va);
    return dist[vb];
  }

  /// Geodesic distance from electrode i to an on-surface chart point,
  /// bilinearly interpolated from the precomputed per-electrode fields.
  double electrode_geodesic(int i, double theta, double phi) const {
    return interp_field(electrode_fields_[i], theta, phi);
  }

  int nearest_vertex(const Vec3& q) const {
    double th, ph;
    nearest_point(q, &th, &ph);
    return nearest_vertex_chart(th, ph);
  }

  void check_on_surface(const Vec3& q) const {
    if (std::abs(implicit(q)) > 1e-6)
      throw TacservError("point is not on the skin surface");
  }

 private:
  double radial_scale(const Vec3& d) const {
    const double r = p_.exponent;
    const double s = std::pow(std::abs(d.x() / p_.ax), r) +
                     std::pow(std::abs(d.y() / p_.ay), r) +
                     std::pow(std::abs(d.z() / p_.az), r);
    return std::pow(s, -1.0 / r);
  }

  // Vertex ids: 0 = pole, then ring i in 1..nt, azimuth j in 0..np-1.
  int vid(int i, int j) const {
    const int np = p_.mesh_np;
    return 1 + (i - 1) * np + ((j % np) + np) % np;
  }

  void build_mesh() {
    const int nt = p_.mesh_nt, np = p_.mesh_np;
    const double dth = p_.theta_max / nt;
    const double dph = 2.0 * M_PI / np;
    verts_.clear();
    verts_.push_back(at(0.0, 0.0));
    for (int i = 1; i <= nt; ++i)
      for (int j = 0; j < np; ++j) verts_.push_back(at(i * dth, j * dph));
    graph_.adj.assign(verts_.size(), {});

    // Neighborhood template: coprime offsets up to radius 3; the wide template
    // keeps the graph-metric anisotropy error near 1%.
    std::vector<std::pair<int, int>> offs;
    for (int di = 0; di <= 3; ++di)
      for (int dj = -3; dj <= 3; ++dj) {
        if (di == 0 && dj <= 0) continue;
        if (std::gcd(di, std::abs(dj)) != 1 && !(di == 0 && std::abs(dj) == 1) &&
            !(dj == 0 && di == 1))
          continue;
        offs.emplace_back(di, dj);
      }
    for (int i = 1; i <= nt; ++i) {
      for (int j = 0; j < np; ++j) {
        const int u = vid(i, j);
        for (auto [di, dj] : offs) {
          const int i2 = i + di;
          if (i2 < 1 || i2 > nt) continue;
          const int v = vid(i2, j + dj);
          if (v <= u && di == 0) continue;  // ring-internal duplicates
          graph_.add_edge(u, v, (verts_[u] - verts_[v]).norm());
        }
      }
    }
    for (int i = 1; i <= std::min(3, nt); ++i)
      for (int j = 0; j < np; ++j)
        graph_.add_edge(0, vid(i, j), (verts_[0] - verts_[vid(i, j)]).norm());
  }

  void place_electrodes() {
    // Fibonacci spiral over the cap, slightly inset from the rim.
    electrodes_.clear();
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const double th_lim = 0.88 * p_.theta_max;
    const int e = p_.n_electrodes;
    for (int i = 0; i < e; ++i) {
      const double u = (i + 0.5) / e;
      const double th = th_lim * std::sqrt(u);
      const double ph = i * golden;
      electrodes_.push_back(at(th, ph));
    }
  }

  void precompute_electrode_fields() {
    electrode_fields_.clear();
    for (const auto& ep : electrodes_) {
      const int v = nearest_vertex_raw(ep);
      electrode_fields_.push_back(dijkstra(graph_, v));
    }
  }

  int nearest_vertex_raw(const Vec3& q) const {
    const double th = std::acos(std::clamp(q.z() / q.norm(), -1.0, 1.0));
    const double ph = std::atan2(q.y(), q.x());
    return nearest_vertex_chart(std::clamp(th, 0.0, p_.theta_max), ph);
  }

  int nearest_vertex_chart(double th, double ph) const {
    const int nt = p_.mesh_nt, np = p_.mesh_np;
    const double dth = p_.theta_max / nt;
    const double dph = 2.0 * M_PI / np;
    const int i = static_cast<int>(std::lround(th / dth));
    if (i <= 0) return 0;
    const int j = static_cast<int>(std::lround(ph / dph));
    return vid(std::min(i, nt), j);
  }

  double interp_field(const std::vector<double>& field, double th, double ph) const {
    const int nt = p_.mesh_nt, np = p_.mesh_np;
    const double dth = p_.theta_max / nt;
    const double dph = 2.0 * M_PI / np;
    const double fi = std::clamp(th / dth, 0.0, static_cast<double>(nt));
    const double fj = ph / dph;
    const int i0 = static_cast<int>(std::floor(fi));
    const int j0 = static_cast<int>(std::floor(fj));
    const double wi = fi - i0, wj = fj - j0;
    auto val = [&](int i, int j) -> double {
      if (i <= 0) return field[0];
      return field[vid(std::min(i, nt), j)];
    };
    return (1 - wi) * ((1 - wj) * val(i0, j0) + wj * val(i0, j0 + 1)) +
           wi * ((1 - wj) * val(i0 + 1, j0) + wj * val(i0 + 1, j0 + 1));
  }

  SurfaceParams p_;
  std::vector<Vec3> verts_;
  AdjGraph graph_;
  std::vector<Vec3> electrodes_;
  std::vector<std::vector<double>> electrode_fields_;
};

// ---------------------------------------------------------------------------
// Sensing and kinematics
// ---------------------------------------------------------------------------

/// Simulated tactile read-out at a given pose against a fixed world anchor.
/// Penetration-depth pressure with a Gaussian geodesic kernel on the
/// electrodes; the activations are shifted so that p = -mean(s) holds exactly.
inline TactileSample sense(const SkinSurface& surface, const FingerPose& pose,
                           const Vec3& anchor_world, Rng* noise_rng = nullptr,
                           double timestamp = 0.0) {
  const auto& params = surface.params();
  const int e = surface.n_electrodes();
  TactileSample out;
  out.timestamp = timestamp;
  out.pose = pose;
  out.s = VecX::Zero(e);

  const Vec3 q = pose.to_finger(anchor_world);
  double th, ph;
  const Vec3 contact = surface.nearest_point(q, &th, &ph);
  const bool inside = surface.implicit(q) < 0.0;
  const double depth = inside ? (q - contact).norm() : 0.0;
  const double pressure = params.pressure_gain * depth;

  out.contact.contact_point = contact;
  out.contact.in_contact = inside && pressure > 0.0;
  out.contact.pressure = pressure;

  if (out.contact.in_contact) {
    const double s2 = 2.0 * params.kernel_sigma * params.kernel_sigma;
    for (int i = 0; i < e; ++i) {
      const double g = surface.electrode_geodesic(i, th, ph);
      out.s(i) = -pressure * std::exp(-g * g / s2);
    }
  }
  if (noise_rng && params.noise_std > 0.0) {
    for (int i = 0; i < e; ++i) out.s(i) += gaussian(*noise_rng, 0.0, params.noise_std);
  }
  // Mean correction: p = -mean(s) is an identity of the sensing model.
  out.s.array() += -pressure - out.s.mean();
  out.pressure = pressure;
  return out;
}

/// Integrate an end-effector-frame twist over dt.
inline FingerPose step_pose(const FingerPose& pose, const ActionTwist& a, double dt) {
  if (dt <= 0.0) throw TacservError("step_pose: dt must be positive");
  FingerPose next;
  next.t = pose.t + pose.R * a.linear() * dt;
  next.R = pose.R * so3_exp(a.angular() * dt);
  return next;
}

// ---------------------------------------------------------------------------
// Scripted demonstrations
// ---------------------------------------------------------------------------

enum class DemoKind { Rotational, Translational };

struct DemoParams {
  int region = 0;                // 0..6, selects the skin sub-part
  double depth_target = 0.0015;  // m
  double depth_mod = 0.4;        // fractional slow modulation of depth target
  double depth_mod_hz = 0.1;     // Hz; keeps pressure varying well below the
                                 // offline filter cutoff so the dynamics
                                 // training data carries a learnable signal
  double rot_speed = 0.12;       // rad/s
  double rot_angle = 0.40;       // rad swept per contact segment
  double swipe_speed = 0.0025;   // m/s
  double swipe_dist = 0.008;     // m per swipe
  double approach_speed = 0.004; // m/s
  double servo_gain = 6.0;       // depth-keeping gain (1/s)
  double clearance = 0.003;      // m, start/retreat distance from surface
  double settle_time = 0.5;      // s of free air between contacts
};

struct RawDemo {
  std::string kind;                   // "rotational" | "translational"
  int region = 0;
  std::uint64_t seed = 0;
  std::vector<TactileSample> tactile; // 100 Hz
  std::vector<double> twist_time;     // 300 Hz
  std::vector<Vec6> twist_base;       // 300 Hz, base frame
};

namespace detail {

struct DemoScript {
  // One phase of the contact script; executed in order at the control rate.
  enum class Type { Approach, Rotate, Swipe, Retreat };
  struct Phase {
    Type type;
    double signed_rate = 0.0;  // rad/s for Rotate, m/s for Swipe
    double amount = 0.0;       // rad or m to cover
  };
  std::vector<Phase> phases;
};

inline DemoScript make_script(DemoKind kind, const DemoParams& dp) {
  DemoScript s;
  using T = DemoScript::Phase;
  using PT = DemoScript::Type;
  if (kind == DemoKind::Rotational) {
    // contact, rotate CW about finger x, break, contact, rotate CCW, break
    s.phases = {T{PT::Approach}, T{PT::Rotate, -dp.rot_speed, dp.rot_angle},
                T{PT::Retreat},  T{PT::Approach},
                T{PT::Rotate, dp.rot_speed, dp.rot_angle}, T{PT::Retreat}};
  } else {
    // contact, swipe +x, break, contact, swipe -x, break, repeated twice
    s.phases = {T{PT::Approach}, T{PT::Swipe, dp.swipe_speed, dp.swipe_dist},
                T{PT::Retreat},  T{PT::Approach},
                T{PT::Swipe, -dp.swipe_speed, dp.swipe_dist}, T{PT::Retreat}};
    const auto once = s.phases;
    s.phases.insert(s.phases.end(), once.begin(), once.end());
  }
  return s;
}

}  // namespace detail

/// Run a scripted contact demonstration against a fixed anchor; emits tactile
/// samples at 100 Hz and base-frame twists at 300 Hz.
inline RawDemo scripted_demo(const SkinSurface& surface, DemoKind kind,
                             const DemoParams& dp, std::uint64_t seed) {
  const auto& sp = surface.params();
  if (dp.region < 0 || dp.region > 6) throw TacservError("demo region must be in 0..6");
  const double th_r = sp.theta_max * (0.30 + 0.12 * (dp.region % 3));
  const double ph_r = 2.0 * M_PI * dp.region / 7.0;
  // Trajectory stays on the cap: the rotational sweep must not cross the rim.
  if (th_r + dp.rot_angle * 0.75 > 0.95 * sp.theta_max)
    throw TacservError("demo region parameters put the trajectory off the cap");

  const Vec3 p_r = surface.at(th_r, ph_r);
  const Vec3 n_r = surface.outward_normal(p_r);
  const Vec3 anchor_world = Vec3(0.05, 0.02, 0.03);  // arbitrary fixed point

  FingerPose pose;
  pose.R = Mat3::Identity();
  pose.t = anchor_world - (p_r + dp.clearance * n_r);

  Rng rng(seed);
  const double ctrl_dt = 1.0 / 300.0;
  RawDemo demo;
  demo.kind = kind == DemoKind::Rotational ? "rotational" : "translational";
  demo.region = dp.region;
  demo.seed = seed;

  const auto script = detail::make_script(kind, dp);
  size_t phase_idx = 0;
  double phase_progress = 0.0;
  double retreat_clear_time = 0.0;
  int tick = 0;
  const int max_ticks = 300 * 240;  // hard cap, 4 minutes of sim time

  while (phase_idx < script.phases.size() && tick < max_ticks) {
    const double t = tick * ctrl_dt;
    const Vec3 q = pose.to_finger(anchor_world);
    double th, ph;
    const Vec3 contact = surface.nearest_point(q, &th, &ph);
    const bool inside = surface.implicit(q) < 0.0;
    const double depth = inside ? (q - contact).norm() : -(q - contact).norm();
    const Vec3 nhat = surface.outward_normal(contact);

    const auto& phase = script.phases[phase_idx];
    // Slowly varying depth target: the press gets gently deeper and
    // shallower during contact, so the pressure channel carries a real
    // low-frequency signal instead of just servo jitter.
    const double d_tgt =
        dp.depth_target *
        (1.0 + dp.depth_mod * std::sin(2.0 * M_PI * dp.depth_mod_hz * t));
    ActionTwist a;
    using PT = detail::DemoScript::Type;
    switch (phase.type) {
      case PT::Approach:
        a.v.head<3>() = dp.approach_speed * nhat;
        if (depth >= d_tgt) {
          ++phase_idx;
          phase_progress = 0.0;
        }
        break;
      case PT::Rotate:
        a.v(3) = phase.signed_rate;
        a.v.head<3>() = dp.servo_gain * (d_tgt - depth) * nhat;
        phase_progress += std::abs(phase.signed_rate) * ctrl_dt;
        if (phase_progress >= phase.amount) {
          ++phase_idx;
          phase_progress = 0.0;
        }
        break;
      case PT::Swipe:
        a.v(0) = phase.signed_rate;
        a.v.head<3>() += dp.servo_gain * (d_tgt - depth) * nhat;
        phase_progress += std::abs(phase.signed_rate) * ctrl_dt;
        if (phase_progress >= phase.amount) {
          ++phase_idx;
          phase_progress = 0.0;
        }
        break;
      case PT::Retreat:
        a.v.head<3>() = -dp.approach_speed * nhat;
        if (depth <= -dp.clearance * 0.8) {
          retreat_clear_time += ctrl_dt;
          if (retreat_clear_time >= dp.settle_time) {
            ++phase_idx;
            retreat_clear_time = 0.0;
          }
        }
        break;
    }

    Vec6 xb;
    xb.head<3>() = pose.R * a.linear();
    xb.tail<3>() = pose.R * a.angular();
    demo.twist_time.push_back(t);
    demo.twist_base.push_back(xb);
    if (tick % 3 == 0)
      demo.tactile.push_back(sense(surface, pose, anchor_world,
                                   sp.noise_std > 0 ? &rng : nullptr, t));
    pose = step_pose(pose, a, ctrl_dt);
    ++tick;
  }
  if (phase_idx < script.phases.size())
    throw TacservError("scripted demo did not complete within the time cap");
  return demo;
}

// ---------------------------------------------------------------------------
// Demo CSV serialization
// ---------------------------------------------------------------------------
// Rows at 300 Hz; the tactile columns repeat the most recent 100 Hz sample.
// Since the rates are aligned 3:1, rows 0, 3, 6, ... carry fresh samples and
// both streams reconstruct exactly on load.

inline void save_demo_csv(const RawDemo& demo, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TacservError("cannot write demo csv: " + path);
  out.precision(17);
  const int e = demo.tactile.empty() ? 0 : static_cast<int>(demo.tactile[0].s.size());
  out << "t";
  for (int i = 1; i <= e; ++i) out << ",s_" << i;
  out << ",p,contact_x,contact_y,contact_z,in_contact";
  for (int i = 0; i < 9; ++i) out << ",r" << i / 3 << i % 3;
  out << ",t_x,t_y,t_z";
  for (int i = 0; i < 6; ++i) out << ",twist_b" << i;
  out << "\n# kind=" << demo.kind << " region=" << demo.region
      << " seed=" << demo.seed << "\n";
  for (size_t k = 0; k < demo.twist_base.size(); ++k) {
    const auto& s = demo.tactile[std::min(k / 3, demo.tactile.size() - 1)];
    out << demo.twist_time[k];
    for (int i = 0; i < e; ++i) out << "," << s.s(i);
    out << "," << s.pressure << "," << s.contact.contact_point.x() << ","
        << s.contact.contact_point.y() << "," << s.contact.contact_point.z() << ","
        << (s.contact.in_contact ? 1 : 0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out << "," << s.pose.R(i, j);
    out << "," << s.pose.t.x() << "," << s.pose.t.y() << "," << s.pose.t.z();
    for (int i = 0; i < 6; ++i) out << "," << demo.twist_base[k](i);
    out << "\n";
  }
}

inline RawDemo load_demo_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TacservError("cannot open demo csv: " + path);
  std::string header, meta;
  std::getline(in, header);
  std::getline(in, meta);
  RawDemo demo;
  {
    auto grab = [&meta](const std::string& key) -> std::string {
      const auto pos = meta.find(key + "=");
      if (pos == std::string::npos) return "";
      const auto b = pos + key.size() + 1;
      const auto sp = meta.find(' ', b);
      return meta.substr(b, sp == std::string::npos ? std::string::npos : sp - b);
    };
    demo.kind = grab("kind");
    if (!grab("region").empty()) demo.region = std::stoi(grab("region"));
    if (!grab("seed").empty()) demo.seed = std::stoull(grab("seed"));
  }
  int e = 0;
  {
    std::stringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ','))
      if (col.rfind("s_", 0) == 0) ++e;
  }
  std::string line;
  size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ls(line);
    std::vector<double> v;
    std::string cell;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    const size_t base = 1 + e;
    demo.twist_time.push_back(v[0]);
    Vec6 xb;
    for (int i = 0; i < 6; ++i) xb(i) = v[base + 17 + i];
    demo.twist_base.push_back(xb);
    if (row % 3 == 0) {
      TactileSample s;
      s.timestamp = v[0];
      s.s = VecX(e);
      for (int i = 0; i < e; ++i) s.s(i) = v[1 + i];
      s.pressure = v[base];
      s.contact.contact_point = Vec3(v[base + 1], v[base + 2], v[base + 3]);
      s.contact.in_contact = v[base + 4] != 0.0;
      s.contact.pressure = s.pressure;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s.pose.R(i, j) = v[base + 5 + 3 * i + j];
      s.pose.t = Vec3(v[base + 14], v[base + 15], v[base + 16]);
      demo.tactile.push_back(std::move(s));
    }
    ++row;
  }
  return demo;
}

}  // namespace tacserv
