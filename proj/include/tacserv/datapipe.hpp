#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/config.hpp"
#include "tacserv/csv.hpp"
#include "tacserv/skin_sim.hpp"

namespace tacserv {

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Zero-phase second-order Butterworth low-pass: one biquad applied forward
/// and backward over an odd-reflection padded copy of the signal.
inline std::vector<double> lowpass(const std::vector<double>& x, double cutoff_hz,
                                   double fs_hz) {
  const int n = static_cast<int>(x.size());
  const int pad = static_cast<int>(std::lround(3.0 * fs_hz / cutoff_hz));
  if (n < 4 || pad < 3 || pad > n - 1)
    throw TacservError("lowpass: stream shorter than the filter warm-up");

  const double k = std::tan(M_PI * cutoff_hz / fs_hz);
  const double norm = 1.0 / (1.0 + std::sqrt(2.0) * k + k * k);
  const double b0 = k * k * norm;
  const double b1 = 2.0 * b0;
  const double b2 = b0;
  const double a1 = 2.0 * (k * k - 1.0) * norm;
  const double a2 = (1.0 - std::sqrt(2.0) * k + k * k) * norm;

  std::vector<double> ext(n + 2 * pad);
  for (int i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  for (int i = 0; i < n; ++i) ext[pad + i] = x[i];
  for (int i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  auto run = [&](std::vector<double>& v) {
    double x1 = v[0], x2 = v[0];
    double y1 = v[0], y2 = v[0];  // DC-consistent start state
    for (double& s : v) {
      const double x0 = s;
      const double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x0;
      y2 = y1;
      y1 = y0;
      s = y0;
    }
  };
  run(ext);
  std::reverse(ext.begin(), ext.end());
  run(ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + pad, ext.begin() + pad + n};
}

/// Contact pressure: negated mean of the electrode vector.
inline double pressure_of(const VecX& s) { return -s.mean(); }

/// Index ranges [start, end) where (p - threshold) is positive; boundaries at
/// the sign changes. Segments shorter than min_len are dropped.
inline std::vector<std::pair<int, int>> segment_contacts(
    const std::vector<double>& pressure, double threshold, int min_len = 10) {
  std::vector<std::pair<int, int>> segments;
  const int n = static_cast<int>(pressure.size());
  int start = -1;
  for (int i = 0; i < n; ++i) {
    const bool above = pressure[i] - threshold > 0.0;
    if (above && start < 0) start = i;
    if (!above && start >= 0) {
      if (i - start >= min_len) segments.emplace_back(start, i);
      start = -1;
    }
  }
  if (start >= 0 && n - start >= min_len) segments.emplace_back(start, n);
  return segments;
}

// ---------------------------------------------------------------------------
// Twist frame conversion
// ---------------------------------------------------------------------------

inline Vec6 base_to_ee_twist(const Vec6& xb, const Mat3& r_e) {
  Vec6 xe;
  xe.head<3>() = r_e.transpose() * xb.head<3>();
  xe.tail<3>() = r_e.transpose() * xb.tail<3>();
  return xe;
}

inline Vec6 ee_to_base_twist(const Vec6& xe, const Mat3& r_e) {
  Vec6 xb;
  xb.head<3>() = r_e * xe.head<3>();
  xb.tail<3>() = r_e * xe.tail<3>();
  return xb;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

enum Split : int { Train = 0, Val = 1, Test = 2 };

struct AeSample {
  VecX s;              // filtered, offset-subtracted electrode vector
  double pressure = 0.0;
  Vec3 contact = Vec3::Zero();  // ground-truth 3D contact point, finger frame
  int argmax_electrode = 0;     // |s| argmax, for the embedding scatter export
  int split = Train;
};

struct TransitionTuple {
  VecX s_prev, s_curr, s_next;
  Vec6 a_prev = Vec6::Zero(), a_curr = Vec6::Zero();
  double dt = 0.0;
  int split = Train;
  // Optional one-step lookahead so chained evaluation can run to length 3.
  bool has_ext = false;
  VecX s_next2;
  Vec6 a_next = Vec6::Zero();
};

struct Dataset {
  std::vector<AeSample> samples;
  std::vector<TransitionTuple> tuples;
  double contact_threshold = 0.0;
};

struct PipelineConfig {
  double cutoff_hz = 1.0;
  double tactile_hz = 100.0;
  double threshold_frac = 0.05;   // of peak filtered pressure
  double threshold_abs = -1.0;    // overrides frac when >= 0
  int min_segment_len = 10;
  std::vector<int> strides = {29, 30, 31, 32, 33};
  int ae_target = 5000;           // AE sample budget (<=0: keep all)
  double train_frac = 0.85, val_frac = 0.075;
  bool window_midpoint_pose = false;  // which R_e the averaging window uses
  std::uint64_t seed = 0;
};

struct ResampledStep {
  int tactile_index = 0;  // into the source stream
  Vec6 action_ee = Vec6::Zero();
  double dt = 0.0;
};

/// Subsample a contact segment by `stride` tactile samples; all 300 Hz base
/// twists between consecutive kept samples are averaged, then converted to the
/// end-effector frame.
inline std::vector<ResampledStep> resample_with_action_average(
    const RawDemo& demo, int seg_start, int seg_end, int stride,
    double tactile_hz = 100.0, bool midpoint_pose = false) {
  std::vector<ResampledStep> out;
  const int twist_per_sample = 3;  // 300 Hz vs 100 Hz
  for (int t = seg_start; t + stride < seg_end; t += stride) {
    const int w0 = t * twist_per_sample;
    const int w1 = std::min<int>((t + stride) * twist_per_sample,
                                 static_cast<int>(demo.twist_base.size()));
    if (w1 <= w0) break;
    Vec6 mean = Vec6::Zero();
    for (int w = w0; w < w1; ++w) mean += demo.twist_base[w];
    mean /= double(w1 - w0);
    const int pose_idx = midpoint_pose ? t + stride / 2 : t;
    const Mat3& r_e = demo.tactile[pose_idx].pose.R;
    out.push_back({t, base_to_ee_twist(mean, r_e), stride / tactile_hz});
  }
  // Final kept sample of the segment (no outgoing action).
  if (!out.empty()) {
    const int last = out.back().tactile_index + stride;
    if (last < seg_end) out.push_back({last, Vec6::Zero(), 0.0});
  }
  return out;
}

/// Full pipeline: low-pass filter, contact segmentation, per-segment
/// resampling at the training strides, threshold exclusion, tuple assembly,
/// and a deterministic split.
inline Dataset build_dataset(const std::vector<RawDemo>& demos,
                             const PipelineConfig& cfg) {
  if (demos.empty()) throw TacservError("build_dataset: no demos");
  const int e = static_cast<int>(demos[0].tactile[0].s.size());

  // Pass 1: filter every demo's electrode channels; pressure follows exactly
  // since the filter is linear and p = -mean(s).
  struct Filtered {
    std::vector<VecX> s;
    std::vector<double> p;
  };
  std::vector<Filtered> filtered(demos.size());
  double peak_pressure = 0.0;
  for (size_t d = 0; d < demos.size(); ++d) {
    const auto& demo = demos[d];
    const int n = static_cast<int>(demo.tactile.size());
    std::vector<std::vector<double>> channels(e, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < e; ++c) channels[c][i] = demo.tactile[i].s(c);
    for (int c = 0; c < e; ++c)
      channels[c] = lowpass(channels[c], cfg.cutoff_hz, cfg.tactile_hz);
    filtered[d].s.resize(n, VecX(e));
    filtered[d].p.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < e; ++c) filtered[d].s[i](c) = channels[c][i];
      filtered[d].p[i] = pressure_of(filtered[d].s[i]);
      peak_pressure = std::max(peak_pressure, filtered[d].p[i]);
    }
  }
  const double threshold =
      cfg.threshold_abs >= 0.0 ? cfg.threshold_abs : cfg.threshold_frac * peak_pressure;

  Dataset ds;
  ds.contact_threshold = threshold;

  // Pass 2: segment, pool AE samples, assemble tuples.
  for (size_t d = 0; d < demos.size(); ++d) {
    const auto& demo = demos[d];
    const auto segments =
        segment_contacts(filtered[d].p, threshold, cfg.min_segment_len);
    for (auto [s0, s1] : segments) {
      for (int i = s0; i < s1; ++i) {
        AeSample a;
        a.s = filtered[d].s[i];
        a.pressure = filtered[d].p[i];
        a.contact = demo.tactile[i].contact.contact_point;
        int am = 0;
        a.s.cwiseAbs().maxCoeff(&am);
        a.argmax_electrode = am;
        ds.samples.push_back(std::move(a));
      }
      for (int stride : cfg.strides) {
        const auto steps = resample_with_action_average(
            demo, s0, s1, stride, cfg.tactile_hz, cfg.window_midpoint_pose);
        for (size_t k = 2; k < steps.size(); ++k) {
          TransitionTuple tup;
          tup.s_prev = filtered[d].s[steps[k - 2].tactile_index];
          tup.a_prev = steps[k - 2].action_ee;
          tup.s_curr = filtered[d].s[steps[k - 1].tactile_index];
          tup.a_curr = steps[k - 1].action_ee;
          tup.s_next = filtered[d].s[steps[k].tactile_index];
          tup.dt = steps[k - 1].dt;
          if (k + 1 < steps.size()) {
            tup.has_ext = true;
            tup.a_next = steps[k].action_ee;
            tup.s_next2 = filtered[d].s[steps[k + 1].tactile_index];
          }
          ds.tuples.push_back(std::move(tup));
        }
      }
    }
  }
  if (ds.samples.empty())
    throw TacservError("build_dataset: no in-contact data above threshold");

  Rng rng(cfg.seed);
  // AE sample budget: deterministic uniform thinning.
  if (cfg.ae_target > 0 && static_cast<int>(ds.samples.size()) > cfg.ae_target) {
    std::vector<int> keep(ds.samples.size());
    std::iota(keep.begin(), keep.end(), 0);
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(cfg.ae_target);
    std::sort(keep.begin(), keep.end());
    std::vector<AeSample> kept;
    kept.reserve(keep.size());
    for (int i : keep) kept.push_back(std::move(ds.samples[i]));
    ds.samples = std::move(kept);
  }

  auto assign_split = [&rng, &cfg]() {
    const double u = uniform(rng, 0.0, 1.0);
    if (u < cfg.train_frac) return Train;
    if (u < cfg.train_frac + cfg.val_frac) return Val;
    return Test;
  };
  for (auto& s : ds.samples) s.split = assign_split();
  for (auto& t : ds.tuples) t.split = assign_split();
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset directory IO: ae_samples.csv, tuples.csv, split.csv, manifest
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const PipelineConfig& cfg,
                         const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int e = static_cast<int>(ds.samples[0].s.size());

  CsvTable ae;
  for (int i = 1; i <= e; ++i) ae.columns.push_back("s_" + std::to_string(i));
  ae.columns.insert(ae.columns.end(),
                    {"p", "contact_x", "contact_y", "contact_z", "argmax_e"});
  for (const auto& s : ds.samples) {
    std::vector<double> row;
    for (int i = 0; i < e; ++i) row.push_back(s.s(i));
    row.insert(row.end(), {s.pressure, s.contact.x(), s.contact.y(), s.contact.z(),
                           double(s.argmax_electrode)});
    ae.rows.push_back(std::move(row));
  }
  ae.save(dir + "/ae_samples.csv");

  CsvTable tup;
  auto svec = [&tup, e](const std::string& tag) {
    for (int i = 1; i <= e; ++i) tup.columns.push_back(tag + "_" + std::to_string(i));
  };
  svec("sp");
  svec("sc");
  svec("sn");
  for (int i = 0; i < 6; ++i) tup.columns.push_back("ap_" + std::to_string(i));
  for (int i = 0; i < 6; ++i) tup.columns.push_back("ac_" + std::to_string(i));
  tup.columns.push_back("dt");
  tup.columns.push_back("has_ext");
  svec("sn2");
  for (int i = 0; i < 6; ++i) tup.columns.push_back("an_" + std::to_string(i));
  for (const auto& t : ds.tuples) {
    std::vector<double> row;
    for (int i = 0; i < e; ++i) row.push_back(t.s_prev(i));
    for (int i = 0; i < e; ++i) row.push_back(t.s_curr(i));
    for (int i = 0; i < e; ++i) row.push_back(t.s_next(i));
    for (int i = 0; i < 6; ++i) row.push_back(t.a_prev(i));
    for (int i = 0; i < 6; ++i) row.push_back(t.a_curr(i));
    row.push_back(t.dt);
    row.push_back(t.has_ext ? 1.0 : 0.0);
    for (int i = 0; i < e; ++i) row.push_back(t.has_ext ? t.s_next2(i) : 0.0);
    for (int i = 0; i < 6; ++i) row.push_back(t.has_ext ? t.a_next(i) : 0.0);
    tup.rows.push_back(std::move(row));
  }
  tup.save(dir + "/tuples.csv");

  CsvTable split;
  split.columns = {"kind", "index", "split"};  // kind 0 = sample, 1 = tuple
  for (size_t i = 0; i < ds.samples.size(); ++i)
    split.rows.push_back({0.0, double(i), double(ds.samples[i].split)});
  for (size_t i = 0; i < ds.tuples.size(); ++i)
    split.rows.push_back({1.0, double(i), double(ds.tuples[i].split)});
  split.save(dir + "/split.csv");

  KeyValueConfig manifest;
  manifest.set("contact_threshold", ds.contact_threshold);
  manifest.set("cutoff_hz", cfg.cutoff_hz);
  manifest.set("tactile_hz", cfg.tactile_hz);
  manifest.set("seed", static_cast<long>(cfg.seed));
  manifest.set("n_samples", static_cast<long>(ds.samples.size()));
  manifest.set("n_tuples", static_cast<long>(ds.tuples.size()));
  std::string strides;
  for (int s : cfg.strides) strides += (strides.empty() ? "" : " ") + std::to_string(s);
  manifest.set("strides", strides);
  manifest.save(dir + "/manifest.txt");
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const auto manifest = KeyValueConfig::load(dir + "/manifest.txt");
  ds.contact_threshold = manifest.get_double("contact_threshold", 0.0);

  const auto ae = CsvTable::load(dir + "/ae_samples.csv");
  const int e = ae.col_index("p");
  for (const auto& row : ae.rows) {
    AeSample s;
    s.s = VecX(e);
    for (int i = 0; i < e; ++i) s.s(i) = row[i];
    s.pressure = row[e];
    s.contact = Vec3(row[e + 1], row[e + 2], row[e + 3]);
    s.argmax_electrode = static_cast<int>(row[e + 4]);
    ds.samples.push_back(std::move(s));
  }
  const auto tup = CsvTable::load(dir + "/tuples.csv");
  for (const auto& row : tup.rows) {
    TransitionTuple t;
    t.s_prev = VecX(e);
    t.s_curr = VecX(e);
    t.s_next = VecX(e);
    for (int i = 0; i < e; ++i) t.s_prev(i) = row[i];
    for (int i = 0; i < e; ++i) t.s_curr(i) = row[e + i];
    for (int i = 0; i < e; ++i) t.s_next(i) = row[2 * e + i];
    for (int i = 0; i < 6; ++i) t.a_prev(i) = row[3 * e + i];
    for (int i = 0; i < 6; ++i) t.a_curr(i) = row[3 * e + 6 + i];
    t.dt = row[3 * e + 12];
    t.has_ext = row[3 * e + 13] != 0.0;
    if (t.has_ext) {
      t.s_next2 = VecX(e);
      for (int i = 0; i < e; ++i) t.s_next2(i) = row[3 * e + 14 + i];
      for (int i = 0; i < 6; ++i) t.a_next(i) = row[4 * e + 14 + i];
    }
    ds.tuples.push_back(std::move(t));
  }
  const auto split = CsvTable::load(dir + "/split.csv");
  for (const auto& row : split.rows) {
    const int idx = static_cast<int>(row[1]);
    if (row[0] == 0.0)
      ds.samples[idx].split = static_cast<int>(row[2]);
    else
      ds.tuples[idx].split = static_cast<int>(row[2]);
  }
  return ds;
}

}  // namespace tacserv
