#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/csv.hpp"
#include "tacserv/datapipe.hpp"
#include "tacserv/geodesy.hpp"
#include "tacserv/nn.hpp"

namespace tacserv {

/// 3-vector latent state: (x, y) MDS map coordinates + contact-pressure z.
using LatentState = Vec3;

struct AutoencoderConfig {
  double w_aer = 100.0;
  double w_mds = 5e7;
  double w_cdp = 2e7;
  int batch_size = 128;       // siamese pairs per iteration
  long iterations = 20000;    // desk-scale default; the reference run used 200k
  double lr = 1e-3;
  double lr_final = 1e-5;     // exponential decay target at the last iteration
  bool use_mds = true;        // both off = the structureless-latent ablation
  bool use_cdp = true;
  bool batch_norm = true;
  int trace_every = 100;
};

struct AutoencoderModel {
  MlpSpec enc_spec, dec_spec;
  MlpParams enc, dec;
  double input_scale = 1.0;   // global max |s| over the training set
  // Meters per network latent unit. The geodesic/pressure targets are a few
  // millimeters; letting the network work in O(1) units keeps RMSProp's
  // near-constant step size small relative to the output scale.
  double latent_scale = 1.0;
  AutoencoderConfig cfg;

  static AutoencoderModel init(int n_electrodes, const AutoencoderConfig& cfg,
                               Rng& rng) {
    AutoencoderModel m;
    m.cfg = cfg;
    m.enc_spec = MlpSpec::standard({n_electrodes, 19, 12, 6, 3}, cfg.batch_norm);
    m.dec_spec = MlpSpec::standard({3, 6, 12, 19, n_electrodes}, cfg.batch_norm);
    m.enc = MlpParams::init(m.enc_spec, rng);
    m.dec = MlpParams::init(m.dec_spec, rng);
    return m;
  }
};

/// Encode a tactile vector (inference mode).
inline LatentState encode(AutoencoderModel& model, const VecX& s) {
  const bool was = model.enc.training;
  model.enc.training = false;
  const MatX z = forward(model.enc, model.enc_spec, s / model.input_scale);
  model.enc.training = was;
  return z.col(0) * model.latent_scale;
}

/// Decode a latent state back to a tactile vector (inference mode).
inline VecX decode(AutoencoderModel& model, const LatentState& z) {
  const bool was = model.dec.training;
  model.dec.training = false;
  const MatX s = forward(model.dec, model.dec_spec, MatX(z / model.latent_scale));
  model.dec.training = was;
  return s.col(0) * model.input_scale;
}

/// Batch encode (columns are samples), inference mode.
inline MatX encode_batch(AutoencoderModel& model, const MatX& s) {
  const bool was = model.enc.training;
  model.enc.training = false;
  const MatX z = forward(model.enc, model.enc_spec, s / model.input_scale);
  model.enc.training = was;
  return z * model.latent_scale;
}

// ---------------------------------------------------------------------------
// Losses (reporting form; the training loop fuses these with their gradients)
// ---------------------------------------------------------------------------

/// MDS loss over siamese pairs: only the x,y latent dimensions enter.
inline double loss_mds(AutoencoderModel& model, const std::vector<SiamesePair>& pairs,
                       const std::vector<GeodesicBin>& bins,
                       const std::vector<AeSample>& samples) {
  double loss = 0.0;
  for (const auto& pr : pairs) {
    const auto& bin = bins[pr.bin];
    const LatentState za = encode(model, samples[bin.indices[pr.a]].s);
    const LatentState zb = encode(model, samples[bin.indices[pr.b]].s);
    const double d = (za.head<2>() - zb.head<2>()).norm();
    loss += (d - pr.geodesic) * (d - pr.geodesic);
  }
  return loss;
}

/// Contact-pressure loss: squared error between p and the z latent dimension.
inline double loss_cdp(AutoencoderModel& model, const std::vector<AeSample>& samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const LatentState z = encode(model, s.s);
    loss += (s.pressure - z(2)) * (s.pressure - z(2));
  }
  return loss;
}

/// Auto-encoder reconstruction loss.
inline double loss_aer(AutoencoderModel& model, const std::vector<AeSample>& samples) {
  double loss = 0.0;
  for (const auto& s : samples) {
    const VecX rec = decode(model, encode(model, s.s));
    loss += (rec - s.s).squaredNorm();
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AeLossTrace {
  long iter = 0;
  double aer = 0.0, mds = 0.0, cdp = 0.0, total = 0.0;
};

inline void save_traces(const std::vector<AeLossTrace>& traces, const std::string& path) {
  CsvTable t;
  t.columns = {"iter", "L_AER", "L_MDS", "L_CDP", "total"};
  for (const auto& tr : traces)
    t.rows.push_back({double(tr.iter), tr.aer, tr.mds, tr.cdp, tr.total});
  t.save(path);
}

/// Minimize w_AER*L_AER + w_MDS*L_MDS + w_CDP*L_CDP with RMSProp. The two
/// siamese branch evaluations share parameters by construction: both pair
/// members go through the same forward batch.
inline AutoencoderModel train_autoencoder(const Dataset& ds,
                                          const std::vector<GeodesicBin>& bins,
                                          const AutoencoderConfig& cfg,
                                          std::uint64_t seed,
                                          std::vector<AeLossTrace>* traces = nullptr) {
  if (cfg.iterations <= 0 || cfg.lr <= 0.0 || cfg.batch_size <= 0)
    throw TacservError("train_autoencoder: iterations, lr and batch_size must be positive");
  Rng rng(seed);
  const int e = static_cast<int>(ds.samples[0].s.size());
  AutoencoderModel model = AutoencoderModel::init(e, cfg, rng);

  double scale = 0.0;
  for (const auto& s : ds.samples)
    if (s.split == Train) scale = std::max(scale, s.s.cwiseAbs().maxCoeff());
  if (scale <= 0.0) throw TacservError("train_autoencoder: degenerate input scale");
  model.input_scale = scale;

  // Latent unit: the largest geodesic target (pressures are smaller still).
  double zscale = 0.0;
  for (const auto& b : bins) zscale = std::max(zscale, b.distances.maxCoeff());
  for (const auto& s : ds.samples)
    if (s.split == Train) zscale = std::max(zscale, std::abs(s.pressure));
  if (zscale > 0.0) model.latent_scale = zscale;
  const double ls = model.latent_scale;

  // Per-bin positions that belong to the training split.
  std::vector<std::vector<int>> train_members(bins.size());
  for (size_t b = 0; b < bins.size(); ++b)
    for (size_t k = 0; k < bins[b].indices.size(); ++k)
      if (ds.samples[bins[b].indices[k]].split == Train)
        train_members[b].push_back(static_cast<int>(k));

  RmsPropState opt_enc = RmsPropState::init(model.enc, cfg.lr);
  RmsPropState opt_dec = RmsPropState::init(model.dec, cfg.lr);
  model.enc.training = true;
  model.dec.training = true;

  const int k = cfg.batch_size;
  // RMSProp steps have near-constant magnitude (~lr/sqrt(1-rho)), so an
  // exponential learning-rate decay is what actually shrinks the residual
  // oscillation floor by the end of the budget.
  const double lr_ratio = cfg.lr_final / cfg.lr;
  for (long iter = 0; iter < cfg.iterations; ++iter) {
    const double frac = cfg.iterations > 1 ? double(iter) / (cfg.iterations - 1) : 1.0;
    opt_enc.lr = opt_dec.lr = cfg.lr * std::pow(lr_ratio, frac);
    const auto pairs = sample_siamese_pairs(bins, k, rng, &train_members);
    MatX s_batch(e, 2 * k);
    VecX p_batch(2 * k);
    for (int j = 0; j < k; ++j) {
      const auto& bin = bins[pairs[j].bin];
      const auto& sa = ds.samples[bin.indices[pairs[j].a]];
      const auto& sb = ds.samples[bin.indices[pairs[j].b]];
      s_batch.col(j) = sa.s / scale;
      s_batch.col(k + j) = sb.s / scale;
      p_batch(j) = sa.pressure;
      p_batch(k + j) = sb.pressure;
    }

    ForwardCache enc_cache, dec_cache;
    const MatX z = forward(model.enc, model.enc_spec, s_batch, &enc_cache);
    const MatX s_hat = forward(model.dec, model.dec_spec, z, &dec_cache);

    double l_aer = 0.0, l_mds = 0.0, l_cdp = 0.0;
    MatX dz = MatX::Zero(3, 2 * k);

    const MatX diff = s_hat - s_batch;
    l_aer = diff.squaredNorm();
    MlpGrads g_dec = MlpGrads::zeros_like(model.dec);
    dz += backward(model.dec, model.dec_spec, dec_cache, 2.0 * cfg.w_aer * diff, g_dec);

    if (cfg.use_mds) {
      for (int j = 0; j < k; ++j) {
        const Vec2 dxy = z.block<2, 1>(0, j) - z.block<2, 1>(0, k + j);
        const double d = std::max(dxy.norm(), 1e-12);
        const double r = ls * d - pairs[j].geodesic;
        l_mds += r * r;
        const Vec2 grad = 2.0 * cfg.w_mds * r * ls * dxy / d;
        dz.block<2, 1>(0, j) += grad;
        dz.block<2, 1>(0, k + j) -= grad;
      }
    }
    if (cfg.use_cdp) {
      for (int j = 0; j < 2 * k; ++j) {
        const double r = ls * z(2, j) - p_batch(j);
        l_cdp += r * r;
        dz(2, j) += 2.0 * cfg.w_cdp * r * ls;
      }
    }

    MlpGrads g_enc = MlpGrads::zeros_like(model.enc);
    backward(model.enc, model.enc_spec, enc_cache, dz, g_enc);
    rmsprop_step(model.enc, g_enc, opt_enc);
    rmsprop_step(model.dec, g_dec, opt_dec);

    if (iter % cfg.trace_every == 0 || iter + 1 == cfg.iterations) {
      const double total = cfg.w_aer * l_aer + cfg.w_mds * l_mds + cfg.w_cdp * l_cdp;
      if (!std::isfinite(total))
        throw DivergenceError("train_autoencoder: loss diverged (NaN/inf) at iter " +
                           std::to_string(iter));
      if (traces) traces->push_back({iter, l_aer, l_mds, l_cdp, total});
    }
  }
  model.enc.training = false;
  model.dec.training = false;

  // Calibrate the batch-norm running statistics over the full training split
  // so inference reproduces the training-mode behavior of the final weights.
  int n_train = 0;
  for (const auto& s : ds.samples)
    if (s.split == Train) ++n_train;
  MatX all(e, n_train);
  int col = 0;
  for (const auto& s : ds.samples)
    if (s.split == Train) all.col(col++) = s.s / scale;
  calibrate_bn(model.enc, model.enc_spec, all);
  MlpParams enc_copy = model.enc;
  const MatX z_all = forward(enc_copy, model.enc_spec, all);
  calibrate_bn(model.dec, model.dec_spec, z_all);
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint + embedding export
// ---------------------------------------------------------------------------

inline void save_autoencoder(const AutoencoderModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TacservError("cannot write checkpoint: " + path);
  detail::put_u64(out, 0x5443564145303031ull);  // "TCVAE001"
  const double meta[7] = {model.input_scale, model.latent_scale,
                          model.cfg.w_aer,   model.cfg.w_mds,
                          model.cfg.w_cdp,   model.cfg.use_mds ? 1.0 : 0.0,
                          model.cfg.use_cdp ? 1.0 : 0.0};
  out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
  save_mlp(out, model.enc_spec, model.enc);
  save_mlp(out, model.dec_spec, model.dec);
}

inline AutoencoderModel load_autoencoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TacservError("cannot open checkpoint: " + path);
  if (detail::get_u64(in) != 0x5443564145303031ull)
    throw TacservError("bad autoencoder checkpoint magic");
  double meta[7];
  in.read(reinterpret_cast<char*>(meta), sizeof(meta));
  AutoencoderModel m;
  m.input_scale = meta[0];
  m.latent_scale = meta[1];
  m.cfg.w_aer = meta[2];
  m.cfg.w_mds = meta[3];
  m.cfg.w_cdp = meta[4];
  m.cfg.use_mds = meta[5] != 0.0;
  m.cfg.use_cdp = meta[6] != 0.0;
  load_mlp(in, m.enc_spec, m.enc);
  load_mlp(in, m.dec_spec, m.dec);
  m.enc.training = false;
  m.dec.training = false;
  return m;
}

/// xy-embedding scatter with argmax-electrode labels (Fig.-3-style export).
inline void export_embedding_csv(AutoencoderModel& model,
                                 const std::vector<AeSample>& samples,
                                 const std::string& path) {
  CsvTable t;
  t.columns = {"x", "y", "argmax_electrode"};
  for (const auto& s : samples) {
    const LatentState z = encode(model, s.s);
    t.rows.push_back({z(0), z(1), double(s.argmax_electrode)});
  }
  t.save(path);
}

}  // namespace tacserv
