#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "tacserv/embedding.hpp"
#include "tacserv/skin_sim.hpp"

using namespace tacserv;

namespace {

/// Hand-built model with single linear encoder/decoder layers so latent
/// values are fully controlled by the test.
AutoencoderModel tiny_linear_model() {
  AutoencoderModel m;
  m.enc_spec = MlpSpec::standard({2, 3}, false);
  m.dec_spec = MlpSpec::standard({3, 2}, false);
  Rng rng(0);
  m.enc = MlpParams::init(m.enc_spec, rng);
  m.dec = MlpParams::init(m.dec_spec, rng);
  m.enc.w[0].setZero();
  m.enc.b[0].setZero();
  m.dec.w[0].setZero();
  m.dec.b[0].setZero();
  m.input_scale = 1.0;
  return m;
}

AeSample make_sample(const VecX& s, double p = 0.0) {
  AeSample a;
  a.s = s;
  a.pressure = p;
  return a;
}

Dataset demo_dataset() {
  SkinSurface surf;
  DemoParams dp;
  std::vector<RawDemo> demos = {scripted_demo(surf, DemoKind::Rotational, dp, 50)};
  PipelineConfig cfg;
  cfg.seed = 3;
  return build_dataset(demos, cfg);
}

std::vector<GeodesicBin> bins_for(const Dataset& ds) {
  std::vector<Vec3> pts;
  for (const auto& s : ds.samples) pts.push_back(s.contact);
  // A generous neighbor count keeps each bin's k-NN graph connected even on
  // the sparse contact clouds a single short demo produces.
  return bin_split(pts, static_cast<int>(pts.size()) / 2, 25, 7);
}

}  // namespace

TEST_CASE("mds loss of a single pair is the squared distance residual") {
  AutoencoderModel m = tiny_linear_model();
  m.enc.w[0](0, 0) = 1.0;  // z = (s_0, 0, 0)
  std::vector<AeSample> samples = {make_sample(Vec2(1.0, 0.0)),
                                   make_sample(Vec2(2.0, 0.0))};
  GeodesicBin bin;
  bin.indices = {0, 1};
  bin.distances = MatX::Zero(2, 2);
  bin.distances(0, 1) = bin.distances(1, 0) = 3.0;
  SiamesePair pr;
  pr.bin = 0;
  pr.a = 0;
  pr.b = 1;
  pr.geodesic = 3.0;
  // latent xy distance 1, target 3: (1 - 3)^2 = 4
  REQUIRE(loss_mds(m, {pr}, {bin}, samples) == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("mds loss ignores the z latent dimension") {
  AutoencoderModel m = tiny_linear_model();
  m.enc.w[0](0, 0) = 1.0;
  std::vector<AeSample> samples = {make_sample(Vec2(1.0, 0.0)),
                                   make_sample(Vec2(2.0, 0.0))};
  GeodesicBin bin;
  bin.indices = {0, 1};
  bin.distances = MatX::Zero(2, 2);
  bin.distances(0, 1) = bin.distances(1, 0) = 3.0;
  SiamesePair pr;
  pr.bin = 0;
  pr.a = 0;
  pr.b = 1;
  pr.geodesic = 3.0;
  const double before = loss_mds(m, {pr}, {bin}, samples);
  m.enc.w[0](2, 0) = 5.0;  // move only the pressure dimension
  m.enc.b[0](2) = -1.25;
  REQUIRE(loss_mds(m, {pr}, {bin}, samples) == before);
}

TEST_CASE("mds loss is invariant to planar rigid motions of the embedding") {
  AutoencoderConfig cfg;
  Rng rng(1);
  AutoencoderModel a = AutoencoderModel::init(19, cfg, rng);
  a.enc.training = false;

  // The output layer is linear, so composing it with a rotation+translation
  // of the (x, y) dimensions realizes a rigid motion of the whole embedding.
  AutoencoderModel b = a;
  const double ang = 0.83;
  Eigen::Matrix2d rot;
  rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
  const int last = b.enc_spec.n_layers() - 1;
  b.enc.w[last].topRows<2>() = rot * a.enc.w[last].topRows<2>();
  b.enc.b[last].head<2>() = rot * a.enc.b[last].head<2>() + Vec2(0.7, -1.3);

  Rng srng(2);
  std::vector<AeSample> samples;
  GeodesicBin bin;
  const int n = 12;
  bin.distances = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    VecX s(19);
    for (int k = 0; k < 19; ++k) s(k) = gaussian(srng);
    samples.push_back(make_sample(s));
    bin.indices.push_back(i);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      bin.distances(i, j) = bin.distances(j, i) = uniform(srng, 0.1, 2.0);
  Rng prng(3);
  const auto pairs = sample_siamese_pairs({bin}, 64, prng);
  const double la = loss_mds(a, pairs, {bin}, samples);
  const double lb = loss_mds(b, pairs, {bin}, samples);
  REQUIRE(lb == Catch::Approx(la).epsilon(1e-9));
}

TEST_CASE("pressure loss of one sample is the squared pressure error") {
  AutoencoderModel m = tiny_linear_model();  // encodes everything to zero
  std::vector<AeSample> samples = {make_sample(Vec2(0.5, -0.5), 2.0)};
  // p = 2, z_c = 0: (2 - 0)^2 = 4
  REQUIRE(loss_cdp(m, samples) == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("reconstruction loss is the squared reconstruction error") {
  AutoencoderModel m = tiny_linear_model();
  const Vec2 s(0.3, -0.4);
  m.dec.b[0] = s + Vec2(1.2, 1.6);  // ||s_hat - s|| = 2
  REQUIRE(loss_aer(m, {make_sample(s)}) == Catch::Approx(4.0).margin(1e-12));
}

TEST_CASE("encoding is deterministic and leaves the mode flags untouched") {
  AutoencoderConfig cfg;
  Rng rng(4);
  AutoencoderModel m = AutoencoderModel::init(19, cfg, rng);
  m.enc.training = true;  // encode must not be affected by the flag
  VecX s(19);
  for (int k = 0; k < 19; ++k) s(k) = 0.1 * k - 1.0;
  const LatentState z1 = encode(m, s);
  const LatentState z2 = encode(m, s);
  REQUIRE((z1 - z2).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(z1.allFinite());
  REQUIRE(m.enc.training);
  const VecX rec = decode(m, z1);
  REQUIRE(rec.size() == 19);
  REQUIRE(rec.allFinite());
  // Vectorized kernels may round differently for different batch widths, so
  // batch and single-column encodes agree only to machine precision.
  const MatX zb = encode_batch(m, s.replicate(1, 4));
  for (int j = 0; j < 4; ++j)
    REQUIRE((zb.col(j) - z1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a short training run reduces the loss deterministically") {
  const Dataset ds = demo_dataset();
  const auto bins = bins_for(ds);
  AutoencoderConfig cfg;
  cfg.iterations = 400;
  cfg.trace_every = 50;
  std::vector<AeLossTrace> tr1, tr2;
  AutoencoderModel m1 = train_autoencoder(ds, bins, cfg, 9, &tr1);
  AutoencoderModel m2 = train_autoencoder(ds, bins, cfg, 9, &tr2);
  REQUIRE(tr1.size() == tr2.size());
  for (size_t i = 0; i < tr1.size(); ++i) {
    REQUIRE(tr1[i].iter == tr2[i].iter);
    REQUIRE(tr1[i].total == tr2[i].total);
  }
  REQUIRE(tr1.back().total < tr1.front().total);

  // The two models are bitwise identical.
  VecX s = ds.samples[0].s;
  REQUIRE((encode(m1, s) - encode(m2, s)).cwiseAbs().maxCoeff() == 0.0);

  // Checkpoint round trip preserves the encoder exactly.
  const std::string path = std::filesystem::temp_directory_path() / "tacserv_ae.bin";
  save_autoencoder(m1, path);
  AutoencoderModel back = load_autoencoder(path);
  REQUIRE(back.input_scale == m1.input_scale);
  for (const auto& smp : {ds.samples[0], ds.samples[1], ds.samples[2]}) {
    REQUIRE((encode(back, smp.s) - encode(m1, smp.s)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((decode(back, encode(back, smp.s)) - decode(m1, encode(m1, smp.s)))
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
  std::remove(path.c_str());

  // Embedding export has the scatter columns and one row per sample.
  const std::string csv = std::filesystem::temp_directory_path() / "tacserv_emb.csv";
  export_embedding_csv(m1, ds.samples, csv);
  const auto t = CsvTable::load(csv);
  REQUIRE(t.columns == std::vector<std::string>{"x", "y", "argmax_electrode"});
  REQUIRE(t.rows.size() == ds.samples.size());
  std::remove(csv.c_str());
}

TEST_CASE("an exploding run raises a divergence error") {
  const Dataset ds = demo_dataset();
  const auto bins = bins_for(ds);
  AutoencoderConfig cfg;
  cfg.iterations = 400;
  cfg.lr = 1e160;  // guaranteed numeric blow-up
  REQUIRE_THROWS_AS(train_autoencoder(ds, bins, cfg, 1), DivergenceError);
}

TEST_CASE("the structureless ablation trains with both extra losses off") {
  const Dataset ds = demo_dataset();
  const auto bins = bins_for(ds);
  AutoencoderConfig cfg;
  cfg.iterations = 100;
  cfg.use_mds = false;
  cfg.use_cdp = false;
  std::vector<AeLossTrace> tr;
  train_autoencoder(ds, bins, cfg, 2, &tr);
  for (const auto& t : tr) {
    REQUIRE(t.mds == 0.0);
    REQUIRE(t.cdp == 0.0);
  }
}
