// Command-line front end: data generation, training, evaluation, servoing and
// the full desk-scale reproduction pipeline.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tacserv/datapipe.hpp"
#include "tacserv/dynamics.hpp"
#include "tacserv/embedding.hpp"
#include "tacserv/eval.hpp"
#include "tacserv/geodesy.hpp"
#include "tacserv/repro.hpp"
#include "tacserv/skin_sim.hpp"
#include "tacserv/svg.hpp"

namespace fs = std::filesystem;
using namespace tacserv;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCheckFailure = 4;

KeyValueConfig load_optional_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

PipelineConfig pipeline_from(const KeyValueConfig& cfg) {
  PipelineConfig p;
  p.cutoff_hz = cfg.get_double("cutoff_hz", p.cutoff_hz);
  p.tactile_hz = cfg.get_double("tactile_hz", p.tactile_hz);
  p.threshold_frac = cfg.get_double("threshold_frac", p.threshold_frac);
  p.threshold_abs = cfg.get_double("threshold_abs", p.threshold_abs);
  p.min_segment_len = static_cast<int>(cfg.get_int("min_segment_len", p.min_segment_len));
  p.ae_target = static_cast<int>(cfg.get_int("ae_target", p.ae_target));
  p.train_frac = cfg.get_double("train_frac", p.train_frac);
  p.val_frac = cfg.get_double("val_frac", p.val_frac);
  p.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  if (cfg.has("strides")) {
    p.strides.clear();
    std::istringstream ss(cfg.require_str("strides"));
    int v;
    while (ss >> v) p.strides.push_back(v);
  }
  return p;
}

std::vector<RawDemo> load_demo_dir(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("demo_", 0) == 0 && entry.path().extension() == ".csv")
      paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw TacservError("no demo_*.csv files in " + dir);
  std::vector<RawDemo> demos;
  for (const auto& p : paths) demos.push_back(load_demo_csv(p));
  return demos;
}

void plot_trace_csv(const std::string& csv_path, const std::string& svg_path,
                    const std::string& title) {
  const auto t = CsvTable::load(csv_path);
  SvgPlot plot;
  plot.title = title;
  for (size_t c = 1; c < t.columns.size(); ++c) {
    SvgPlot::Series s;
    s.label = t.columns[c];
    s.color = svg_palette(static_cast<int>(c - 1));
    for (const auto& row : t.rows) {
      s.x.push_back(row[0]);
      s.y.push_back(std::log10(std::max(row[c], 1e-300)));
    }
    plot.series.push_back(std::move(s));
  }
  plot.title += " (log10)";
  plot.save(svg_path);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = load_optional_config(config_path);
  fs::create_directories(out_dir);
  SurfaceParams sp =
      config_path.empty() ? SurfaceParams{} : SurfaceParams::load(config_path);
  const int n_demos = static_cast<int>(cfg.get_int("n_demos", 21));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 42));
  SkinSurface surface(sp);
  for (int d = 0; d < n_demos; ++d) {
    DemoParams dp;
    dp.region = d % 7;
    const DemoKind kind = d % 2 == 0 ? DemoKind::Rotational : DemoKind::Translational;
    const RawDemo demo = scripted_demo(surface, kind, dp, seed + d);
    std::ostringstream name;
    name << out_dir << "/demo_" << std::setw(3) << std::setfill('0') << d << ".csv";
    save_demo_csv(demo, name.str());
    std::cout << "wrote " << name.str() << " (" << demo.tactile.size()
              << " tactile samples)\n";
  }
  sp.save(out_dir + "/surface.txt");
  KeyValueConfig manifest;
  manifest.set("n_demos", static_cast<long>(n_demos));
  manifest.set("seed", static_cast<long>(seed));
  manifest.save(out_dir + "/manifest.txt");
  return 0;
}

int cmd_prep_data(const std::string& config_path, const std::string& demo_dir,
                  const std::string& out_dir) {
  const auto cfg = load_optional_config(config_path);
  const auto demos = load_demo_dir(demo_dir);
  const PipelineConfig pcfg = pipeline_from(cfg);
  const Dataset ds = build_dataset(demos, pcfg);
  fs::create_directories(out_dir);
  save_dataset(ds, pcfg, out_dir);
  std::cout << "dataset: " << ds.samples.size() << " samples, " << ds.tuples.size()
            << " tuples, threshold " << ds.contact_threshold << "\n";

  const int bin_size = static_cast<int>(cfg.get_int("bin_size", 500));
  const int m = static_cast<int>(cfg.get_int("m_neighbors", 80));
  std::vector<Vec3> contacts;
  for (const auto& s : ds.samples) contacts.push_back(s.contact);
  const auto bins = bin_split(contacts, bin_size, m, pcfg.seed);
  save_bins(bins, pcfg.seed, out_dir + "/bins.bin");
  std::cout << "bins: " << bins.size() << " x " << bin_size << "\n";
  return 0;
}

int cmd_train_ae(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_ckpt) {
  const auto cfg = load_optional_config(config_path);
  const Dataset ds = load_dataset(data_dir);
  const auto bins = load_bins(data_dir + "/bins.bin");
  AutoencoderConfig acfg;
  acfg.iterations = cfg.get_int("iterations", acfg.iterations);
  acfg.lr = cfg.get_double("lr", acfg.lr);
  acfg.batch_size = static_cast<int>(cfg.get_int("batch_size", acfg.batch_size));
  acfg.use_mds = cfg.get_bool("use_mds", acfg.use_mds);
  acfg.use_cdp = cfg.get_bool("use_cdp", acfg.use_cdp);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));

  std::vector<AeLossTrace> traces;
  AutoencoderModel model = train_autoencoder(ds, bins, acfg, seed, &traces);
  save_autoencoder(model, out_ckpt);

  const std::string report_dir =
      fs::path(out_ckpt).has_parent_path() ? fs::path(out_ckpt).parent_path().string()
                                           : ".";
  save_traces(traces, report_dir + "/ae_trace.csv");
  plot_trace_csv(report_dir + "/ae_trace.csv", report_dir + "/ae_trace.svg",
                 "Autoencoder training losses");
  export_embedding_csv(model, ds.samples, report_dir + "/fig3_embedding.csv");
  {
    const auto t = CsvTable::load(report_dir + "/fig3_embedding.csv");
    SvgPlot plot;
    plot.title = "Latent xy embedding by dominant electrode";
    std::map<int, SvgPlot::Series> by_label;
    for (const auto& row : t.rows) {
      auto& s = by_label[static_cast<int>(row[2])];
      s.scatter = true;
      s.x.push_back(row[0]);
      s.y.push_back(row[1]);
    }
    for (auto& [label, s] : by_label) {
      s.label = "e" + std::to_string(label);
      s.color = svg_palette(label);
      plot.series.push_back(std::move(s));
    }
    plot.save(report_dir + "/fig3_embedding.svg");
  }
  std::cout << "saved " << out_ckpt << "\n";
  return 0;
}

int cmd_train_dyn(const std::string& config_path, const std::string& data_dir,
                  const std::string& ae_ckpt, const std::string& out_ckpt) {
  const auto cfg = load_optional_config(config_path);
  const Dataset ds = load_dataset(data_dir);
  AutoencoderModel ae = load_autoencoder(ae_ckpt);

  DynamicsConfig dcfg;
  const std::string variant = cfg.get_str("variant", "nl");
  if (variant == "ll")
    dcfg.variant = DynVariant::LL;
  else if (variant == "nl")
    dcfg.variant = DynVariant::NL;
  else
    throw TacservError("variant must be ll or nl");
  const std::string id = cfg.get_str("id", variant == "ll" ? "ll" : "nj");
  if (id == "ll")
    dcfg.id_kind = IdKind::LL;
  else if (id == "ng")
    dcfg.id_kind = IdKind::NG;
  else if (id == "nj")
    dcfg.id_kind = IdKind::NJ;
  else
    throw TacservError("id must be ll, ng or nj");
  dcfg.use_id_loss = cfg.get_bool("use_id_loss", true);
  dcfg.iterations = cfg.get_int("iterations", dcfg.iterations);
  dcfg.lr = cfg.get_double("lr", dcfg.lr);
  dcfg.batch_size = static_cast<int>(cfg.get_int("batch_size", dcfg.batch_size));
  dcfg.beta = cfg.get_double("beta", dcfg.beta);
  dcfg.c_train = static_cast<int>(cfg.get_int("c_train", dcfg.c_train));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));

  std::vector<DynLossTrace> traces;
  DynamicsModel model = train_dynamics(ds.tuples, ae, dcfg, seed, &traces);
  save_dynamics(model, out_ckpt);
  const std::string report_dir =
      fs::path(out_ckpt).has_parent_path() ? fs::path(out_ckpt).parent_path().string()
                                           : ".";
  save_dyn_traces(traces, report_dir + "/dyn_trace.csv");
  plot_trace_csv(report_dir + "/dyn_trace.csv", report_dir + "/dyn_trace.svg",
                 "Dynamics training losses");
  std::cout << "saved " << out_ckpt << "\n";
  return 0;
}

int cmd_eval_ae(const std::string& data_dir, const std::string& ae_ckpt,
                const std::string& out_dir) {
  const Dataset ds = load_dataset(data_dir);
  const auto bins = load_bins(data_dir + "/bins.bin");
  AutoencoderModel ae = load_autoencoder(ae_ckpt);
  fs::create_directories(out_dir);

  Rng rng(777);
  const int n_pairs = 10000;
  const auto pairs = sample_siamese_pairs(bins, n_pairs, rng);
  MatX dp(1, n_pairs), dg(1, n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const auto& bin = bins[pairs[i].bin];
    const Vec3 za = encode(ae, ds.samples[bin.indices[pairs[i].a]].s);
    const Vec3 zb = encode(ae, ds.samples[bin.indices[pairs[i].b]].s);
    dp(0, i) = (za.head<2>() - zb.head<2>()).norm();
    dg(0, i) = pairs[i].geodesic;
  }
  const double mds_nmse = nmse(dp, dg);

  CsvTable t;
  t.columns = {"split", "recon_nmse", "mds_nmse"};
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
    t.rows.push_back({double(split), nmse(pred, truth), mds_nmse});
  }
  t.save(out_dir + "/eval_ae.csv");
  {
    SvgPlot plot;
    plot.title = "Map distance vs geodesic distance";
    SvgPlot::Series s;
    s.label = "pairs";
    s.scatter = true;
    for (int i = 0; i < n_pairs; i += 10) {
      s.x.push_back(dg(0, i));
      s.y.push_back(dp(0, i));
    }
    plot.series.push_back(std::move(s));
    plot.save(out_dir + "/eval_ae.svg");
  }
  std::cout << "recon NMSE (train/val/test): " << t.rows[0][1] << " " << t.rows[1][1]
            << " " << t.rows[2][1] << ", map-distance NMSE: " << mds_nmse << "\n";
  return 0;
}

int cmd_eval_fd(const std::string& data_dir, const std::string& ae_ckpt,
                const std::vector<std::string>& dyn_ckpts, const std::string& out_dir,
                int c_test) {
  const Dataset ds = load_dataset(data_dir);
  AutoencoderModel ae = load_autoencoder(ae_ckpt);
  std::vector<TransitionTuple> test_tuples;
  for (const auto& t : ds.tuples)
    if (t.split == Test) test_tuples.push_back(t);
  fs::create_directories(out_dir);

  CsvTable t;
  t.columns = {"variant", "chain_step", "nmse"};
  SvgPlot plot;
  plot.title = "Chained prediction NMSE";
  for (size_t v = 0; v < dyn_ckpts.size(); ++v) {
    DynamicsModel dyn = load_dynamics(dyn_ckpts[v]);
    const auto nmses = eval_chained_fd(dyn, ae, test_tuples, c_test);
    SvgPlot::Series s;
    s.label = fs::path(dyn_ckpts[v]).stem().string();
    s.color = svg_palette(static_cast<int>(v));
    for (size_t k = 0; k < nmses.size(); ++k) {
      t.rows.push_back({double(v), double(k + 1), nmses[k]});
      s.x.push_back(double(k + 1));
      s.y.push_back(nmses[k]);
      std::cout << "variant " << v << " step " << k + 1 << " NMSE " << nmses[k] << "\n";
    }
    plot.series.push_back(std::move(s));
  }
  t.save(out_dir + "/eval_fd.csv");
  plot.save(out_dir + "/eval_fd.svg");
  return 0;
}

int cmd_eval_id(const std::string& data_dir, const std::string& ae_ckpt,
                const std::vector<std::string>& dyn_ckpts,
                std::vector<std::string> labels, const std::string& out_dir) {
  const Dataset ds = load_dataset(data_dir);
  AutoencoderModel ae = load_autoencoder(ae_ckpt);
  std::vector<TransitionTuple> test_tuples;
  for (const auto& t : ds.tuples)
    if (t.split == Test) test_tuples.push_back(t);
  fs::create_directories(out_dir);

  std::vector<IdEvalRow> rows;
  for (size_t v = 0; v < dyn_ckpts.size(); ++v) {
    DynamicsModel dyn = load_dynamics(dyn_ckpts[v]);
    std::string label;
    if (v < labels.size()) {
      label = labels[v];
    } else {
      switch (dyn.cfg.id_kind) {
        case IdKind::LL: label = "LL"; break;
        case IdKind::NG: label = "NG"; break;
        case IdKind::NJ: label = "NJ"; break;
      }
    }
    const auto r = eval_id_one(dyn, ae, test_tuples, label);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  save_id_eval_csv(rows, out_dir + "/eval_id.csv");
  {
    SvgPlot plot;
    plot.title = "Weighted cosine distance (AEpred)";
    SvgPlot::Series lin, ang;
    lin.label = "linear";
    lin.scatter = true;
    ang.label = "angular";
    ang.color = svg_palette(1);
    ang.scatter = true;
    int idx = 0;
    for (const auto& r : rows)
      if (r.condition == "AEpred") {
        auto& s = r.part == "linear" ? lin : ang;
        s.x.push_back(idx++ / 2);
        s.y.push_back(r.wcd);
      }
    plot.series.push_back(std::move(lin));
    plot.series.push_back(std::move(ang));
    plot.save(out_dir + "/eval_id.svg");
  }
  for (const auto& r : rows)
    std::cout << r.controller << " " << r.condition << " " << r.part << " wcd "
              << r.wcd << "\n";
  return 0;
}

int cmd_servo(const std::string& config_path, const std::string& ae_ckpt,
              const std::string& dyn_ckpt, const std::string& out_dir) {
  const auto cfg = load_optional_config(config_path);
  SurfaceParams sp =
      config_path.empty() ? SurfaceParams{} : SurfaceParams::load(config_path);
  SkinSurface surface(sp);
  AutoencoderModel ae = load_autoencoder(ae_ckpt);
  DynamicsModel dyn = load_dynamics(dyn_ckpt);
  fs::create_directories(out_dir);

  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  Rng rng(9000 + seed);
  const Vec3 anchor_world(0.05, 0.02, 0.03);
  const double depth = cfg.get_double("depth", 0.0015);
  const double th0 = cfg.get_double("start_theta", sp.theta_max * 0.45);
  const double ph0 = cfg.get_double("start_phi", uniform(rng, 0.0, 2.0 * M_PI));
  const double th_t = cfg.get_double("target_theta", th0 + sp.theta_max * 0.22);
  const double ph_t = cfg.get_double("target_phi", ph0);

  ServoRunConfig rc;
  rc.target = make_target_sample(surface, anchor_world, th_t, ph_t, depth);
  rc.dt = cfg.get_double("dt", rc.dt);
  rc.max_steps = static_cast<int>(cfg.get_int("max_steps", rc.max_steps));
  rc.success_tol = cfg.get_double("tolerance", rc.success_tol);
  rc.smoother_alpha = cfg.get_double("smoother_alpha", rc.smoother_alpha);

  const Vec3 p0 = surface.at(th0, ph0);
  FingerPose pose;
  pose.t = anchor_world - p0 + depth * surface.outward_normal(p0);

  const ServoResult res = servo_run(ae, dyn, surface, anchor_world, pose, rc);
  const std::string csv = out_dir + "/servo_" + std::to_string(seed) + ".csv";
  save_servo_csv(res, csv);
  {
    SvgPlot plot;
    plot.title = "Servo run " + std::to_string(seed);
    SvgPlot::Series lat, geo;
    lat.label = "latent_dist";
    geo.label = "geo_dist";
    geo.color = svg_palette(1);
    for (const auto& s : res.log) {
      lat.x.push_back(s.step);
      lat.y.push_back(s.latent_dist);
      if (std::isfinite(s.geo_dist)) {
        geo.x.push_back(s.step);
        geo.y.push_back(s.geo_dist);
      }
    }
    plot.series.push_back(std::move(lat));
    plot.series.push_back(std::move(geo));
    plot.save(out_dir + "/servo_" + std::to_string(seed) + ".svg");
  }
  std::cout << (res.success ? "success at step " + std::to_string(res.steps_to_success)
                            : res.aborted ? std::string("aborted: contact lost")
                                          : std::string("did not converge"))
            << "\n";
  return 0;
}

int cmd_repro_all(const std::string& out_dir, long seed, long ae_iters, long dyn_iters,
                  int n_demos) {
  ReproConfig cfg;
  cfg.out_dir = out_dir;
  cfg.data_seed = static_cast<std::uint64_t>(seed);
  if (ae_iters > 0) cfg.ae_iterations = ae_iters;
  if (dyn_iters > 0) cfg.dyn_iterations = dyn_iters;
  if (n_demos > 0) cfg.n_demos = n_demos;
  const auto results = run_full_check(cfg, &std::cout);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.name << ": " << r.detail << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile servoing in a learned latent space: data, training, "
               "evaluation and closed-loop control"};
  app.require_subcommand(1);

  std::string config, out, data_dir, demo_dir, ae_ckpt, dyn_ckpt;
  std::vector<std::string> dyn_ckpts, labels;
  int c_test = 3;
  long seed = 42, ae_iters = -1, dyn_iters = -1;
  int n_demos = -1;

  auto* gen = app.add_subcommand("gen-data", "Run scripted demos, write demo CSVs");
  gen->add_option("--config", config, "key-value config file");
  gen->add_option("--out", out, "output directory")->required();

  auto* prep = app.add_subcommand("prep-data", "Filter, segment and assemble dataset");
  prep->add_option("--config", config, "key-value config file");
  prep->add_option("--demos", demo_dir, "directory of demo CSVs")->required();
  prep->add_option("--out", out, "dataset output directory")->required();

  auto* tae = app.add_subcommand("train-ae", "Train the latent-map autoencoder");
  tae->add_option("--config", config, "key-value config file");
  tae->add_option("--data", data_dir, "dataset directory")->required();
  tae->add_option("--out", out, "checkpoint path")->required();

  auto* tdyn = app.add_subcommand("train-dyn", "Train a latent dynamics model");
  tdyn->add_option("--config", config, "key-value config file");
  tdyn->add_option("--data", data_dir, "dataset directory")->required();
  tdyn->add_option("--ae", ae_ckpt, "autoencoder checkpoint")->required();
  tdyn->add_option("--out", out, "checkpoint path")->required();

  auto* eae = app.add_subcommand("eval-ae", "Reconstruction and map-distance metrics");
  eae->add_option("--data", data_dir, "dataset directory")->required();
  eae->add_option("--ae", ae_ckpt, "autoencoder checkpoint")->required();
  eae->add_option("--out", out, "report directory")->required();

  auto* efd = app.add_subcommand("eval-fd", "Chained prediction NMSE");
  efd->add_option("--data", data_dir, "dataset directory")->required();
  efd->add_option("--ae", ae_ckpt, "autoencoder checkpoint")->required();
  efd->add_option("--dyn", dyn_ckpts, "dynamics checkpoints")->required();
  efd->add_option("--chain", c_test, "chain length");
  efd->add_option("--out", out, "report directory")->required();

  auto* eid = app.add_subcommand("eval-id", "Controller cosine-distance report");
  eid->add_option("--data", data_dir, "dataset directory")->required();
  eid->add_option("--ae", ae_ckpt, "autoencoder checkpoint")->required();
  eid->add_option("--dyn", dyn_ckpts, "dynamics checkpoints")->required();
  eid->add_option("--label", labels, "row labels, one per checkpoint");
  eid->add_option("--out", out, "report directory")->required();

  auto* srv = app.add_subcommand("servo", "Closed-loop tactile servoing run");
  srv->add_option("--config", config, "key-value config file");
  srv->add_option("--ae", ae_ckpt, "autoencoder checkpoint")->required();
  srv->add_option("--dyn", dyn_ckpt, "dynamics checkpoint")->required();
  srv->add_option("--out", out, "report directory")->required();

  auto* rep = app.add_subcommand("repro-all", "Full desk-scale reproduction + checks");
  rep->add_option("--out", out, "report directory")->required();
  rep->add_option("--seed", seed, "data generation seed");
  rep->add_option("--ae-iters", ae_iters, "autoencoder iterations override");
  rep->add_option("--dyn-iters", dyn_iters, "dynamics iterations override");
  rep->add_option("--demos", n_demos, "number of scripted demos override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out);
    if (prep->parsed()) return cmd_prep_data(config, demo_dir, out);
    if (tae->parsed()) return cmd_train_ae(config, data_dir, out);
    if (tdyn->parsed()) return cmd_train_dyn(config, data_dir, ae_ckpt, out);
    if (eae->parsed()) return cmd_eval_ae(data_dir, ae_ckpt, out);
    if (efd->parsed()) return cmd_eval_fd(data_dir, ae_ckpt, dyn_ckpts, out, c_test);
    if (eid->parsed()) return cmd_eval_id(data_dir, ae_ckpt, dyn_ckpts, labels, out);
    if (srv->parsed()) return cmd_servo(config, ae_ckpt, dyn_ckpt, out);
    if (rep->parsed()) return cmd_repro_all(out, seed, ae_iters, dyn_iters, n_demos);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
