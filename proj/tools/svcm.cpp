// svcm command-line tool: fit | simulate | test | predict | convert

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "svcm/svcm.hpp"

namespace fs = std::filesystem;
using svcm::Json;

namespace {

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, ',')) {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == 0) throw svcm::ParseError("not a number: '" + cell + "'");
    out.push_back(v);
  }
  if (out.empty()) throw svcm::ParseError("empty list");
  return out;
}

/// "1,0,0;0,1,0" -> 2 x 3
Eigen::MatrixXd parse_matrix(const std::string& s) {
  std::vector<std::vector<double>> rows;
  std::string row;
  std::istringstream in(s);
  while (std::getline(in, row, ';')) rows.push_back(parse_list(row));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw svcm::ParseError("ragged matrix '" + s + "'");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw svcm::ParseError(p.string() + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw svcm::ParseError(p.string() + ": " + e.what());
  }
}

struct SimConfig {
  svcm::PhantomSpec phantom;
  svcm::MonteCarloOptions mc;
};

SimConfig parse_sim_config(const Json& j) {
  SimConfig c;
  c.mc.lce_bandwidths = {1.1, 2.0, 4.0};
  c.mc.gks_sigmas = {1.1, 2.0, 4.0};
  auto& ph = c.phantom;
  if (j.contains("dims")) {
    const auto d = j["dims"].get<std::vector<int>>();
    if (d.size() != 3) throw svcm::ParseError("sim config: dims must have three entries");
    ph.dims = {d[0], d[1], d[2]};
    ph.beta_geometry = svcm::default_geometry(ph.dims);
  }
  ph.n = j.value("n", ph.n);
  const std::string noise = j.value("noise", std::string("gaussian"));
  if (noise == "gaussian") ph.noise = svcm::NoiseKind::Gaussian;
  else if (noise == "chisq3") ph.noise = svcm::NoiseKind::ChiSquare3;
  else throw svcm::ParseError("sim config: noise must be gaussian or chisq3");
  ph.noise_scale = j.value("noise_scale", ph.noise_scale);
  if (j.contains("score_vars")) {
    const auto v = j["score_vars"].get<std::vector<double>>();
    if (v.size() != 3) throw svcm::ParseError("sim config: score_vars must have three entries");
    ph.score_vars = {v[0], v[1], v[2]};
  }
  ph.standardize_covariates = j.value("standardize_covariates", ph.standardize_covariates);
  ph.seed = j.value("seed", ph.seed);
  if (j.contains("scales")) c.mc.scales = j["scales"].get<std::vector<int>>();
  if (j.contains("lce_bandwidths")) c.mc.lce_bandwidths = j["lce_bandwidths"].get<std::vector<double>>();
  if (j.contains("gks_sigmas")) c.mc.gks_sigmas = j["gks_sigmas"].get<std::vector<double>>();
  c.mc.alpha = j.value("alpha", c.mc.alpha);
  if (j.contains("schedule")) {
    // Reuse the RunConfig schedule parser.
    Json fake = {{"subjects", Json::array({"x"})}, {"covariates", "x"}, {"schedule", j["schedule"]}};
    c.mc.schedule = svcm::parse_run_config(fake).schedule;
  }
  int max_scale = 0;
  for (int s : c.mc.scales) max_scale = std::max(max_scale, s);
  c.mc.schedule.max_step = std::max(c.mc.schedule.max_step, max_scale);
  return c;
}

void write_metrics(const fs::path& path, const svcm::MonteCarloResult& mc) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [label, acc] : mc.estimators)
    for (const auto& m : svcm::summarize(acc, mc.truth))
      rows.push_back({label, std::to_string(m.coefficient + 1), svcm::format_double(m.level), std::to_string(m.voxels),
                      svcm::format_double(m.bias), svcm::format_double(m.rms), svcm::format_double(m.sd),
                      svcm::format_double(m.re), svcm::format_double(m.es), svcm::format_double(m.se)});
  svcm::write_text_csv(path, {"estimator", "coefficient", "level", "voxels", "bias", "rms", "sd", "re", "es", "se"}, rows);
}

int cmd_simulate(const fs::path& config, int reps, const fs::path& out, bool export_data) {
  SimConfig sc = parse_sim_config(config.empty() ? Json::object() : read_json(config));
  fs::create_directories(out);
  std::vector<std::vector<std::string>> eig_rows;
  const auto mc = svcm::run_monte_carlo(sc.phantom, reps, sc.mc, [&](int rep, const svcm::ReplicateOutput& r) {
    for (Eigen::Index l = 0; l < r.noise.all_eigenvalues.size(); ++l)
      eig_rows.push_back({std::to_string(rep), std::to_string(l + 1), svcm::format_double(r.noise.all_eigenvalues(l)),
                          l < r.noise.retained() ? "1" : "0"});
    if (rep != 0) return;
    const svcm::Mask& mask = r.raw.mask;
    for (const auto& [label, field] : r.estimates)
      for (Eigen::Index j = 0; j < field.beta.rows(); ++j) {
        const svcm::Volume v = svcm::volume_from_field(mask, field.beta.row(j));
        const int mid = mask.grid().dims()[2] / 2;
        svcm::write_pgm_slice(out / "pgm" / ("beta" + std::to_string(j + 1) + "_" + label + ".pgm"), v, mid, -0.2, 1.0);
      }
    for (Eigen::Index j = 0; j < r.phantom.truth.beta.rows(); ++j) {
      const svcm::Volume v = svcm::volume_from_field(mask, r.phantom.truth.beta.row(j));
      svcm::write_pgm_slice(out / "pgm" / ("beta" + std::to_string(j + 1) + "_truth.pgm"), v, mask.grid().dims()[2] / 2, -0.2, 1.0);
    }
    if (export_data) {
      const fs::path data = out / "data";
      std::vector<std::string> subjects;
      for (Eigen::Index i = 0; i < r.phantom.stack.y.rows(); ++i) {
        const std::string name = "subject_" + std::to_string(i) + ".vol";
        svcm::write_volume(data / name, svcm::volume_from_field(mask, r.phantom.stack.y.row(i)));
        subjects.push_back(name);
      }
      std::vector<std::string> header;
      for (Eigen::Index c = 0; c < r.phantom.design.p; ++c) header.push_back("x" + std::to_string(c + 1));
      svcm::write_numeric_csv(data / "covariates.csv", header, r.phantom.design.x);
      Json cfg = {{"subjects", subjects}, {"covariates", "covariates.csv"}, {"mask", "auto"}, {"output", "../fit"}};
      std::ofstream(data / "run.json") << cfg.dump(2) << '\n';
    }
  });
  write_metrics(out / "metrics.csv", mc);
  svcm::write_text_csv(out / "eigenvalues.csv", {"replicate", "component", "eigenvalue", "retained"}, eig_rows);
  std::cout << "wrote " << (out / "metrics.csv").string() << " (" << reps << " replicates)\n";
  return 0;
}

int cmd_test(const fs::path& fit_dir, const std::string& r1, const std::string& b0, const std::string& name,
             double alpha, std::size_t min_size, int conn, const fs::path& out) {
  const svcm::FitArtifacts fa = svcm::load_fit(fit_dir);
  const Eigen::MatrixXd r = parse_matrix(r1);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(r.rows());
  if (!b0.empty()) {
    const auto v = parse_list(b0);
    b = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  const svcm::Hypothesis h = svcm::make_hypothesis(r, b);
  svcm::WaldMap w = svcm::wald_test(fa.field, [&](svcm::Rank d) { return fa.cov[static_cast<std::size_t>(d)]; }, h);
  w.clusters = svcm::detect_clusters(w, fa.mask, alpha, min_size, svcm::connectivity_from_int(conn));
  const Json info = svcm::write_wald_outputs(out.empty() ? fit_dir : out, name, w, fa.mask);
  std::cout << info.dump() << '\n';
  return 0;
}

int cmd_predict(const fs::path& fit_dir, const std::string& x, const fs::path& out) {
  const svcm::FitArtifacts fa = svcm::load_fit(fit_dir);
  const auto v = parse_list(x);
  const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  svcm::write_volume(out, svcm::volume_from_field(fa.mask, svcm::predict_subject(fa.field, xv).transpose()));
  return 0;
}

int cmd_convert(const fs::path& in, const fs::path& out, const std::string& dims, const std::string& spacing) {
  if (in.extension() == ".vol") {
    const svcm::Volume v = svcm::read_volume(in);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.data.size()), 4);
    for (svcm::VoxelId id = 0; id < v.grid.size(); ++id) {
      const auto c = v.grid.coords(id);
      m.row(id) << c.i, c.j, c.k, v.data[static_cast<std::size_t>(id)];
    }
    svcm::write_numeric_csv(out, {"i", "j", "k", "value"}, m);
    return 0;
  }
  const svcm::CsvTable t = svcm::read_numeric_csv(in);
  if (t.values.cols() != 4) throw svcm::ParseError(in.string() + ": expected columns i,j,k,value");
  std::array<int, 3> d{1, 1, 1};
  if (!dims.empty()) {
    const auto v = parse_list(dims);
    if (v.size() != 3) throw svcm::ParseError("--dims needs three values");
    d = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
  } else {
    for (Eigen::Index r = 0; r < t.values.rows(); ++r)
      for (int a = 0; a < 3; ++a) d[a] = std::max(d[a], static_cast<int>(t.values(r, a)) + 1);
  }
  std::array<double, 3> sp{1.0, 1.0, 1.0};
  if (!spacing.empty()) {
    const auto v = parse_list(spacing);
    if (v.size() != 3) throw svcm::ParseError("--spacing needs three values");
    sp = {v[0], v[1], v[2]};
  }
  svcm::Volume v{svcm::Grid3(d, sp), svcm::VolDType::F32, {}};
  v.data.assign(static_cast<std::size_t>(v.grid.size()), 0.0f);
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    const int i = static_cast<int>(t.values(r, 0)), j = static_cast<int>(t.values(r, 1)), k = static_cast<int>(t.values(r, 2));
    if (!v.grid.contains(i, j, k)) throw svcm::ParseError(in.string() + ": row " + std::to_string(r + 1) + " is outside the grid");
    v.data[static_cast<std::size_t>(v.grid.linear(i, j, k))] = static_cast<float>(t.values(r, 3));
  }
  svcm::write_volume(out, v);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially varying coefficient models for imaging data"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides SVCM_THREADS)");

  auto* fit = app.add_subcommand("fit", "Run the three-stage pipeline from a JSON config");
  std::string fit_config, fit_out, fit_method;
  double fit_bw = -1.0;
  fit->add_option("--config", fit_config, "RunConfig JSON (a previous manifest.json also works)")->required();
  fit->add_option("--out", fit_out, "Override the output directory");
  fit->add_option("--method", fit_method, "svcm | lce | gks");
  fit->add_option("--bandwidth", fit_bw, "LCE h or GKS sigma");

  auto* sim = app.add_subcommand("simulate", "Monte-Carlo study on the synthetic phantom");
  std::string sim_config, sim_out = "sim_out";
  int sim_reps = 10;
  bool sim_export = false;
  sim->add_option("--config", sim_config, "Simulation JSON");
  sim->add_option("--reps", sim_reps, "Replicates")->check(CLI::PositiveNumber);
  sim->add_option("--out", sim_out, "Output directory");
  sim->add_flag("--export-data", sim_export, "Also write replicate 0 as Vol1 subjects + covariates + run.json");

  auto* test = app.add_subcommand("test", "Wald test on a completed fit");
  std::string test_fit, test_r1, test_b0, test_name = "custom", test_out;
  double test_alpha = 0.05;
  std::size_t test_min = 50;
  int test_conn = 6;
  test->add_option("--fit", test_fit, "Fit output directory")->required();
  test->add_option("--R", test_r1, "Rows of R1, e.g. \"0,1,0;0,0,1\"")->required();
  test->add_option("--b0", test_b0, "Comma-separated b0 (default zeros)");
  test->add_option("--name", test_name, "Output name");
  test->add_option("--alpha", test_alpha, "Cluster-forming threshold");
  test->add_option("--min-size", test_min, "Minimum cluster size");
  test->add_option("--connectivity", test_conn, "6, 18 or 26");
  test->add_option("--out", test_out, "Output directory (default: the fit directory)");

  auto* pred = app.add_subcommand("predict", "Predicted image x^T beta for new covariates");
  std::string pred_fit, pred_x, pred_out = "prediction.vol";
  pred->add_option("--fit", pred_fit, "Fit output directory")->required();
  pred->add_option("--x", pred_x, "Comma-separated covariate vector")->required();
  pred->add_option("--out", pred_out, "Output Vol1 path");

  auto* conv = app.add_subcommand("convert", "Vol1 <-> CSV (i,j,k,value)");
  std::string conv_in, conv_out, conv_dims, conv_spacing;
  conv->add_option("input", conv_in, "Input .vol or .csv")->required();
  conv->add_option("output", conv_out, "Output path")->required();
  conv->add_option("--dims", conv_dims, "nx,ny,nz for CSV input");
  conv->add_option("--spacing", conv_spacing, "sx,sy,sz for CSV input");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) svcm::set_thread_count(threads);

  try {
    if (*fit) {
      svcm::RunConfig cfg = svcm::load_run_config(fit_config);
      if (!fit_out.empty()) cfg.output = fit_out;
      if (!fit_method.empty()) cfg.method = svcm::parse_method(fit_method);
      if (fit_bw >= 0.0) cfg.bandwidth = fit_bw;
      const auto res = svcm::run_pipeline(cfg);
      std::cout << "fit complete: " << (cfg.output / "manifest.json").string() << '\n';
      return 0;
    }
    if (*sim) return cmd_simulate(sim_config, sim_reps, sim_out, sim_export);
    if (*test) return cmd_test(test_fit, test_r1, test_b0, test_name, test_alpha, test_min, test_conn, test_out);
    if (*pred) return cmd_predict(pred_fit, pred_x, pred_out);
    if (*conv) return cmd_convert(conv_in, conv_out, conv_dims, conv_spacing);
  } catch (const svcm::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
