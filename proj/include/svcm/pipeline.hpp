#pragma once

// End-to-end run: load volumes and covariates, Stage I (LS + noise model),
// Stage II (MASS or a baseline), Stage III (Wald tests, clusters), and write
// every artifact plus a JSON manifest.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "svcm/baselines.hpp"
#include "svcm/design.hpp"
#include "svcm/errors.hpp"
#include "svcm/fpca.hpp"
#include "svcm/infer.hpp"
#include "svcm/io.hpp"
#include "svcm/lsq.hpp"
#include "svcm/mass.hpp"
#include "svcm/parallel.hpp"
#include "svcm/volume.hpp"

namespace svcm {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct NamedHypothesis {
  std::string name;
  Eigen::MatrixXd r1;
  Eigen::VectorXd b0;
};

struct ClusterOptions {
  double alpha = 0.05;
  std::size_t min_size = 50;
  Connectivity connectivity = Connectivity::Face6;
};

struct RunConfig {
  std::vector<fs::path> subjects;
  fs::path covariates;
  std::string mask = "auto";  ///< "auto" or a Vol1 path
  fs::path output;
  Method method = Method::Svcm;
  double bandwidth = 2.0;  ///< LCE h or GKS sigma
  ScheduleOptions schedule;
  NoiseModelOptions noise;
  std::vector<NamedHypothesis> hypotheses;  ///< empty: H0 beta_j = 0 for every j
  ClusterOptions clusters;
  bool write_all_scales = true;
  std::uint64_t seed = 0;
};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Svcm: return "svcm";
    case Method::Lce: return "lce";
    case Method::Gks: return "gks";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "svcm" || s == "mass") return Method::Svcm;
  if (s == "lce") return Method::Lce;
  if (s == "gks") return Method::Gks;
  throw ParseError("unknown method '" + s + "' (expected svcm, lce or gks)");
}

inline QuantileConvention parse_convention(const std::string& s) {
  if (s == "upper") return QuantileConvention::Upper;
  if (s == "lower") return QuantileConvention::Lower;
  throw ParseError("unknown quantile convention '" + s + "' (expected upper or lower)");
}

inline std::string convention_name(QuantileConvention c) { return c == QuantileConvention::Upper ? "upper" : "lower"; }

inline StatKernel parse_kernel(const std::string& s) {
  if (s == "exponential") return StatKernel::Exponential;
  if (s == "truncated") return StatKernel::Truncated;
  throw ParseError("unknown statistical kernel '" + s + "' (expected exponential or truncated)");
}

inline std::string kernel_name(StatKernel k) { return k == StatKernel::Exponential ? "exponential" : "truncated"; }

inline Eigen::MatrixXd json_matrix(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ParseError(what + ": expected a non-empty array of rows");
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ParseError(what + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

/// Relative paths resolve against `base`. A run manifest is accepted too (its
/// "config" entry is used), which is how runs are replayed.
inline RunConfig parse_run_config(const Json& input, const fs::path& base = {}) {
  const Json& j = input.contains("config") && input["config"].is_object() ? input["config"] : input;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  RunConfig c;
  try {
    if (!j.contains("subjects") || !j["subjects"].is_array()) throw ParseError("config: 'subjects' must be a list of paths");
    for (const auto& s : j["subjects"]) c.subjects.push_back(resolve(s.get<std::string>()));
    if (!j.contains("covariates")) throw ParseError("config: 'covariates' is required");
    c.covariates = resolve(j["covariates"].get<std::string>());
    c.mask = j.value("mask", std::string("auto"));
    if (c.mask != "auto") c.mask = resolve(c.mask).string();
    c.output = resolve(j.value("output", std::string("svcm_out")));
    c.method = parse_method(j.value("method", std::string("svcm")));
    c.bandwidth = j.value("bandwidth", c.bandwidth);
    c.seed = j.value("seed", std::uint64_t{0});
    c.write_all_scales = j.value("write_all_scales", true);
    if (j.contains("schedule")) {
      const Json& s = j["schedule"];
      c.schedule.c_h = s.value("c_h", c.schedule.c_h);
      c.schedule.max_step = s.value("max_step", c.schedule.max_step);
      c.schedule.cn_convention = parse_convention(s.value("cn_convention", convention_name(c.schedule.cn_convention)));
      c.schedule.cs_convention = parse_convention(s.value("cs_convention", convention_name(c.schedule.cs_convention)));
      c.schedule.stop_check_from = s.value("stop_check_from", c.schedule.stop_check_from);
      c.schedule.kst = parse_kernel(s.value("kernel", kernel_name(c.schedule.kst)));
      if (s.contains("c_n") && !s["c_n"].is_null()) c.schedule.cn_override = s["c_n"].get<double>();
    }
    if (j.contains("gcv_grid")) c.noise.gcv_grid = j["gcv_grid"].get<std::vector<double>>();
    if (j.contains("bandwidth_h") && !j["bandwidth_h"].is_null()) c.noise.fixed_bandwidth = j["bandwidth_h"].get<double>();
    c.noise.cum_threshold = j.value("cum_threshold", c.noise.cum_threshold);
    c.noise.center = j.value("center_eta", c.noise.center);
    if (j.contains("hypotheses")) {
      for (const auto& h : j["hypotheses"]) {
        NamedHypothesis nh;
        nh.name = h.value("name", "hyp" + std::to_string(c.hypotheses.size()));
        nh.r1 = json_matrix(h.at("R1"), "hypothesis " + nh.name + " R1");
        const auto b0 = h.contains("b0") ? h["b0"].get<std::vector<double>>() : std::vector<double>(static_cast<std::size_t>(nh.r1.rows()), 0.0);
        nh.b0 = Eigen::Map<const Eigen::VectorXd>(b0.data(), static_cast<Eigen::Index>(b0.size()));
        c.hypotheses.push_back(std::move(nh));
      }
    }
    if (j.contains("clusters")) {
      const Json& cl = j["clusters"];
      c.clusters.alpha = cl.value("alpha", c.clusters.alpha);
      c.clusters.min_size = cl.value("min_size", c.clusters.min_size);
      c.clusters.connectivity = connectivity_from_int(cl.value("connectivity", 6));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (c.subjects.empty()) throw ParseError("config: no subjects listed");
  if (!(c.bandwidth >= 0.0)) throw ParseError("config: bandwidth must be >= 0");
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

/// Fully resolved config, suitable for replay.
inline Json config_json(const RunConfig& c) {
  Json j;
  j["subjects"] = Json::array();
  for (const auto& s : c.subjects) j["subjects"].push_back(fs::absolute(s).lexically_normal().string());
  j["covariates"] = fs::absolute(c.covariates).lexically_normal().string();
  j["mask"] = c.mask == "auto" ? c.mask : fs::absolute(c.mask).lexically_normal().string();
  j["output"] = fs::absolute(c.output).lexically_normal().string();
  j["method"] = method_name(c.method);
  j["bandwidth"] = c.bandwidth;
  j["schedule"] = {{"c_h", c.schedule.c_h},
                   {"max_step", c.schedule.max_step},
                   {"cn_convention", convention_name(c.schedule.cn_convention)},
                   {"cs_convention", convention_name(c.schedule.cs_convention)},
                   {"stop_check_from", c.schedule.stop_check_from},
                   {"kernel", kernel_name(c.schedule.kst)},
                   {"c_n", c.schedule.cn_override ? Json(*c.schedule.cn_override) : Json(nullptr)}};
  j["gcv_grid"] = c.noise.gcv_grid;
  j["bandwidth_h"] = c.noise.fixed_bandwidth ? Json(*c.noise.fixed_bandwidth) : Json(nullptr);
  j["cum_threshold"] = c.noise.cum_threshold;
  j["center_eta"] = c.noise.center;
  j["hypotheses"] = Json::array();
  for (const auto& h : c.hypotheses) {
    std::vector<double> b0(h.b0.data(), h.b0.data() + h.b0.size());
    j["hypotheses"].push_back({{"name", h.name}, {"R1", matrix_json(h.r1)}, {"b0", b0}});
  }
  j["clusters"] = {{"alpha", c.clusters.alpha},
                   {"min_size", c.clusters.min_size},
                   {"connectivity", static_cast<int>(c.clusters.connectivity)}};
  j["write_all_scales"] = c.write_all_scales;
  j["seed"] = c.seed;
  return j;
}

inline std::string coef_file(const std::string& kind, Eigen::Index j, std::optional<int> scale = std::nullopt) {
  std::string s = kind + "_" + std::to_string(j);
  if (scale) s += "_s" + std::to_string(*scale);
  return s + ".vol";
}

inline std::string cov_file(Eigen::Index j, Eigen::Index k) {
  return "cov_" + std::to_string(j) + "_" + std::to_string(k) + ".vol";
}

/// Per-voxel Wald CSV, p-value / statistic volumes, cluster summary and PGM slices.
inline Json write_wald_outputs(const fs::path& dir, const std::string& name, const WaldMap& wald, const Mask& mask) {
  const Grid3& g = mask.grid();
  Eigen::RowVectorXd neglog(wald.p_value.size());
  for (Rank d = 0; d < wald.p_value.size(); ++d) neglog(d) = -std::log10(wald.p_value(d));
  write_volume(dir / ("wald_" + name + ".vol"), volume_from_field(mask, wald.statistic.transpose()));
  write_volume(dir / ("pvalue_" + name + ".vol"), volume_from_field(mask, wald.p_value.transpose()));
  const Volume nl = volume_from_field(mask, neglog);
  write_volume(dir / ("neglog10p_" + name + ".vol"), nl);
  write_pgm_slices(dir / "pgm", "neglog10p_" + name, nl);

  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(mask.n_active()));
  for (Rank d = 0; d < mask.n_active(); ++d) {
    const Index3 c = g.coords(mask.voxel(d));
    rows.push_back({std::to_string(mask.voxel(d)), std::to_string(c.i), std::to_string(c.j), std::to_string(c.k),
                    format_double(wald.statistic(d)), format_double(wald.p_value(d)), format_double(neglog(d)),
                    wald.singular[static_cast<std::size_t>(d)] ? "1" : "0"});
  }
  write_text_csv(dir / ("wald_" + name + ".csv"), {"voxel", "i", "j", "k", "statistic", "p", "neglog10p", "singular"}, rows);

  std::vector<std::vector<std::string>> crow;
  for (std::size_t c = 0; c < wald.clusters.size(); ++c) {
    const auto& vox = wald.clusters[c].voxels;
    Rank peak = vox.front();
    for (Rank r : vox)
      if (wald.p_value(r) < wald.p_value(peak)) peak = r;
    const Index3 pc = g.coords(mask.voxel(peak));
    crow.push_back({std::to_string(c + 1), std::to_string(vox.size()), std::to_string(mask.voxel(peak)),
                    std::to_string(pc.i), std::to_string(pc.j), std::to_string(pc.k), format_double(wald.p_value(peak))});
  }
  write_text_csv(dir / ("clusters_" + name + ".csv"), {"cluster", "size", "peak_voxel", "peak_i", "peak_j", "peak_k", "peak_p"}, crow);

  std::size_t singular = 0;
  for (auto s : wald.singular) singular += s;
  Json sizes = Json::array();
  for (const auto& cl : wald.clusters) sizes.push_back(cl.size());
  return {{"name", name}, {"df", wald.df}, {"singular_voxels", singular}, {"cluster_sizes", sizes}};
}

struct PipelineResult {
  Json manifest;
  CoefficientField final_field;
  std::vector<WaldMap> wald;
};

/// Runs every stage and writes artifacts under config.output. Failures are
/// rethrown as StageError after the manifest is written with status FAILED.
inline PipelineResult run_pipeline(const RunConfig& config) {
  using Clock = std::chrono::steady_clock;
  PipelineResult result;
  Json& manifest = result.manifest;
  manifest["status"] = "RUNNING";
  manifest["config"] = config_json(config);
  manifest["threads"] = thread_count();
  manifest["stages"] = Json::array();
  Json timing = Json::object();
  const fs::path out = config.output;
  fs::create_directories(out);

  auto write_manifest = [&] {
    Json m = manifest;
    m["timing_seconds"] = timing;
    std::ofstream f(out / "manifest.json", std::ios::trunc);
    f << m.dump(2) << '\n';
  };
  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      timing[name] = std::chrono::duration<double>(Clock::now() - t0).count();
      manifest["stages"].push_back({{"name", name}, {"status", "FAILED"}});
      manifest["status"] = "FAILED";
      manifest["error"] = std::string("[") + name + "] " + e.what();
      write_manifest();
      throw StageError(name, e.what());
    }
    timing[name] = std::chrono::duration<double>(Clock::now() - t0).count();
    manifest["stages"].push_back({{"name", name}, {"status", "OK"}});
  };

  Mask mask;
  SubjectStack stack;
  DesignMatrix design;
  std::vector<std::string> names;
  stage("load", [&] {
    const auto vols = read_subject_volumes(config.subjects);
    if (config.mask == "auto") {
      mask = auto_mask(vols);
    } else {
      const Volume mv = read_volume(config.mask);
      if (!(mv.grid == vols.front().grid))
        throw ParseError("grid mismatch: mask " + config.mask + " does not match " + config.subjects.front().string());
      mask = mask_from_volume(mv);
    }
    if (mask.n_active() == 0) throw DomainError("mask has no active voxels");
    stack = stack_from_volumes(vols, mask);
    const CsvTable cov = read_numeric_csv(config.covariates);
    if (cov.values.rows() != static_cast<Eigen::Index>(config.subjects.size()))
      throw ParseError(config.covariates.string() + ": " + std::to_string(cov.values.rows()) + " covariate rows for " +
                       std::to_string(config.subjects.size()) + " subjects");
    names = cov.header;
    design = fit_design(cov.values);
    write_volume(out / "mask.vol", mask_volume(mask));
    manifest["n"] = design.n;
    manifest["p"] = design.p;
    manifest["n_active"] = mask.n_active();
    manifest["covariates"] = names;
  });

  CoefficientField raw;
  NoiseModel noise;
  stage("stage1", [&] {
    raw = ls_fit(stack, design);
    noise = fit_noise_model(stack, design, raw, config.noise);
    raw.var_diag = raw_variance(design, noise.sigma_y_diag(), config.schedule.variance_floor);
    std::vector<std::vector<std::string>> ev;
    for (Eigen::Index l = 0; l < noise.all_eigenvalues.size(); ++l)
      ev.push_back({std::to_string(l + 1), format_double(noise.all_eigenvalues(l)), l < noise.retained() ? "1" : "0"});
    write_text_csv(out / "eigenvalues.csv", {"component", "eigenvalue", "retained"}, ev);
    for (Eigen::Index l = 0; l < noise.retained(); ++l)
      write_volume(out / ("eigenfunction_" + std::to_string(l + 1) + ".vol"), volume_from_field(mask, noise.eigenfunctions.row(l)));
    std::vector<std::string> sh{"subject"};
    for (Eigen::Index l = 0; l < noise.retained(); ++l) sh.push_back("xi_" + std::to_string(l + 1));
    Eigen::MatrixXd sc(noise.scores.rows(), noise.scores.cols() + 1);
    for (Eigen::Index i = 0; i < sc.rows(); ++i) sc(i, 0) = static_cast<double>(i);
    sc.rightCols(noise.scores.cols()) = noise.scores;
    write_numeric_csv(out / "scores.csv", sh, sc);
    Json gcv = Json::array();
    for (std::size_t k = 0; k < noise.gcv.candidates.size(); ++k)
      gcv.push_back({{"h", noise.gcv.candidates[k]},
                     {"score", std::isnan(noise.gcv.scores[k]) ? Json(nullptr) : Json(noise.gcv.scores[k])},
                     {"trace", noise.gcv.traces[k]}});
    manifest["stage1"] = {{"chosen_h", noise.chosen_h},
                          {"gcv", gcv},
                          {"L_S", noise.retained()},
                          {"cum_threshold", noise.cum_threshold},
                          {"local_linear_fallback_voxels", noise.fallback_voxels}};
  });

  CoefficientField final_field;
  CovarianceFn cov_fn;
  MassState mass_state;
  std::vector<WeightTable> lce_weights;
  Eigen::VectorXd gks_sigma;
  stage("stage2", [&] {
    Json info;
    info["method"] = method_name(config.method);
    if (config.method == Method::Svcm) {
      const ScaleSchedule sched = make_schedule(design.n, config.schedule);
      info["c_n"] = sched.c_n;
      info["h"] = sched.h;
      info["c_s"] = sched.c_s;
      Json frozen = Json::array();
      mass_state = run_mass(raw, sched, noise, design, [&](const MassState& st) {
        std::size_t f = 0;
        for (auto v : st.frozen) f += v;
        frozen.push_back(static_cast<double>(f) / static_cast<double>(st.frozen.size()));
        if (config.write_all_scales || st.current.scale_index == sched.max_step)
          for (Eigen::Index j = 0; j < design.p; ++j) {
            write_volume(out / coef_file("beta", j, st.current.scale_index), volume_from_field(mask, st.current.beta.row(j)));
            write_volume(out / coef_file("var", j, st.current.scale_index), volume_from_field(mask, st.current.var_diag.row(j)));
          }
      });
      info["frozen_fraction"] = frozen;
      final_field = mass_state.current;
      cov_fn = [&](Rank d) { return mass_covariance(mass_state, noise, design, d); };
    } else if (config.method == Method::Lce) {
      info["bandwidth"] = config.bandwidth;
      LceResult lce = lce_smooth(raw, config.bandwidth, noise, design);
      final_field = std::move(lce.field);
      lce_weights = std::move(lce.weights);
      cov_fn = [&](Rank d) { return weighted_covariance(lce_weights, noise, design, d); };
    } else {
      info["bandwidth"] = config.bandwidth;
      const SubjectStack smoothed = config.bandwidth > 0.0 ? gaussian_smooth_stack(stack, config.bandwidth) : stack;
      final_field = ls_fit(smoothed, design);
      gks_sigma = plugin_sigma_y(residuals(smoothed, design, final_field));
      cov_fn = [&](Rank d) { return raw_covariance(gks_sigma, design, d); };
    }
    for (Eigen::Index j = 0; j < design.p; ++j) {
      write_volume(out / coef_file("beta", j), volume_from_field(mask, final_field.beta.row(j)));
      write_volume(out / coef_file("var", j), volume_from_field(mask, final_field.var_diag.row(j)));
    }
    manifest["stage2"] = info;
  });

  stage("stage3", [&] {
    const Eigen::Index p = design.p;
    std::vector<Eigen::MatrixXd> covs(static_cast<std::size_t>(mask.n_active()));
    std::vector<std::uint8_t> clipped(covs.size(), 0);
    parallel_for(covs.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t d = b; d < e; ++d) {
        covs[d] = cov_fn(static_cast<Rank>(d));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covs[d], Eigen::EigenvaluesOnly);
        clipped[d] = eig.eigenvalues().minCoeff() <= 0.0;
      }
    }, 128);
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index k = j; k < p; ++k) {
        Eigen::RowVectorXd v(mask.n_active());
        for (Rank d = 0; d < mask.n_active(); ++d) v(d) = covs[static_cast<std::size_t>(d)](j, k);
        write_volume(out / cov_file(j, k), volume_from_field(mask, v));
      }
    const CovarianceFn cached = [&](Rank d) { return covs[static_cast<std::size_t>(d)]; };

    std::vector<NamedHypothesis> hyps = config.hypotheses;
    if (hyps.empty())
      for (Eigen::Index j = 0; j < p; ++j) {
        const std::string nm = j < static_cast<Eigen::Index>(names.size()) && !names[static_cast<std::size_t>(j)].empty()
                                   ? names[static_cast<std::size_t>(j)]
                                   : "coef" + std::to_string(j);
        const Hypothesis h = single_coefficient_hypothesis(j, p);
        hyps.push_back({nm, h.r1, h.b0});
      }
    Json tests = Json::array();
    for (const auto& nh : hyps) {
      const Hypothesis h = make_hypothesis(nh.r1, nh.b0);
      WaldMap w = wald_test(final_field, cached, h);
      w.clusters = detect_clusters(w, mask, config.clusters.alpha, config.clusters.min_size, config.clusters.connectivity);
      tests.push_back(write_wald_outputs(out, nh.name, w, mask));
      result.wald.push_back(std::move(w));
    }
    std::size_t nclip = 0;
    for (auto c : clipped) nclip += c;
    manifest["stage3"] = {{"tests", tests}, {"psd_boundary_voxels", nclip}};
  });

  result.final_field = final_field;
  manifest["status"] = "OK";
  write_manifest();
  return result;
}

/// Loaded fit directory: mask, final coefficients and per-voxel covariance.
struct FitArtifacts {
  Mask mask;
  CoefficientField field;
  std::vector<Eigen::MatrixXd> cov;
  Json manifest;
};

inline FitArtifacts load_fit(const fs::path& dir) {
  FitArtifacts fa;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ParseError((dir / "manifest.json").string() + ": cannot open");
  fa.manifest = Json::parse(in);
  if (fa.manifest.value("status", std::string()) != "OK") throw ParseError(dir.string() + ": fit did not complete");
  const Eigen::Index p = fa.manifest.at("p").get<Eigen::Index>();
  fa.mask = mask_from_volume(read_volume(dir / "mask.vol"));
  const Rank nd = fa.mask.n_active();
  fa.field.mask = fa.mask;
  fa.field.beta.resize(p, nd);
  fa.field.var_diag.resize(p, nd);
  auto gather = [&](const fs::path& path, auto&& put) {
    const Volume v = read_volume(path);
    if (!(v.grid == fa.mask.grid())) throw ParseError("grid mismatch: " + path.string() + " does not match mask.vol");
    for (Rank d = 0; d < nd; ++d) put(d, static_cast<double>(v.data[static_cast<std::size_t>(fa.mask.voxel(d))]));
  };
  for (Eigen::Index j = 0; j < p; ++j) {
    gather(dir / coef_file("beta", j), [&](Rank d, double x) { fa.field.beta(j, d) = x; });
    gather(dir / coef_file("var", j), [&](Rank d, double x) { fa.field.var_diag(j, d) = x; });
  }
  fa.cov.assign(static_cast<std::size_t>(nd), Eigen::MatrixXd::Zero(p, p));
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index k = j; k < p; ++k)
      gather(dir / cov_file(j, k), [&](Rank d, double x) {
        fa.cov[static_cast<std::size_t>(d)](j, k) = x;
        fa.cov[static_cast<std::size_t>(d)](k, j) = x;
      });
  return fa;
}

}  // namespace svcm
