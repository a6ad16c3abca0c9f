// Command-line front end: fit -> bake -> eval -> preview.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uvfield/atlas_io.hpp"
#include "uvfield/errors.hpp"
#include "uvfield/geometry.hpp"
#include "uvfield/image.hpp"
#include "uvfield/metrics.hpp"
#include "uvfield/neural_fields.hpp"
#include "uvfield/trainer.hpp"

namespace fs = std::filesystem;
using namespace uvfield;

namespace {

enum Exit { kOk = 0, kUsage = 2, kNumeric = 3, kCompat = 4, kFormat = 5 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// Refuses a mesh whose unit-cube transform differs from the one the model was trained under.
void check_compatible(const AtlasModel& model, const Mesh& mesh) {
  if (model.source_kind != 0) return;  // point-cloud fits carry their own frame
  const Similarity sim = unit_cube_transform(mesh);
  const double tol = 1e-9 * std::max(1.0, model.normalization.center.norm());
  const bool same_center = (sim.center - model.normalization.center).norm() <= tol;
  const bool same_scale = std::abs(sim.scale - model.normalization.scale) <= 1e-9 * model.normalization.scale;
  if (!same_center || !same_scale)
    throw CompatibilityError("mesh does not match the normalization stored in the checkpoint");
}

struct FitArgs {
  std::string mesh, points, out, config, log;
  int charts = 4;
  long iters = 50000;
  std::uint64_t seed = 0;
  bool visibility = false;
  int layers = 8, width = 256, texture_res = 128;
  std::size_t batch_surface = 4096, batch_uv = 4096;
  double lr_mlp = 1e-4;
  long checkpoint_every = 0;
};

int run_fit(const FitArgs& a, const CLI::App& cmd) {
  if (a.mesh.empty() == a.points.empty()) throw UsageError("fit needs exactly one of --mesh or --points");
  if (!a.mesh.empty()) require_file(a.mesh, "mesh");
  if (!a.points.empty()) require_file(a.points, "point cloud");
  if (!a.config.empty()) require_file(a.config, "config");

  TrainConfig cfg;
  if (!a.config.empty()) apply_config_file(cfg, a.config);
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--charts")) cfg.model.charts = a.charts;
  if (given("--iters")) cfg.iterations = a.iters;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--layers")) cfg.model.layers = a.layers;
  if (given("--width")) cfg.model.width = a.width;
  if (given("--texture-res")) cfg.model.texture_res = a.texture_res;
  if (given("--batch-surface")) cfg.batch_surface = a.batch_surface;
  if (given("--batch-uv")) cfg.batch_uv = a.batch_uv;
  if (given("--lr-mlp")) cfg.lr_mlp = a.lr_mlp;
  if (given("--checkpoint-every")) cfg.checkpoint_every = a.checkpoint_every;
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_path.empty()) cfg.checkpoint_path = a.out;
  try {
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }

  std::unique_ptr<SurfaceSource> source;
  if (!a.mesh.empty()) {
    const Mesh mesh = load_mesh(a.mesh);
    if (a.visibility)
      source = std::make_unique<VisibleMeshSource>(mesh);
    else
      source = std::make_unique<MeshSource>(mesh);
  } else {
    Rng frame_rng = Rng::stream(cfg.seed, 3);
    std::size_t rejected = 0;
    auto points = load_point_cloud(a.points, frame_rng, &rejected);
    if (rejected > 0) std::fprintf(stderr, "skipped %zu points with zero normals\n", rejected);
    source = std::make_unique<PointSource>(std::move(points));
  }
  if (source->empty()) throw UsageError("input has no usable surface");

  const long every = std::max(1L, cfg.iterations / 20);
  FitResult result = fit(*source, cfg, [&](const TrainRecord& r) {
    if (r.iteration % every == 0 || r.iteration == cfg.iterations)
      std::fprintf(stderr, "iter %ld total %.6g lr %.3g (%.1fs)\n", r.iteration, r.total, r.lr, r.seconds);
  });
  save_checkpoint(result.model, a.out);
  const std::string log_path = a.log.empty() ? a.out + ".csv" : a.log;
  result.log.write_csv(log_path);
  std::printf("wrote %s and %s (%zu log rows)\n", a.out.c_str(), log_path.c_str(), result.log.records.size());
  return kOk;
}

struct BakeArgs {
  std::string model, mesh, out, atlas;
  int atlas_res = 1024;
};

int run_bake(const BakeArgs& a) {
  require_file(a.model, "model");
  require_file(a.mesh, "mesh");
  if (a.atlas_res < 2) throw UsageError("--atlas-res must be >= 2");
  const AtlasModel model = load_checkpoint(a.model);
  const Mesh mesh = load_mesh(a.mesh);
  check_compatible(model, mesh);
  const BakedAtlas baked = bake(model, mesh, a.atlas_res);
  std::string texture_name;
  if (!a.atlas.empty()) {
    rasterize_normal_atlas(model, a.atlas_res, a.atlas);
    texture_name = fs::path(a.atlas).filename().string();
  }
  export_obj(mesh, baked, a.out, texture_name);
  std::printf("seam_edges=%zu chart_vertices=", baked.seam_edges.size());
  const auto counts = baked.vertices_per_chart();
  for (std::size_t i = 0; i < counts.size(); ++i) std::printf("%s%zu", i ? "," : "", counts[i]);
  std::printf("\n");
  return kOk;
}

struct EvalArgs {
  std::string baked, model, mesh, report;
  int views = 16, res = 256, texel_res = 128;
  std::uint64_t seed = 0;
  std::size_t uv_samples = std::size_t{1} << 20;
};

int run_eval(const EvalArgs& a) {
  if (a.baked.empty() && (a.model.empty() || a.mesh.empty()))
    throw UsageError("eval needs --baked, or --model together with --mesh");
  if (!a.model.empty() && a.baked.empty() && a.mesh.empty()) throw UsageError("--model needs --mesh or --baked");
  if (!a.baked.empty()) require_file(a.baked, "baked mesh");
  if (!a.model.empty()) require_file(a.model, "model");
  if (!a.mesh.empty()) require_file(a.mesh, "mesh");
  if (a.views < 1 || a.res < 1 || a.texel_res < 1) throw UsageError("--views, --res and --texel-res must be >= 1");

  EvalParams params;
  params.views = a.views;
  params.width = params.height = a.res;
  params.seed = a.seed;
  params.texel_res = a.texel_res;
  params.uv_samples = a.uv_samples;

  std::optional<AtlasModel> model;
  if (!a.model.empty()) model = load_checkpoint(a.model);
  Mesh mesh;
  BakedAtlas baked;
  if (!a.baked.empty()) {
    mesh = load_mesh(a.baked);
    baked = baked_from_mesh(mesh);
    if (model) check_compatible(*model, mesh);
  } else {
    mesh = load_mesh(a.mesh);
    check_compatible(*model, mesh);
    baked = bake(*model, mesh);
  }

  MetricsReport report;
  if (model) {
    const Mesh& geometry = a.mesh.empty() ? mesh : load_mesh(a.mesh);
    if (!a.mesh.empty()) check_compatible(*model, geometry);
    const MeshSource source(geometry);
    report = evaluate_atlas(mesh, baked, params, *model, source);
  } else {
    report = evaluate_atlas(mesh, baked, params);
  }
  if (!a.report.empty()) report.write_json(a.report);
  std::printf("%s\n", report.summary().c_str());
  return kOk;
}

struct PreviewArgs {
  std::string baked, texture, out;
  int views = 4, res = 256;
  std::uint64_t seed = 0;
};

int run_preview(const PreviewArgs& a) {
  require_file(a.baked, "baked mesh");
  require_file(a.texture, "texture");
  if (a.views < 1 || a.res < 1) throw UsageError("--views and --res must be >= 1");
  const Mesh mesh = load_mesh(a.baked);
  const BakedAtlas baked = baked_from_mesh(mesh);
  Image texture;
  try {
    texture = read_png(a.texture);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  const auto cameras = sample_cameras(mesh, a.views, a.seed, a.res, a.res);
  for (const std::string& path : texture_preview(mesh, baked, texture, cameras, a.out)) std::printf("%s\n", path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-field multi-chart UV atlas tool"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "optimize an atlas for a mesh or oriented point cloud");
  fit_cmd->add_option("--mesh", fa.mesh, "input OBJ mesh");
  fit_cmd->add_option("--points", fa.points, "input point cloud (x y z nx ny nz per line)");
  fit_cmd->add_option("--charts", fa.charts, "number of charts")->check(CLI::Range(1, 1 << 16));
  fit_cmd->add_option("--iters", fa.iters, "optimization steps")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--seed", fa.seed, "random seed");
  fit_cmd->add_option("--out", fa.out, "output checkpoint")->required();
  fit_cmd->add_option("--log", fa.log, "training log CSV (default <out>.csv)");
  fit_cmd->add_option("--config", fa.config, "flat key = value config file");
  fit_cmd->add_flag("--visibility-filter", fa.visibility, "keep only samples visible from a surrounding view sphere");
  fit_cmd->add_option("--layers", fa.layers, "layers per MLP")->check(CLI::Range(2, 64));
  fit_cmd->add_option("--width", fa.width, "channels per hidden layer")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--texture-res", fa.texture_res, "normal grid resolution")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--batch-surface", fa.batch_surface, "surface samples per step")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--batch-uv", fa.batch_uv, "texture samples per step")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--lr-mlp", fa.lr_mlp, "MLP learning rate")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--checkpoint-every", fa.checkpoint_every, "write the checkpoint every K steps");

  BakeArgs ba;
  auto* bake_cmd = app.add_subcommand("bake", "bake UVs onto a mesh and export OBJ/MTL plus the normal atlas");
  bake_cmd->alias("bake-export");
  bake_cmd->add_option("--model", ba.model, "checkpoint")->required();
  bake_cmd->add_option("--mesh", ba.mesh, "mesh the model was fitted to")->required();
  bake_cmd->add_option("--out", ba.out, "output OBJ")->required();
  bake_cmd->add_option("--atlas", ba.atlas, "output normal-atlas PNG");
  bake_cmd->add_option("--atlas-res", ba.atlas_res, "atlas resolution");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "render views and score the atlas");
  eval_cmd->add_option("--baked", ea.baked, "baked OBJ with vt records");
  eval_cmd->add_option("--model", ea.model, "checkpoint (enables UV efficiency)");
  eval_cmd->add_option("--mesh", ea.mesh, "source mesh (bakes in memory when --baked is absent)");
  eval_cmd->add_option("--views", ea.views, "camera count");
  eval_cmd->add_option("--res", ea.res, "render resolution");
  eval_cmd->add_option("--seed", ea.seed, "camera seed");
  eval_cmd->add_option("--texel-res", ea.texel_res, "UV efficiency texel resolution");
  eval_cmd->add_option("--uv-samples", ea.uv_samples, "UV efficiency sample count");
  eval_cmd->add_option("--report", ea.report, "output JSON report");

  PreviewArgs pa;
  auto* preview_cmd = app.add_subcommand("preview", "render a texture wrapped on a baked mesh");
  preview_cmd->add_option("--baked", pa.baked, "baked OBJ")->required();
  preview_cmd->add_option("--texture", pa.texture, "PNG texture")->required();
  preview_cmd->add_option("--views", pa.views, "camera count");
  preview_cmd->add_option("--res", pa.res, "image resolution");
  preview_cmd->add_option("--seed", pa.seed, "camera seed");
  preview_cmd->add_option("--out", pa.out, "output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*fit_cmd) return run_fit(fa, *fit_cmd);
    if (*bake_cmd) return run_bake(ba);
    if (*eval_cmd) return run_eval(ea);
    if (*preview_cmd) return run_preview(pa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericFault& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    if (e.iteration() >= 0) std::fprintf(stderr, "iteration: %ld\n", e.iteration());
    return kNumeric;
  } catch (const CompatibilityError& e) {
    std::fprintf(stderr, "incompatible input: %s\n", e.what());
    return kCompat;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kFormat;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kUsage;
  } catch (const ContractViolation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
