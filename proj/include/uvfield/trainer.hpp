#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uvfield/autodiff.hpp"
#include "uvfield/geometry.hpp"
#include "uvfield/losses.hpp"
#include "uvfield/neural_fields.hpp"

namespace uvfield {

/// Source of training-space surface samples.
class SurfaceSource {
 public:
  virtual ~SurfaceSource() = default;
  virtual bool empty() const = 0;
  /// Appends `count` samples to `out`.
  virtual void draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const = 0;
  /// Transform from input coordinates into the training frame.
  virtual const Similarity& normalization() const = 0;
  /// 0 for meshes, 1 for point clouds (stored in the checkpoint header).
  virtual std::uint32_t kind() const = 0;
};

/// Fresh area-uniform samples on the normalized mesh.
class MeshSource : public SurfaceSource {
 public:
  explicit MeshSource(const Mesh& mesh, NormalMode mode = NormalMode::Interpolated);

  bool empty() const override { return sampler_->total_area() <= 0.0; }
  void draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const override;
  const Similarity& normalization() const override { return normalization_; }
  std::uint32_t kind() const override { return 0; }
  const Mesh& mesh() const { return mesh_; }

 protected:
  Similarity normalization_;
  Mesh mesh_;  // normalized copy
  std::unique_ptr<AreaSampler> sampler_;
};

/// Area-uniform samples kept only if the first hit of a ray from one of
/// `views` cameras on a surrounding sphere.
class VisibleMeshSource : public MeshSource {
 public:
  VisibleMeshSource(const Mesh& mesh, int views = 32, NormalMode mode = NormalMode::Interpolated);
  ~VisibleMeshSource() override;

  void draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const override;
  bool visible(const Vec3& x, int triangle) const;
  const std::vector<Vec3>& viewpoints() const { return eyes_; }

 private:
  std::unique_ptr<Bvh> bvh_;
  std::vector<Vec3> eyes_;
};

/// Uniform with-replacement draws from a fixed oriented point set. Tangent
/// frames are redrawn on every draw.
class PointSource : public SurfaceSource {
 public:
  explicit PointSource(std::vector<SurfaceSample> points);

  bool empty() const override { return points_.empty(); }
  void draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const override;
  const Similarity& normalization() const override { return normalization_; }
  std::uint32_t kind() const override { return 1; }
  const std::vector<SurfaceSample>& points() const { return points_; }

 private:
  Similarity normalization_;
  std::vector<SurfaceSample> points_;  // normalized
};

struct TrainConfig {
  ModelConfig model;  // charts, architecture and normal-grid resolution
  long iterations = 50000;
  std::size_t batch_surface = 4096;
  std::size_t batch_uv = 4096;
  std::uint64_t seed = 0;
  double lr_mlp = 1e-4;
  double lr_sigma = 0.1;
  double lr_texture = 0.04;
  ad::AdamConfig adam;
  LossWeights weights;
  double epsilon = 1e-2;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  long log_every = 1;

  /// Throws ContractViolation describing the first invalid field.
  void validate() const;
};

struct TrainRecord {
  long iteration = 0;
  std::array<double, kTermCount> terms{};  // unweighted
  double total = 0.0;                      // weighted
  double lr = 0.0;                         // MLP learning rate used at this step
  double seconds = 0.0;                    // wall time since fit() started
};

struct TrainLog {
  std::vector<TrainRecord> records;

  /// Header plus one row per record. Wall time is nondeterministic, so it can be left out.
  std::string csv(bool include_time = true) const;
  void write_csv(const std::string& path, bool include_time = true) const;
  /// Mean of one term over records [first, first + count).
  double mean(Term term, std::size_t first, std::size_t count) const;
};

struct FitResult {
  AtlasModel model;
  TrainLog log;
};

using ProgressFn = std::function<void(const TrainRecord&)>;

/// `batch_surface` samples from the source followed by `batch_uv` uniform texture points.
Batch make_batch(const SurfaceSource& source, const TrainConfig& config, Rng& rng);
void make_batch(const SurfaceSource& source, const TrainConfig& config, Rng& rng, Batch& out);

/// Runs config.iterations Adam steps from init_model(config.model, config.seed).
/// Throws NumericFault carrying the iteration and term name on a non-finite loss.
FitResult fit(const SurfaceSource& source, const TrainConfig& config, const ProgressFn& progress = {});

/// Flat "key = value" text; '#' starts a comment. Unknown keys throw ParseError.
void apply_config_file(TrainConfig& config, const std::string& path);
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);

}  // namespace uvfield
