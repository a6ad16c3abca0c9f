#include "uvfield/trainer.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "uvfield/errors.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace uvfield {

MeshSource::MeshSource(const Mesh& mesh, NormalMode mode) {
  normalization_ = unit_cube_transform(mesh);
  mesh_ = transformed(mesh, normalization_);
  sampler_ = std::make_unique<AreaSampler>(mesh_, mode);
}

void MeshSource::draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const {
  if (empty()) throw ContractViolation("MeshSource: mesh has no sampleable area");
  sampler_->sample(count, rng, out);
}

VisibleMeshSource::VisibleMeshSource(const Mesh& mesh, int views, NormalMode mode) : MeshSource(mesh, mode) {
  if (views < 1) throw ContractViolation("VisibleMeshSource: views must be >= 1");
  bvh_ = std::make_unique<Bvh>(mesh_);
  double radius = 0.0;
  for (const Vec3& p : mesh_.positions) radius = std::max(radius, p.norm());
  radius *= 2.5;
  // Fibonacci sphere: deterministic, near-uniform viewpoints.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < views; ++k) {
    const double y = 1.0 - 2.0 * (k + 0.5) / views;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * k;
    eyes_.push_back(radius * Vec3(r * std::cos(phi), y, r * std::sin(phi)));
  }
}

VisibleMeshSource::~VisibleMeshSource() = default;

bool VisibleMeshSource::visible(const Vec3& x, int triangle) const {
  for (const Vec3& eye : eyes_) {
    const auto hit = bvh_->intersect(eye, x - eye);
    if (hit && (hit->triangle == triangle || hit->distance >= 1.0 - 1e-6)) return true;
  }
  return false;
}

void VisibleMeshSource::draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const {
  if (empty()) throw ContractViolation("VisibleMeshSource: mesh has no sampleable area");
  // Give up if almost nothing is visible rather than spinning forever.
  const std::size_t max_attempts = 1000 * count + 1000;
  std::size_t kept = 0, attempts = 0;
  while (kept < count) {
    if (++attempts > max_attempts) throw ContractViolation("VisibleMeshSource: no visible surface found");
    SurfaceSample s = sampler_->sample(rng);
    if (!visible(s.x, s.triangle)) continue;
    out.push_back(s);
    ++kept;
  }
}

PointSource::PointSource(std::vector<SurfaceSample> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  std::vector<Vec3> xs;
  xs.reserve(points_.size());
  for (const SurfaceSample& s : points_) xs.push_back(s.x);
  normalization_ = unit_cube_transform(xs);
  for (SurfaceSample& s : points_) s.x = normalization_.apply(s.x);
}

void PointSource::draw(std::size_t count, Rng& rng, std::vector<SurfaceSample>& out) const {
  if (points_.empty()) throw ContractViolation("PointSource: point set is empty");
  for (std::size_t k = 0; k < count; ++k) {
    SurfaceSample s = points_[rng.below(points_.size())];
    std::tie(s.tangent_p, s.tangent_q) = tangent_frame(s.normal, rng);
    out.push_back(s);
  }
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("TrainConfig: ") + what);
  };
  require(model.charts >= 1, "charts must be >= 1");
  require(model.layers >= 2, "layers must be >= 2");
  require(model.width >= 1, "width must be >= 1");
  require(model.pe_degree_chart >= 1 && model.pe_degree_map >= 1, "encoding degrees must be >= 1");
  require(model.texture_res >= 1, "texture_res must be >= 1");
  require(iterations >= 0, "iterations must be >= 0");
  require(batch_surface >= 1 && batch_uv >= 1, "batch sizes must be >= 1");
  require(lr_mlp > 0.0 && lr_sigma > 0.0 && lr_texture > 0.0, "learning rates must be > 0");
  require(std::isfinite(lr_mlp) && std::isfinite(lr_sigma) && std::isfinite(lr_texture), "learning rates must be finite");
  require(weights.valid(), "loss weights must be finite and >= 0");
  require(epsilon > 0.0 && std::isfinite(epsilon), "epsilon must be > 0");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(checkpoint_every == 0 || !checkpoint_path.empty(), "checkpoint_every needs checkpoint_path");
  require(log_every >= 1, "log_every must be >= 1");
}

std::string TrainLog::csv(bool include_time) const {
  std::string out = "iteration";
  for (Term t : kAllTerms) (out += ',') += term_name(t);
  out += ",total,lr";
  if (include_time) out += ",seconds";
  out += '\n';
  char buf[64];
  for (const TrainRecord& r : records) {
    out += std::to_string(r.iteration);
    for (double v : r.terms) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.total, r.lr);
    out += buf;
    if (include_time) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.seconds);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void TrainLog::write_csv(const std::string& path, bool include_time) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write log: " + path);
  f << csv(include_time);
  if (!f) throw IoError("failed writing log: " + path);
}

double TrainLog::mean(Term term, std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > records.size()) throw ContractViolation("TrainLog::mean: range out of bounds");
  double acc = 0.0;
  for (std::size_t k = first; k < first + count; ++k) acc += records[k].terms[static_cast<std::size_t>(term)];
  return acc / static_cast<double>(count);
}

void make_batch(const SurfaceSource& source, const TrainConfig& config, Rng& rng, Batch& out) {
  if (source.empty()) throw ContractViolation("make_batch: sample source is empty");
  out.surface.clear();
  out.uv.clear();
  out.surface.reserve(config.batch_surface);
  source.draw(config.batch_surface, rng, out.surface);
  out.uv.reserve(config.batch_uv);
  for (std::size_t k = 0; k < config.batch_uv; ++k) {
    const double u = rng.uniform();
    const double v = rng.uniform();
    out.uv.emplace_back(u, v);
  }
}

namespace {

// Flushes denormals to zero for the duration of a fit. Late in training, vanishing gradients
// and Adam moments go subnormal and otherwise slow each step several-fold.
class DenormalGuard {
 public:
#if defined(__SSE2__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace

Batch make_batch(const SurfaceSource& source, const TrainConfig& config, Rng& rng) {
  Batch batch;
  make_batch(source, config, rng, batch);
  return batch;
}

FitResult fit(const SurfaceSource& source, const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  if (source.empty()) throw ContractViolation("fit: sample source is empty");
  const DenormalGuard denormals;
  FitResult result{init_model(config.model, config.seed), {}};
  AtlasModel& model = result.model;
  model.normalization = source.normalization();
  model.source_kind = source.kind();

  struct Group {
    ad::Parameter* param;
    double base_lr;
  };
  std::vector<Group> groups;
  for (ad::Parameter* p : model.parameters()) groups.push_back({p, config.lr_mlp});
  groups[groups.size() - static_cast<std::size_t>(model.charts()) - 1].base_lr = config.lr_sigma;
  for (std::size_t k = groups.size() - static_cast<std::size_t>(model.charts()); k < groups.size(); ++k)
    groups[k].base_lr = config.lr_texture;

  Rng rng = Rng::stream(config.seed, 1);
  ad::Graph<float> graph;
  Batch batch;
  const auto start = std::chrono::steady_clock::now();

  for (long step = 1; step <= config.iterations; ++step) {
    make_batch(source, config, rng, batch);
    for (Group& g : groups) g.param->zero_grad();
    graph.reset();
    LossEvaluation eval;
    try {
      eval = total_loss(graph, model, batch, config.weights, config.epsilon);
      graph.backward(eval.total);
    } catch (const NumericFault& e) {
      const std::string term = e.term().empty() ? "gradient" : e.term();
      throw NumericFault("non-finite " + term + " at iteration " + std::to_string(step), step, term);
    }
    const double factor = ad::cosine_decay_lr(1.0, step - 1, config.iterations);
    for (Group& g : groups) ad::adam_step(*g.param, g.base_lr * factor, config.adam, step);

    if (step % config.log_every == 0 || step == config.iterations) {
      TrainRecord rec;
      rec.iteration = step;
      rec.terms = eval.values;
      rec.total = eval.total_value;
      rec.lr = config.lr_mlp * factor;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.records.push_back(rec);
      if (progress) progress(rec);
    }
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0)
      save_checkpoint(model, config.checkpoint_path);
  }
  return result;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ContractViolation("invalid value for " + key + ": '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "no") return false;
  throw ContractViolation("invalid boolean for " + key + ": '" + text + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto i = [&] { return parse_number<long>(key, value); };
  auto u = [&] { return parse_number<std::uint64_t>(key, value); };
  auto d = [&] { return parse_number<double>(key, value); };
  if (key == "charts") c.model.charts = static_cast<int>(i());
  else if (key == "layers") c.model.layers = static_cast<int>(i());
  else if (key == "width") c.model.width = static_cast<int>(i());
  else if (key == "pe_degree_chart") c.model.pe_degree_chart = static_cast<int>(i());
  else if (key == "pe_degree_map") c.model.pe_degree_map = static_cast<int>(i());
  else if (key == "include_input") c.model.include_input = parse_bool(key, value);
  else if (key == "texture_res") c.model.texture_res = static_cast<int>(i());
  else if (key == "iterations") c.iterations = i();
  else if (key == "batch_surface") c.batch_surface = u();
  else if (key == "batch_uv") c.batch_uv = u();
  else if (key == "seed") c.seed = u();
  else if (key == "lr_mlp") c.lr_mlp = d();
  else if (key == "lr_sigma") c.lr_sigma = d();
  else if (key == "lr_texture") c.lr_texture = d();
  else if (key == "adam_beta1") c.adam.beta1 = d();
  else if (key == "adam_beta2") c.adam.beta2 = d();
  else if (key == "adam_eps") c.adam.eps = d();
  else if (key == "epsilon") c.epsilon = d();
  else if (key == "checkpoint_every") c.checkpoint_every = i();
  else if (key == "checkpoint_path") c.checkpoint_path = value;
  else if (key == "log_every") c.log_every = i();
  else if (key == "w_323") c.weights.cycle_3d = d();
  else if (key == "w_232") c.weights.cycle_2d = d();
  else if (key == "w_entropy") c.weights.entropy = d();
  else if (key == "w_surface") c.weights.surface = d();
  else if (key == "w_cluster") c.weights.cluster = d();
  else if (key == "w_conformal") c.weights.conformal = d();
  else if (key == "w_stretch") c.weights.stretch = d();
  else if (key == "w_texture") c.weights.texture = d();
  else throw ContractViolation("unknown config key '" + key + "'");
}

void apply_config_file(TrainConfig& config, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config: " + path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(f, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path, number, "expected key = value");
    try {
      apply_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ContractViolation& e) {
      throw ParseError(path, number, e.what());
    }
  }
}

}  // namespace uvfield
