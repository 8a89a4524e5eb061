#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ecpt {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

/// Unit-norm real vector. Construction normalizes or verifies the norm.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  /// L2-normalizes `raw`; throws EmbeddingError for zero or non-finite input.
  static EmbeddingVector normalized(Eigen::VectorXd raw);
  /// Accepts an already unit-norm vector (within 1e-6), e.g. read from disk.
  static EmbeddingVector from_unit(Eigen::VectorXd values);

  std::size_t dimension() const { return static_cast<std::size_t>(values_.size()); }
  const Eigen::VectorXd& values() const { return values_; }
  double dot(const EmbeddingVector& other) const;

  bool operator==(const EmbeddingVector& other) const;

 private:
  explicit EmbeddingVector(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

/// Frozen base text embedder.
class BaseEmbedder {
 public:
  virtual ~BaseEmbedder() = default;

  virtual std::size_t dimension() const = 0;
  /// Stable description of the backend (kind, model, dimension).
  virtual std::string identity() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const = 0;

  EmbeddingVector embed_base(std::string_view text) const;
};

/// Token-count hashing embedder: lowercase tokens split on whitespace and
/// punctuation are hashed into `dimension` buckets, counts are L2-normalized.
class HashingEmbedder final : public BaseEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = kDefaultEmbeddingDim);

  std::size_t dimension() const override { return dimension_; }
  std::string identity() const override;
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override;

  static std::vector<std::string> tokenize(std::string_view text);

 private:
  std::size_t dimension_;
};

/// OpenAI-compatible `/embeddings` endpoint.
class HttpEmbedder final : public BaseEmbedder {
 public:
  struct Config {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "text-embedding-3-small";
    std::string api_key_env = "OPENAI_API_KEY";
    std::size_t dimension = kDefaultEmbeddingDim;
    std::chrono::seconds timeout{60};
  };

  explicit HttpEmbedder(Config config);

  std::size_t dimension() const override { return config_.dimension; }
  std::string identity() const override;
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override;

 private:
  Config config_;
};

// ---------------------------------------------------------------------------
// Projection head
// ---------------------------------------------------------------------------

inline constexpr std::string_view kProjectionFormatVersion = "ecpt-proj/1";

class ProjectionModel {
 public:
  ProjectionModel() = default;
  static ProjectionModel identity(std::size_t dimension);

  std::size_t dimension() const { return static_cast<std::size_t>(weight_.rows()); }
  const Eigen::MatrixXd& weight() const { return weight_; }
  Eigen::MatrixXd& weight() { return weight_; }
  bool trained() const { return trained_; }
  std::uint64_t seed() const { return seed_; }
  int epoch_count() const { return epoch_count_; }

  void mark_trained(std::uint64_t seed, int epochs);

  /// Identity hash over dimension and raw weight bytes (16 hex digits).
  std::string hash() const;

  /// L2-normalize(weight * base).
  EmbeddingVector apply(const EmbeddingVector& base) const;

  /// Header line `ecpt-proj/1 <D> <seed> <epochs> <trained>` followed by
  /// D*D little-endian float64 values in row-major order.
  void save(const std::filesystem::path& path) const;
  static ProjectionModel load(const std::filesystem::path& path);

 private:
  Eigen::MatrixXd weight_;
  bool trained_ = false;
  std::uint64_t seed_ = 0;
  int epoch_count_ = 0;
};

EmbeddingVector embed(const BaseEmbedder& embedder, std::string_view text, const ProjectionModel& model);

// ---------------------------------------------------------------------------
// Triplet loss and training
// ---------------------------------------------------------------------------

double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// max(0, d(a,p) - d(a,n) + margin) with squared Euclidean d.
double triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive, const Eigen::VectorXd& negative,
                    double margin);

struct TripletConfig {
  double margin = 1.0;
  double learning_rate = 1e-3;
  int epochs = 20;
  std::size_t batch_size = 16;

  void validate() const;
};

/// Base vectors of an anchor/positive/negative triple.
struct BaseTriplet {
  Eigen::VectorXd anchor;
  Eigen::VectorXd positive;
  Eigen::VectorXd negative;
};

/// Loss of a triple after projecting by `weight` and normalizing.
double projected_triplet_loss(const Eigen::MatrixXd& weight, const BaseTriplet& t, double margin);

/// Analytic d(loss)/d(weight), accumulated into `grad`; returns the loss.
double accumulate_triplet_gradient(const Eigen::MatrixXd& weight, const BaseTriplet& t, double margin,
                                   Eigen::MatrixXd& grad);

struct LabeledVector {
  Eigen::VectorXd base;
  std::size_t label = 0;
};

struct TrainResult {
  ProjectionModel model;
  std::vector<double> epoch_losses;  // mean triplet loss per epoch
  std::size_t skipped_anchors = 0;   // anchors whose label has no positive
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Mini-batch SGD over uniformly sampled (anchor, positive, negative)
/// triplets. Deterministic in (sample order, seed, config).
TrainResult train(std::span<const LabeledVector> samples, const TripletConfig& config, std::uint64_t seed,
                  const EpochCallback& on_epoch = {});

struct GradientCheckResult {
  bool conclusive = true;
  bool hinge_active = false;
  double loss = 0.0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
};

/// Compares the analytic weight gradient with central differences. Points
/// within `kink_tolerance` of the hinge are reported as inconclusive.
GradientCheckResult gradient_check(const ProjectionModel& model, const BaseTriplet& triplet, double margin,
                                   double epsilon, double kink_tolerance = 1e-6);

/// Deterministic uniform integer in [0, bound) (rejection sampling, so the
/// sequence does not depend on the standard library's distributions).
std::uint64_t uniform_index(std::uint64_t& state, std::uint64_t bound);

}  // namespace ecpt
