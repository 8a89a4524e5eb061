#include "ecpt/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ecpt/hashing.hpp"
#include "http_endpoint.hpp"

namespace ecpt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// EmbeddingVector
// ---------------------------------------------------------------------------

EmbeddingVector EmbeddingVector::normalized(Eigen::VectorXd raw) {
  if (!raw.allFinite()) throw EmbeddingError("embedding has non-finite values");
  const double norm = raw.norm();
  if (norm == 0.0) throw EmbeddingError("cannot normalize a zero vector");
  raw /= norm;
  return EmbeddingVector(std::move(raw));
}

EmbeddingVector EmbeddingVector::from_unit(Eigen::VectorXd values) {
  if (!values.allFinite()) throw EmbeddingError("embedding has non-finite values");
  if (std::fabs(values.norm() - 1.0) > 1e-6) throw EmbeddingError("embedding is not unit-norm");
  return EmbeddingVector(std::move(values));
}

double EmbeddingVector::dot(const EmbeddingVector& other) const {
  if (other.dimension() != dimension()) {
    throw EmbeddingError("dimension mismatch: " + std::to_string(dimension()) + " vs " +
                         std::to_string(other.dimension()));
  }
  return values_.dot(other.values_);
}

bool EmbeddingVector::operator==(const EmbeddingVector& other) const {
  return values_.size() == other.values_.size() && values_ == other.values_;
}

EmbeddingVector BaseEmbedder::embed_base(std::string_view text) const {
  std::string t(text);
  auto out = embed_batch(std::span<const std::string>(&t, 1));
  if (out.size() != 1) throw EmbeddingError("backend returned " + std::to_string(out.size()) + " vectors for 1 text");
  return std::move(out.front());
}

// ---------------------------------------------------------------------------
// Hashing embedder
// ---------------------------------------------------------------------------

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw EmbeddingError("embedding dimension must be positive");
}

std::string HashingEmbedder::identity() const { return "hashing/" + std::to_string(dimension_); }

std::vector<std::string> HashingEmbedder::tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '_' || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<EmbeddingVector> HashingEmbedder::embed_batch(std::span<const std::string> texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    auto tokens = tokenize(text);
    if (tokens.empty()) throw EmbeddingError("text has no tokens to embed");
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension_));
    for (const auto& tok : tokens) counts[static_cast<Eigen::Index>(fnv1a64(tok) % dimension_)] += 1.0;
    out.push_back(EmbeddingVector::normalized(std::move(counts)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP embedder
// ---------------------------------------------------------------------------

HttpEmbedder::HttpEmbedder(Config config) : config_(std::move(config)) {}

std::string HttpEmbedder::identity() const {
  return "http/" + config_.model + "/" + std::to_string(config_.dimension);
}

std::vector<EmbeddingVector> HttpEmbedder::embed_batch(std::span<const std::string> texts) const {
  auto endpoint = detail::parse_base_url(config_.base_url);
  auto client = detail::make_client(endpoint, config_.timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  json body = {{"model", config_.model}, {"input", json::array()}};
  for (const auto& t : texts) body["input"].push_back(t);

  auto res = client->Post(endpoint.prefix + "/embeddings", headers, body.dump(), "application/json");
  if (!res) throw EmbeddingError("embedding transport error: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw EmbeddingError("embedding backend returned HTTP " + std::to_string(res->status) + ": " + res->body);
  }

  std::vector<EmbeddingVector> out(texts.size());
  try {
    auto reply = json::parse(res->body);
    const auto& data = reply.at("data");
    if (data.size() != texts.size()) throw EmbeddingError("embedding backend returned wrong number of vectors");
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto values = data[i].at("embedding").get<std::vector<double>>();
      auto index = data[i].value("index", i);
      if (index >= out.size()) throw EmbeddingError("embedding index out of range");
      if (values.size() != config_.dimension) {
        throw EmbeddingError("dimension mismatch: backend returned " + std::to_string(values.size()) +
                             ", expected " + std::to_string(config_.dimension));
      }
      out[index] = EmbeddingVector::normalized(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
  } catch (const json::exception& e) {
    throw EmbeddingError(std::string("malformed embedding reply: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projection model
// ---------------------------------------------------------------------------

ProjectionModel ProjectionModel::identity(std::size_t dimension) {
  ProjectionModel m;
  m.weight_ = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dimension), static_cast<Eigen::Index>(dimension));
  return m;
}

void ProjectionModel::mark_trained(std::uint64_t seed, int epochs) {
  trained_ = true;
  seed_ = seed;
  epoch_count_ = epochs;
}

namespace {

// Row-major copy of the weights as raw doubles.
std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

static_assert(std::endian::native == std::endian::little, "projection files assume a little-endian host");

}  // namespace

std::string ProjectionModel::hash() const {
  auto data = row_major(weight_);
  std::uint64_t h = fnv1a64(std::to_string(weight_.rows()));
  h = fnv1a64(std::as_bytes(std::span(data)), h);
  return to_hex16(h);
}

EmbeddingVector ProjectionModel::apply(const EmbeddingVector& base) const {
  if (base.dimension() != dimension()) {
    throw EmbeddingError("dimension mismatch: model " + std::to_string(dimension()) + ", vector " +
                         std::to_string(base.dimension()));
  }
  return EmbeddingVector::normalized(weight_ * base.values());
}

void ProjectionModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw EmbeddingError("cannot write projection file " + path.string());
  out << kProjectionFormatVersion << ' ' << dimension() << ' ' << seed_ << ' ' << epoch_count_ << ' '
      << (trained_ ? 1 : 0) << '\n';
  auto data = row_major(weight_);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw EmbeddingError("write failed: " + path.string());
}

ProjectionModel ProjectionModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingError("cannot open projection file " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string version;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  int epochs = 0, trained = 0;
  hs >> version >> dim >> seed >> epochs >> trained;
  if (version != kProjectionFormatVersion) {
    throw EmbeddingError(path.string() + ": version mismatch, expected " + std::string(kProjectionFormatVersion));
  }
  if (!hs || dim == 0) throw EmbeddingError(path.string() + ": corrupted header");

  std::vector<double> data(dim * dim);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
    throw EmbeddingError(path.string() + ": truncated weight matrix");
  }
  ProjectionModel m;
  m.weight_ = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  if (!m.weight_.allFinite()) throw EmbeddingError(path.string() + ": non-finite weights");
  m.trained_ = trained != 0;
  m.seed_ = seed;
  m.epoch_count_ = epochs;
  return m;
}

EmbeddingVector embed(const BaseEmbedder& embedder, std::string_view text, const ProjectionModel& model) {
  return model.apply(embedder.embed_base(text));
}

// ---------------------------------------------------------------------------
// Triplet loss
// ---------------------------------------------------------------------------

double squared_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw EmbeddingError("dimension mismatch in distance");
  return (a - b).squaredNorm();
}

double triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive, const Eigen::VectorXd& negative,
                    double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw EmbeddingError("dimension mismatch in triplet");
  }
  return std::max(0.0, squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin);
}

void TripletConfig::validate() const {
  if (!(margin > 0.0)) throw TrainingError("triplet margin must be positive");
  if (epochs < 1) throw TrainingError("epochs must be at least 1");
  if (batch_size < 1) throw TrainingError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw TrainingError("learning rate must be positive");
}

namespace {

struct Projected {
  Eigen::VectorXd unit;
  double norm;
};

Projected project(const Eigen::MatrixXd& weight, const Eigen::VectorXd& x) {
  Eigen::VectorXd u = weight * x;
  double r = u.norm();
  if (r == 0.0 || !std::isfinite(r)) throw TrainingError("projection collapsed a vector to zero");
  return {u / r, r};
}

}  // namespace

double projected_triplet_loss(const Eigen::MatrixXd& weight, const BaseTriplet& t, double margin) {
  auto a = project(weight, t.anchor), p = project(weight, t.positive), n = project(weight, t.negative);
  return triplet_loss(a.unit, p.unit, n.unit, margin);
}

double accumulate_triplet_gradient(const Eigen::MatrixXd& weight, const BaseTriplet& t, double margin,
                                   Eigen::MatrixXd& grad) {
  auto a = project(weight, t.anchor), p = project(weight, t.positive), n = project(weight, t.negative);
  const double loss = triplet_loss(a.unit, p.unit, n.unit, margin);
  if (loss <= 0.0) return 0.0;

  // d/dy of d(a,p) - d(a,n) for each normalized output.
  const Eigen::VectorXd ga = 2.0 * (n.unit - p.unit);
  const Eigen::VectorXd gp = -2.0 * (a.unit - p.unit);
  const Eigen::VectorXd gn = 2.0 * (a.unit - n.unit);

  // Back through y = u/|u|: du = (g - y (y.g)) / |u|, then dW = du x^T.
  auto back = [&](const Projected& y, const Eigen::VectorXd& g, const Eigen::VectorXd& x) {
    Eigen::VectorXd du = (g - y.unit * y.unit.dot(g)) / y.norm;
    grad.noalias() += du * x.transpose();
  };
  back(a, ga, t.anchor);
  back(p, gp, t.positive);
  back(n, gn, t.negative);
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::uint64_t uniform_index(std::uint64_t& state, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("uniform_index bound must be positive");
  auto next = [&state] {
    // splitmix64
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = next();
  } while (r >= limit);
  return r % bound;
}

TrainResult train(std::span<const LabeledVector> samples, const TripletConfig& config, std::uint64_t seed,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (samples.empty()) throw TrainingError("no training samples");
  const auto dim = samples.front().base.size();
  for (const auto& s : samples) {
    if (s.base.size() != dim) throw TrainingError("training samples differ in dimension");
  }

  std::size_t max_label = 0;
  for (const auto& s : samples) max_label = std::max(max_label, s.label);
  std::vector<std::vector<std::size_t>> by_label(max_label + 1);
  for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);
  const auto distinct = std::count_if(by_label.begin(), by_label.end(), [](const auto& v) { return !v.empty(); });
  if (distinct < 2) throw TrainingError("training needs at least 2 distinct labels");

  TrainResult result;
  result.model = ProjectionModel::identity(static_cast<std::size_t>(dim));
  Eigen::MatrixXd& weight = result.model.weight();
  Eigen::MatrixXd grad(dim, dim);

  std::uint64_t rng = seed;
  std::vector<std::size_t> order(samples.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    std::vector<BaseTriplet> triplets;
    triplets.reserve(samples.size());
    for (std::size_t anchor : order) {
      const auto& same = by_label[samples[anchor].label];
      if (same.size() < 2) {
        if (epoch == 0) ++result.skipped_anchors;
        continue;
      }
      std::size_t positive;
      do {
        positive = same[uniform_index(rng, same.size())];
      } while (positive == anchor);
      const std::size_t others = samples.size() - same.size();
      // k-th sample (in input order) whose label differs from the anchor's.
      std::size_t k = uniform_index(rng, others), negative = 0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].label == samples[anchor].label) continue;
        if (k-- == 0) {
          negative = i;
          break;
        }
      }
      triplets.push_back({samples[anchor].base, samples[positive].base, samples[negative].base});
    }
    if (triplets.empty()) throw TrainingError("no label has a usable positive pair");

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < triplets.size(); start += config.batch_size) {
      const std::size_t end = std::min(triplets.size(), start + config.batch_size);
      grad.setZero();
      for (std::size_t i = start; i < end; ++i) {
        loss_sum += accumulate_triplet_gradient(weight, triplets[i], config.margin, grad);
      }
      weight.noalias() -= (config.learning_rate / static_cast<double>(end - start)) * grad;
      if (!weight.allFinite()) {
        throw TrainingError("non-finite weights at epoch " + std::to_string(epoch + 1));
      }
    }
    const double mean = loss_sum / static_cast<double>(triplets.size());
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  result.model.mark_trained(seed, config.epochs);
  return result;
}

GradientCheckResult gradient_check(const ProjectionModel& model, const BaseTriplet& triplet, double margin,
                                   double epsilon, double kink_tolerance) {
  const Eigen::MatrixXd& w = model.weight();
  GradientCheckResult r;

  auto a = project(w, triplet.anchor), p = project(w, triplet.positive), n = project(w, triplet.negative);
  const double pre_hinge = squared_distance(a.unit, p.unit) - squared_distance(a.unit, n.unit) + margin;
  r.loss = std::max(0.0, pre_hinge);
  r.hinge_active = pre_hinge > 0.0;
  if (std::fabs(pre_hinge) <= kink_tolerance) {
    r.conclusive = false;
    return r;
  }

  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  accumulate_triplet_gradient(w, triplet, margin, analytic);

  Eigen::MatrixXd probe = w;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double original = probe(i, j);
      probe(i, j) = original + epsilon;
      const double up = projected_triplet_loss(probe, triplet, margin);
      probe(i, j) = original - epsilon;
      const double down = projected_triplet_loss(probe, triplet, margin);
      probe(i, j) = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double g = analytic(i, j);
      const double abs_err = std::fabs(g - numeric);
      const double scale = std::max(std::fabs(g), std::fabs(numeric));
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (scale > 1e-12) r.max_relative_error = std::max(r.max_relative_error, abs_err / scale);
    }
  }
  return r;
}

}  // namespace ecpt
