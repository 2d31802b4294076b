#pragma once

// Minimal reverse-mode differentiation over dense row-major grids.
//
// Temporal activations are laid out as [batch, channels, frames]. Every op
// records a backward closure only when one of its inputs requires a gradient,
// so graphs built purely from constants cost nothing beyond the forward pass.

#include "canonet/errors.hpp"

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace canonet::engine {

using Shape = std::vector<int>;

struct Grid {
  Shape shape;
  std::vector<double> data;

  Grid() = default;
  explicit Grid(Shape s, double fill = 0.0);
  Grid(Shape s, std::vector<double> values);

  size_t size() const noexcept {
    return data.size();
  }
  int dim(size_t i) const {
    return shape.at(i);
  }
  bool operator==(const Grid&) const = default;
};

size_t shapeSize(const Shape& shape);
std::string shapeString(const Shape& shape);

/// Precision of the matrix products inside conv/linear ops. Storage stays double.
enum class GemmPrecision { Double, Single };

GemmPrecision gemmPrecision();

class ScopedGemmPrecision {
 public:
  explicit ScopedGemmPrecision(GemmPrecision precision);
  ~ScopedGemmPrecision();
  ScopedGemmPrecision(const ScopedGemmPrecision&) = delete;
  ScopedGemmPrecision& operator=(const ScopedGemmPrecision&) = delete;

 private:
  GemmPrecision previous_;
};

struct Node {
  Grid value;
  std::vector<double> grad;
  bool requiresGrad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensureGrad() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), 0.0);
    }
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Grid value);
  static Var parameter(Grid value);

  const Grid& value() const {
    return node_->value;
  }
  Grid& mutableValue() {
    return node_->value;
  }
  const Shape& shape() const {
    return node_->value.shape;
  }
  int dim(size_t i) const {
    return node_->value.dim(i);
  }
  size_t size() const {
    return node_->value.size();
  }
  double item() const;

  bool requiresGrad() const {
    return node_->requiresGrad;
  }
  void setRequiresGrad(bool flag) {
    node_->requiresGrad = flag;
  }
  bool hasGrad() const {
    return !node_->grad.empty();
  }
  std::span<const double> grad() const {
    return node_->grad;
  }
  void zeroGrad() {
    node_->grad.clear();
  }

  /// Same value, cut from the graph.
  Var detach() const;

  Node* node() const {
    return node_.get();
  }
  const std::shared_ptr<Node>& shared() const {
    return node_;
  }
  explicit operator bool() const {
    return static_cast<bool>(node_);
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a gradient.
void backpropagate(const Var& loss);

// Temporal ops over [B, C, T].
Var conv1d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding);
Var leakyRelu(const Var& input, double slope);
Var maxPoolTime(const Var& input, int window);
Var globalMaxTime(const Var& input);
Var globalMeanTime(const Var& input);
Var upsampleTime(const Var& input, int factor);
Var broadcastTime(const Var& input, int frames);
Var concatChannels(const Var& a, const Var& b);
Var concatBatch(std::span<const Var> parts);
Var sliceBatch(const Var& input, int begin, int count);

// Dense ops over [B, C].
Var linear(const Var& input, const Var& weight, const Var& bias);
Var sigmoid(const Var& input);

// Pose ops. Poses use channel (joint * dim + axis); rotations are [B, 9, T] row-major 3x3.
Var rot6dToMatrix(const Var& raw6d);
Var rotatePoints(const Var& points, const Var& rotations);
Var projectXY(const Var& points);
Var centerJoint(const Var& points, int joint, int dim);

// Elementwise and reductions.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var affine(const Var& a, double factor, double offset);
Var logClamped(const Var& a, double eps);
Var sum(const Var& a);
Var mean(const Var& a);
Var meanAbsDiff(const Var& a, const Var& b);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters in insertion order, with Adam moment accumulators.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var param;
    std::vector<double> firstMoment;
    std::vector<double> secondMoment;
  };

  Var add(std::string name, Grid init);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::span<Entry> entries() {
    return entries_;
  }
  std::span<const Entry> entries() const {
    return entries_;
  }

  long adamSteps() const {
    return adamSteps_;
  }
  void setAdamSteps(long steps) {
    adamSteps_ = steps;
  }

  void zeroGrad();
  void setRequiresGrad(bool flag);
  size_t parameterCount() const;

 private:
  std::vector<Entry> entries_;
  long adamSteps_ = 0;
};

/// One bias-corrected Adam update; clears the gradients afterwards.
void adamStep(ParamStore& store, const AdamConfig& config);

/// Uniform(-1/sqrt(fanIn), 1/sqrt(fanIn)).
Grid uniformInit(Shape shape, int fanIn, std::mt19937_64& rng);

} // namespace canonet::engine
