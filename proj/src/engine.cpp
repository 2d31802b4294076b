#include "canonet/engine.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace canonet::engine {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local GemmPrecision tPrecision = GemmPrecision::Double;

// out += a * b, honoring the active product precision.
template <typename A, typename B>
void gemmAccumulate(MutMap out, const A& a, const B& b) {
  if (tPrecision == GemmPrecision::Single) {
    out += (a.template cast<float>() * b.template cast<float>()).template cast<double>();
  } else {
    out.noalias() += a * b;
  }
}

using NodePtr = std::shared_ptr<Node>;

Var record(Grid value, std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
#ifndef NDEBUG
  for (double v : node->value.data) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::NonFiniteLoss, "non-finite value produced in forward pass");
    }
  }
#endif
  const bool needsGrad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requiresGrad; });
  if (needsGrad) {
    node->requiresGrad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void requireRank(const Var& v, size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shapeString(v.shape()));
  }
}

void requireSameShape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": " + shapeString(a.shape()) + " vs " + shapeString(b.shape()));
  }
}

template <typename F>
Var unaryElementwise(const Var& a, F&& forward, std::function<double(double x, double y)> derivative) {
  Grid out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = forward(a.value().data[i]);
  }
  return record(std::move(out), {a.shared()}, [derivative = std::move(derivative)](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensureGrad();
    for (size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative(p.value.data[i], self.value.data[i]);
    }
  });
}

} // namespace

Grid::Grid(Shape s, double fill) : shape(std::move(s)), data(shapeSize(shape), fill) {}

Grid::Grid(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shapeSize(shape)) {
    fail(ErrorCode::ShapeMismatch, "grid data length does not match shape " + shapeString(shape));
  }
}

size_t shapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), size_t{1}, [](size_t acc, int d) {
    return acc * static_cast<size_t>(d);
  });
}

std::string shapeString(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "," : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

GemmPrecision gemmPrecision() {
  return tPrecision;
}

ScopedGemmPrecision::ScopedGemmPrecision(GemmPrecision precision) : previous_(tPrecision) {
  tPrecision = precision;
}

ScopedGemmPrecision::~ScopedGemmPrecision() {
  tPrecision = previous_;
}

Var Var::constant(Grid value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Grid value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requiresGrad = true;
  return Var(std::move(node));
}

double Var::item() const {
  if (size() != 1) {
    fail(ErrorCode::NotScalar, "item() on grid of shape " + shapeString(shape()));
  }
  return value().data[0];
}

Var Var::detach() const {
  return constant(value());
}

void backpropagate(const Var& loss) {
  if (loss.size() != 1) {
    fail(ErrorCode::NotScalar, "backpropagate needs a scalar, got " + shapeString(loss.shape()));
  }
  if (!loss.requiresGrad()) {
    return;
  }

  // Iterative post-order DFS gives a topological order with the loss last.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requiresGrad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (node->backward) {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  loss.node()->ensureGrad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) {
      (*it)->backward(**it);
    }
  }
#ifndef NDEBUG
  for (Node* node : order) {
    for (double g : node->grad) {
      if (!std::isfinite(g)) {
        fail(ErrorCode::NonFiniteLoss, "non-finite gradient produced in backward pass");
      }
    }
  }
#endif
}

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// im2col in the product precision S; the columns are (batch, output frame) pairs.
template <typename S>
Var conv1dImpl(const Var& input, const Var& kernel, const Var& bias, int stride, int padding, int outFrames) {
  const int batch = input.dim(0);
  const int cin = input.dim(1);
  const int frames = input.dim(2);
  const int cout = kernel.dim(0);
  const int k = kernel.dim(2);
  const int rows = cin * k;
  const int cols = batch * outFrames;

  auto im2col = std::make_shared<Mat<S>>(rows, cols);
  const auto& x = input.value().data;
  for (int ci = 0; ci < cin; ++ci) {
    for (int kk = 0; kk < k; ++kk) {
      S* row = im2col->data() + static_cast<size_t>(ci * k + kk) * cols;
      for (int b = 0; b < batch; ++b) {
        const double* src = x.data() + (static_cast<size_t>(b) * cin + ci) * frames;
        for (int t = 0; t < outFrames; ++t) {
          const int s = t * stride + kk - padding;
          row[b * outFrames + t] = (s >= 0 && s < frames) ? static_cast<S>(src[s]) : S(0);
        }
      }
    }
  }

  const Mat<S> weights = ConstMap(kernel.value().data.data(), cout, rows).template cast<S>();
  Mat<S> product(cout, cols);
  product.noalias() = weights * *im2col;

  Grid out({batch, cout, outFrames});
  for (int b = 0; b < batch; ++b) {
    for (int co = 0; co < cout; ++co) {
      const double bv = bias.value().data[co];
      double* dst = out.data.data() + (static_cast<size_t>(b) * cout + co) * outFrames;
      const S* src = product.data() + static_cast<size_t>(co) * cols + b * outFrames;
      for (int t = 0; t < outFrames; ++t) {
        dst[t] = static_cast<double>(src[t]) + bv;
      }
    }
  }

  return record(std::move(out), {input.shared(), kernel.shared(), bias.shared()},
                [=](Node& self) {
                  Node& xNode = *self.parents[0];
                  Node& wNode = *self.parents[1];
                  Node& bNode = *self.parents[2];
                  Mat<S> g(cout, cols);
                  for (int b = 0; b < batch; ++b) {
                    for (int co = 0; co < cout; ++co) {
                      const double* src = self.grad.data() + (static_cast<size_t>(b) * cout + co) * outFrames;
                      S* dst = g.data() + static_cast<size_t>(co) * cols + b * outFrames;
                      for (int t = 0; t < outFrames; ++t) {
                        dst[t] = static_cast<S>(src[t]);
                      }
                    }
                  }
                  if (bNode.requiresGrad) {
                    auto& gb = bNode.ensureGrad();
                    for (int b = 0; b < batch; ++b) {
                      for (int co = 0; co < cout; ++co) {
                        const double* src = self.grad.data() + (static_cast<size_t>(b) * cout + co) * outFrames;
                        gb[co] += std::accumulate(src, src + outFrames, 0.0);
                      }
                    }
                  }
                  if (wNode.requiresGrad) {
                    const Mat<S> gw = g * im2col->transpose();
                    MutMap(wNode.ensureGrad().data(), cout, rows) += gw.template cast<double>();
                  }
                  if (xNode.requiresGrad) {
                    const Mat<S> w = ConstMap(wNode.value.data.data(), cout, rows).template cast<S>();
                    Mat<S> dcols(rows, cols);
                    dcols.noalias() = w.transpose() * g;
                    auto& gx = xNode.ensureGrad();
                    for (int ci = 0; ci < cin; ++ci) {
                      for (int kk = 0; kk < k; ++kk) {
                        const S* row = dcols.data() + static_cast<size_t>(ci * k + kk) * cols;
                        for (int b = 0; b < batch; ++b) {
                          double* dst = gx.data() + (static_cast<size_t>(b) * cin + ci) * frames;
                          for (int t = 0; t < outFrames; ++t) {
                            const int s = t * stride + kk - padding;
                            if (s >= 0 && s < frames) {
                              dst[s] += static_cast<double>(row[b * outFrames + t]);
                            }
                          }
                        }
                      }
                    }
                  }
                });
}

} // namespace

Var conv1d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding) {
  requireRank(input, 3, "conv1d input");
  requireRank(kernel, 3, "conv1d kernel");
  requireRank(bias, 1, "conv1d bias");
  const int cin = input.dim(1);
  const int frames = input.dim(2);
  const int cout = kernel.dim(0);
  const int k = kernel.dim(2);
  if (kernel.dim(1) != cin || bias.dim(0) != cout || stride < 1 || padding < 0 || frames + 2 * padding < k) {
    fail(ErrorCode::ShapeMismatch, "conv1d: input " + shapeString(input.shape()) + ", kernel " +
                                       shapeString(kernel.shape()) + ", stride " + std::to_string(stride) +
                                       ", padding " + std::to_string(padding));
  }
  const int outFrames = (frames + 2 * padding - k) / stride + 1;
  if (tPrecision == GemmPrecision::Single) {
    return conv1dImpl<float>(input, kernel, bias, stride, padding, outFrames);
  }
  return conv1dImpl<double>(input, kernel, bias, stride, padding, outFrames);
}

Var leakyRelu(const Var& input, double slope) {
  return unaryElementwise(
      input, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var maxPoolTime(const Var& input, int window) {
  requireRank(input, 3, "maxPoolTime");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const int frames = input.dim(2);
  if (window < 1 || frames % window != 0) {
    fail(ErrorCode::ShapeMismatch,
         "maxPoolTime: " + std::to_string(frames) + " frames not divisible by window " + std::to_string(window));
  }
  const int outFrames = frames / window;
  Grid out({batch, channels, outFrames});
  auto argmax = std::make_shared<std::vector<size_t>>(out.size());
  const auto& x = input.value().data;
  for (size_t row = 0; row < static_cast<size_t>(batch) * channels; ++row) {
    for (int t = 0; t < outFrames; ++t) {
      size_t best = row * frames + static_cast<size_t>(t) * window;
      for (int w = 1; w < window; ++w) {
        const size_t idx = row * frames + static_cast<size_t>(t) * window + w;
        if (x[idx] > x[best]) {
          best = idx;
        }
      }
      const size_t o = row * outFrames + t;
      out.data[o] = x[best];
      (*argmax)[o] = best;
    }
  }
  return record(std::move(out), {input.shared()}, [argmax](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t o = 0; o < self.grad.size(); ++o) {
      g[(*argmax)[o]] += self.grad[o];
    }
  });
}

Var globalMaxTime(const Var& input) {
  requireRank(input, 3, "globalMaxTime");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const int frames = input.dim(2);
  Grid out({batch, channels});
  auto argmax = std::make_shared<std::vector<size_t>>(out.size());
  const auto& x = input.value().data;
  for (size_t row = 0; row < out.size(); ++row) {
    const auto begin = x.begin() + static_cast<std::ptrdiff_t>(row * frames);
    const auto best = std::max_element(begin, begin + frames);
    out.data[row] = *best;
    (*argmax)[row] = static_cast<size_t>(best - x.begin());
  }
  return record(std::move(out), {input.shared()}, [argmax](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t o = 0; o < self.grad.size(); ++o) {
      g[(*argmax)[o]] += self.grad[o];
    }
  });
}

Var globalMeanTime(const Var& input) {
  requireRank(input, 3, "globalMeanTime");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const int frames = input.dim(2);
  Grid out({batch, channels});
  const auto& x = input.value().data;
  for (size_t row = 0; row < out.size(); ++row) {
    out.data[row] = std::accumulate(x.begin() + row * frames, x.begin() + (row + 1) * frames, 0.0) / frames;
  }
  return record(std::move(out), {input.shared()}, [frames](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t row = 0; row < self.grad.size(); ++row) {
      const double share = self.grad[row] / frames;
      for (int t = 0; t < frames; ++t) {
        g[row * frames + t] += share;
      }
    }
  });
}

Var upsampleTime(const Var& input, int factor) {
  requireRank(input, 3, "upsampleTime");
  const int batch = input.dim(0);
  const int channels = input.dim(1);
  const int frames = input.dim(2);
  Grid out({batch, channels, frames * factor});
  const auto& x = input.value().data;
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = x[i / factor];
  }
  return record(std::move(out), {input.shared()}, [factor](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      g[i / factor] += self.grad[i];
    }
  });
}

Var broadcastTime(const Var& input, int frames) {
  requireRank(input, 2, "broadcastTime");
  Grid out({input.dim(0), input.dim(1), frames});
  const auto& x = input.value().data;
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = x[i / frames];
  }
  return record(std::move(out), {input.shared()}, [frames](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      g[i / frames] += self.grad[i];
    }
  });
}

Var concatChannels(const Var& a, const Var& b) {
  requireRank(a, 3, "concatChannels");
  requireRank(b, 3, "concatChannels");
  const int batch = a.dim(0);
  const int frames = a.dim(2);
  if (b.dim(0) != batch || b.dim(2) != frames) {
    fail(ErrorCode::ShapeMismatch, "concatChannels: " + shapeString(a.shape()) + " vs " + shapeString(b.shape()));
  }
  const size_t blockA = static_cast<size_t>(a.dim(1)) * frames;
  const size_t blockB = static_cast<size_t>(b.dim(1)) * frames;
  Grid out({batch, a.dim(1) + b.dim(1), frames});
  for (int n = 0; n < batch; ++n) {
    const auto dst = out.data.begin() + static_cast<std::ptrdiff_t>(n * (blockA + blockB));
    std::copy_n(a.value().data.begin() + n * blockA, blockA, dst);
    std::copy_n(b.value().data.begin() + n * blockB, blockB, dst + blockA);
  }
  return record(std::move(out), {a.shared(), b.shared()}, [=](Node& self) {
    for (int which = 0; which < 2; ++which) {
      Node& p = *self.parents[which];
      if (!p.requiresGrad) {
        continue;
      }
      auto& g = p.ensureGrad();
      const size_t block = which == 0 ? blockA : blockB;
      const size_t offset = which == 0 ? 0 : blockA;
      for (int n = 0; n < batch; ++n) {
        const double* src = self.grad.data() + n * (blockA + blockB) + offset;
        for (size_t i = 0; i < block; ++i) {
          g[n * block + i] += src[i];
        }
      }
    }
  });
}

Var concatBatch(std::span<const Var> parts) {
  if (parts.empty()) {
    fail(ErrorCode::ShapeMismatch, "concatBatch of nothing");
  }
  Shape shape = parts[0].shape();
  int batch = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.shape().size() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      fail(ErrorCode::ShapeMismatch, "concatBatch: " + shapeString(shape) + " vs " + shapeString(p.shape()));
    }
    batch += p.dim(0);
    parents.push_back(p.shared());
  }
  shape[0] = batch;
  Grid out(shape);
  size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  return record(std::move(out), std::move(parents), [](Node& self) {
    size_t off = 0;
    for (auto& p : self.parents) {
      const size_t n = p->value.size();
      if (p->requiresGrad) {
        auto& g = p->ensureGrad();
        for (size_t i = 0; i < n; ++i) {
          g[i] += self.grad[off + i];
        }
      }
      off += n;
    }
  });
}

Var sliceBatch(const Var& input, int begin, int count) {
  if (input.shape().empty() || begin < 0 || count < 0 || begin + count > input.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "sliceBatch out of range on " + shapeString(input.shape()));
  }
  Shape shape = input.shape();
  const size_t block = shapeSize(shape) / shape[0];
  shape[0] = count;
  Grid out(shape);
  const size_t offset = block * begin;
  std::copy_n(input.value().data.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.data.begin());
  return record(std::move(out), {input.shared()}, [offset](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      g[offset + i] += self.grad[i];
    }
  });
}

Var linear(const Var& input, const Var& weight, const Var& bias) {
  requireRank(input, 2, "linear input");
  requireRank(weight, 2, "linear weight");
  requireRank(bias, 1, "linear bias");
  const int batch = input.dim(0);
  const int cin = input.dim(1);
  const int cout = weight.dim(0);
  if (weight.dim(1) != cin || bias.dim(0) != cout) {
    fail(ErrorCode::ShapeMismatch, "linear: input " + shapeString(input.shape()) + ", weight " +
                                       shapeString(weight.shape()));
  }
  Grid out({batch, cout});
  MutMap o(out.data.data(), batch, cout);
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < cout; ++c) {
      o(n, c) = bias.value().data[c];
    }
  }
  const ConstMap x(input.value().data.data(), batch, cin);
  const ConstMap w(weight.value().data.data(), cout, cin);
  gemmAccumulate(o, x, w.transpose());
  return record(std::move(out), {input.shared(), weight.shared(), bias.shared()},
                [=](Node& self) {
                  Node& xNode = *self.parents[0];
                  Node& wNode = *self.parents[1];
                  Node& bNode = *self.parents[2];
                  const ConstMap g(self.grad.data(), batch, cout);
                  if (bNode.requiresGrad) {
                    auto& gb = bNode.ensureGrad();
                    for (int c = 0; c < cout; ++c) {
                      gb[c] += g.col(c).sum();
                    }
                  }
                  if (wNode.requiresGrad) {
                    const ConstMap xv(xNode.value.data.data(), batch, cin);
                    gemmAccumulate(MutMap(wNode.ensureGrad().data(), cout, cin), g.transpose(), xv);
                  }
                  if (xNode.requiresGrad) {
                    const ConstMap wv(wNode.value.data.data(), cout, cin);
                    gemmAccumulate(MutMap(xNode.ensureGrad().data(), batch, cin), g, wv);
                  }
                });
}

Var sigmoid(const Var& input) {
  return unaryElementwise(
      input,
      [](double x) {
        if (x >= 0.0) {
          return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var rot6dToMatrix(const Var& raw6d) {
  requireRank(raw6d, 3, "rot6dToMatrix");
  if (raw6d.dim(1) != 6) {
    fail(ErrorCode::ShapeMismatch, "rot6dToMatrix expects 6 channels, got " + shapeString(raw6d.shape()));
  }
  using V3 = Eigen::Vector3d;
  const int batch = raw6d.dim(0);
  const int frames = raw6d.dim(2);
  Grid out({batch, 9, frames});
  // Per (batch, frame): b1, b2 and the norms |a1|, |u2| for the backward pass.
  struct Saved {
    V3 a2, b1, b2;
    double n1, n2;
  };
  auto saved = std::make_shared<std::vector<Saved>>(static_cast<size_t>(batch) * frames);
  const auto& x = raw6d.value().data;
  for (int n = 0; n < batch; ++n) {
    for (int t = 0; t < frames; ++t) {
      auto in = [&](int c) { return x[(static_cast<size_t>(n) * 6 + c) * frames + t]; };
      const V3 a1(in(0), in(1), in(2));
      const V3 a2(in(3), in(4), in(5));
      const double n1 = a1.norm();
      if (n1 < 1e-8) {
        fail(ErrorCode::DegenerateRotation, "first 6D column has vanishing norm");
      }
      const V3 b1 = a1 / n1;
      const V3 u2 = a2 - b1.dot(a2) * b1;
      const double n2 = u2.norm();
      if (n2 < 1e-8) {
        fail(ErrorCode::DegenerateRotation, "6D columns are parallel");
      }
      const V3 b2 = u2 / n2;
      const V3 b3 = b1.cross(b2);
      for (int r = 0; r < 3; ++r) {
        out.data[(static_cast<size_t>(n) * 9 + r * 3 + 0) * frames + t] = b1[r];
        out.data[(static_cast<size_t>(n) * 9 + r * 3 + 1) * frames + t] = b2[r];
        out.data[(static_cast<size_t>(n) * 9 + r * 3 + 2) * frames + t] = b3[r];
      }
      (*saved)[static_cast<size_t>(n) * frames + t] = {a2, b1, b2, n1, n2};
    }
  }
  return record(std::move(out), {raw6d.shared()}, [=](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (int n = 0; n < batch; ++n) {
      for (int t = 0; t < frames; ++t) {
        const Saved& s = (*saved)[static_cast<size_t>(n) * frames + t];
        V3 db1, db2, db3;
        for (int r = 0; r < 3; ++r) {
          db1[r] = self.grad[(static_cast<size_t>(n) * 9 + r * 3 + 0) * frames + t];
          db2[r] = self.grad[(static_cast<size_t>(n) * 9 + r * 3 + 1) * frames + t];
          db3[r] = self.grad[(static_cast<size_t>(n) * 9 + r * 3 + 2) * frames + t];
        }
        // b3 = b1 x b2
        db1 += s.b2.cross(db3);
        db2 += db3.cross(s.b1);
        // b2 = u2 / |u2|, u2 = a2 - (b1.a2) b1
        const V3 du2 = (db2 - s.b2 * s.b2.dot(db2)) / s.n2;
        const V3 da2 = du2 - s.b1 * s.b1.dot(du2);
        db1 += -s.b1.dot(s.a2) * du2 - s.a2 * s.b1.dot(du2);
        // b1 = a1 / |a1|
        const V3 da1 = (db1 - s.b1 * s.b1.dot(db1)) / s.n1;
        for (int c = 0; c < 3; ++c) {
          g[(static_cast<size_t>(n) * 6 + c) * frames + t] += da1[c];
          g[(static_cast<size_t>(n) * 6 + 3 + c) * frames + t] += da2[c];
        }
      }
    }
  });
}

Var rotatePoints(const Var& points, const Var& rotations) {
  requireRank(points, 3, "rotatePoints points");
  requireRank(rotations, 3, "rotatePoints rotations");
  const int batch = points.dim(0);
  const int channels = points.dim(1);
  const int frames = points.dim(2);
  if (channels % 3 != 0 || rotations.dim(0) != batch || rotations.dim(1) != 9 || rotations.dim(2) != frames) {
    fail(ErrorCode::FrameCountMismatch,
         "rotatePoints: points " + shapeString(points.shape()) + ", rotations " + shapeString(rotations.shape()));
  }
  const int joints = channels / 3;
  Grid out(points.shape());
  const auto& x = points.value().data;
  const auto& rot = rotations.value().data;
  auto xi = [=](int n, int j, int c, int t) { return (static_cast<size_t>(n) * channels + j * 3 + c) * frames + t; };
  auto ri = [=](int n, int r, int c, int t) { return (static_cast<size_t>(n) * 9 + r * 3 + c) * frames + t; };
  for (int n = 0; n < batch; ++n) {
    for (int j = 0; j < joints; ++j) {
      for (int r = 0; r < 3; ++r) {
        for (int t = 0; t < frames; ++t) {
          out.data[xi(n, j, r, t)] =
              rot[ri(n, r, 0, t)] * x[xi(n, j, 0, t)] + rot[ri(n, r, 1, t)] * x[xi(n, j, 1, t)] +
              rot[ri(n, r, 2, t)] * x[xi(n, j, 2, t)];
        }
      }
    }
  }
  return record(std::move(out), {points.shared(), rotations.shared()}, [=](Node& self) {
    Node& pNode = *self.parents[0];
    Node& rNode = *self.parents[1];
    const auto& xv = pNode.value.data;
    const auto& rv = rNode.value.data;
    const auto& gy = self.grad;
    if (pNode.requiresGrad) {
      auto& gx = pNode.ensureGrad();
      for (int n = 0; n < batch; ++n) {
        for (int j = 0; j < joints; ++j) {
          for (int c = 0; c < 3; ++c) {
            for (int t = 0; t < frames; ++t) {
              gx[xi(n, j, c, t)] += rv[ri(n, 0, c, t)] * gy[xi(n, j, 0, t)] + rv[ri(n, 1, c, t)] * gy[xi(n, j, 1, t)] +
                                    rv[ri(n, 2, c, t)] * gy[xi(n, j, 2, t)];
            }
          }
        }
      }
    }
    if (rNode.requiresGrad) {
      auto& gr = rNode.ensureGrad();
      for (int n = 0; n < batch; ++n) {
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            for (int j = 0; j < joints; ++j) {
              for (int t = 0; t < frames; ++t) {
                gr[ri(n, r, c, t)] += gy[xi(n, j, r, t)] * xv[xi(n, j, c, t)];
              }
            }
          }
        }
      }
    }
  });
}

Var projectXY(const Var& points) {
  requireRank(points, 3, "projectXY");
  const int batch = points.dim(0);
  const int channels = points.dim(1);
  const int frames = points.dim(2);
  if (channels % 3 != 0) {
    fail(ErrorCode::ShapeMismatch, "projectXY expects 3D points, got " + shapeString(points.shape()));
  }
  const int joints = channels / 3;
  Grid out({batch, joints * 2, frames});
  auto src = [=](int n, int j, int a) { return (static_cast<size_t>(n) * channels + j * 3 + a) * frames; };
  auto dst = [=](int n, int j, int a) { return (static_cast<size_t>(n) * joints * 2 + j * 2 + a) * frames; };
  for (int n = 0; n < batch; ++n) {
    for (int j = 0; j < joints; ++j) {
      for (int a = 0; a < 2; ++a) {
        std::copy_n(points.value().data.begin() + src(n, j, a), frames, out.data.begin() + dst(n, j, a));
      }
    }
  }
  return record(std::move(out), {points.shared()}, [=](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (int n = 0; n < batch; ++n) {
      for (int j = 0; j < joints; ++j) {
        for (int a = 0; a < 2; ++a) {
          for (int t = 0; t < frames; ++t) {
            g[src(n, j, a) + t] += self.grad[dst(n, j, a) + t];
          }
        }
      }
    }
  });
}

Var centerJoint(const Var& points, int joint, int dim) {
  requireRank(points, 3, "centerJoint");
  const int batch = points.dim(0);
  const int channels = points.dim(1);
  const int frames = points.dim(2);
  if (dim < 1 || channels % dim != 0 || joint < 0 || joint >= channels / dim) {
    fail(ErrorCode::ShapeMismatch, "centerJoint: bad joint/dim for " + shapeString(points.shape()));
  }
  const int joints = channels / dim;
  Grid out(points.shape());
  const auto& x = points.value().data;
  auto at = [=](int n, int j, int a) { return (static_cast<size_t>(n) * channels + j * dim + a) * frames; };
  for (int n = 0; n < batch; ++n) {
    for (int a = 0; a < dim; ++a) {
      const size_t root = at(n, joint, a);
      for (int j = 0; j < joints; ++j) {
        const size_t base = at(n, j, a);
        for (int t = 0; t < frames; ++t) {
          out.data[base + t] = x[base + t] - x[root + t];
        }
      }
    }
  }
  return record(std::move(out), {points.shared()}, [=](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (int n = 0; n < batch; ++n) {
      for (int a = 0; a < dim; ++a) {
        const size_t root = at(n, joint, a);
        for (int j = 0; j < joints; ++j) {
          const size_t base = at(n, j, a);
          for (int t = 0; t < frames; ++t) {
            g[base + t] += self.grad[base + t];
            g[root + t] -= self.grad[base + t];
          }
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  requireSameShape(a, b, "add");
  Grid out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.value().data[i] + b.value().data[i];
  }
  return record(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requiresGrad) {
        auto& g = p->ensureGrad();
        for (size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i];
        }
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  requireSameShape(a, b, "sub");
  Grid out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.value().data[i] - b.value().data[i];
  }
  return record(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    for (int which = 0; which < 2; ++which) {
      Node& p = *self.parents[which];
      if (p.requiresGrad) {
        const double sign = which == 0 ? 1.0 : -1.0;
        auto& g = p.ensureGrad();
        for (size_t i = 0; i < g.size(); ++i) {
          g[i] += sign * self.grad[i];
        }
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  requireSameShape(a, b, "mul");
  Grid out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.value().data[i] * b.value().data[i];
  }
  return record(std::move(out), {a.shared(), b.shared()}, [](Node& self) {
    for (int which = 0; which < 2; ++which) {
      Node& p = *self.parents[which];
      if (p.requiresGrad) {
        const auto& other = self.parents[1 - which]->value.data;
        auto& g = p.ensureGrad();
        for (size_t i = 0; i < g.size(); ++i) {
          g[i] += other[i] * self.grad[i];
        }
      }
    }
  });
}

Var scale(const Var& a, double factor) {
  return affine(a, factor, 0.0);
}

Var affine(const Var& a, double factor, double offset) {
  return unaryElementwise(
      a, [=](double x) { return factor * x + offset; }, [factor](double, double) { return factor; });
}

Var logClamped(const Var& a, double eps) {
  return unaryElementwise(
      a, [eps](double x) { return std::log(std::max(x, eps)); },
      [eps](double x, double) { return x > eps ? 1.0 / x : 0.0; });
}

Var sum(const Var& a) {
  const double total = std::accumulate(a.value().data.begin(), a.value().data.end(), 0.0);
  return record(Grid({1}, total), {a.shared()}, [](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    for (double& v : g) {
      v += self.grad[0];
    }
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  const double total = std::accumulate(a.value().data.begin(), a.value().data.end(), 0.0);
  return record(Grid({1}, total / n), {a.shared()}, [n](Node& self) {
    auto& g = self.parents[0]->ensureGrad();
    const double share = self.grad[0] / n;
    for (double& v : g) {
      v += share;
    }
  });
}

Var meanAbsDiff(const Var& a, const Var& b) {
  requireSameShape(a, b, "meanAbsDiff");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    total += std::abs(a.value().data[i] - b.value().data[i]);
  }
  return record(Grid({1}, total / n), {a.shared(), b.shared()}, [n](Node& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    const double share = self.grad[0] / n;
    for (int which = 0; which < 2; ++which) {
      Node& p = *self.parents[which];
      if (!p.requiresGrad) {
        continue;
      }
      const double sign = which == 0 ? share : -share;
      auto& g = p.ensureGrad();
      for (size_t i = 0; i < g.size(); ++i) {
        const double d = av[i] - bv[i];
        g[i] += d > 0.0 ? sign : (d < 0.0 ? -sign : 0.0);
      }
    }
  });
}

Var ParamStore::add(std::string name, Grid init) {
  if (contains(name)) {
    fail(ErrorCode::ShapeMismatch, "duplicate parameter name " + name);
  }
  const size_t n = init.size();
  Entry entry{std::move(name), Var::parameter(std::move(init)), std::vector<double>(n, 0.0),
              std::vector<double>(n, 0.0)};
  entries_.push_back(std::move(entry));
  return entries_.back().param;
}

const Var& ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) {
      return e.param;
    }
  }
  fail(ErrorCode::ShapeMismatch, "no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

void ParamStore::zeroGrad() {
  for (auto& e : entries_) {
    e.param.zeroGrad();
  }
}

void ParamStore::setRequiresGrad(bool flag) {
  for (auto& e : entries_) {
    e.param.setRequiresGrad(flag);
  }
}

size_t ParamStore::parameterCount() const {
  size_t n = 0;
  for (const auto& e : entries_) {
    n += e.param.size();
  }
  return n;
}

void adamStep(ParamStore& store, const AdamConfig& config) {
  for (const auto& e : store.entries()) {
    if (!e.param.hasGrad()) {
      fail(ErrorCode::MissingGradients, "parameter " + e.name + " has no gradient");
    }
  }
  const long step = store.adamSteps() + 1;
  store.setAdamSteps(step);
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (auto& e : store.entries()) {
    auto& value = e.param.mutableValue().data;
    const auto grad = e.param.grad();
    for (size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      e.firstMoment[i] = config.beta1 * e.firstMoment[i] + (1.0 - config.beta1) * g;
      e.secondMoment[i] = config.beta2 * e.secondMoment[i] + (1.0 - config.beta2) * g * g;
      const double mHat = e.firstMoment[i] / correction1;
      const double vHat = e.secondMoment[i] / correction2;
      value[i] -= config.lr * mHat / (std::sqrt(vHat) + config.eps);
    }
    e.param.zeroGrad();
  }
}

Grid uniformInit(Shape shape, int fanIn, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Grid g(std::move(shape));
  for (double& v : g.data) {
    v = dist(rng);
  }
  return g;
}

} // namespace canonet::engine
