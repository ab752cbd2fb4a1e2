#include "fqat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace fqat::engine {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void check_finite(const std::vector<float>& values, const std::string& op) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by op '" + op + "'");
    }
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + " requires a 2-D tensor");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + " shape mismatch");
  }
}

}  // namespace

Tensor Tensor::from_data(std::vector<float> data, std::vector<std::size_t> shape,
                         bool requires_grad) {
  if (shape.empty()) shape = {data.size()};
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("tensor shape does not match data size");
  }
  check_finite(data, "leaf");
  auto n = std::make_shared<Node>();
  n->values = std::move(data);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  // Take the product before std::move(shape) can be sequenced ahead of it.
  const std::size_t n = shape_product(shape);
  return from_data(std::vector<float>(n, 0.0f), std::move(shape), requires_grad);
}

std::vector<float>& Tensor::values_mut() {
  auto n = node();
  if (!n->parents.empty()) {
    throw std::invalid_argument("cannot mutate values of a non-leaf tensor");
  }
  return n->values;
}

void Tensor::set_requires_grad(bool v) {
  auto n = node();
  if (!n->parents.empty()) {
    throw std::invalid_argument("requires_grad can only be toggled on leaves");
  }
  n->requires_grad = v;
  n->needs_grad = v;
}

const std::vector<double>& Tensor::grad() const {
  auto n = node();
  if (n->grad.empty()) {
    throw std::invalid_argument("no gradient recorded for this tensor");
  }
  return n->grad;
}

void Tensor::zero_grad() const {
  auto n = node();
  n->grad.assign(n->values.size(), 0.0);
}

double Tensor::scalar() const {
  auto n = node();
  if (n->size() != 1) {
    throw std::invalid_argument("scalar() requires a 1-element tensor");
  }
  return n->has_scalar_cache ? n->scalar_cache : double(n->values[0]);
}

Tensor make_op(const std::string& name, std::vector<Tensor> parents,
               std::vector<float> values, std::vector<std::size_t> shape,
               std::function<void(Node&)> backward) {
  check_finite(values, name);
  auto n = std::make_shared<Node>();
  n->values = std::move(values);
  n->shape = std::move(shape);
  n->op_name = name;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.node()->needs_grad;
  n->needs_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor(std::move(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw std::invalid_argument("matmul inner dim mismatch");

  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<float> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += double(av[i * k + t]) * double(bv[t * n + j]);
      }
      out[i * n + j] = float(acc);
    }
  }
  return make_op("matmul", {a, b}, std::move(out), {m, n}, [m, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (g == 0.0) continue;
        for (std::size_t t = 0; t < k; ++t) {
          pa.grad[i * k + t] += g * double(pb.values[t * n + j]);
          pb.grad[t * n + j] += g * double(pa.values[i * k + t]);
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto& av = a.values();
  std::vector<float> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return make_op("transpose", {a}, std::move(out), {c, r}, [r, c](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        p.grad[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& av = a.values();
  const auto& bv = b.values();

  if (a.shape() == b.shape()) {
    std::vector<float> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return make_op("add", {a, b}, std::move(out), a.shape(), [](Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      pa.ensure_grad();
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i];
        pb.grad[i] += self.grad[i];
      }
    });
  }

  // Row-bias broadcast: [rows, n] + [n].
  if (a.shape().size() == 2 && b.shape().size() == 1 &&
      b.shape()[0] == a.shape()[1]) {
    const std::size_t rows = a.shape()[0], n = a.shape()[1];
    std::vector<float> out(av.size());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
    }
    return make_op("add_bias", {a, b}, std::move(out), a.shape(),
                   [rows, n](Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     pa.ensure_grad();
                     pb.ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i) {
                       for (std::size_t j = 0; j < n; ++j) {
                         const double g = self.grad[i * n + j];
                         pa.grad[i * n + j] += g;
                         pb.grad[j] += g;
                       }
                     }
                   });
  }
  throw std::invalid_argument("add shape mismatch");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return make_op("sub", {a, b}, std::move(out), a.shape(), [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i];
      pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", {a, b}, std::move(out), a.shape(), [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * double(pb.values[i]);
      pb.grad[i] += self.grad[i] * double(pa.values[i]);
    }
  });
}

Tensor scalar_mul(const Tensor& a, double c) {
  const auto& av = a.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = float(c * double(av[i]));
  return make_op("scalar_mul", {a}, std::move(out), a.shape(), [c](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += c * self.grad[i];
    }
  });
}

Tensor relu(const Tensor& a) {
  const auto& av = a.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
  return make_op("relu", {a}, std::move(out), a.shape(), [](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    // subgradient 0 at the kink
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.values[i] > 0.0f) p.grad[i] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto& av = a.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = double(av[i]);
    const double t = std::tanh(kC * (x + kA * x * x * x));
    out[i] = float(0.5 * x * (1.0 + t));
  }
  return make_op("gelu", {a}, std::move(out), a.shape(), [](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = double(p.values[i]);
      const double u = kC * (x + kA * x * x * x);
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * x * x);
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      p.grad[i] += self.grad[i] * d;
    }
  });
}

Tensor layernorm(const Tensor& a, double eps) {
  require_2d(a, "layernorm");
  const std::size_t rows = a.shape()[0], n = a.shape()[1];
  const auto& av = a.values();
  std::vector<float> out(av.size());
  // Cached per-row statistics reused by the backward pass.
  auto mean = std::make_shared<std::vector<double>>(rows);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += double(av[i * n + j]);
    m /= double(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = double(av[i * n + j]) - m;
      var += d * d;
    }
    var /= double(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*mean)[i] = m;
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = float((double(av[i * n + j]) - m) * inv);
    }
  }
  return make_op("layernorm", {a}, std::move(out), a.shape(),
                 [rows, n, mean, inv_std](Node& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (std::size_t i = 0; i < rows; ++i) {
                     const double m = (*mean)[i];
                     const double inv = (*inv_std)[i];
                     double g_sum = 0.0, gy_sum = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const double g = self.grad[i * n + j];
                       const double y = (double(p.values[i * n + j]) - m) * inv;
                       g_sum += g;
                       gy_sum += g * y;
                     }
                     for (std::size_t j = 0; j < n; ++j) {
                       const double g = self.grad[i * n + j];
                       const double y = (double(p.values[i * n + j]) - m) * inv;
                       p.grad[i * n + j] +=
                           inv * (g - g_sum / double(n) - y * gy_sum / double(n));
                     }
                   }
                 });
}

Tensor softmax(const Tensor& a) {
  require_2d(a, "softmax");
  const std::size_t rows = a.shape()[0], n = a.shape()[1];
  const auto& av = a.values();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, double(av[i * n + j]));
    double denom = 0.0;
    std::vector<double> e(n);
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp(double(av[i * n + j]) - mx);
      denom += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = float(e[j] / denom);
  }
  return make_op("softmax", {a}, std::move(out), a.shape(), [rows, n](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dot += self.grad[i * n + j] * double(self.values[i * n + j]);
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double y = double(self.values[i * n + j]);
        p.grad[i * n + j] += y * (self.grad[i * n + j] - dot);
      }
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const auto& pv = pred.values();
  const auto& tv = target.values();
  const std::size_t n = pv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(pv[i]) - double(tv[i]);
    acc += d * d;
  }
  const double mean = acc / double(n);
  auto t = make_op("mse_loss", {pred, target}, {float(mean)}, {1}, [n](Node& self) {
    auto& pp = *self.parents[0];
    auto& pt = *self.parents[1];
    pp.ensure_grad();
    pt.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < n; ++i) {
      const double d = double(pp.values[i]) - double(pt.values[i]);
      pp.grad[i] += g * 2.0 * d / double(n);
      pt.grad[i] -= g * 2.0 * d / double(n);
    }
  });
  t.node()->scalar_cache = mean;
  t.node()->has_scalar_cache = true;
  return t;
}

Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  double acc = 0.0;
  for (float v : av) acc += double(v);
  auto t = make_op("sum", {a}, {float(acc)}, {1}, [](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
  });
  t.node()->scalar_cache = acc;
  t.node()->has_scalar_cache = true;
  return t;
}

Tensor stop_grad(const Tensor& a) {
  auto n = std::make_shared<Node>();
  n->values = a.values();
  n->shape = a.shape();
  n->op_name = "stop_grad";
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  auto root = loss.node();
  if (root->size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss");
  }
  if (!root->needs_grad) {
    throw std::invalid_argument("backward() on a graph with no trainable inputs");
  }
  if (root->backward_done) {
    throw std::invalid_argument("backward() already ran for this loss");
  }
  root->backward_done = true;

  // Iterative post-order DFS; `order` ends up topologically sorted
  // (parents before children), so we run it in reverse.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->needs_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<float>&)>& fn,
    const std::vector<float>& at, double h) {
  std::vector<double> grad(at.size());
  std::vector<float> work = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const float orig = at[i];
    const float hi = float(double(orig) + h);
    const float lo = float(double(orig) - h);
    work[i] = hi;
    const double f_hi = fn(work);
    work[i] = lo;
    const double f_lo = fn(work);
    work[i] = orig;
    // use the step actually realized after float32 rounding
    grad[i] = (f_hi - f_lo) / (double(hi) - double(lo));
  }
  return grad;
}

}  // namespace fqat::engine
