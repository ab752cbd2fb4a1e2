#pragma once

// Minimal define-by-run reverse-mode autodiff over dense row-major tensors.
// Values are float32 (the precision the quantizers see); gradients and all
// backward arithmetic are double to keep finite-difference checks tight.

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fqat {

// Raised when a forward op produces NaN/Inf or a numeric contract is broken.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace engine {

struct Node {
  std::vector<float> values;
  std::vector<std::size_t> shape;
  std::vector<double> grad;  // sized lazily during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
  bool requires_grad = false;  // set on leaves the optimizer should touch
  bool needs_grad = false;     // true when any ancestor leaf requires grad
  bool backward_done = false;
  double scalar_cache = 0.0;   // full-precision value for scalar-producing ops
  bool has_scalar_cache = false;
  std::string op_name = "leaf";

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor from_data(std::vector<float> data, std::vector<std::size_t> shape,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node()->shape; }
  std::size_t size() const { return node()->size(); }
  const std::vector<float>& values() const { return node()->values; }

  // Leaf-only mutable access (optimizer updates). Throws on graph interiors.
  std::vector<float>& values_mut();

  bool requires_grad() const { return node()->requires_grad; }
  void set_requires_grad(bool v);

  // Gradient of the last backward() pass; throws if none was computed.
  const std::vector<double>& grad() const;
  void zero_grad() const;  // handle semantics: clears the shared node's grad

  // Exact scalar for 1-element tensors; uses the double-precision cache when
  // the producing op recorded one (sum, mse_loss).
  double scalar() const;

  std::shared_ptr<Node> node() const {
    if (!node_) throw std::invalid_argument("use of undefined tensor");
    return node_;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Graph construction hook shared by all ops (and by layers that add custom
// nodes, e.g. fake-quantization with a straight-through mask). Finite-ness of
// `values` is checked here; `backward` may be empty for non-differentiable ops.
Tensor make_op(const std::string& name, std::vector<Tensor> parents,
               std::vector<float> values, std::vector<std::size_t> shape,
               std::function<void(Node&)> backward);

// --- ops (shapes are validated, mismatches throw std::invalid_argument) ---

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                    // 2-D only
Tensor add(const Tensor& a, const Tensor& b);         // same shape, or b is [n] row bias
Tensor sub(const Tensor& a, const Tensor& b);         // same shape
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise, same shape
Tensor scalar_mul(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);                         // tanh approximation
Tensor layernorm(const Tensor& a, double eps = 1e-5); // per-row, no affine
Tensor softmax(const Tensor& a);                      // per-row
Tensor mse_loss(const Tensor& pred, const Tensor& target);  // scalar mean
Tensor sum(const Tensor& a);                          // scalar

// Detaches: same values, fresh leaf with no gradient path.
Tensor stop_grad(const Tensor& a);

// Reverse pass from a scalar loss. Each backward() may run once per graph;
// calling it twice on the same loss throws.
void backward(const Tensor& loss);

// Central finite differences of a scalar function of the data vector.
// Perturbations happen in float32 (what the graph consumes) while the
// difference quotient uses the exactly-representable achieved step.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<float>&)>& fn,
    const std::vector<float>& at, double h);

}  // namespace engine
}  // namespace fqat
