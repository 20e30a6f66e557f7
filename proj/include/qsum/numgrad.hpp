// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on dense row-major double arrays.
// A Tape records one computation graph; backward() replays it once in reverse
// insertion order. Leaf arrays (parameters, constants) accumulate gradients
// across backward calls until explicitly zeroed; intermediate gradients are
// reset by each backward() so repeated calls scale leaf gradients exactly.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsum::ag {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

class Tape;

// Dense array with a parallel gradient buffer of the same length.
// Scalars use shape {1}. Vectors are rank 1, matrices rank 2 (row-major).
struct DiffArray {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;         // zero-initialized, same length as values
  const Tape* tape = nullptr;       // set when this array is an op output

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return values.size() == 1; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ArrayPtr = std::shared_ptr<DiffArray>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Leaf constructors. Arrays made here are not attached to any tape.
ArrayPtr make_array(Shape shape, std::vector<double> values);
ArrayPtr make_vector(std::vector<double> values);
ArrayPtr make_scalar(double value);
ArrayPtr zeros(Shape shape);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // a {m,k} x b {k,n} -> {m,n}; b may be a rank-1 vector {k} giving {m}.
  ArrayPtr matmul(const ArrayPtr& a, const ArrayPtr& b);

  // Elementwise; operands must have identical shapes.
  ArrayPtr add(const ArrayPtr& a, const ArrayPtr& b);
  ArrayPtr sub(const ArrayPtr& a, const ArrayPtr& b);
  ArrayPtr mul(const ArrayPtr& a, const ArrayPtr& b);

  // Elementwise unary.
  ArrayPtr sigmoid(const ArrayPtr& x);
  ArrayPtr tanh(const ArrayPtr& x);
  ArrayPtr oneminus(const ArrayPtr& x);   // 1 - x
  ArrayPtr exp(const ArrayPtr& x);
  ArrayPtr log(const ArrayPtr& x);
  ArrayPtr neg(const ArrayPtr& x);
  ArrayPtr log_sigmoid(const ArrayPtr& x);  // stable log(sigmoid(x))
  ArrayPtr scale(const ArrayPtr& x, double k);
  ArrayPtr div_by(const ArrayPtr& x, double d);  // literal IEEE division

  // Rank-1 concatenation in argument order.
  ArrayPtr concat(const std::vector<ArrayPtr>& parts);
  // Stack equal-length vectors as rows of a new {n, len} matrix.
  ArrayPtr stack_rows(const std::vector<ArrayPtr>& rows);
  ArrayPtr transpose(const ArrayPtr& m);

  // Numerically stabilized by max subtraction; rank-1 input.
  ArrayPtr softmax(const ArrayPtr& x);
  ArrayPtr log_softmax(const ArrayPtr& x);

  ArrayPtr pick(const ArrayPtr& x, std::size_t i);   // x rank-1 -> scalar
  ArrayPtr row(const ArrayPtr& m, std::size_t i);    // m rank-2 -> vector
  ArrayPtr sum(const ArrayPtr& x);                   // all elements -> scalar

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse insertion
  // order, visiting every node exactly once. Intermediate gradients are
  // cleared first; leaf gradients accumulate. loss must be a scalar output
  // of this tape.
  void backward(const ArrayPtr& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    ArrayPtr out;
    std::function<void()> pull;  // adds local-gradient * out->grad to parents
  };
  std::vector<Node> nodes_;

  ArrayPtr record(Shape shape, std::vector<double> values,
                  std::function<void()> pull_placeholder);
  void push(ArrayPtr out, std::function<void()> pull);
};

// One named parameter for gradient checking.
struct ParamRef {
  std::string name;
  ArrayPtr array;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central finite differences against tape gradients for every entry of every
// param. f must build a fresh graph on the given tape and return a scalar
// loss; it must be a pure function of the param values. Relative error is
// |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-8).
GradCheckResult grad_check(const std::function<ArrayPtr(Tape&)>& f,
                           const std::vector<ParamRef>& params,
                           double eps = 1e-5);

}  // namespace qsum::ag
