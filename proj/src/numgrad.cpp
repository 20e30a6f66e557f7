// SPDX-License-Identifier: Apache-2.0

#include "qsum/numgrad.hpp"

#include <algorithm>
#include <cmath>

namespace qsum::ag {

namespace {

void check_same_shape(const char* op, const ArrayPtr& a, const ArrayPtr& b) {
  if (a->shape != b->shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
}

void check_rank1(const char* op, const ArrayPtr& x) {
  if (x->shape.size() != 1) {
    throw ShapeError(std::string(op) + ": expected rank-1, got " +
                     shape_str(x->shape));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "{";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "}";
}

ArrayPtr make_array(Shape shape, std::vector<double> values) {
  if (shape.empty() || numel(shape) != values.size()) {
    throw ShapeError("make_array: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto a = std::make_shared<DiffArray>();
  a->shape = std::move(shape);
  a->values = std::move(values);
  a->grad.assign(a->values.size(), 0.0);
  return a;
}

ArrayPtr make_vector(std::vector<double> values) {
  Shape s{values.size()};
  return make_array(std::move(s), std::move(values));
}

ArrayPtr make_scalar(double value) { return make_array({1}, {value}); }

ArrayPtr zeros(Shape shape) {
  std::vector<double> v(numel(shape), 0.0);
  return make_array(std::move(shape), std::move(v));
}

void Tape::push(ArrayPtr out, std::function<void()> pull) {
  out->tape = this;
  nodes_.push_back(Node{std::move(out), std::move(pull)});
}

ArrayPtr Tape::matmul(const ArrayPtr& a, const ArrayPtr& b) {
  if (a->shape.size() != 2) {
    throw ShapeError("matmul: left operand must be rank-2, got " +
                     shape_str(a->shape));
  }
  const bool vec = b->shape.size() == 1;
  if (!vec && b->shape.size() != 2) {
    throw ShapeError("matmul: right operand must be rank 1 or 2, got " +
                     shape_str(b->shape));
  }
  const std::size_t m = a->shape[0], k = a->shape[1];
  const std::size_t bk = b->shape[0];
  const std::size_t n = vec ? 1 : b->shape[1];
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a->shape) + " x " + shape_str(b->shape));
  }

  std::vector<double> out(m * n, 0.0);
  const double* av = a->values.data();
  const double* bv = b->values.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += aik * bv[kk * n + j];
      }
    }
  }

  Shape os = vec ? Shape{m} : Shape{m, n};
  auto o = make_array(std::move(os), std::move(out));
  push(o, [a, b, o, m, k, n]() {
    const double* g = o->grad.data();
    const double* av = a->values.data();
    const double* bv = b->values.data();
    double* ga = a->grad.data();
    double* gb = b->grad.data();
    // dA += G * B^T, dB += A^T * G
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[kk * n + j];
        ga[i * k + kk] += acc;
      }
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += av[i * k + kk] * g[i * n + j];
        gb[kk * n + j] += acc;
      }
    }
  });
  return o;
}

ArrayPtr Tape::add(const ArrayPtr& a, const ArrayPtr& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->values[i] + b->values[i];
  auto o = make_array(a->shape, std::move(out));
  push(o, [a, b, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      a->grad[i] += o->grad[i];
      b->grad[i] += o->grad[i];
    }
  });
  return o;
}

ArrayPtr Tape::sub(const ArrayPtr& a, const ArrayPtr& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->values[i] - b->values[i];
  auto o = make_array(a->shape, std::move(out));
  push(o, [a, b, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      a->grad[i] += o->grad[i];
      b->grad[i] -= o->grad[i];
    }
  });
  return o;
}

ArrayPtr Tape::mul(const ArrayPtr& a, const ArrayPtr& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->values[i] * b->values[i];
  auto o = make_array(a->shape, std::move(out));
  push(o, [a, b, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      a->grad[i] += b->values[i] * o->grad[i];
      b->grad[i] += a->values[i] * o->grad[i];
    }
  });
  return o;
}

ArrayPtr Tape::sigmoid(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = stable_sigmoid(x->values[i]);
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      const double y = o->values[i];
      x->grad[i] += y * (1.0 - y) * o->grad[i];
    }
  });
  return o;
}

ArrayPtr Tape::tanh(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::tanh(x->values[i]);
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) {
      const double y = o->values[i];
      x->grad[i] += (1.0 - y * y) * o->grad[i];
    }
  });
  return o;
}

ArrayPtr Tape::oneminus(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - x->values[i];
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) x->grad[i] -= o->grad[i];
  });
  return o;
}

ArrayPtr Tape::exp(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->values[i]);
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i)
      x->grad[i] += o->values[i] * o->grad[i];
  });
  return o;
}

ArrayPtr Tape::log(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x->values[i] <= 0.0) {
      throw NumericError("log: non-positive input " +
                         std::to_string(x->values[i]) + " at index " +
                         std::to_string(i));
    }
    out[i] = std::log(x->values[i]);
  }
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i)
      x->grad[i] += o->grad[i] / x->values[i];
  });
  return o;
}

ArrayPtr Tape::neg(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -x->values[i];
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    for (std::size_t i = 0; i < o->size(); ++i) x->grad[i] -= o->grad[i];
  });
  return o;
}

ArrayPtr Tape::log_sigmoid(const ArrayPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = stable_log_sigmoid(x->values[i]);
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    // d/dx log(sigmoid(x)) = sigmoid(-x)
    for (std::size_t i = 0; i < o->size(); ++i)
      x->grad[i] += stable_sigmoid(-x->values[i]) * o->grad[i];
  });
  return o;
}

ArrayPtr Tape::scale(const ArrayPtr& x, double k) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] * k;
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o, k]() {
    for (std::size_t i = 0; i < o->size(); ++i) x->grad[i] += k * o->grad[i];
  });
  return o;
}

ArrayPtr Tape::div_by(const ArrayPtr& x, double d) {
  if (d == 0.0) throw NumericError("div_by: zero divisor");
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] / d;
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o, d]() {
    for (std::size_t i = 0; i < o->size(); ++i) x->grad[i] += o->grad[i] / d;
  });
  return o;
}

ArrayPtr Tape::concat(const std::vector<ArrayPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_rank1("concat", p);
    total += p->size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts)
    out.insert(out.end(), p->values.begin(), p->values.end());
  auto o = make_array({total}, std::move(out));
  auto ps = parts;
  push(o, [ps, o]() {
    std::size_t off = 0;
    for (const auto& p : ps) {
      for (std::size_t i = 0; i < p->size(); ++i)
        p->grad[i] += o->grad[off + i];
      off += p->size();
    }
  });
  return o;
}

ArrayPtr Tape::stack_rows(const std::vector<ArrayPtr>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t c = rows[0]->size();
  for (const auto& r : rows) {
    check_rank1("stack_rows", r);
    if (r->size() != c) {
      throw ShapeError("stack_rows: row length " + std::to_string(r->size()) +
                       " differs from first row length " + std::to_string(c));
    }
  }
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (const auto& r : rows)
    out.insert(out.end(), r->values.begin(), r->values.end());
  auto o = make_array({rows.size(), c}, std::move(out));
  auto rs = rows;
  push(o, [rs, o, c]() {
    for (std::size_t i = 0; i < rs.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j)
        rs[i]->grad[j] += o->grad[i * c + j];
    }
  });
  return o;
}

ArrayPtr Tape::transpose(const ArrayPtr& m) {
  if (m->shape.size() != 2) {
    throw ShapeError("transpose: expected rank-2, got " + shape_str(m->shape));
  }
  const std::size_t r = m->shape[0], c = m->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m->values[i * c + j];
  auto o = make_array({c, r}, std::move(out));
  push(o, [m, o, r, c]() {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        m->grad[i * c + j] += o->grad[j * r + i];
  });
  return o;
}

ArrayPtr Tape::softmax(const ArrayPtr& x) {
  check_rank1("softmax", x);
  if (x->size() == 0) throw ShapeError("softmax: empty input");
  for (std::size_t i = 0; i < x->size(); ++i) {
    if (!std::isfinite(x->values[i])) {
      throw NumericError("softmax: non-finite input at index " +
                         std::to_string(i));
    }
  }
  const double mx = *std::max_element(x->values.begin(), x->values.end());
  std::vector<double> out(x->size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(x->values[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    double dot = 0.0;
    for (std::size_t i = 0; i < o->size(); ++i)
      dot += o->grad[i] * o->values[i];
    for (std::size_t i = 0; i < o->size(); ++i)
      x->grad[i] += o->values[i] * (o->grad[i] - dot);
  });
  return o;
}

ArrayPtr Tape::log_softmax(const ArrayPtr& x) {
  check_rank1("log_softmax", x);
  if (x->size() == 0) throw ShapeError("log_softmax: empty input");
  for (std::size_t i = 0; i < x->size(); ++i) {
    if (!std::isfinite(x->values[i])) {
      throw NumericError("log_softmax: non-finite input at index " +
                         std::to_string(i));
    }
  }
  const double mx = *std::max_element(x->values.begin(), x->values.end());
  double z = 0.0;
  for (double v : x->values) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] - lz;
  auto o = make_array(x->shape, std::move(out));
  push(o, [x, o]() {
    double gsum = 0.0;
    for (double g : o->grad) gsum += g;
    for (std::size_t i = 0; i < o->size(); ++i)
      x->grad[i] += o->grad[i] - std::exp(o->values[i]) * gsum;
  });
  return o;
}

ArrayPtr Tape::pick(const ArrayPtr& x, std::size_t i) {
  check_rank1("pick", x);
  if (i >= x->size()) {
    throw ShapeError("pick: index " + std::to_string(i) +
                     " out of range for length " + std::to_string(x->size()));
  }
  auto o = make_scalar(x->values[i]);
  push(o, [x, o, i]() { x->grad[i] += o->grad[0]; });
  return o;
}

ArrayPtr Tape::row(const ArrayPtr& m, std::size_t i) {
  if (m->shape.size() != 2) {
    throw ShapeError("row: expected rank-2, got " + shape_str(m->shape));
  }
  const std::size_t r = m->shape[0], c = m->shape[1];
  if (i >= r) {
    throw ShapeError("row: index " + std::to_string(i) +
                     " out of range for " + std::to_string(r) + " rows");
  }
  std::vector<double> out(m->values.begin() + i * c,
                          m->values.begin() + (i + 1) * c);
  auto o = make_array({c}, std::move(out));
  push(o, [m, o, i, c]() {
    for (std::size_t j = 0; j < c; ++j) m->grad[i * c + j] += o->grad[j];
  });
  return o;
}

ArrayPtr Tape::sum(const ArrayPtr& x) {
  double acc = 0.0;
  for (double v : x->values) acc += v;
  auto o = make_scalar(acc);
  push(o, [x, o]() {
    for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += o->grad[0];
  });
  return o;
}

void Tape::backward(const ArrayPtr& loss) {
  if (!loss->is_scalar()) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss->shape));
  }
  if (loss->tape != this) {
    throw ShapeError("backward: loss is not an output of this tape");
  }
  for (auto& n : nodes_) n.out->zero_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

GradCheckResult grad_check(const std::function<ArrayPtr(Tape&)>& f,
                           const std::vector<ParamRef>& params,
                           double eps) {
  for (const auto& p : params) p.array->zero_grad();
  std::vector<std::vector<double>> tape_grads;
  {
    Tape t;
    ArrayPtr loss = f(t);
    t.backward(loss);
    for (const auto& p : params) tape_grads.push_back(p.array->grad);
  }

  auto eval = [&f]() {
    Tape t;
    return f(t)->values[0];
  };

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].array->values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double lp = eval();
      vals[i] = saved - eps;
      const double lm = eval();
      vals[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double gt = tape_grads[pi][i];
      const double abs_err = std::fabs(gt - fd);
      const double rel =
          abs_err / std::max({std::fabs(gt), std::fabs(fd), 1e-8});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = params[pi].name;
        res.worst_index = i;
      }
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace qsum::ag
