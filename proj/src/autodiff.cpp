// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ddpolab/error.hpp"

namespace ddpolab::ad {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) { return record(Op::kConstant, std::move(value), {}); }

std::vector<Var> Tape::bind(const ParamStore& params) {
  if (bound_ && !layout_.same_layout(params)) {
    throw ShapeError("tape already bound to a different parameter layout");
  }
  layout_ = params.zeros_like();
  bound_ = true;
  std::vector<Var> leaves;
  leaves.reserve(params.num_segments());
  for (std::size_t i = 0; i < params.num_segments(); ++i) {
    Node n;
    n.op = Op::kParam;
    n.value = params.segment(i).value;
    n.requires_grad = true;
    n.segment = static_cast<std::int32_t>(i);
    nodes_.push_back(std::move(n));
    leaves.push_back({this, static_cast<std::uint32_t>(nodes_.size() - 1)});
  }
  return leaves;
}

Var Tape::record(Op op, Tensor value, std::span<const Var> inputs, Attrs attrs) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.attrs = std::move(attrs);
  n.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    if (in.tape != this) throw Error("operation mixes variables from different tapes");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::clear() {
  nodes_.clear();
  bound_ = false;
  layout_ = ParamStore{};
}

namespace {

NodeAttrs scalar_attr(double s) {
  NodeAttrs a;
  a.scalar = s;
  return a;
}

NodeAttrs begin_attr(std::size_t begin) {
  NodeAttrs a;
  a.begin = begin;
  return a;
}

NodeAttrs coeff_attr(std::span<const double> s) {
  NodeAttrs a;
  a.coeffs.assign(s.begin(), s.end());
  return a;
}

void accumulate(std::vector<Tensor>& grads, std::uint32_t id, Tensor g) {
  Tensor& slot = grads[id];
  if (slot.size() == 0) {
    slot = std::move(g);
    return;
  }
  double* dst = slot.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < slot.size(); ++i) dst[i] += src[i];
}

// Reduces a full-shape gradient to the shape of a broadcast operand.
Tensor reduce_to(const Tensor& g, const Tensor& operand) {
  if (g.size() == operand.size() && g.rows() == operand.rows()) {
    return Tensor(operand.shape(), g.storage());
  }
  Tensor out(operand.shape());
  const std::size_t rows = g.rows(), cols = g.cols();
  if (operand.rows() == 1 && operand.cols() == cols) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[r] += g[r * cols + c];
    }
  }
  return out;
}

}  // namespace

void Tape::propagate(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  auto give = [&](std::size_t k, Tensor t) { accumulate(grads, n.inputs[k], std::move(t)); };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatmul:
      if (needs(0)) give(0, kernels::matmul_nt(g, in(1)));
      if (needs(1)) give(1, kernels::matmul_tn(in(0), g));
      break;
    case Op::kAdd:
      if (needs(0)) give(0, g);
      if (needs(1)) give(1, reduce_to(g, in(1)));
      break;
    case Op::kSub:
      if (needs(0)) give(0, g);
      if (needs(1)) give(1, kernels::scale(reduce_to(g, in(1)), -1.0));
      break;
    case Op::kMul:
      if (needs(0)) give(0, kernels::mul(g, in(1)));
      if (needs(1)) give(1, reduce_to(kernels::mul(g, in(0)), in(1)));
      break;
    case Op::kAddScalar:
      give(0, g);
      break;
    case Op::kScale:
      give(0, kernels::scale(g, n.attrs.scalar));
      break;
    case Op::kScaleRows:
      give(0, kernels::scale_rows(g, n.attrs.coeffs));
      break;
    case Op::kTanh: {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
      give(0, std::move(d));
      break;
    }
    case Op::kSilu: {
      const Tensor& x = in(0);
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        d[i] = g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
      give(0, std::move(d));
      break;
    }
    case Op::kSquare: {
      const Tensor& x = in(0);
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * x[i] * g[i];
      give(0, std::move(d));
      break;
    }
    case Op::kLog: {
      const Tensor& x = in(0);
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / x[i];
      give(0, std::move(d));
      break;
    }
    case Op::kExp: {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * n.value[i];
      give(0, std::move(d));
      break;
    }
    case Op::kSum:
      give(0, Tensor(in(0).shape(), g[0]));
      break;
    case Op::kMean:
      give(0, Tensor(in(0).shape(), g[0] / static_cast<double>(in(0).size())));
      break;
    case Op::kSumRows: {
      const Tensor& x = in(0);
      Tensor d(x.shape());
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] = g[r];
      }
      give(0, std::move(d));
      break;
    }
    case Op::kSliceCols: {
      const Tensor& x = in(0);
      Tensor d(x.shape());
      const std::size_t width = g.cols(), cols = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < width; ++c) d[r * cols + n.attrs.begin + c] = g[r * width + c];
      }
      give(0, std::move(d));
      break;
    }
    case Op::kConcatCols: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = in(k).cols();
        if (needs(k)) give(k, kernels::slice_cols(g, offset, offset + w));
        offset += w;
      }
      break;
    }
  }
}

ParamStore Tape::backward(Var loss) const {
  if (loss.tape != this) throw Error("backward: variable belongs to another tape");
  if (!bound_) throw Error("backward: no parameters bound to this tape");
  const Node& root = nodes_[loss.id];
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + root.value.shape_string());
  }
  ParamStore grads_out = layout_;
  if (!root.requires_grad) return grads_out;

  std::vector<Tensor> grads(loss.id + 1);
  grads[loss.id] = Tensor(root.value.shape(), 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (grads[id].size() == 0) continue;
    const Node& n = nodes_[id];
    if (n.op == Op::kParam) {
      auto dst = grads_out.segment(static_cast<std::size_t>(n.segment)).value.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += grads[id][k];
    } else {
      propagate(n, grads[id], grads);
    }
    grads[id] = Tensor{};
  }
  return grads_out;
}

Var matmul(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(Op::kMatmul, kernels::matmul(a.value(), b.value()), in);
}

Var add(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(Op::kAdd, kernels::add(a.value(), b.value()), in);
}

Var sub(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(Op::kSub, kernels::sub(a.value(), b.value()), in);
}

Var mul(Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape->record(Op::kMul, kernels::mul(a.value(), b.value()), in);
}

Var add_scalar(Var a, double s) {
  const Var in[] = {a};
  return a.tape->record(Op::kAddScalar, kernels::add_scalar(a.value(), s), in, scalar_attr(s));
}

Var scale(Var a, double s) {
  const Var in[] = {a};
  return a.tape->record(Op::kScale, kernels::scale(a.value(), s), in, scalar_attr(s));
}

Var scale_rows(Var a, std::span<const double> s) {
  const Var in[] = {a};
  return a.tape->record(Op::kScaleRows, kernels::scale_rows(a.value(), s), in,
                        coeff_attr(s));
}

#define DDPOLAB_UNARY(name, op)                                  \
  Var name(Var a) {                                              \
    const Var in[] = {a};                                        \
    return a.tape->record(op, kernels::name(a.value()), in);     \
  }

DDPOLAB_UNARY(tanh, Op::kTanh)
DDPOLAB_UNARY(silu, Op::kSilu)
DDPOLAB_UNARY(square, Op::kSquare)
DDPOLAB_UNARY(log, Op::kLog)
DDPOLAB_UNARY(exp, Op::kExp)
DDPOLAB_UNARY(sum, Op::kSum)
DDPOLAB_UNARY(sum_rows, Op::kSumRows)
DDPOLAB_UNARY(mean, Op::kMean)

#undef DDPOLAB_UNARY

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Var in[] = {a};
  return a.tape->record(Op::kSliceCols, kernels::slice_cols(a.value(), begin, end), in,
                        begin_attr(begin));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::vector<const Tensor*> values;
  values.reserve(parts.size());
  for (Var v : parts) values.push_back(&v.value());
  return parts.front().tape->record(Op::kConcatCols, kernels::concat_cols(values), parts);
}

double evaluate(const TracedScalarFn& f, const ParamStore& params) {
  Tape tape;
  auto leaves = tape.bind(params);
  Var out = f(tape, leaves);
  if (out.value().size() != 1) throw ShapeError("evaluate: function is not scalar");
  return out.value()[0];
}

ParamStore gradient(const TracedScalarFn& f, const ParamStore& params) {
  Tape tape;
  auto leaves = tape.bind(params);
  return tape.backward(f(tape, leaves));
}

GradCheckReport grad_check(const TracedScalarFn& f, const ParamStore& params, double step) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be positive");
  const double base = evaluate(f, params);
  if (!std::isfinite(base)) throw NumericalError("grad_check: function is non-finite at params");
  const std::vector<double> analytic = gradient(f, params).flatten();

  GradCheckReport report;
  ParamStore probe = params;
  for (std::size_t i = 0; i < params.total_size(); ++i) {
    const double original = params.flat(i);
    probe.flat(i) = original + step;
    const double plus = evaluate(f, probe);
    probe.flat(i) = original - step;
    const double minus = evaluate(f, probe);
    probe.flat(i) = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericalError("grad_check: non-finite value probing scalar " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace ddpolab::ad
