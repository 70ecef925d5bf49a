// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ddpolab/param_store.hpp"
#include "ddpolab/tensor.hpp"

namespace ddpolab::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

enum class Op : std::uint8_t {
  kConstant,
  kParam,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kAddScalar,
  kScale,
  kScaleRows,
  kTanh,
  kSilu,
  kSquare,
  kLog,
  kExp,
  kSum,
  kSumRows,
  kMean,
  kSliceCols,
  kConcatCols,
};

/// Extra per-node data needed by some backward rules.
struct NodeAttrs {
  double scalar = 0.0;
  std::size_t begin = 0;
  std::vector<double> coeffs;
};

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward() is a single reverse sweep. A tape is
/// single-threaded; build one per worker.

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);

  /// Records one leaf per segment of `params`. Gradients returned by
  /// backward() are laid out like this store. A tape binds one store.
  std::vector<Var> bind(const ParamStore& params);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of a scalar node with respect to the bound parameters.
  ParamStore backward(Var loss) const;

  void clear();

  using Attrs = NodeAttrs;

  /// Appends a node. Used by the operation functions below.
  Var record(Op op, Tensor value, std::span<const Var> inputs, Attrs attrs = {});

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    bool requires_grad = false;
    std::int32_t segment = -1;
    Attrs attrs;
  };

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  ParamStore layout_;
  bool bound_ = false;
};

Var matmul(Var a, Var b);
// Elementwise; b may broadcast as a single row or a single column.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var scale_rows(Var a, std::span<const double> s);
Var tanh(Var a);
Var silu(Var a);
Var square(Var a);
Var log(Var a);
Var exp(Var a);
Var sum(Var a);
Var sum_rows(Var a);
Var mean(Var a);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// Scalar function traced against bound parameter leaves.
using TracedScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Evaluates `f` at `params` without keeping the tape.
double evaluate(const TracedScalarFn& f, const ParamStore& params);

/// Gradient of `f` at `params` via one traced evaluation.
ParamStore gradient(const TracedScalarFn& f, const ParamStore& params);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares the taped gradient against central differences.
///
/// Error per scalar is |analytic - numeric| / max(1, |numeric|); the report
/// carries the maximum. Throws NumericalError if f is non-finite at any probe.
GradCheckReport grad_check(const TracedScalarFn& f, const ParamStore& params, double step);

}  // namespace ddpolab::ad
