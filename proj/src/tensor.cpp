#include "cmf/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace cmf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Array>;
using CVecMap = Eigen::Map<const Array>;

thread_local Tape* g_tape = nullptr;

std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::make_shared<Array>(numel(node->shape));
  return node;
}

bool recording(const Tensor& a) { return g_tape != nullptr && a.requires_grad(); }
bool recording(const Tensor& a, const Tensor& b) {
  return g_tape != nullptr && (a.requires_grad() || b.requires_grad());
}

void mark_output(Tensor& out) {
  out.set_requires_grad(true);
  out.node()->tape = g_tape;
}

void check_finite(const Array& v, const char* op) {
  if (!v.allFinite()) throw NumericError(cat(op, ": non-finite values in result"));
}

// Row-major strides; broadcast axes (extent 1 where out extent >1) get stride 0.
Shape bc_strides(const Shape& in, const Shape& out) {
  Shape st(in.size());
  Index acc = 1;
  for (Index i = static_cast<Index>(in.size()) - 1; i >= 0; --i) {
    const size_t u = static_cast<size_t>(i);
    st[u] = (in[u] == 1 && out[u] != 1) ? 0 : acc;
    acc *= in[u];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(cat(op, ": rank mismatch: ", shape_str(a), " vs ", shape_str(b)));
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
      out[i] = std::max(a[i], b[i]);
    } else {
      throw ShapeError(cat(op, ": incompatible shapes: ", shape_str(a), " vs ", shape_str(b)));
    }
  }
  return out;
}

// Visits the output space of a same-rank broadcast as (outer block, inner
// segment) pairs: body(offa, offb, offc, n, a_inner_bcast, b_inner_bcast).
template <class Body>
void bc_loop(const Shape& sa, const Shape& sb, const Shape& sc, Body body) {
  const size_t r = sc.size();
  const Shape sta = bc_strides(sa, sc);
  const Shape stb = bc_strides(sb, sc);
  const Index inner = sc[r - 1];
  const bool a_bc = sta[r - 1] == 0;
  const bool b_bc = stb[r - 1] == 0;

  Index outer = 1;
  for (size_t i = 0; i + 1 < r; ++i) outer *= sc[i];

  Shape idx(r > 1 ? r - 1 : 0, 0);
  for (Index o = 0; o < outer; ++o) {
    Index offa = 0, offb = 0;
    for (size_t i = 0; i + 1 < r; ++i) {
      offa += idx[i] * sta[i];
      offb += idx[i] * stb[i];
    }
    body(offa, offb, o * inner, inner, a_bc, b_bc);
    for (Index i = static_cast<Index>(r) - 2; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < sc[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

void bc_eval(BinOp op, const double* a, const Shape& sa, const double* b, const Shape& sb,
             double* c, const Shape& sc) {
  bc_loop(sa, sb, sc, [&](Index oa, Index ob, Index oc, Index n, bool abc, bool bbc) {
    VecMap vc(c + oc, n);
    if (!abc && !bbc) {
      CVecMap va(a + oa, n), vb(b + ob, n);
      switch (op) {
        case BinOp::Add: vc = va + vb; break;
        case BinOp::Sub: vc = va - vb; break;
        case BinOp::Mul: vc = va * vb; break;
        case BinOp::Div: vc = va / vb; break;
      }
    } else if (!abc) {
      CVecMap va(a + oa, n);
      const double s = b[ob];
      switch (op) {
        case BinOp::Add: vc = va + s; break;
        case BinOp::Sub: vc = va - s; break;
        case BinOp::Mul: vc = va * s; break;
        case BinOp::Div: vc = va / s; break;
      }
    } else if (!bbc) {
      CVecMap vb(b + ob, n);
      const double s = a[oa];
      switch (op) {
        case BinOp::Add: vc = s + vb; break;
        case BinOp::Sub: vc = s - vb; break;
        case BinOp::Mul: vc = s * vb; break;
        case BinOp::Div: vc = s / vb; break;
      }
    } else {
      double r = 0;
      switch (op) {
        case BinOp::Add: r = a[oa] + b[ob]; break;
        case BinOp::Sub: r = a[oa] - b[ob]; break;
        case BinOp::Mul: r = a[oa] * b[ob]; break;
        case BinOp::Div: r = a[oa] / b[ob]; break;
      }
      vc.setConstant(r);
    }
  });
}

// acc (shape sa) += g (shape sc), summing over the axes sa broadcasts along.
void bc_reduce_into(const double* g, const Shape& sc, double* acc, const Shape& sa) {
  if (sa == sc) {
    VecMap(acc, numel(sa)) += CVecMap(g, numel(sc));
    return;
  }
  bc_loop(sa, sa, sc, [&](Index oa, Index, Index oc, Index n, bool abc, bool) {
    CVecMap vg(g + oc, n);
    if (!abc) {
      VecMap(acc + oa, n) += vg;
    } else {
      acc[oa] += vg.sum();
    }
  });
}

struct ReduceView {
  Index outer, n, inner;
};

ReduceView reduce_view(const Shape& s, Index axis) {
  ReduceView v{1, s[static_cast<size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

Shape reduced_shape(const Shape& s, Index axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[static_cast<size_t>(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
    if (out.empty()) out.push_back(1);
  }
  return out;
}

void check_axis(const Shape& s, Index axis, const char* op) {
  if (axis < 0 || axis >= static_cast<Index>(s.size()))
    throw ShapeError(cat(op, ": axis ", axis, " out of range for ", shape_str(s)));
}

using NodePtr = std::shared_ptr<TensorNode>;

Tensor binary_op(BinOp op, const char* name, const Tensor& a, const Tensor& b) {
  Shape sc = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = Tensor::empty(sc);
  bc_eval(op, a.values().data(), a.shape(), b.values().data(), b.shape(),
          out.values_mut().data(), sc);
  if (op == BinOp::Div) check_finite(out.values(), name);
  if (recording(a, b)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    g_tape->record([op, an, bn, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      const Shape& sc2 = on->shape;
      switch (op) {
        case BinOp::Add:
        case BinOp::Sub: {
          if (an->requires_grad)
            bc_reduce_into(go->data(), sc2, gs.at_or_create(an.get(), numel(an->shape)).data(),
                           an->shape);
          if (bn->requires_grad) {
            if (op == BinOp::Add) {
              bc_reduce_into(go->data(), sc2, gs.at_or_create(bn.get(), numel(bn->shape)).data(),
                             bn->shape);
            } else {
              Array neg = -*go;
              bc_reduce_into(neg.data(), sc2, gs.at_or_create(bn.get(), numel(bn->shape)).data(),
                             bn->shape);
            }
          }
          break;
        }
        case BinOp::Mul: {
          if (an->requires_grad) {
            Array tmp(numel(sc2));
            bc_eval(BinOp::Mul, go->data(), sc2, bn->values->data(), bn->shape, tmp.data(), sc2);
            bc_reduce_into(tmp.data(), sc2, gs.at_or_create(an.get(), numel(an->shape)).data(),
                           an->shape);
          }
          if (bn->requires_grad) {
            Array tmp(numel(sc2));
            bc_eval(BinOp::Mul, go->data(), sc2, an->values->data(), an->shape, tmp.data(), sc2);
            bc_reduce_into(tmp.data(), sc2, gs.at_or_create(bn.get(), numel(bn->shape)).data(),
                           bn->shape);
          }
          break;
        }
        case BinOp::Div: {
          // c = a / b: da = g / b, db = -g * c / b
          if (an->requires_grad) {
            Array tmp(numel(sc2));
            bc_eval(BinOp::Div, go->data(), sc2, bn->values->data(), bn->shape, tmp.data(), sc2);
            bc_reduce_into(tmp.data(), sc2, gs.at_or_create(an.get(), numel(an->shape)).data(),
                           an->shape);
          }
          if (bn->requires_grad) {
            Array tmp(numel(sc2));
            bc_eval(BinOp::Mul, go->data(), sc2, on->values->data(), sc2, tmp.data(), sc2);
            Array tmp2(numel(sc2));
            bc_eval(BinOp::Div, tmp.data(), sc2, bn->values->data(), bn->shape, tmp2.data(), sc2);
            tmp2 = -tmp2;
            bc_reduce_into(tmp2.data(), sc2, gs.at_or_create(bn.get(), numel(bn->shape)).data(),
                           bn->shape);
          }
          break;
        }
      }
    });
  }
  return out;
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  node_ = make_node(std::move(shape));
  node_->values->setConstant(fill);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, Array data, bool requires_grad) {
  if (numel(shape) != data.size())
    throw ShapeError(
        cat("tensor: shape ", shape_str(shape), " does not match data length ", data.size()));
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->values = std::make_shared<Array>(std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> vals) {
  Array a(static_cast<Index>(vals.size()));
  Index i = 0;
  for (double v : vals) a[i++] = v;
  return Tensor(std::move(shape), std::move(a));
}

Tensor Tensor::empty(Shape shape) { return alias(make_node(std::move(shape))); }

Tensor Tensor::alias(std::shared_ptr<TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ContractError(cat("scalar_value: tensor has shape ", shape_str(shape())));
  return (*node_->values)[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw ShapeError(cat("at: index rank mismatch for ", shape_str(s)));
  Index off = 0, stride = 1;
  auto it = idx.end();
  for (Index i = static_cast<Index>(s.size()) - 1; i >= 0; --i) {
    --it;
    off += *it * stride;
    stride *= s[static_cast<size_t>(i)];
  }
  return (*node_->values)[off];
}

const Array& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad(): no gradient present (run backward first)");
  return node_->grad;
}

// ---- GradStore ----------------------------------------------------------------

Array* GradStore::find(TensorNode* n) {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

Array& GradStore::at_or_create(TensorNode* n, Index size) {
  auto it = grads_.find(n);
  if (it == grads_.end()) it = grads_.emplace(n, Array::Zero(size)).first;
  return it->second;
}

void GradStore::keep_only_leaves() {
  for (auto it = grads_.begin(); it != grads_.end();) {
    if (it->first->tape != nullptr || !it->first->requires_grad) {
      it = grads_.erase(it);
    } else {
      ++it;
    }
  }
}

void GradStore::commit_to_nodes() {
  for (auto& [node, buf] : grads_) {
    if (!node->requires_grad) continue;
    if (node->grad.size() == 0) node->grad = Array::Zero(buf.size());
    node->grad += buf;
  }
}

// ---- Tape ----------------------------------------------------------------------

void Tape::run(const Tensor& loss, GradStore& store, double seed) {
  if (consumed_) throw ContractError("backward: tape already consumed; clear() before reuse");
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar (size-1) tensor");
  if (loss.node()->tape != this)
    throw ContractError("backward: loss was not produced on this tape");
  if (!std::isfinite(loss.values()[0])) throw NumericError("backward: loss is not finite");
  store.at_or_create(loss.node(), 1)[0] += seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(store);
  consumed_ = true;
}

void Tape::backward(const Tensor& loss, double seed) {
  GradStore store;
  run(loss, store, seed);
  store.commit_to_nodes();
}

void Tape::backward(const Tensor& loss, GradStore& store, double seed) {
  run(loss, store, seed);
  store.keep_only_leaves();
}

void Tape::clear() {
  records_.clear();
  consumed_ = false;
}

// ---- TapeScope -------------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

Tape* active_tape() { return g_tape; }

// ---- matmul ------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError(cat("matmul: expects rank-2 operands, got ", shape_str(a.shape()), " and ",
                         shape_str(b.shape())));
  const Index m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2)
    throw ShapeError(
        cat("matmul: inner extents differ: ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  Tensor out = Tensor::empty(Shape{m, n});
  CMatMap ma(a.values().data(), m, k), mb(b.values().data(), k, n);
  MatMap(out.values_mut().data(), m, n).noalias() = ma * mb;
  if (recording(a, b)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    g_tape->record([an, bn, on, m, k, n](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      CMatMap mgo(go->data(), m, n);
      if (an->requires_grad) {
        CMatMap mbv(bn->values->data(), k, n);
        MatMap(gs.at_or_create(an.get(), m * k).data(), m, k).noalias() += mgo * mbv.transpose();
      }
      if (bn->requires_grad) {
        CMatMap mav(an->values->data(), m, k);
        MatMap(gs.at_or_create(bn.get(), k * n).data(), k, n).noalias() += mav.transpose() * mgo;
      }
    });
  }
  return out;
}

// ---- elementwise binary -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Div, "div", a, b); }

Tensor add(const Tensor& a, double c) {
  Tensor out = Tensor::empty(a.shape());
  out.values_mut() = a.values() + c;
  if (recording(a)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    g_tape->record([an, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(an.get(), go->size()) += *go;
    });
  }
  return out;
}

Tensor sub(double c, const Tensor& a) {
  Tensor out = Tensor::empty(a.shape());
  out.values_mut() = c - a.values();
  if (recording(a)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    g_tape->record([an, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(an.get(), go->size()) -= *go;
    });
  }
  return out;
}

Tensor mul(const Tensor& a, double c) {
  Tensor out = Tensor::empty(a.shape());
  out.values_mut() = a.values() * c;
  if (recording(a)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    g_tape->record([an, on, c](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(an.get(), go->size()) += *go * c;
    });
  }
  return out;
}

Tensor div(double c, const Tensor& a) {
  Tensor out = Tensor::empty(a.shape());
  out.values_mut() = c / a.values();
  check_finite(out.values(), "div");
  if (recording(a)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    g_tape->record([an, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      // d(c/a) = -c/a^2 = -out/a
      gs.at_or_create(an.get(), go->size()) +=
          -(*go) * (*on->values) / (*an->values);
    });
  }
  return out;
}

// ---- elementwise unary ----------------------------------------------------------------

namespace {

template <class FwdFn, class BwdFn>
Tensor unary_op(const char* name, const Tensor& a, bool enforce_finite, FwdFn fwd, BwdFn bwd) {
  Tensor out = Tensor::empty(a.shape());
  fwd(a.values(), out.values_mut());
  if (enforce_finite) check_finite(out.values(), name);
  if (recording(a)) {
    mark_output(out);
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    g_tape->record([an, on, bwd](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      bwd(*go, *an->values, *on->values, gs.at_or_create(an.get(), go->size()));
    });
  }
  return out;
}

}  // namespace

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, true, [](const Array& a, Array& o) { o = a.exp(); },
      [](const Array& g, const Array&, const Array& o, Array& acc) { acc += g * o; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, true, [](const Array& a, Array& o) { o = a.log(); },
      [](const Array& g, const Array& a, const Array&, Array& acc) { acc += g / a; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, false, [](const Array& a, Array& o) { o = a.max(0.0); },
      [](const Array& g, const Array& a, const Array&, Array& acc) {
        acc += (a > 0.0).select(g, 0.0);
      });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      "sqrt", x, true, [](const Array& a, Array& o) { o = a.sqrt(); },
      [](const Array& g, const Array&, const Array& o, Array& acc) { acc += g * 0.5 / o; });
}

// ---- reductions -------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out(Shape{1}, x.values().sum());
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(xn.get(), numel(xn->shape)) += (*go)[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out(Shape{1}, x.values().sum() * inv);
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, inv](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(xn.get(), numel(xn->shape)) += (*go)[0] * inv;
    });
  }
  return out;
}

namespace {

enum class RedOp { Sum, Mean };

Tensor axis_reduce(RedOp op, const char* name, const Tensor& x, Index axis, bool keepdim) {
  check_axis(x.shape(), axis, name);
  const ReduceView v = reduce_view(x.shape(), axis);
  Shape so = reduced_shape(x.shape(), axis, keepdim);
  Tensor out = Tensor::empty(so);
  const double* in = x.values().data();
  double* o = out.values_mut().data();
  const double inv = op == RedOp::Mean ? 1.0 / static_cast<double>(v.n) : 1.0;
  for (Index a = 0; a < v.outer; ++a) {
    VecMap acc(o + a * v.inner, v.inner);
    acc.setZero();
    for (Index j = 0; j < v.n; ++j) acc += CVecMap(in + (a * v.n + j) * v.inner, v.inner);
    if (op == RedOp::Mean) acc *= inv;
  }
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, v, inv, op](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Array& acc = gs.at_or_create(xn.get(), numel(xn->shape));
      const double scale = op == RedOp::Mean ? inv : 1.0;
      for (Index a = 0; a < v.outer; ++a) {
        CVecMap g(go->data() + a * v.inner, v.inner);
        for (Index j = 0; j < v.n; ++j)
          VecMap(acc.data() + (a * v.n + j) * v.inner, v.inner) += g * scale;
      }
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, Index axis, bool keepdim) {
  return axis_reduce(RedOp::Sum, "sum", x, axis, keepdim);
}
Tensor mean(const Tensor& x, Index axis, bool keepdim) {
  return axis_reduce(RedOp::Mean, "mean", x, axis, keepdim);
}

Tensor max_reduce(const Tensor& x, Index axis, bool keepdim) {
  check_axis(x.shape(), axis, "max_reduce");
  const ReduceView v = reduce_view(x.shape(), axis);
  Shape so = reduced_shape(x.shape(), axis, keepdim);
  Tensor out = Tensor::empty(so);
  const double* in = x.values().data();
  double* o = out.values_mut().data();
  // Argmax per output slot (first maximum wins ties; deterministic).
  std::vector<Index> arg(static_cast<size_t>(v.outer * v.inner));
  for (Index a = 0; a < v.outer; ++a) {
    for (Index i = 0; i < v.inner; ++i) {
      double best = in[(a * v.n) * v.inner + i];
      Index bj = 0;
      for (Index j = 1; j < v.n; ++j) {
        const double cand = in[(a * v.n + j) * v.inner + i];
        if (cand > best) {
          best = cand;
          bj = j;
        }
      }
      o[a * v.inner + i] = best;
      arg[static_cast<size_t>(a * v.inner + i)] = bj;
    }
  }
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, v, arg = std::move(arg)](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Array& acc = gs.at_or_create(xn.get(), numel(xn->shape));
      for (Index a = 0; a < v.outer; ++a)
        for (Index i = 0; i < v.inner; ++i) {
          const Index j = arg[static_cast<size_t>(a * v.inner + i)];
          acc[(a * v.n + j) * v.inner + i] += (*go)[a * v.inner + i];
        }
    });
  }
  return out;
}

// ---- shape ops ------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError(
        cat("reshape: cannot view ", shape_str(x.shape()), " as ", shape_str(shape)));
  // Shares the value storage; row-major flattening is unchanged.
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = x.node()->values;
  Tensor out = Tensor::alias(std::move(node));
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      gs.at_or_create(xn.get(), numel(xn->shape)) += *go;
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError(cat("transpose: expects rank-2, got ", shape_str(x.shape())));
  const Index r = x.extent(0), c = x.extent(1);
  Tensor out = Tensor::empty(Shape{c, r});
  MatMap(out.values_mut().data(), c, r) = CMatMap(x.values().data(), r, c).transpose();
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, r, c](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      MatMap(gs.at_or_create(xn.get(), r * c).data(), r, c) +=
          CMatMap(go->data(), c, r).transpose();
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<Index>& axes) {
  const size_t r = static_cast<size_t>(x.rank());
  if (axes.size() != r) throw ShapeError("permute: axes size must equal rank");
  std::vector<bool> seen(r, false);
  for (Index a : axes) {
    if (a < 0 || a >= static_cast<Index>(r) || seen[static_cast<size_t>(a)])
      throw ShapeError("permute: axes must be a permutation");
    seen[static_cast<size_t>(a)] = true;
  }
  Shape so(r);
  for (size_t i = 0; i < r; ++i) so[i] = x.shape()[static_cast<size_t>(axes[i])];

  Shape in_strides(r), out_strides(r);
  Index acc = 1;
  for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
    in_strides[static_cast<size_t>(i)] = acc;
    acc *= x.shape()[static_cast<size_t>(i)];
  }
  acc = 1;
  for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
    out_strides[static_cast<size_t>(i)] = acc;
    acc *= so[static_cast<size_t>(i)];
  }
  // map[i]: source stride for output axis i
  Shape map(r);
  for (size_t i = 0; i < r; ++i) map[i] = in_strides[static_cast<size_t>(axes[i])];

  Tensor out = Tensor::empty(so);
  const double* in = x.values().data();
  double* o = out.values_mut().data();
  const Index total = x.size();
  Shape idx(r, 0);
  for (Index flat = 0; flat < total; ++flat) {
    Index src = 0;
    for (size_t i = 0; i < r; ++i) src += idx[i] * map[i];
    o[flat] = in[src];
    for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < so[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, so, map, r](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Array& acc2 = gs.at_or_create(xn.get(), numel(xn->shape));
      Shape idx2(r, 0);
      const Index total2 = go->size();
      for (Index flat = 0; flat < total2; ++flat) {
        Index src = 0;
        for (size_t i = 0; i < r; ++i) src += idx2[i] * map[i];
        acc2[src] += (*go)[flat];
        for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
          if (++idx2[static_cast<size_t>(i)] < so[static_cast<size_t>(i)]) break;
          idx2[static_cast<size_t>(i)] = 0;
        }
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  check_axis(s0, axis, "concat");
  Shape so = s0;
  Index total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank())
      throw ShapeError(cat("concat: rank mismatch: ", shape_str(s0), " vs ", shape_str(p.shape())));
    for (size_t i = 0; i < s0.size(); ++i) {
      if (static_cast<Index>(i) != axis && p.shape()[i] != s0[i])
        throw ShapeError(
            cat("concat: shape mismatch off axis: ", shape_str(s0), " vs ", shape_str(p.shape())));
    }
    total_axis += p.extent(axis);
  }
  so[static_cast<size_t>(axis)] = total_axis;

  const ReduceView vo = reduce_view(so, axis);
  Tensor out = Tensor::empty(so);
  double* o = out.values_mut().data();
  Index pos = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const ReduceView vp = reduce_view(p.shape(), axis);
    const double* in = p.values().data();
    for (Index a = 0; a < vp.outer; ++a) {
      std::copy(in + a * vp.n * vp.inner, in + (a + 1) * vp.n * vp.inner,
                o + (a * vo.n + pos) * vo.inner);
    }
    pos += p.extent(axis);
    any_grad = any_grad || p.requires_grad();
  }
  if (g_tape && any_grad) {
    mark_output(out);
    std::vector<NodePtr> nodes;
    std::vector<Index> extents;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) {
      nodes.push_back(p.node_ptr());
      extents.push_back(p.extent(axis));
    }
    NodePtr on = out.node_ptr();
    g_tape->record([nodes, extents, on, vo, axis](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Index pos2 = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const Index ext = extents[pi];
        if (nodes[pi]->requires_grad) {
          Array& acc = gs.at_or_create(nodes[pi].get(), numel(nodes[pi]->shape));
          for (Index a = 0; a < vo.outer; ++a) {
            VecMap(acc.data() + a * ext * vo.inner, ext * vo.inner) +=
                CVecMap(go->data() + (a * vo.n + pos2) * vo.inner, ext * vo.inner);
          }
        }
        pos2 += ext;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, Index axis, Index start, Index len) {
  check_axis(x.shape(), axis, "slice");
  const Index ext = x.extent(axis);
  if (start < 0 || len < 1 || start + len > ext)
    throw ShapeError(
        cat("slice: range [", start, ",", start + len, ") out of bounds for ", shape_str(x.shape())));
  Shape so = x.shape();
  so[static_cast<size_t>(axis)] = len;
  const ReduceView vi = reduce_view(x.shape(), axis);
  Tensor out = Tensor::empty(so);
  const double* in = x.values().data();
  double* o = out.values_mut().data();
  for (Index a = 0; a < vi.outer; ++a) {
    std::copy(in + (a * vi.n + start) * vi.inner, in + (a * vi.n + start + len) * vi.inner,
              o + a * len * vi.inner);
  }
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, vi, start, len](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Array& acc = gs.at_or_create(xn.get(), numel(xn->shape));
      for (Index a = 0; a < vi.outer; ++a) {
        VecMap(acc.data() + (a * vi.n + start) * vi.inner, len * vi.inner) +=
            CVecMap(go->data() + a * len * vi.inner, len * vi.inner);
      }
    });
  }
  return out;
}

// ---- softmax -----------------------------------------------------------------------------

Tensor softmax(const Tensor& x, Index axis) {
  check_axis(x.shape(), axis, "softmax");
  if (!x.values().allFinite()) throw NumericError("softmax: non-finite input");
  const ReduceView v = reduce_view(x.shape(), axis);
  Tensor out = Tensor::empty(x.shape());
  const double* in = x.values().data();
  double* o = out.values_mut().data();
  if (v.inner == 1) {
    for (Index a = 0; a < v.outer; ++a) {
      CVecMap row(in + a * v.n, v.n);
      VecMap orow(o + a * v.n, v.n);
      const double m = row.maxCoeff();
      orow = (row - m).exp();
      const double s = orow.sum();
      orow /= s;
    }
  } else {
    for (Index a = 0; a < v.outer; ++a) {
      for (Index i = 0; i < v.inner; ++i) {
        const double* base = in + a * v.n * v.inner + i;
        double* obase = o + a * v.n * v.inner + i;
        double m = base[0];
        for (Index j = 1; j < v.n; ++j) m = std::max(m, base[j * v.inner]);
        double s = 0;
        for (Index j = 0; j < v.n; ++j) {
          const double e = std::exp(base[j * v.inner] - m);
          obase[j * v.inner] = e;
          s += e;
        }
        for (Index j = 0; j < v.n; ++j) obase[j * v.inner] /= s;
      }
    }
  }
  if (recording(x)) {
    mark_output(out);
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    g_tape->record([xn, on, v](GradStore& gs) {
      Array* go = gs.find(on.get());
      if (!go) return;
      Array& acc = gs.at_or_create(xn.get(), numel(xn->shape));
      const double* s = on->values->data();
      const double* g = go->data();
      if (v.inner == 1) {
        for (Index a = 0; a < v.outer; ++a) {
          CVecMap srow(s + a * v.n, v.n), grow(g + a * v.n, v.n);
          const double dot = (srow * grow).sum();
          VecMap(acc.data() + a * v.n, v.n) += srow * (grow - dot);
        }
      } else {
        for (Index a = 0; a < v.outer; ++a)
          for (Index i = 0; i < v.inner; ++i) {
            const Index base = a * v.n * v.inner + i;
            double dot = 0;
            for (Index j = 0; j < v.n; ++j)
              dot += s[base + j * v.inner] * g[base + j * v.inner];
            for (Index j = 0; j < v.n; ++j)
              acc[base + j * v.inner] +=
                  s[base + j * v.inner] * (g[base + j * v.inner] - dot);
          }
      }
    });
  }
  return out;
}

// ---- derived ----------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  // exp(-|x|) keeps every intermediate in (0, 1]; the sign split is applied
  // through a constant gate so both branches stay finite for any input.
  Tensor n = exp(mul(abs(x), -1.0));
  Tensor denom = add(n, 1.0);
  Tensor pos = div(1.0, denom);  // x >= 0: 1 / (1 + e^-x)
  Tensor neg = div(n, denom);    // x <  0: e^x / (1 + e^x)
  Array gate_vals = (x.values() >= 0.0).cast<double>();
  Tensor gate(x.shape(), gate_vals);
  return add(mul(gate, pos), mul(sub(1.0, gate), neg));
}

}  // namespace cmf
