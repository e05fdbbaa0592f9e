#include "qvrp/autodiff.hpp"

#include <cmath>

#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"

namespace qvrp::ad {

namespace {

void check_rank2(const Tensor& t, const char* what) {
  if (t.rank() > 2) throw DimensionError(std::string(what) + ": rank > 2 unsupported");
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  check_rank2(ta, "matmul");
  check_rank2(tb, "matmul");
  if (ta.cols() != tb.rows()) throw DimensionError("matmul: inner extents do not match");
  Tensor out({ta.rows(), tb.cols()});
  kernels::matmul_nn(ta.data(), tb.data(), out.data(), ta.rows(), ta.cols(), tb.cols());
  Node n;
  n.op = Op::kMatMulNN;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.cols() != tb.cols()) throw DimensionError("matmul_nt: inner extents do not match");
  Tensor out({ta.rows(), tb.rows()});
  kernels::matmul_nt(ta.data(), tb.data(), out.data(), ta.rows(), ta.cols(), tb.rows());
  Node n;
  n.op = Op::kMatMulNT;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (!ta.same_shape(tb)) throw DimensionError("add: shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) += tb.at(i);
  Node n;
  n.op = Op::kAdd;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (!ta.same_shape(tb)) throw DimensionError("sub: shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) -= tb.at(i);
  Node n;
  n.op = Op::kSub;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::add_rowvec(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (tb.rows() != 1 || tb.cols() != ta.cols())
    throw DimensionError("add_rowvec: expected [1,n] broadcast operand");
  Tensor out = ta;
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(r, c) += tb.at(0, c);
  Node n;
  n.op = Op::kAddRowVec;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (!ta.same_shape(tb)) throw DimensionError("hadamard: shape mismatch");
  Tensor out = ta;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) *= tb.at(i);
  Node n;
  n.op = Op::kHadamard;
  n.in = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Tensor out = nodes_[a.id].value;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) *= c;
  Node n;
  n.op = Op::kScale;
  n.in = {a.id};
  n.value = std::move(out);
  n.c0 = c;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::scale_by_scalar(Tensor constant, Var s) {
  const Tensor& ts = nodes_[s.id].value;
  if (ts.size() != 1) throw DimensionError("scale_by_scalar: scalar operand expected");
  Tensor out = constant;
  double sv = ts.at(static_cast<int64_t>(0));
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) *= sv;
  Node n;
  n.op = Op::kScaleByScalar;
  n.in = {s.id};
  n.value = std::move(out);
  n.aux = std::move(constant);
  n.requires_grad = nodes_[s.id].requires_grad;
  return push(std::move(n));
}

Var Tape::outer(Var col, Var row) {
  const Tensor& tc = nodes_[col.id].value;
  const Tensor& tr = nodes_[row.id].value;
  if (tr.rows() != 1) throw DimensionError("outer: row operand must be [1,n]");
  int m = static_cast<int>(tc.size());
  int nn = tr.cols();
  Tensor out({m, nn});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < nn; ++j) out.at(i, j) = tc.at(static_cast<int64_t>(i)) * tr.at(0, j);
  Node n;
  n.op = Op::kOuter;
  n.in = {col.id, row.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[col.id].requires_grad || nodes_[row.id].requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Tensor out = nodes_[a.id].value;
  for (int64_t i = 0; i < out.size(); ++i)
    if (out.at(i) < 0) out.at(i) = 0;
  Node n;
  n.op = Op::kRelu;
  n.in = {a.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::dropout(Var a, double rate) {
  if (!training_ || rate <= 0.0) return a;  // identity in eval mode
  if (rate >= 1.0) throw ArgumentError("dropout: rate must be < 1");
  const Tensor& ta = nodes_[a.id].value;
  Tensor mask(ta.shape());
  double keep = 1.0 - rate;
  for (int64_t i = 0; i < mask.size(); ++i)
    mask.at(i) = rng_.uniform() < keep ? 1.0 / keep : 0.0;
  Tensor out = ta;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) *= mask.at(i);
  Node n;
  n.op = Op::kDropout;
  n.in = {a.id};
  n.value = std::move(out);
  n.aux = std::move(mask);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  int rows = nodes_[parts[0].id].value.rows();
  int total = 0;
  bool req = false;
  for (Var p : parts) {
    const Tensor& t = nodes_[p.id].value;
    if (t.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    total += t.cols();
    req = req || nodes_[p.id].requires_grad;
  }
  Tensor out({rows, total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = nodes_[p.id].value;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < t.cols(); ++c) out.at(r, off + c) = t.at(r, c);
    off += t.cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  for (Var p : parts) n.in.push_back(p.id);
  n.value = std::move(out);
  n.requires_grad = req;
  return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  int cols = nodes_[parts[0].id].value.cols();
  int total = 0;
  bool req = false;
  for (Var p : parts) {
    const Tensor& t = nodes_[p.id].value;
    if (t.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    total += t.rows();
    req = req || nodes_[p.id].requires_grad;
  }
  Tensor out({total, cols});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = nodes_[p.id].value;
    for (int r = 0; r < t.rows(); ++r)
      for (int c = 0; c < cols; ++c) out.at(off + r, c) = t.at(r, c);
    off += t.rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  for (Var p : parts) n.in.push_back(p.id);
  n.value = std::move(out);
  n.requires_grad = req;
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, int first_row, int rows) {
  const Tensor& ta = nodes_[a.id].value;
  if (first_row < 0 || rows <= 0 || first_row + rows > ta.rows())
    throw DimensionError("slice_rows: range out of bounds");
  Tensor out({rows, ta.cols()});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(r, c) = ta.at(first_row + r, c);
  Node n;
  n.op = Op::kSliceRows;
  n.in = {a.id};
  n.value = std::move(out);
  n.i0 = first_row;
  n.i1 = rows;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::mean_rows(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  Tensor out({1, ta.cols()});
  for (int r = 0; r < ta.rows(); ++r)
    for (int c = 0; c < ta.cols(); ++c) out.at(0, c) += ta.at(r, c);
  for (int c = 0; c < ta.cols(); ++c) out.at(0, c) /= ta.rows();
  Node n;
  n.op = Op::kMeanRows;
  n.in = {a.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  const Tensor& ta = nodes_[a.id].value;
  double s = 0;
  for (int64_t i = 0; i < ta.size(); ++i) s += ta.at(i);
  Node n;
  n.op = Op::kSum;
  n.in = {a.id};
  n.value = Tensor::scalar(s);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::entry(Var a, int r, int c) {
  const Tensor& ta = nodes_[a.id].value;
  if (r >= ta.rows() || c >= ta.cols()) throw DimensionError("entry: out of bounds");
  Node n;
  n.op = Op::kEntry;
  n.in = {a.id};
  n.value = Tensor::scalar(ta.at(r, c));
  n.i0 = r;
  n.i1 = c;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Tensor out = nodes_[a.id].value;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) = std::log(out.at(i));
  Node n;
  n.op = Op::kLog;
  n.in = {a.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Tensor out = nodes_[a.id].value;
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) = std::tanh(out.at(i));
  Node n;
  n.op = Op::kTanh;
  n.in = {a.id};
  n.value = std::move(out);
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Tape::softmax_rows(Var u, Tensor mask_additive) {
  const Tensor& tu = nodes_[u.id].value;
  if (!tu.same_shape(mask_additive)) throw DimensionError("softmax_rows: mask shape mismatch");
  int m = tu.rows(), nn = tu.cols();
  Tensor out({m, nn});
  for (int r = 0; r < m; ++r) {
    bool any_unmasked = false;
    double row_max = 0;
    for (int c = 0; c < nn; ++c) {
      if (mask_additive.at(r, c) > kMaskThreshold) {
        double v = tu.at(r, c);
        if (!any_unmasked || v > row_max) row_max = v;
        any_unmasked = true;
      }
    }
    if (!any_unmasked) throw InfeasibleRowError("softmax_rows: all entries of a row are masked");
    double denom = 0;
    for (int c = 0; c < nn; ++c) {
      double e = 0.0;
      if (mask_additive.at(r, c) > kMaskThreshold)
        e = std::exp(tu.at(r, c) - row_max);
      out.at(r, c) = e;
      denom += e;
    }
    for (int c = 0; c < nn; ++c) out.at(r, c) /= denom;
  }
  Node n;
  n.op = Op::kSoftmaxRows;
  n.in = {u.id};
  n.value = std::move(out);
  n.aux = std::move(mask_additive);
  n.requires_grad = nodes_[u.id].requires_grad;
  return push(std::move(n));
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                     double momentum, double eps) {
  const Tensor& tx = nodes_[x.id].value;
  int m = tx.rows(), f = tx.cols();
  if (running_mean.size() != f || running_var.size() != f)
    throw DimensionError("batch_norm: running statistics do not match feature dimension");
  Tensor xhat({m, f});
  Tensor invstd({1, f});
  if (training_) {
    for (int c = 0; c < f; ++c) {
      double mu = 0;
      for (int r = 0; r < m; ++r) mu += tx.at(r, c);
      mu /= m;
      double var = 0;
      for (int r = 0; r < m; ++r) {
        double d = tx.at(r, c) - mu;
        var += d * d;
      }
      var /= m;
      double is = 1.0 / std::sqrt(var + eps);
      invstd.at(0, c) = is;
      for (int r = 0; r < m; ++r) xhat.at(r, c) = (tx.at(r, c) - mu) * is;
      double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean.at(static_cast<int64_t>(c)) =
          (1 - momentum) * running_mean.at(static_cast<int64_t>(c)) + momentum * mu;
      running_var.at(static_cast<int64_t>(c)) =
          (1 - momentum) * running_var.at(static_cast<int64_t>(c)) + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < f; ++c) {
      double is = 1.0 / std::sqrt(running_var.at(static_cast<int64_t>(c)) + eps);
      invstd.at(0, c) = is;
      double mu = running_mean.at(static_cast<int64_t>(c));
      for (int r = 0; r < m; ++r) xhat.at(r, c) = (tx.at(r, c) - mu) * is;
    }
  }
  const Tensor& tg = nodes_[gamma.id].value;
  const Tensor& tb = nodes_[beta.id].value;
  if (tg.size() != f || tb.size() != f) throw DimensionError("batch_norm: affine shape mismatch");
  Tensor out({m, f});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < f; ++c)
      out.at(r, c) = tg.at(static_cast<int64_t>(c)) * xhat.at(r, c) + tb.at(static_cast<int64_t>(c));
  Node n;
  n.op = Op::kBatchNorm;
  n.in = {x.id, gamma.id, beta.id};
  n.value = std::move(out);
  n.aux = std::move(xhat);
  n.aux2 = std::move(invstd);
  n.i0 = training_ ? 1 : 0;
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[gamma.id].requires_grad ||
                    nodes_[beta.id].requires_grad;
  return push(std::move(n));
}

namespace {

inline void rotate_pair(double* p, double* q, double c, double s) {
  double a = *p, b = *q;
  *p = c * a + s * b;
  *q = -s * a + c * b;
}

inline void unrotate_pair(double* p, double* q, double c, double s) {
  double a = *p, b = *q;
  *p = c * a - s * b;
  *q = s * a + c * b;
}

}  // namespace

Var Tape::pyramid_apply(Var x, Var thetas,
                        std::shared_ptr<const std::vector<std::pair<int, int>>> pairs) {
  const Tensor& tx = nodes_[x.id].value;
  const Tensor& tt = nodes_[thetas.id].value;
  if (static_cast<size_t>(tt.size()) != pairs->size())
    throw DimensionError("pyramid_apply: theta count does not match gate count");
  int m = tx.rows(), nn = tx.cols();
  for (const auto& [p, q] : *pairs)
    if (p < 0 || q < 0 || p >= nn || q >= nn || p == q)
      throw DimensionError("pyramid_apply: gate acts outside the vector");
  Tensor out = tx;
  for (int r = 0; r < m; ++r) {
    double* row = out.data() + static_cast<int64_t>(r) * nn;
    for (size_t g = 0; g < pairs->size(); ++g) {
      double th = tt.at(static_cast<int64_t>(g));
      rotate_pair(&row[(*pairs)[g].first], &row[(*pairs)[g].second], std::cos(th), std::sin(th));
    }
  }
  Node n;
  n.op = Op::kPyramidApply;
  n.in = {x.id, thetas.id};
  n.value = std::move(out);
  n.pairs = std::move(pairs);
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[thetas.id].requires_grad;
  return push(std::move(n));
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    static const Tensor empty;
    if (n.value.size() == 0) return empty;
    // Never touched during backward: gradient is zero.
    const_cast<Node&>(n).grad = Tensor(n.value.shape());
  }
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var scalar_loss) {
  const Tensor& v = nodes_[scalar_loss.id].value;
  if (v.size() != 1) throw DimensionError("backward: loss must be scalar");
  backward_seeded({{scalar_loss, Tensor::scalar(1.0)}});
}

void Tape::backward_seeded(const std::vector<std::pair<Var, Tensor>>& seeds) {
  if (backward_done_) throw ArgumentError("backward: tape already differentiated");
  backward_done_ = true;
  int top = -1;
  for (const auto& [var, seed] : seeds) {
    Node& n = nodes_[var.id];
    if (!seed.same_shape(n.value)) throw DimensionError("backward: seed shape mismatch");
    Tensor& g = grad_buf(var.id);
    for (int64_t i = 0; i < g.size(); ++i) g.at(i) += seed.at(i);
    if (var.id > top) top = var.id;
  }
  for (int id = top; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.requires_grad) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(int id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto in_val = [&](int k) -> const Tensor& { return nodes_[n.in[k]].value; };
  auto needs = [&](int k) { return nodes_[n.in[k]].requires_grad; };

  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kMatMulNN: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (needs(0)) {
        Tensor tmp({a.rows(), a.cols()});
        kernels::matmul_nt(g.data(), b.data(), tmp.data(), g.rows(), g.cols(), b.rows());
        Tensor& da = grad_buf(n.in[0]);
        for (int64_t i = 0; i < da.size(); ++i) da.at(i) += tmp.at(i);
      }
      if (needs(1)) {
        Tensor& db = grad_buf(n.in[1]);
        kernels::matmul_tn_acc(a.data(), g.data(), db.data(), a.cols(), a.rows(), g.cols());
      }
      break;
    }
    case Op::kMatMulNT: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (needs(0)) {
        Tensor tmp({a.rows(), a.cols()});
        kernels::matmul_nn(g.data(), b.data(), tmp.data(), g.rows(), g.cols(), b.cols());
        Tensor& da = grad_buf(n.in[0]);
        for (int64_t i = 0; i < da.size(); ++i) da.at(i) += tmp.at(i);
      }
      if (needs(1)) {
        // db[n,k] += g^T[n,m] * a[m,k]
        Tensor& db = grad_buf(n.in[1]);
        kernels::matmul_tn_acc(g.data(), a.data(), db.data(), g.cols(), g.rows(), a.cols());
      }
      break;
    }
    case Op::kAdd: {
      for (int k = 0; k < 2; ++k)
        if (needs(k)) {
          Tensor& d = grad_buf(n.in[k]);
          for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i);
        }
      break;
    }
    case Op::kSub: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i);
      }
      if (needs(1)) {
        Tensor& d = grad_buf(n.in[1]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) -= g.at(i);
      }
      break;
    }
    case Op::kAddRowVec: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i);
      }
      if (needs(1)) {
        Tensor& d = grad_buf(n.in[1]);
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c) d.at(0, c) += g.at(r, c);
      }
      break;
    }
    case Op::kHadamard: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i) * b.at(i);
      }
      if (needs(1)) {
        Tensor& d = grad_buf(n.in[1]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i) * a.at(i);
      }
      break;
    }
    case Op::kScale: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += n.c0 * g.at(i);
      }
      break;
    }
    case Op::kScaleByScalar: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        double s = 0;
        for (int64_t i = 0; i < g.size(); ++i) s += g.at(i) * n.aux.at(i);
        d.at(static_cast<int64_t>(0)) += s;
      }
      break;
    }
    case Op::kOuter: {
      const Tensor& u = in_val(0);
      const Tensor& v = in_val(1);
      int m = g.rows(), nn = g.cols();
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int i = 0; i < m; ++i) {
          double s = 0;
          for (int j = 0; j < nn; ++j) s += g.at(i, j) * v.at(0, j);
          d.at(static_cast<int64_t>(i)) += s;
        }
      }
      if (needs(1)) {
        Tensor& d = grad_buf(n.in[1]);
        for (int j = 0; j < nn; ++j) {
          double s = 0;
          for (int i = 0; i < m; ++i) s += g.at(i, j) * u.at(static_cast<int64_t>(i));
          d.at(0, j) += s;
        }
      }
      break;
    }
    case Op::kRelu: {
      if (needs(0)) {
        const Tensor& x = in_val(0);
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i)
          if (x.at(i) > 0) d.at(i) += g.at(i);
      }
      break;
    }
    case Op::kDropout: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i) * n.aux.at(i);
      }
      break;
    }
    case Op::kConcatCols: {
      int off = 0;
      for (int k = 0; k < static_cast<int>(n.in.size()); ++k) {
        const Tensor& part = in_val(k);
        if (needs(k)) {
          Tensor& d = grad_buf(n.in[k]);
          for (int r = 0; r < part.rows(); ++r)
            for (int c = 0; c < part.cols(); ++c) d.at(r, c) += g.at(r, off + c);
        }
        off += part.cols();
      }
      break;
    }
    case Op::kConcatRows: {
      int off = 0;
      for (int k = 0; k < static_cast<int>(n.in.size()); ++k) {
        const Tensor& part = in_val(k);
        if (needs(k)) {
          Tensor& d = grad_buf(n.in[k]);
          for (int r = 0; r < part.rows(); ++r)
            for (int c = 0; c < part.cols(); ++c) d.at(r, c) += g.at(off + r, c);
        }
        off += part.rows();
      }
      break;
    }
    case Op::kSliceRows: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int r = 0; r < n.i1; ++r)
          for (int c = 0; c < g.cols(); ++c) d.at(n.i0 + r, c) += g.at(r, c);
      }
      break;
    }
    case Op::kMeanRows: {
      if (needs(0)) {
        const Tensor& x = in_val(0);
        Tensor& d = grad_buf(n.in[0]);
        double inv = 1.0 / x.rows();
        for (int r = 0; r < x.rows(); ++r)
          for (int c = 0; c < x.cols(); ++c) d.at(r, c) += inv * g.at(0, c);
      }
      break;
    }
    case Op::kSum: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        double gv = g.at(static_cast<int64_t>(0));
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += gv;
      }
      break;
    }
    case Op::kEntry: {
      if (needs(0)) grad_buf(n.in[0]).at(n.i0, n.i1) += g.at(static_cast<int64_t>(0));
      break;
    }
    case Op::kLog: {
      if (needs(0)) {
        const Tensor& x = in_val(0);
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i) d.at(i) += g.at(i) / x.at(i);
      }
      break;
    }
    case Op::kTanh: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        for (int64_t i = 0; i < d.size(); ++i)
          d.at(i) += g.at(i) * (1.0 - n.value.at(i) * n.value.at(i));
      }
      break;
    }
    case Op::kSoftmaxRows: {
      if (needs(0)) {
        Tensor& d = grad_buf(n.in[0]);
        const Tensor& rho = n.value;
        for (int r = 0; r < rho.rows(); ++r) {
          double dot = 0;
          for (int c = 0; c < rho.cols(); ++c) dot += g.at(r, c) * rho.at(r, c);
          for (int c = 0; c < rho.cols(); ++c)
            d.at(r, c) += rho.at(r, c) * (g.at(r, c) - dot);
        }
      }
      break;
    }
    case Op::kBatchNorm: {
      const Tensor& gamma = in_val(1);
      const Tensor& xhat = n.aux;
      const Tensor& invstd = n.aux2;
      int m = g.rows(), f = g.cols();
      if (needs(1)) {
        Tensor& dg = grad_buf(n.in[1]);
        for (int c = 0; c < f; ++c) {
          double s = 0;
          for (int r = 0; r < m; ++r) s += g.at(r, c) * xhat.at(r, c);
          dg.at(static_cast<int64_t>(c)) += s;
        }
      }
      if (needs(2)) {
        Tensor& db = grad_buf(n.in[2]);
        for (int c = 0; c < f; ++c) {
          double s = 0;
          for (int r = 0; r < m; ++r) s += g.at(r, c);
          db.at(static_cast<int64_t>(c)) += s;
        }
      }
      if (needs(0)) {
        Tensor& dx = grad_buf(n.in[0]);
        bool used_batch_stats = n.i0 == 1;
        for (int c = 0; c < f; ++c) {
          double gm = gamma.at(static_cast<int64_t>(c));
          double is = invstd.at(0, c);
          if (!used_batch_stats) {
            for (int r = 0; r < m; ++r) dx.at(r, c) += g.at(r, c) * gm * is;
          } else {
            double sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (int r = 0; r < m; ++r) {
              double dxh = g.at(r, c) * gm;
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat.at(r, c);
            }
            for (int r = 0; r < m; ++r) {
              double dxh = g.at(r, c) * gm;
              dx.at(r, c) +=
                  (is / m) * (m * dxh - sum_dxhat - xhat.at(r, c) * sum_dxhat_xhat);
            }
          }
        }
      }
      break;
    }
    case Op::kPyramidApply: {
      const Tensor& tt = in_val(1);
      const auto& pairs = *n.pairs;
      int m = n.value.rows(), nn = n.value.cols();
      Tensor* dx = needs(0) ? &grad_buf(n.in[0]) : nullptr;
      Tensor* dt = needs(1) ? &grad_buf(n.in[1]) : nullptr;
      std::vector<double> state(nn), adj(nn);
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < nn; ++c) {
          state[c] = n.value.at(r, c);
          adj[c] = g.at(r, c);
        }
        for (int gi = static_cast<int>(pairs.size()) - 1; gi >= 0; --gi) {
          auto [p, q] = pairs[gi];
          double th = tt.at(static_cast<int64_t>(gi));
          double c = std::cos(th), s = std::sin(th);
          // state before this gate
          unrotate_pair(&state[p], &state[q], c, s);
          if (dt) {
            // d/dtheta of [c s; -s c] applied to the pre-gate state
            double dp = -s * state[p] + c * state[q];
            double dq = -c * state[p] - s * state[q];
            dt->at(static_cast<int64_t>(gi)) += adj[p] * dp + adj[q] * dq;
          }
          unrotate_pair(&adj[p], &adj[q], c, s);
        }
        if (dx)
          for (int c = 0; c < nn; ++c) dx->at(r, c) += adj[c];
      }
      break;
    }
  }
}

}  // namespace qvrp::ad
