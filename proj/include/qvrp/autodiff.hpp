#pragma once

#include <deque>
#include <memory>
#include <utility>
#include <vector>

#include "qvrp/rng.hpp"
#include "qvrp/tensor.hpp"

namespace qvrp::ad {

// Additive mask value standing in for -inf: exp underflows to exactly 0
// without producing NaN.
inline constexpr double kMaskSentinel = -1e9;

// Entries at or below this are treated as masked when scanning mask rows.
inline constexpr double kMaskThreshold = -1e8;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. Single-threaded during a
// forward/backward pass; independent tapes may run on separate threads.
// Node values are stable once created (deque storage), but references
// returned by value() should not be held across further op calls.
class Tape {
 public:
  explicit Tape(bool training = false, uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  bool training() const { return training_; }
  size_t node_count() const { return nodes_.size(); }

  Var input(Tensor value, bool requires_grad);

  Var matmul(Var a, Var b);     // [m,k]x[k,n]
  Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T -> [m,n]
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_rowvec(Var a, Var b);  // [m,n] + [1,n]
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var scale_by_scalar(Tensor constant, Var s);  // s * constant
  Var outer(Var col, Var row);                  // [m,1] x [1,n] -> [m,n]
  Var relu(Var a);
  Var dropout(Var a, double rate);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int first_row, int rows);
  Var mean_rows(Var a);  // [m,n] -> [1,n]
  Var sum(Var a);        // -> scalar
  Var entry(Var a, int r, int c);
  Var log(Var a);
  Var tanh(Var a);
  // Row-wise softmax of u + mask. mask entries <= kMaskThreshold mark masked
  // positions; a fully masked row raises InfeasibleRowError.
  Var softmax_rows(Var u, Tensor mask_additive);
  // Batch normalization over rows, per feature column. In training mode uses
  // batch statistics and updates the running accumulators in place; in eval
  // mode uses the running statistics.
  Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                 double momentum, double eps);
  // Applies the RBS rotation sequence `pairs` (with angles `thetas`, one per
  // gate, in gate order) to every row of x. Differentiable in x and thetas.
  Var pyramid_apply(Var x, Var thetas,
                    std::shared_ptr<const std::vector<std::pair<int, int>>> pairs);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void backward(Var scalar_loss);
  void backward_seeded(const std::vector<std::pair<Var, Tensor>>& seeds);

 private:
  enum class Op {
    kInput,
    kMatMulNN,
    kMatMulNT,
    kAdd,
    kSub,
    kAddRowVec,
    kHadamard,
    kScale,
    kScaleByScalar,
    kOuter,
    kRelu,
    kDropout,
    kConcatCols,
    kConcatRows,
    kSliceRows,
    kMeanRows,
    kSum,
    kEntry,
    kLog,
    kTanh,
    kSoftmaxRows,
    kBatchNorm,
    kPyramidApply,
  };

  struct Node {
    Op op;
    std::vector<int> in;
    Tensor value;
    Tensor grad;  // empty until touched during backward
    bool requires_grad = false;
    double c0 = 0.0;
    int i0 = 0, i1 = 0;
    Tensor aux;   // op-dependent: dropout mask, softmax mask, BN xhat, ...
    Tensor aux2;  // BN invstd row
    std::shared_ptr<const std::vector<std::pair<int, int>>> pairs;
  };

  Var push(Node node);
  Tensor& grad_buf(int id);
  void backprop_node(int id);

  std::deque<Node> nodes_;
  bool training_;
  StreamRng rng_;
  bool backward_done_ = false;
};

}  // namespace qvrp::ad
