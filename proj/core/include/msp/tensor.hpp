#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "msp/vec3.hpp"

namespace msp {

// f64 is the native representation. f32 emulates single-precision storage:
// every op result is rounded through float while arithmetic (and all
// gradient accumulation) stays in double. Checkpoints store f32 tensors as
// 4-byte floats.
enum class Dtype { f64, f32 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::f64 ? "f64" : "f32"; }

class Tape;

struct TensorData {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty means "all zero, never touched"
  Dtype dtype = Dtype::f64;
  bool requires_grad = false;  // set on leaf parameters only
  Tape* tape = nullptr;        // tape that produced this value, if any
};

// Value-semantics handle; copies share storage. An op participates in
// autodiff when it runs under a tape and at least one input is tracked
// (a parameter or an earlier tape result).
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, Dtype dt = Dtype::f64);
  static Tensor constant(std::vector<double> values, std::vector<int64_t> shape,
                         Dtype dt = Dtype::f64);
  static Tensor scalar(double v, Dtype dt = Dtype::f64);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int64_t>& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  int64_t dim(size_t i) const { return d_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
  Dtype dtype() const { return d_->dtype; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }
  bool tracked() const { return d_->requires_grad || d_->tape != nullptr; }

  // Constness is shallow, as with any pointer handle.
  std::vector<double>& values() const { return d_->values; }
  double value() const;  // scalar tensors only

  // Allocates zeros on first access.
  std::vector<double>& grad() const;
  bool grad_allocated() const { return !d_->grad.empty(); }
  void zero_grad() const { d_->grad.clear(); }

  TensorData* data() const { return d_.get(); }
  const std::shared_ptr<TensorData>& ptr() const { return d_; }

private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Ops append closures during the forward pass;
// backward() seeds the scalar loss with 1 and replays them in reverse.
// Nodes whose output gradient was never touched are skipped.
class Tape {
public:
  void record(const Tensor& out, std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

namespace ops {

// Elementwise binary ops accept equal shapes, a scalar b, and for add/mul a
// rank-1 b of length matching a's last dimension (bias rows, gains).
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor div(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor add_scalar(Tape* tape, const Tensor& a, double c);

Tensor relu(Tape* tape, const Tensor& a);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor tanh(Tape* tape, const Tensor& a);
Tensor log(Tape* tape, const Tensor& a);
Tensor exp(Tape* tape, const Tensor& a);
Tensor sqrt(Tape* tape, const Tensor& a);

// Custom elementwise op: y = f(x), dy/dx = df(x, y). Exists so tests can
// inject deliberately wrong derivatives as a negative control.
Tensor unary_map(Tape* tape, const Tensor& a, double (*f)(double),
                 double (*df)(double x, double y));

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);  // [m,k]x[k,n]

Tensor softmax_lastdim(Tape* tape, const Tensor& a);

// Normalizes over the last dimension with biased variance.
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

Tensor sum_all(Tape* tape, const Tensor& a);
Tensor mean_all(Tape* tape, const Tensor& a);

// out[r, :] = x[rows[r], :]; backward scatter-adds.
Tensor gather_rows(Tape* tape, const Tensor& x, const std::vector<int>& rows);
Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b);
Tensor slice_cols(Tape* tape, const Tensor& x, int64_t c0, int64_t c1);

// Attention primitives. q is [N,C], kmat/vmat are [N*k,C] (k keys per
// query), heads splits C into contiguous blocks.
//   qk_scores: out[n,h,j] = sum over head-h channels of q[n,c]*kmat[n*k+j,c]
//   attn_mix:  out[n,c]   = sum_j w[n,h(c),j]*vmat[n*k+j,c]
Tensor qk_scores(Tape* tape, const Tensor& q, const Tensor& kmat, int64_t k, int64_t heads);
Tensor attn_mix(Tape* tape, const Tensor& w, const Tensor& vmat);

// Fused losses; targets and masks are constants.
Tensor bce_with_logits_mean(Tape* tape, const Tensor& logits, const Tensor& targets);
Tensor mse_mean(Tape* tape, const Tensor& pred, const Tensor& targets);
// Mean over rows with include[i] != 0 of 1 - cos(pred_row, target_row);
// unit_targets rows must already be unit length.
Tensor cosine_row_loss(Tape* tape, const Tensor& pred, const Tensor& unit_targets,
                       const std::vector<uint8_t>& include);
// pred rows are K xyz triples; symmetric mean-squared chamfer against each
// row's target set, averaged over included rows.
Tensor chamfer_row_loss(Tape* tape, const Tensor& pred,
                        const std::vector<std::vector<Vec3>>& targets,
                        const std::vector<uint8_t>& include);
Tensor softmax_xent_mean(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

}  // namespace ops

// Plain symmetric chamfer between two point sets (mean of squared nearest
// distances, both directions). The loss above must agree with this.
double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

}  // namespace msp
