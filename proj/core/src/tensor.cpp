#include "msp/tensor.hpp"

#include "msp/error.hpp"

namespace msp {

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    require(d >= 0, ErrorKind::shape, "negative dimension");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt) {
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.d_->shape = std::move(shape);
  t.d_->dtype = dt;
  return t;
}

Tensor Tensor::constant(std::vector<double> values, std::vector<int64_t> shape, Dtype dt) {
  require(static_cast<int64_t>(values.size()) == shape_numel(shape), ErrorKind::shape,
          "value count does not match shape");
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  t.d_->dtype = dt;
  if (dt == Dtype::f32) {
    for (auto& v : t.d_->values) v = static_cast<double>(static_cast<float>(v));
  }
  return t;
}

Tensor Tensor::scalar(double v, Dtype dt) { return constant({v}, {}, dt); }

double Tensor::value() const {
  require(numel() == 1, ErrorKind::contract, "value() needs a scalar tensor");
  return d_->values[0];
}

std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
  out.data()->tape = this;
  nodes_.push_back(Node{out.ptr(), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::contract,
          "backward needs a scalar loss");
  require(loss.data()->tape == this, ErrorKind::contract,
          "loss was not produced on this tape");
  loss.data()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // no downstream use of this value
    it->fn();
  }
}

}  // namespace msp
