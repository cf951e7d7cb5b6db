#include <algorithm>
#include <cmath>

#include "msp/error.hpp"
#include "msp/tensor.hpp"

namespace msp {
namespace ops {

namespace {

bool want_record(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->tracked()) return true;
  }
  return false;
}

Dtype join_dtype(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins) {
    if (t->dtype() == Dtype::f32) return Dtype::f32;
  }
  return Dtype::f64;
}

// f32 emulation: results are stored at single precision, math stays double.
void storage_round(Tensor& t) {
  if (t.dtype() != Dtype::f32) return;
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

Tensor make_out(std::vector<int64_t> shape, Dtype dt) {
  return Tensor::zeros(std::move(shape), dt);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(op) + ": operand shapes differ");
}

enum class BinMode { same, scalar, row };

BinMode bin_mode(const Tensor& a, const Tensor& b, const char* op, bool allow_row) {
  if (b.numel() == 1 && b.rank() == 0) return BinMode::scalar;
  if (a.shape() == b.shape()) return BinMode::same;
  if (allow_row && b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.shape().back())
    return BinMode::row;
  fail(ErrorKind::shape, std::string(op) + ": incompatible shapes");
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const BinMode mode = bin_mode(a, b, "add", true);
  Tensor out = make_out(a.shape(), join_dtype({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  const int64_t d = mode == BinMode::row ? b.numel() : 0;
  for (int64_t i = 0; i < n; ++i) {
    const double bi = mode == BinMode::same ? bv[i] : (mode == BinMode::scalar ? bv[0] : bv[i % d]);
    ov[i] = av[i] + bi;
  }
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, mode, n, d]() mutable {
      const auto& og = out.data()->grad;
      if (a.tracked()) {
        auto& ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (int64_t i = 0; i < n; ++i) {
          const int64_t j = mode == BinMode::same ? i : (mode == BinMode::scalar ? 0 : i % d);
          bg[j] += og[i];
        }
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  const BinMode mode = bin_mode(a, b, "sub", false);
  Tensor out = make_out(a.shape(), join_dtype({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - (mode == BinMode::same ? bv[i] : bv[0]);
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, mode, n]() mutable {
      const auto& og = out.data()->grad;
      if (a.tracked()) {
        auto& ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (int64_t i = 0; i < n; ++i) bg[mode == BinMode::same ? i : 0] -= og[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  const BinMode mode = bin_mode(a, b, "mul", true);
  Tensor out = make_out(a.shape(), join_dtype({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  const int64_t d = mode == BinMode::row ? b.numel() : 0;
  auto bval = [&](int64_t i) {
    return mode == BinMode::same ? bv[i] : (mode == BinMode::scalar ? bv[0] : bv[i % d]);
  };
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bval(i);
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, mode, n, d]() mutable {
      const auto& og = out.data()->grad;
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.tracked()) {
        auto& ag = a.grad();
        for (int64_t i = 0; i < n; ++i) {
          const double bi =
              mode == BinMode::same ? bv[i] : (mode == BinMode::scalar ? bv[0] : bv[i % d]);
          ag[i] += og[i] * bi;
        }
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (int64_t i = 0; i < n; ++i) {
          const int64_t j = mode == BinMode::same ? i : (mode == BinMode::scalar ? 0 : i % d);
          bg[j] += og[i] * av[i];
        }
      }
    });
  }
  return out;
}

Tensor div(Tape* tape, const Tensor& a, const Tensor& b) {
  const BinMode mode = bin_mode(a, b, "div", false);
  Tensor out = make_out(a.shape(), join_dtype({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] / (mode == BinMode::same ? bv[i] : bv[0]);
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, mode, n]() mutable {
      const auto& og = out.data()->grad;
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.tracked()) {
        auto& ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += og[i] / (mode == BinMode::same ? bv[i] : bv[0]);
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (int64_t i = 0; i < n; ++i) {
          const int64_t j = mode == BinMode::same ? i : 0;
          bg[j] -= og[i] * av[i] / (bv[j] * bv[j]);
        }
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), a.dtype());
  const auto& av = a.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out, c, n]() mutable {
      const auto& og = out.data()->grad;
      auto& ag = a.grad();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(Tape* tape, const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), a.dtype());
  const auto& av = a.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + c;
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out, n]() mutable {
      const auto& og = out.data()->grad;
      auto& ag = a.grad();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i];
    });
  }
  return out;
}

Tensor unary_map(Tape* tape, const Tensor& a, double (*f)(double),
                 double (*df)(double, double)) {
  Tensor out = make_out(a.shape(), a.dtype());
  const auto& av = a.values();
  auto& ov = out.values();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = f(av[i]);
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out, df, n]() mutable {
      const auto& og = out.data()->grad;
      const auto& av = a.values();
      const auto& ov = out.values();
      auto& ag = a.grad();
      for (int64_t i = 0; i < n; ++i) ag[i] += og[i] * df(av[i], ov[i]);
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor log(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor exp(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor sqrt(Tape* tape, const Tensor& a) {
  return unary_map(
      tape, a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::shape, "matmul needs rank-2 operands");
  require(a.dim(1) == b.dim(0), ErrorKind::shape, "matmul inner dimensions differ");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_out({m, n}, join_dtype({&a, &b}));
  {
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    double* op = out.values().data();
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const double aik = ap[i * k + kk];
        if (aik == 0.0) continue;
        const double* brow = bp + kk * n;
        double* orow = op + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, m, k, n]() mutable {
      const double* og = out.data()->grad.data();
      if (a.tracked()) {
        double* ag = a.grad().data();
        const double* bp = b.values().data();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const double* brow = bp + kk * n;
            const double* grow = og + i * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ag[i * k + kk] += acc;
          }
        }
      }
      if (b.tracked()) {
        double* bg = b.grad().data();
        const double* ap = a.values().data();
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = og + i * n;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = ap[i * k + kk];
            if (aik == 0.0) continue;
            double* brow = bg + kk * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(Tape* tape, const Tensor& a) {
  require(a.rank() >= 1, ErrorKind::shape, "softmax needs rank >= 1");
  const int64_t d = a.shape().back();
  require(d >= 1, ErrorKind::shape, "softmax over empty dimension");
  const int64_t rows = a.numel() / d;
  Tensor out = make_out(a.shape(), a.dtype());
  const auto& av = a.values();
  auto& ov = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * d;
    double* y = ov.data() + r * d;
    double mx = x[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int64_t i = 0; i < d; ++i) y[i] /= sum;
  }
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out, rows, d]() mutable {
      const auto& og = out.data()->grad;
      const auto& ov = out.values();
      auto& ag = a.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* g = og.data() + r * d;
        const double* y = ov.data() + r * d;
        double dot = 0.0;
        for (int64_t i = 0; i < d; ++i) dot += g[i] * y[i];
        for (int64_t i = 0; i < d; ++i) ag[r * d + i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require(x.rank() >= 1, ErrorKind::shape, "layer_norm needs rank >= 1");
  const int64_t d = x.shape().back();
  require(gain.rank() == 1 && gain.dim(0) == d, ErrorKind::shape, "layer_norm gain shape");
  require(bias.rank() == 1 && bias.dim(0) == d, ErrorKind::shape, "layer_norm bias shape");
  require(eps >= 0.0, ErrorKind::contract, "layer_norm eps must be >= 0");
  const int64_t rows = x.numel() / d;

  Tensor out = make_out(x.shape(), join_dtype({&x, &gain, &bias}));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_s = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);  // biased
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv_s)[static_cast<size_t>(r)] = s;
    for (int64_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * s;
      (*xhat)[static_cast<size_t>(r * d + i)] = h;
      ov[r * d + i] = gv[i] * h + bv[i];
    }
  }
  storage_round(out);
  if (want_record(tape, {&x, &gain, &bias})) {
    tape->record(out, [x, gain, bias, out, xhat, inv_s, rows, d]() mutable {
      const auto& og = out.data()->grad;
      const auto& gv = gain.values();
      if (gain.tracked()) {
        auto& gg = gain.grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < d; ++i)
            gg[i] += og[r * d + i] * (*xhat)[static_cast<size_t>(r * d + i)];
      }
      if (bias.tracked()) {
        auto& bg = bias.grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < d; ++i) bg[i] += og[r * d + i];
      }
      if (x.tracked()) {
        auto& xg = x.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double* g = og.data() + r * d;
          const double* h = xhat->data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            const double gg = g[i] * gv[i];
            m1 += gg;
            m2 += gg * h[i];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double s = (*inv_s)[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i) {
            xg[r * d + i] += s * (g[i] * gv[i] - m1 - h[i] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& a) {
  Tensor out = make_out({}, a.dtype());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  out.values()[0] = acc;
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out]() mutable {
      const double g = out.data()->grad[0];
      auto& ag = a.grad();
      for (auto& v : ag) v += g;
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& a) {
  require(a.numel() >= 1, ErrorKind::shape, "mean of empty tensor");
  Tensor out = make_out({}, a.dtype());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  out.values()[0] = acc * inv;
  storage_round(out);
  if (want_record(tape, {&a})) {
    tape->record(out, [a, out, inv]() mutable {
      const double g = out.data()->grad[0] * inv;
      auto& ag = a.grad();
      for (auto& v : ag) v += g;
    });
  }
  return out;
}

Tensor gather_rows(Tape* tape, const Tensor& x, const std::vector<int>& rows) {
  require(x.rank() == 2, ErrorKind::shape, "gather_rows needs rank-2 input");
  const int64_t n = x.dim(0), c = x.dim(1);
  for (int r : rows)
    require(r >= 0 && r < n, ErrorKind::shape, "gather_rows index out of range");
  Tensor out = make_out({static_cast<int64_t>(rows.size()), c}, x.dtype());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xv.data() + static_cast<int64_t>(rows[i]) * c, c,
                ov.data() + static_cast<int64_t>(i) * c);
  }
  storage_round(out);
  if (want_record(tape, {&x})) {
    auto idx = std::make_shared<std::vector<int>>(rows);
    tape->record(out, [x, out, idx, c]() mutable {
      const auto& og = out.data()->grad;
      auto& xg = x.grad();
      for (size_t i = 0; i < idx->size(); ++i) {
        const double* g = og.data() + static_cast<int64_t>(i) * c;
        double* dst = xg.data() + static_cast<int64_t>((*idx)[i]) * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::shape, "concat_rows needs rank-2 inputs");
  require(a.dim(1) == b.dim(1), ErrorKind::shape, "concat_rows column mismatch");
  const int64_t na = a.dim(0), nb = b.dim(0), c = a.dim(1);
  Tensor out = make_out({na + nb, c}, join_dtype({&a, &b}));
  auto& ov = out.values();
  std::copy(a.values().begin(), a.values().end(), ov.begin());
  std::copy(b.values().begin(), b.values().end(), ov.begin() + na * c);
  storage_round(out);
  if (want_record(tape, {&a, &b})) {
    tape->record(out, [a, b, out, na, nb, c]() mutable {
      const auto& og = out.data()->grad;
      if (a.tracked()) {
        auto& ag = a.grad();
        for (int64_t i = 0; i < na * c; ++i) ag[i] += og[i];
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (int64_t i = 0; i < nb * c; ++i) bg[i] += og[na * c + i];
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& x, int64_t c0, int64_t c1) {
  require(x.rank() == 2, ErrorKind::shape, "slice_cols needs rank-2 input");
  require(0 <= c0 && c0 < c1 && c1 <= x.dim(1), ErrorKind::shape, "slice_cols range invalid");
  const int64_t n = x.dim(0), c = x.dim(1), w = c1 - c0;
  Tensor out = make_out({n, w}, x.dtype());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(xv.data() + i * c + c0, w, ov.data() + i * w);
  storage_round(out);
  if (want_record(tape, {&x})) {
    tape->record(out, [x, out, n, c, c0, w]() mutable {
      const auto& og = out.data()->grad;
      auto& xg = x.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) xg[i * c + c0 + j] += og[i * w + j];
    });
  }
  return out;
}

Tensor qk_scores(Tape* tape, const Tensor& q, const Tensor& kmat, int64_t k, int64_t heads) {
  require(q.rank() == 2 && kmat.rank() == 2, ErrorKind::shape, "qk_scores needs rank-2 inputs");
  const int64_t n = q.dim(0), c = q.dim(1);
  require(kmat.dim(0) == n * k && kmat.dim(1) == c, ErrorKind::shape,
          "qk_scores key matrix must be [n*k, c]");
  require(heads >= 1 && c % heads == 0, ErrorKind::shape, "qk_scores channels not divisible by heads");
  const int64_t ch = c / heads;
  Tensor out = make_out({n, heads, k}, join_dtype({&q, &kmat}));
  const auto& qv = q.values();
  const auto& kv = kmat.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < n; ++i) {
    const double* qrow = qv.data() + i * c;
    for (int64_t j = 0; j < k; ++j) {
      const double* krow = kv.data() + (i * k + j) * c;
      for (int64_t h = 0; h < heads; ++h) {
        double acc = 0.0;
        const int64_t base = h * ch;
        for (int64_t cc = 0; cc < ch; ++cc) acc += qrow[base + cc] * krow[base + cc];
        ov[(i * heads + h) * k + j] = acc;
      }
    }
  }
  storage_round(out);
  if (want_record(tape, {&q, &kmat})) {
    tape->record(out, [q, kmat, out, n, c, k, heads, ch]() mutable {
      const auto& og = out.data()->grad;
      const auto& qv = q.values();
      const auto& kv = kmat.values();
      if (q.tracked()) {
        auto& qg = q.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) {
            const double* krow = kv.data() + (i * k + j) * c;
            for (int64_t h = 0; h < heads; ++h) {
              const double g = og[(i * heads + h) * k + j];
              if (g == 0.0) continue;
              const int64_t base = h * ch;
              double* qrow = qg.data() + i * c;
              for (int64_t cc = 0; cc < ch; ++cc) qrow[base + cc] += g * krow[base + cc];
            }
          }
      }
      if (kmat.tracked()) {
        auto& kg = kmat.grad();
        for (int64_t i = 0; i < n; ++i) {
          const double* qrow = qv.data() + i * c;
          for (int64_t j = 0; j < k; ++j) {
            double* krow = kg.data() + (i * k + j) * c;
            for (int64_t h = 0; h < heads; ++h) {
              const double g = og[(i * heads + h) * k + j];
              if (g == 0.0) continue;
              const int64_t base = h * ch;
              for (int64_t cc = 0; cc < ch; ++cc) krow[base + cc] += g * qrow[base + cc];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor attn_mix(Tape* tape, const Tensor& w, const Tensor& vmat) {
  require(w.rank() == 3 && vmat.rank() == 2, ErrorKind::shape, "attn_mix shapes");
  const int64_t n = w.dim(0), heads = w.dim(1), k = w.dim(2), c = vmat.dim(1);
  require(vmat.dim(0) == n * k, ErrorKind::shape, "attn_mix value matrix must be [n*k, c]");
  require(c % heads == 0, ErrorKind::shape, "attn_mix channels not divisible by heads");
  const int64_t ch = c / heads;
  Tensor out = make_out({n, c}, join_dtype({&w, &vmat}));
  const auto& wv = w.values();
  const auto& vv = vmat.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < n; ++i) {
    double* orow = ov.data() + i * c;
    for (int64_t j = 0; j < k; ++j) {
      const double* vrow = vv.data() + (i * k + j) * c;
      for (int64_t h = 0; h < heads; ++h) {
        const double wij = wv[(i * heads + h) * k + j];
        if (wij == 0.0) continue;
        const int64_t base = h * ch;
        for (int64_t cc = 0; cc < ch; ++cc) orow[base + cc] += wij * vrow[base + cc];
      }
    }
  }
  storage_round(out);
  if (want_record(tape, {&w, &vmat})) {
    tape->record(out, [w, vmat, out, n, heads, k, c, ch]() mutable {
      const auto& og = out.data()->grad;
      const auto& wv = w.values();
      const auto& vv = vmat.values();
      if (w.tracked()) {
        auto& wg = w.grad();
        for (int64_t i = 0; i < n; ++i) {
          const double* grow = og.data() + i * c;
          for (int64_t j = 0; j < k; ++j) {
            const double* vrow = vv.data() + (i * k + j) * c;
            for (int64_t h = 0; h < heads; ++h) {
              const int64_t base = h * ch;
              double acc = 0.0;
              for (int64_t cc = 0; cc < ch; ++cc) acc += grow[base + cc] * vrow[base + cc];
              wg[(i * heads + h) * k + j] += acc;
            }
          }
        }
      }
      if (vmat.tracked()) {
        auto& vg = vmat.grad();
        for (int64_t i = 0; i < n; ++i) {
          const double* grow = og.data() + i * c;
          for (int64_t j = 0; j < k; ++j) {
            double* vrow = vg.data() + (i * k + j) * c;
            for (int64_t h = 0; h < heads; ++h) {
              const double wij = wv[(i * heads + h) * k + j];
              if (wij == 0.0) continue;
              const int64_t base = h * ch;
              for (int64_t cc = 0; cc < ch; ++cc) vrow[base + cc] += wij * grow[base + cc];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor bce_with_logits_mean(Tape* tape, const Tensor& logits, const Tensor& targets) {
  check_same_shape(logits, targets, "bce_with_logits_mean");
  require(logits.numel() >= 1, ErrorKind::shape, "bce over empty tensor");
  const int64_t n = logits.numel();
  const auto& xv = logits.values();
  const auto& tv = targets.values();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = xv[i];
    // softplus(x) - t*x, with softplus via the overflow-safe split
    acc += std::max(x, 0.0) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = make_out({}, join_dtype({&logits, &targets}));
  out.values()[0] = acc / static_cast<double>(n);
  storage_round(out);
  if (want_record(tape, {&logits, &targets})) {
    tape->record(out, [logits, targets, out, n]() mutable {
      const double g = out.data()->grad[0] / static_cast<double>(n);
      const auto& xv = logits.values();
      const auto& tv = targets.values();
      auto& xg = logits.grad();
      for (int64_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        xg[i] += g * (s - tv[i]);
      }
    });
  }
  return out;
}

Tensor mse_mean(Tape* tape, const Tensor& pred, const Tensor& targets) {
  check_same_shape(pred, targets, "mse_mean");
  require(pred.numel() >= 1, ErrorKind::shape, "mse over empty tensor");
  const int64_t n = pred.numel();
  const auto& pv = pred.values();
  const auto& tv = targets.values();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  Tensor out = make_out({}, join_dtype({&pred, &targets}));
  out.values()[0] = acc / static_cast<double>(n);
  storage_round(out);
  if (want_record(tape, {&pred, &targets})) {
    tape->record(out, [pred, targets, out, n]() mutable {
      const double g = 2.0 * out.data()->grad[0] / static_cast<double>(n);
      const auto& pv = pred.values();
      const auto& tv = targets.values();
      auto& pg = pred.grad();
      for (int64_t i = 0; i < n; ++i) pg[i] += g * (pv[i] - tv[i]);
    });
  }
  return out;
}

Tensor cosine_row_loss(Tape* tape, const Tensor& pred, const Tensor& unit_targets,
                       const std::vector<uint8_t>& include) {
  check_same_shape(pred, unit_targets, "cosine_row_loss");
  require(pred.rank() == 2, ErrorKind::shape, "cosine_row_loss needs rank-2 input");
  const int64_t n = pred.dim(0), d = pred.dim(1);
  require(static_cast<int64_t>(include.size()) == n, ErrorKind::shape,
          "cosine_row_loss include mask length");
  int64_t m = 0;
  for (uint8_t f : include) m += f ? 1 : 0;
  require(m >= 1, ErrorKind::degenerate_target, "cosine loss with no usable rows");

  const auto& pv = pred.values();
  const auto& tv = unit_targets.values();
  double acc = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    if (!include[static_cast<size_t>(r)]) continue;
    const double* p = pv.data() + r * d;
    const double* t = tv.data() + r * d;
    double dot = 0.0, nrm2 = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      dot += p[i] * t[i];
      nrm2 += p[i] * p[i];
    }
    require(nrm2 > 0.0, ErrorKind::numeric, "cosine loss on zero-norm prediction row");
    acc += 1.0 - dot / std::sqrt(nrm2);
  }
  Tensor out = make_out({}, pred.dtype());
  out.values()[0] = acc / static_cast<double>(m);
  storage_round(out);
  if (want_record(tape, {&pred})) {
    auto inc = std::make_shared<std::vector<uint8_t>>(include);
    tape->record(out, [pred, unit_targets, out, inc, n, d, m]() mutable {
      const double g = out.data()->grad[0] / static_cast<double>(m);
      const auto& pv = pred.values();
      const auto& tv = unit_targets.values();
      auto& pg = pred.grad();
      for (int64_t r = 0; r < n; ++r) {
        if (!(*inc)[static_cast<size_t>(r)]) continue;
        const double* p = pv.data() + r * d;
        const double* t = tv.data() + r * d;
        double dot = 0.0, nrm2 = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          dot += p[i] * t[i];
          nrm2 += p[i] * p[i];
        }
        const double nrm = std::sqrt(nrm2);
        const double inv = 1.0 / nrm, inv3 = 1.0 / (nrm2 * nrm);
        for (int64_t i = 0; i < d; ++i) {
          pg[r * d + i] += g * (-t[i] * inv + dot * p[i] * inv3);
        }
      }
    });
  }
  return out;
}

Tensor chamfer_row_loss(Tape* tape, const Tensor& pred,
                        const std::vector<std::vector<Vec3>>& targets,
                        const std::vector<uint8_t>& include) {
  require(pred.rank() == 2 && pred.dim(1) % 3 == 0, ErrorKind::shape,
          "chamfer_row_loss pred must be [rows, 3*K]");
  const int64_t rows = pred.dim(0);
  const int64_t kpts = pred.dim(1) / 3;
  require(kpts >= 1, ErrorKind::shape, "chamfer_row_loss needs at least one predicted point");
  require(static_cast<int64_t>(targets.size()) == rows, ErrorKind::shape,
          "chamfer_row_loss target count");
  require(static_cast<int64_t>(include.size()) == rows, ErrorKind::shape,
          "chamfer_row_loss include mask length");
  int64_t m = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (!include[static_cast<size_t>(r)]) continue;
    require(!targets[static_cast<size_t>(r)].empty(), ErrorKind::degenerate_target,
            "chamfer loss row included with empty target set");
    ++m;
  }
  require(m >= 1, ErrorKind::degenerate_target, "chamfer loss with no usable rows");

  const auto& pv = pred.values();
  // Argmins saved for the backward pass: per row, nearest target per pred
  // point and nearest pred point per target.
  auto near_t = std::make_shared<std::vector<std::vector<int>>>(static_cast<size_t>(rows));
  auto near_p = std::make_shared<std::vector<std::vector<int>>>(static_cast<size_t>(rows));
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (!include[static_cast<size_t>(r)]) continue;
    const auto& tgt = targets[static_cast<size_t>(r)];
    const double* p = pv.data() + r * kpts * 3;
    auto& nt = (*near_t)[static_cast<size_t>(r)];
    auto& np = (*near_p)[static_cast<size_t>(r)];
    nt.assign(static_cast<size_t>(kpts), 0);
    np.assign(tgt.size(), 0);
    double term1 = 0.0;
    for (int64_t a = 0; a < kpts; ++a) {
      const Vec3 pa{p[a * 3], p[a * 3 + 1], p[a * 3 + 2]};
      double best = (pa - tgt[0]).norm2();
      int bi = 0;
      for (size_t b = 1; b < tgt.size(); ++b) {
        const double d2 = (pa - tgt[b]).norm2();
        if (d2 < best) {
          best = d2;
          bi = static_cast<int>(b);
        }
      }
      nt[static_cast<size_t>(a)] = bi;
      term1 += best;
    }
    double term2 = 0.0;
    for (size_t b = 0; b < tgt.size(); ++b) {
      double best = -1.0;
      int bi = 0;
      for (int64_t a = 0; a < kpts; ++a) {
        const Vec3 pa{p[a * 3], p[a * 3 + 1], p[a * 3 + 2]};
        const double d2 = (pa - tgt[b]).norm2();
        if (best < 0.0 || d2 < best) {
          best = d2;
          bi = static_cast<int>(a);
        }
      }
      np[b] = bi;
      term2 += best;
    }
    acc += term1 / static_cast<double>(kpts) + term2 / static_cast<double>(tgt.size());
  }

  Tensor out = make_out({}, pred.dtype());
  out.values()[0] = acc / static_cast<double>(m);
  storage_round(out);
  if (want_record(tape, {&pred})) {
    auto inc = std::make_shared<std::vector<uint8_t>>(include);
    auto tgts = std::make_shared<std::vector<std::vector<Vec3>>>(targets);
    tape->record(out, [pred, out, inc, tgts, near_t, near_p, rows, kpts, m]() mutable {
      const double g = out.data()->grad[0] / static_cast<double>(m);
      const auto& pv = pred.values();
      auto& pg = pred.grad();
      for (int64_t r = 0; r < rows; ++r) {
        if (!(*inc)[static_cast<size_t>(r)]) continue;
        const auto& tgt = (*tgts)[static_cast<size_t>(r)];
        const double* p = pv.data() + r * kpts * 3;
        double* gp = pg.data() + r * kpts * 3;
        const double w1 = 2.0 * g / static_cast<double>(kpts);
        for (int64_t a = 0; a < kpts; ++a) {
          const Vec3 pa{p[a * 3], p[a * 3 + 1], p[a * 3 + 2]};
          const Vec3 diff = pa - tgt[static_cast<size_t>((*near_t)[static_cast<size_t>(r)][static_cast<size_t>(a)])];
          gp[a * 3] += w1 * diff.x;
          gp[a * 3 + 1] += w1 * diff.y;
          gp[a * 3 + 2] += w1 * diff.z;
        }
        const double w2 = 2.0 * g / static_cast<double>(tgt.size());
        for (size_t b = 0; b < tgt.size(); ++b) {
          const int a = (*near_p)[static_cast<size_t>(r)][b];
          const Vec3 pa{p[a * 3], p[a * 3 + 1], p[a * 3 + 2]};
          const Vec3 diff = pa - tgt[b];
          gp[a * 3] += w2 * diff.x;
          gp[a * 3 + 1] += w2 * diff.y;
          gp[a * 3 + 2] += w2 * diff.z;
        }
      }
    });
  }
  return out;
}

Tensor softmax_xent_mean(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, ErrorKind::shape, "softmax_xent_mean needs rank-2 logits");
  const int64_t n = logits.dim(0), c = logits.dim(1);
  require(static_cast<int64_t>(labels.size()) == n, ErrorKind::shape, "label count mismatch");
  require(n >= 1, ErrorKind::shape, "cross entropy over empty batch");
  for (int l : labels)
    require(l >= 0 && l < c, ErrorKind::shape, "label out of range");

  const auto& xv = logits.values();
  double acc = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const double* x = xv.data() + r * c;
    double mx = x[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < c; ++i) sum += std::exp(x[i] - mx);
    acc += std::log(sum) + mx - x[labels[static_cast<size_t>(r)]];
  }
  Tensor out = make_out({}, logits.dtype());
  out.values()[0] = acc / static_cast<double>(n);
  storage_round(out);
  if (want_record(tape, {&logits})) {
    auto labs = std::make_shared<std::vector<int>>(labels);
    tape->record(out, [logits, out, labs, n, c]() mutable {
      const double g = out.data()->grad[0] / static_cast<double>(n);
      const auto& xv = logits.values();
      auto& xg = logits.grad();
      for (int64_t r = 0; r < n; ++r) {
        const double* x = xv.data() + r * c;
        double mx = x[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < c; ++i) sum += std::exp(x[i] - mx);
        for (int64_t i = 0; i < c; ++i) {
          const double y = std::exp(x[i] - mx) / sum;
          const double t = (i == (*labs)[static_cast<size_t>(r)]) ? 1.0 : 0.0;
          xg[r * c + i] += g * (y - t);
        }
      }
    });
  }
  return out;
}

}  // namespace ops

double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(!a.empty() && !b.empty(), ErrorKind::contract,
          "chamfer_distance needs two non-empty sets");
  double term1 = 0.0;
  for (const auto& p : a) {
    double best = (p - b[0]).norm2();
    for (size_t j = 1; j < b.size(); ++j) best = std::min(best, (p - b[j]).norm2());
    term1 += best;
  }
  double term2 = 0.0;
  for (const auto& q : b) {
    double best = (q - a[0]).norm2();
    for (size_t j = 1; j < a.size(); ++j) best = std::min(best, (q - a[j]).norm2());
    term2 += best;
  }
  return term1 / static_cast<double>(a.size()) + term2 / static_cast<double>(b.size());
}

}  // namespace msp
