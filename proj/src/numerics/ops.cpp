#include "rmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "rmt/errors.hpp"
#include "rmt/kernels.hpp"

namespace rmt {
namespace {

const kernels::KernelTable& K() { return kernels::active(); }

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(Tensor* buf, const Tensor& g) {
  if (buf) K().axpy(1.0, g.ptr(), buf->ptr(), g.size());
}

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    s += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= s;
}

// log softmax(in)[j] for a single row
double log_softmax_at(const double* in, std::size_t n, std::size_t j) {
  double mx = in[0];
  for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) s += std::exp(in[c] - mx);
  return in[j] - mx - std::log(s);
}

void validate_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw DimensionError("expected " + std::to_string(batch) + " labels, got " + std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void validate_distribution(const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row(r)) {
      if (!(v >= 0.0)) throw ValidationError("reference probabilities must be non-negative (row " + std::to_string(r) + ")");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ValidationError("reference row " + std::to_string(r) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
  }
  Tensor C({m, n});
  K().gemm_nn(A.ptr(), B.ptr(), C.ptr(), m, k, n);
  return tape.record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    const Tensor& dC = t.output_grad(self);
    if (Tensor* dA = t.grad_buffer(a)) {
      Tensor tmp({m, k});
      K().gemm_nt(dC.ptr(), t.value(b).ptr(), tmp.ptr(), m, n, k);
      accumulate(dA, tmp);
    }
    if (Tensor* dB = t.grad_buffer(b)) {
      Tensor tmp({k, n});
      K().gemm_tn(t.value(a).ptr(), dC.ptr(), tmp.ptr(), k, m, n);
      accumulate(dB, tmp);
    }
  });
}

Var matmul_nt(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_string(A.shape()) + " * " +
                         shape_string(B.shape()) + "^T");
  }
  Tensor C({m, n});
  K().gemm_nt(A.ptr(), B.ptr(), C.ptr(), m, k, n);
  return tape.record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    const Tensor& dC = t.output_grad(self);
    if (Tensor* dA = t.grad_buffer(a)) {
      Tensor tmp({m, k});
      K().gemm_nn(dC.ptr(), t.value(b).ptr(), tmp.ptr(), m, n, k);
      accumulate(dA, tmp);
    }
    if (Tensor* dB = t.grad_buffer(b)) {
      Tensor tmp({n, k});
      K().gemm_tn(dC.ptr(), t.value(a).ptr(), tmp.ptr(), n, m, k);
      accumulate(dB, tmp);
    }
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  require_same_shape(A, B, "add");
  Tensor C = A;
  K().axpy(1.0, B.ptr(), C.ptr(), C.size());
  return tape.record(std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    accumulate(t.grad_buffer(a), g);
    accumulate(t.grad_buffer(b), g);
  });
}

Var add_bias(Tape& tape, Var x, Var bias) {
  const Tensor& X = tape.value(x);
  const Tensor& Bv = tape.value(bias);
  require_matrix(X, "add_bias");
  const std::size_t m = X.rows(), n = X.cols();
  if (Bv.size() != n) {
    throw DimensionError("bias of " + std::to_string(Bv.size()) + " elements for rows of width " + std::to_string(n));
  }
  Tensor Y = X;
  for (std::size_t i = 0; i < m; ++i) K().axpy(1.0, Bv.ptr(), Y.ptr() + i * n, n);
  return tape.record(std::move(Y), {x, bias}, [x, bias, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    accumulate(t.grad_buffer(x), g);
    if (Tensor* db = t.grad_buffer(bias)) {
      for (std::size_t i = 0; i < m; ++i) K().axpy(1.0, g.ptr() + i * n, db->ptr(), n);
    }
  });
}

Var hadamard(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  require_same_shape(A, B, "hadamard");
  Tensor C(A.shape());
  K().hadamard(A.ptr(), B.ptr(), C.ptr(), C.size());
  return tape.record(std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (Tensor* da = t.grad_buffer(a)) {
      Tensor tmp(g.shape());
      K().hadamard(g.ptr(), t.value(b).ptr(), tmp.ptr(), g.size());
      accumulate(da, tmp);
    }
    if (Tensor* db = t.grad_buffer(b)) {
      Tensor tmp(g.shape());
      K().hadamard(g.ptr(), t.value(a).ptr(), tmp.ptr(), g.size());
      accumulate(db, tmp);
    }
  });
}

Var scale(Tape& tape, Var x, double factor) {
  Tensor Y(tape.value(x).shape());
  K().axpy(factor, tape.value(x).ptr(), Y.ptr(), Y.size());
  return tape.record(std::move(Y), {x}, [x, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (Tensor* dx = t.grad_buffer(x)) K().axpy(factor, g.ptr(), dx->ptr(), g.size());
  });
}

Var divide_by_scalar(Tape& tape, Var x, Var divisor) {
  const Tensor& X = tape.value(x);
  const Tensor& S = tape.value(divisor);
  if (S.size() != 1) throw DimensionError("divisor must have one element, got " + shape_string(S.shape()));
  const double s = S[0];
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = X[i] / s;
  return tape.record(std::move(Y), {x, divisor}, [x, divisor, s](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (Tensor* dx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] / s;
    }
    if (Tensor* ds = t.grad_buffer(divisor)) {
      const Tensor& X = t.value(x);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
      (*ds)[0] -= acc / (s * s);
    }
  });
}

Var sum(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).data()) s += v;
  return tape.record(Tensor::scalar(s), {x}, [x](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0];
    if (Tensor* dx = t.grad_buffer(x)) {
      for (double& v : dx->data()) v += g;
    }
  });
}

Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = tape.value(x);
  const Tensor& G = tape.value(gamma);
  const Tensor& Bt = tape.value(beta);
  require_matrix(X, "layer_norm");
  const std::size_t m = X.rows(), n = X.cols();
  if (G.size() != n || Bt.size() != n) throw DimensionError("layer_norm affine width mismatch");
  Tensor xhat({m, n});
  Tensor inv_std({m});
  Tensor Y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = X.ptr() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xr[j] - mean) * is;
      Y(i, j) = xhat(i, j) * G[j] + Bt[j];
    }
  }
  return tape.record(std::move(Y), {x, gamma, beta},
                     [x, gamma, beta, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    const Tensor& dY = t.output_grad(self);
    const Tensor& G = t.value(gamma);
    if (Tensor* dg = t.grad_buffer(gamma)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*dg)[j] += dY(i, j) * xhat(i, j);
    }
    if (Tensor* db = t.grad_buffer(beta)) {
      for (std::size_t i = 0; i < m; ++i) K().axpy(1.0, dY.ptr() + i * n, db->ptr(), n);
    }
    if (Tensor* dx = t.grad_buffer(x)) {
      std::vector<double> dxhat(n);
      for (std::size_t i = 0; i < m; ++i) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dxhat[j] = dY(i, j) * G[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat(i, j);
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          (*dx)(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
        }
      }
    }
  });
}

Var gelu(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    Y[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * std::numbers::sqrt2 * 0.5));
  }
  return tape.record(std::move(Y), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& X = t.value(x);
    Tensor* dx = t.grad_buffer(x);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(X[i] * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * X[i] * X[i]);
      (*dx)[i] += g[i] * (cdf + X[i] * pdf);
    }
  });
}

Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads, std::size_t seq_len) {
  const Tensor& Q = tape.value(q);
  const Tensor& Kt = tape.value(k);
  const Tensor& V = tape.value(v);
  require_matrix(Q, "attention");
  require_same_shape(Q, Kt, "attention");
  require_same_shape(Q, V, "attention");
  const std::size_t rows = Q.rows(), width = Q.cols();
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("head count " + std::to_string(heads) + " does not divide width " + std::to_string(width));
  }
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError("row count " + std::to_string(rows) + " is not a multiple of sequence length " +
                         std::to_string(seq_len));
  }
  const std::size_t batch = rows / seq_len, dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[b][h] is seq_len x seq_len, stored contiguously.
  Tensor probs({batch * heads * seq_len, seq_len});
  Tensor O({rows, width}, 0.0);
  std::vector<double> scores(seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = Q.ptr() + (b * seq_len + i) * width + off;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double* kj = Kt.ptr() + (b * seq_len + j) * width + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_sqrt;
        }
        double* p = probs.ptr() + ((b * heads + h) * seq_len + i) * seq_len;
        softmax_row(scores.data(), p, seq_len);
        double* oi = O.ptr() + (b * seq_len + i) * width + off;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double* vj = V.ptr() + (b * seq_len + j) * width + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  return tape.record(std::move(O), {q, k, v},
                     [q, k, v, heads, seq_len, batch, dh, width, inv_sqrt, probs = std::move(probs)](Tape& t, std::size_t self) {
    const Tensor& dO = t.output_grad(self);
    const Tensor& Q = t.value(q);
    const Tensor& Kt = t.value(k);
    const Tensor& V = t.value(v);
    Tensor* dQ = t.grad_buffer(q);
    Tensor* dK = t.grad_buffer(k);
    Tensor* dV = t.grad_buffer(v);
    std::vector<double> dp(seq_len), ds(seq_len);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < seq_len; ++i) {
          const double* p = probs.ptr() + ((b * heads + h) * seq_len + i) * seq_len;
          const double* doi = dO.ptr() + (b * seq_len + i) * width + off;
          double dot_pd = 0.0;
          for (std::size_t j = 0; j < seq_len; ++j) {
            const double* vj = V.ptr() + (b * seq_len + j) * width + off;
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
            dp[j] = s;
            dot_pd += p[j] * s;
            if (dV) {
              double* dvj = dV->ptr() + (b * seq_len + j) * width + off;
              for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
            }
          }
          for (std::size_t j = 0; j < seq_len; ++j) ds[j] = p[j] * (dp[j] - dot_pd) * inv_sqrt;
          const double* qi = Q.ptr() + (b * seq_len + i) * width + off;
          for (std::size_t j = 0; j < seq_len; ++j) {
            const double* kj = Kt.ptr() + (b * seq_len + j) * width + off;
            if (dQ) {
              double* dqi = dQ->ptr() + (b * seq_len + i) * width + off;
              for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds[j] * kj[c];
            }
            if (dK) {
              double* dkj = dK->ptr() + (b * seq_len + j) * width + off;
              for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds[j] * qi[c];
            }
          }
        }
      }
    }
  });
}

Var mean_pool(Tape& tape, Var x, std::size_t seq_len) {
  const Tensor& X = tape.value(x);
  require_matrix(X, "mean_pool");
  const std::size_t rows = X.rows(), width = X.cols();
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError("row count " + std::to_string(rows) + " is not a multiple of sequence length " +
                         std::to_string(seq_len));
  }
  const std::size_t batch = rows / seq_len;
  const double inv = 1.0 / static_cast<double>(seq_len);
  Tensor Y({batch, width}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < seq_len; ++s) K().axpy(1.0, X.ptr() + (b * seq_len + s) * width, Y.ptr() + b * width, width);
    for (std::size_t c = 0; c < width; ++c) Y(b, c) *= inv;
  }
  return tape.record(std::move(Y), {x}, [x, batch, seq_len, width, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor* dx = t.grad_buffer(x);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq_len; ++s) K().axpy(inv, g.ptr() + b * width, dx->ptr() + (b * seq_len + s) * width, width);
  });
}

Var l2_normalize_rows(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  require_matrix(X, "l2_normalize_rows");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor Y({m, n});
  Tensor norms({m});
  for (std::size_t i = 0; i < m; ++i) {
    const double nrm = std::sqrt(K().dot(X.ptr() + i * n, X.ptr() + i * n, n));
    if (!(nrm > 0.0)) throw DegenerateInputError("cannot normalize a zero-norm row");
    norms[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) Y(i, j) = X(i, j) / nrm;
  }
  return tape.record(std::move(Y), {x}, [x, m, n, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& Y = t.value(Var{self});
    Tensor* dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < m; ++i) {
      const double proj = K().dot(Y.ptr() + i * n, g.ptr() + i * n, n);
      for (std::size_t j = 0; j < n; ++j) (*dx)(i, j) += (g(i, j) - Y(i, j) * proj) / norms[i];
    }
  });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& L = tape.value(logits);
  require_matrix(L, "softmax_cross_entropy");
  const std::size_t batch = L.rows(), classes = L.cols();
  validate_labels(labels, batch, classes);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) loss -= log_softmax_at(L.ptr() + b * classes, classes, labels[b]);
  loss /= static_cast<double>(batch);
  std::vector<int> y(labels.begin(), labels.end());
  return tape.record(Tensor::scalar(loss), {logits}, [logits, batch, classes, y = std::move(y)](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0] / static_cast<double>(batch);
    const Tensor& L = t.value(logits);
    Tensor* dl = t.grad_buffer(logits);
    std::vector<double> p(classes);
    for (std::size_t b = 0; b < batch; ++b) {
      softmax_row(L.ptr() + b * classes, p.data(), classes);
      p[y[b]] -= 1.0;
      for (std::size_t c = 0; c < classes; ++c) (*dl)(b, c) += g * p[c];
    }
  });
}

Var kl_divergence(Tape& tape, const Tensor& p_ref, Var logits) {
  const Tensor& L = tape.value(logits);
  require_matrix(L, "kl_divergence");
  if (p_ref.rows() != L.rows() || p_ref.cols() != L.cols()) {
    throw DimensionError("kl_divergence: reference " + shape_string(p_ref.shape()) + " vs logits " + shape_string(L.shape()));
  }
  validate_distribution(p_ref);
  const std::size_t batch = L.rows(), classes = L.cols();
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* lr = L.ptr() + b * classes;
    double mx = lr[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lr[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(lr[c] - mx);
    const double log_z = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = p_ref(b, c);
      if (p > 0.0) loss += p * (std::log(p) - (lr[c] - log_z));
    }
  }
  loss /= static_cast<double>(batch);
  return tape.record(Tensor::scalar(loss), {logits}, [logits, p_ref, batch, classes](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0] / static_cast<double>(batch);
    const Tensor& L = t.value(logits);
    Tensor* dl = t.grad_buffer(logits);
    std::vector<double> q(classes);
    for (std::size_t b = 0; b < batch; ++b) {
      softmax_row(L.ptr() + b * classes, q.data(), classes);
      for (std::size_t c = 0; c < classes; ++c) (*dl)(b, c) += g * (q[c] - p_ref(b, c));
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape tape;
  return tape.value(matmul(tape, tape.constant(a), tape.constant(b)));
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t m = logits.rows(), n = logits.cols();
  for (std::size_t i = 0; i < m; ++i) softmax_row(logits.ptr() + i * n, out.ptr() + i * n, n);
  return out;
}

double cosine_similarity(const Tensor& f, const Tensor& g) {
  if (f.size() != g.size()) throw DimensionError("cosine_similarity: length mismatch");
  const double nf = std::sqrt(K().dot(f.ptr(), f.ptr(), f.size()));
  const double ng = std::sqrt(K().dot(g.ptr(), g.ptr(), g.size()));
  if (!(nf > 0.0) || !(ng > 0.0)) throw DegenerateInputError("cosine similarity of a zero-norm vector");
  const double c = K().dot(f.ptr(), g.ptr(), f.size()) / (nf * ng);
  return std::clamp(c, -1.0, 1.0);
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  Tape tape;
  const Tensor L = logits.rank() == 1 ? logits.reshaped({1, logits.size()}) : logits;
  return tape.value(softmax_cross_entropy(tape, tape.constant(L), labels))[0];
}

double kl_divergence(const Tensor& p_ref, const Tensor& logits) {
  Tape tape;
  const Tensor L = logits.rank() == 1 ? logits.reshaped({1, logits.size()}) : logits;
  const Tensor P = p_ref.rank() == 1 ? p_ref.reshaped({1, p_ref.size()}) : p_ref;
  return tape.value(kl_divergence(tape, P, tape.constant(L)))[0];
}

}  // namespace rmt
