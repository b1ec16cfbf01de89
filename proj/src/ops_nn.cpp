#include <algorithm>
#include <cmath>

#include "graph.hpp"

namespace snds::ad {

namespace {

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

// Smallest output position whose receptive field starts inside the input.
inline int conv_lo(int kk, int stride) {
  int lo = 0;
  while (lo * stride + kk - 1 < 0) ++lo;
  return lo;
}

inline int conv_hi(int out_size, int in_size, int kk, int stride) {
  int hi = out_size;
  while (hi > 0 && (hi - 1) * stride + kk - 1 >= in_size) --hi;
  return hi;
}

}  // namespace

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  require_rank(xv, 2, "affine", "input");
  require_rank(wv, 2, "affine", "weight");
  require_rank(bv, 1, "affine", "bias");
  const int n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  if (wv.dim(0) != in) {
    throw ShapeError("affine: input width " + std::to_string(in) + " vs weight rows " +
                     std::to_string(wv.dim(0)));
  }
  if (bv.dim(0) != out) {
    throw ShapeError("affine: bias size " + std::to_string(bv.dim(0)) + " vs output width " +
                     std::to_string(out));
  }

  Tensor y({n, out});
  for (int i = 0; i < n; ++i) {
    const double* xrow = xv.data() + static_cast<int64_t>(i) * in;
    double* yrow = y.data() + static_cast<int64_t>(i) * out;
    for (int j = 0; j < out; ++j) yrow[j] = bv[j];
    for (int k = 0; k < in; ++k) {
      const double xk = xrow[k];
      const double* wrow = wv.data() + static_cast<int64_t>(k) * out;
      for (int j = 0; j < out; ++j) yrow[j] += xk * wrow[j];
    }
  }
  return emit(std::move(y), {x, w, b},
              [x, w, b, n, in, out](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                const Tensor& wv2 = g.value(w);
                Tensor& gx = g.grad(x);
                Tensor& gw = g.grad(w);
                Tensor& gb = g.grad(b);
                for (int i = 0; i < n; ++i) {
                  const double* gorow = go.data() + static_cast<int64_t>(i) * out;
                  const double* xrow = xv2.data() + static_cast<int64_t>(i) * in;
                  double* gxrow = gx.data() + static_cast<int64_t>(i) * in;
                  for (int j = 0; j < out; ++j) gb[j] += gorow[j];
                  for (int k = 0; k < in; ++k) {
                    const double* wrow = wv2.data() + static_cast<int64_t>(k) * out;
                    double* gwrow = gw.data() + static_cast<int64_t>(k) * out;
                    double acc = 0.0;
                    for (int j = 0; j < out; ++j) {
                      acc += gorow[j] * wrow[j];
                      gwrow[j] += gorow[j] * xrow[k];
                    }
                    gxrow[k] += acc;
                  }
                }
              },
              "affine");
}

NodeId Graph::conv2d(NodeId x, NodeId k, NodeId b, int stride) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(k);
  const Tensor& bv = value(b);
  require_rank(xv, 4, "conv2d", "input");
  require_rank(kv, 4, "conv2d", "kernel");
  require_rank(bv, 1, "conv2d", "bias");
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  if (kv.dim(2) != 3 || kv.dim(3) != 3) {
    throw ShapeError("conv2d: kernel spatial dims must be 3x3, got " + shape_str(kv.shape()));
  }
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oc = kv.dim(0);
  if (kv.dim(1) != c) {
    throw ShapeError("conv2d: input channels " + std::to_string(c) + " vs kernel channels " +
                     std::to_string(kv.dim(1)));
  }
  if (bv.dim(0) != oc) {
    throw ShapeError("conv2d: bias size " + std::to_string(bv.dim(0)) + " vs output channels " +
                     std::to_string(oc));
  }
  const int oh = (h - 1) / stride + 1;
  const int ow = (w - 1) / stride + 1;

  Tensor y({n, oc, oh, ow});
  const int64_t x_cs = static_cast<int64_t>(h) * w;   // channel stride
  const int64_t y_cs = static_cast<int64_t>(oh) * ow;
  for (int in = 0; in < n; ++in) {
    for (int o = 0; o < oc; ++o) {
      double* yplane = y.data() + (static_cast<int64_t>(in) * oc + o) * y_cs;
      for (int64_t i = 0; i < y_cs; ++i) yplane[i] = bv[o];
      for (int ci = 0; ci < c; ++ci) {
        const double* xplane = xv.data() + (static_cast<int64_t>(in) * c + ci) * x_cs;
        const double* kbase = kv.data() + (static_cast<int64_t>(o) * c + ci) * 9;
        for (int kh = 0; kh < 3; ++kh) {
          const int lo_h = conv_lo(kh, stride), hi_h = conv_hi(oh, h, kh, stride);
          for (int kw = 0; kw < 3; ++kw) {
            const double wk = kbase[kh * 3 + kw];
            if (wk == 0.0) continue;
            const int lo_w = conv_lo(kw, stride), hi_w = conv_hi(ow, w, kw, stride);
            for (int r = lo_h; r < hi_h; ++r) {
              const double* xrow = xplane + static_cast<int64_t>(r * stride + kh - 1) * w + (kw - 1);
              double* yrow = yplane + static_cast<int64_t>(r) * ow;
              for (int q = lo_w; q < hi_w; ++q) yrow[q] += wk * xrow[q * stride];
            }
          }
        }
      }
    }
  }
  return emit(std::move(y), {x, k, b},
              [x, k, b, n, c, h, w, oc, oh, ow, stride, x_cs, y_cs](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                const Tensor& kv2 = g.value(k);
                Tensor& gx = g.grad(x);
                Tensor& gk = g.grad(k);
                Tensor& gb = g.grad(b);
                for (int in = 0; in < n; ++in) {
                  for (int o = 0; o < oc; ++o) {
                    const double* goplane = go.data() + (static_cast<int64_t>(in) * oc + o) * y_cs;
                    double bacc = 0.0;
                    for (int64_t i = 0; i < y_cs; ++i) bacc += goplane[i];
                    gb[o] += bacc;
                    for (int ci = 0; ci < c; ++ci) {
                      const double* xplane = xv2.data() + (static_cast<int64_t>(in) * c + ci) * x_cs;
                      double* gxplane = gx.data() + (static_cast<int64_t>(in) * c + ci) * x_cs;
                      const double* kbase = kv2.data() + (static_cast<int64_t>(o) * c + ci) * 9;
                      double* gkbase = gk.data() + (static_cast<int64_t>(o) * c + ci) * 9;
                      for (int kh = 0; kh < 3; ++kh) {
                        const int lo_h = conv_lo(kh, stride), hi_h = conv_hi(oh, h, kh, stride);
                        for (int kw = 0; kw < 3; ++kw) {
                          const double wk = kbase[kh * 3 + kw];
                          const int lo_w = conv_lo(kw, stride), hi_w = conv_hi(ow, w, kw, stride);
                          double kacc = 0.0;
                          for (int r = lo_h; r < hi_h; ++r) {
                            const int64_t xoff = static_cast<int64_t>(r * stride + kh - 1) * w + (kw - 1);
                            const double* xrow = xplane + xoff;
                            double* gxrow = gxplane + xoff;
                            const double* gorow = goplane + static_cast<int64_t>(r) * ow;
                            for (int q = lo_w; q < hi_w; ++q) {
                              kacc += gorow[q] * xrow[q * stride];
                              gxrow[q * stride] += wk * gorow[q];
                            }
                          }
                          gkbase[kh * 3 + kw] += kacc;
                        }
                      }
                    }
                  }
                }
              },
              "conv2d");
}

NodeId Graph::avg_pool(NodeId x, int kernel) {
  const Tensor& xv = value(x);
  require_rank(xv, 4, "avg_pool", "input");
  if (kernel < 1) throw ShapeError("avg_pool: kernel must be positive, got " + std::to_string(kernel));
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = h / kernel, ow = w / kernel;
  if (oh < 1 || ow < 1) {
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel) + " larger than input " + shape_str(xv.shape()));
  }
  const double inv = 1.0 / (kernel * kernel);

  Tensor y({n, c, oh, ow});
  for (int in = 0; in < n; ++in) {
    for (int ci = 0; ci < c; ++ci) {
      const double* xplane = xv.data() + (static_cast<int64_t>(in) * c + ci) * h * w;
      double* yplane = y.data() + (static_cast<int64_t>(in) * c + ci) * oh * ow;
      for (int r = 0; r < oh; ++r) {
        for (int q = 0; q < ow; ++q) {
          double acc = 0.0;
          for (int dr = 0; dr < kernel; ++dr) {
            const double* xrow = xplane + static_cast<int64_t>(r * kernel + dr) * w + q * kernel;
            for (int dq = 0; dq < kernel; ++dq) acc += xrow[dq];
          }
          yplane[static_cast<int64_t>(r) * ow + q] = acc * inv;
        }
      }
    }
  }
  return emit(std::move(y), {x},
              [x, n, c, h, w, oh, ow, kernel, inv](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                Tensor& gx = g.grad(x);
                for (int in = 0; in < n; ++in) {
                  for (int ci = 0; ci < c; ++ci) {
                    double* gxplane = gx.data() + (static_cast<int64_t>(in) * c + ci) * h * w;
                    const double* goplane = go.data() + (static_cast<int64_t>(in) * c + ci) * oh * ow;
                    for (int r = 0; r < oh; ++r) {
                      for (int q = 0; q < ow; ++q) {
                        const double v = goplane[static_cast<int64_t>(r) * ow + q] * inv;
                        for (int dr = 0; dr < kernel; ++dr) {
                          double* gxrow = gxplane + static_cast<int64_t>(r * kernel + dr) * w + q * kernel;
                          for (int dq = 0; dq < kernel; ++dq) gxrow[dq] += v;
                        }
                      }
                    }
                  }
                }
              },
              "avg_pool");
}

namespace {

// Channel layout shared by scale_shift and batch_norm: dim 1 is the channel
// axis, everything after it is folded into "spatial".
struct ChannelDims {
  int n, c;
  int64_t spatial;
};

ChannelDims channel_dims(const Tensor& x, const Tensor& gamma, const Tensor& beta, const char* op) {
  if (x.rank() < 2) {
    throw ShapeError(std::string(op) + ": input must have rank >= 2, got " + shape_str(x.shape()));
  }
  ChannelDims d{x.dim(0), x.dim(1), 1};
  for (int i = 2; i < x.rank(); ++i) d.spatial *= x.dim(i);
  if (gamma.rank() != 1 || gamma.dim(0) != d.c || !gamma.same_shape(beta)) {
    throw ShapeError(std::string(op) + ": scale/shift must be vectors of size " + std::to_string(d.c) +
                     ", got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  return d;
}

}  // namespace

NodeId Graph::scale_shift(NodeId x, NodeId gamma, NodeId beta) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  const ChannelDims d = channel_dims(xv, gv, bv, "scale_shift");

  Tensor y = Tensor::zeros_like(xv);
  for (int in = 0; in < d.n; ++in) {
    for (int ci = 0; ci < d.c; ++ci) {
      const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
      const double g0 = gv[ci], b0 = bv[ci];
      for (int64_t s = 0; s < d.spatial; ++s) y[off + s] = g0 * xv[off + s] + b0;
    }
  }
  return emit(std::move(y), {x, gamma, beta},
              [x, gamma, beta, d](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                const Tensor& gv2 = g.value(gamma);
                Tensor& gx = g.grad(x);
                Tensor& gg = g.grad(gamma);
                Tensor& gb = g.grad(beta);
                for (int in = 0; in < d.n; ++in) {
                  for (int ci = 0; ci < d.c; ++ci) {
                    const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
                    const double g0 = gv2[ci];
                    double gacc = 0.0, bacc = 0.0;
                    for (int64_t s = 0; s < d.spatial; ++s) {
                      const double goi = go[off + s];
                      gx[off + s] += g0 * goi;
                      gacc += goi * xv2[off + s];
                      bacc += goi;
                    }
                    gg[ci] += gacc;
                    gb[ci] += bacc;
                  }
                }
              },
              "scale_shift");
}

NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  const ChannelDims d = channel_dims(xv, gv, bv, "batch_norm");
  const double m = static_cast<double>(d.n) * static_cast<double>(d.spatial);

  Tensor mean({d.c}), inv_std({d.c});
  for (int ci = 0; ci < d.c; ++ci) {
    double acc = 0.0;
    for (int in = 0; in < d.n; ++in) {
      const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
      for (int64_t s = 0; s < d.spatial; ++s) acc += xv[off + s];
    }
    const double mu = acc / m;
    double var = 0.0;
    for (int in = 0; in < d.n; ++in) {
      const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
      for (int64_t s = 0; s < d.spatial; ++s) {
        const double dv = xv[off + s] - mu;
        var += dv * dv;
      }
    }
    mean[ci] = mu;
    inv_std[ci] = 1.0 / std::sqrt(var / m + eps);
  }

  Tensor xhat = Tensor::zeros_like(xv);
  Tensor y = Tensor::zeros_like(xv);
  for (int in = 0; in < d.n; ++in) {
    for (int ci = 0; ci < d.c; ++ci) {
      const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
      for (int64_t s = 0; s < d.spatial; ++s) {
        const double xh = (xv[off + s] - mean[ci]) * inv_std[ci];
        xhat[off + s] = xh;
        y[off + s] = gv[ci] * xh + bv[ci];
      }
    }
  }
  return emit(std::move(y), {x, gamma, beta},
              [x, gamma, beta, d, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& gv2 = g.value(gamma);
                Tensor& gx = g.grad(x);
                Tensor& gg = g.grad(gamma);
                Tensor& gb = g.grad(beta);
                for (int ci = 0; ci < d.c; ++ci) {
                  double sum_dy = 0.0, sum_dy_xhat = 0.0;
                  for (int in = 0; in < d.n; ++in) {
                    const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
                    for (int64_t s = 0; s < d.spatial; ++s) {
                      sum_dy += go[off + s];
                      sum_dy_xhat += go[off + s] * xhat[off + s];
                    }
                  }
                  gg[ci] += sum_dy_xhat;
                  gb[ci] += sum_dy;
                  const double scale = gv2[ci] * inv_std[ci] / m;
                  for (int in = 0; in < d.n; ++in) {
                    const int64_t off = (static_cast<int64_t>(in) * d.c + ci) * d.spatial;
                    for (int64_t s = 0; s < d.spatial; ++s) {
                      gx[off + s] += scale * (m * go[off + s] - sum_dy - xhat[off + s] * sum_dy_xhat);
                    }
                  }
                }
              },
              "batch_norm");
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Tensor& zv = value(logits);
  require_rank(zv, 2, "softmax_cross_entropy", "logits");
  const int n = zv.dim(0), c = zv.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= c) {
      throw DomainError("softmax_cross_entropy: label " + std::to_string(lab) + " outside [0, " +
                        std::to_string(c) + ")");
    }
  }

  Tensor probs = softmax(zv);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    loss -= std::log(probs[static_cast<int64_t>(i) * c + labels[static_cast<size_t>(i)]]);
  }
  loss /= n;
  return emit(Tensor::scalar(loss), {logits},
              [logits, labels = std::move(labels), probs = std::move(probs), n, c](Graph& g, NodeId self) {
                const double go = g.grad(self)[0] / n;
                Tensor& gz = g.grad(logits);
                for (int i = 0; i < n; ++i) {
                  const int64_t off = static_cast<int64_t>(i) * c;
                  for (int j = 0; j < c; ++j) gz[off + j] += go * probs[off + j];
                  gz[off + labels[static_cast<size_t>(i)]] -= go;
                }
              },
              "softmax_cross_entropy");
}

}  // namespace snds::ad
