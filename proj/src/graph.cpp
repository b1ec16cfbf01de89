#include "graph.hpp"

#include <algorithm>
#include <cmath>

namespace snds::ad {

namespace {

void check_finite(const Tensor& t, const char* op_name) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op_name) + ": non-finite value in output");
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op_name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

NodeId Graph::emit(Tensor value, std::vector<NodeId> parents, BackwardFn fn, const char* op_name) {
  check_finite(value, op_name);
  Node n;
  if (recording()) {
    n.grad = Tensor::zeros_like(value);
    n.backward = std::move(fn);
  }
  n.value = std::move(value);
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::input(Tensor value) {
  return emit(std::move(value), {}, nullptr, "input");
}

NodeId Graph::leaf(Parameter& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return it->second;
  NodeId id = emit(p.value(), {},
                   [&p](Graph& g, NodeId self) { p.grad().add_scaled(g.grad(self), 1.0); }, "leaf");
  node(id).param = &p;
  leaf_cache_.emplace(&p, id);
  return id;
}

Tensor& Graph::grad(NodeId id) {
  if (!recording()) throw DomainError("graph: gradients unavailable in inference mode");
  return nodes_[static_cast<size_t>(id)].grad;
}

void Graph::backward(NodeId loss) {
  if (!recording()) throw DomainError("graph: backward() on an inference graph");
  if (backward_done_) throw DomainError("graph: backward() called twice without re-recording");
  const Tensor& loss_value = value(loss);
  if (loss_value.size() != 1) {
    throw ShapeError("graph: backward() requires a scalar loss, got shape " + shape_str(loss_value.shape()));
  }
  backward_done_ = true;
  grad(loss)[0] = 1.0;

  // Reverse sweep over the tape; reachability marks guarantee every node
  // contributing to the loss is visited exactly once.
  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<size_t>(loss)] = 1;
  for (int id = loss; id >= 0; --id) {
    Node& n = node(id);
    if (!needed[static_cast<size_t>(id)]) continue;
    for (NodeId p : n.parents) needed[static_cast<size_t>(p)] = 1;
    if (n.backward) n.backward(*this, id);
  }
}

NodeId Graph::custom(Tensor value, std::vector<NodeId> parents, BackwardFn fn, const char* op_name) {
  return emit(std::move(value), std::move(parents), std::move(fn), op_name);
}

// -- elementwise and reduction ops -------------------------------------------

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  out.add_scaled(bv, 1.0);
  return emit(std::move(out), {a, b},
              [a, b](Graph& g, NodeId self) {
                g.grad(a).add_scaled(g.grad(self), 1.0);
                g.grad(b).add_scaled(g.grad(self), 1.0);
              },
              "add");
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  out.add_scaled(bv, -1.0);
  return emit(std::move(out), {a, b},
              [a, b](Graph& g, NodeId self) {
                g.grad(a).add_scaled(g.grad(self), 1.0);
                g.grad(b).add_scaled(g.grad(self), -1.0);
              },
              "sub");
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return emit(std::move(out), {a, b},
              [a, b](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& av2 = g.value(a);
                const Tensor& bv2 = g.value(b);
                Tensor& ga = g.grad(a);
                Tensor& gb = g.grad(b);
                for (int64_t i = 0; i < go.size(); ++i) {
                  ga[i] += go[i] * bv2[i];
                  gb[i] += go[i] * av2[i];
                }
              },
              "mul");
}

NodeId Graph::log(NodeId x) {
  const Tensor& xv = value(x);
  Tensor out = Tensor::zeros_like(xv);
  for (int64_t i = 0; i < xv.size(); ++i) {
    if (xv[i] <= 0.0) throw NumericError("log: non-positive input " + std::to_string(xv[i]));
    out[i] = std::log(xv[i]);
  }
  return emit(std::move(out), {x},
              [x](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv2[i];
              },
              "log");
}

NodeId Graph::relu(NodeId x) {
  const Tensor& xv = value(x);
  Tensor out = xv;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return emit(std::move(out), {x},
              [x](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < go.size(); ++i) {
                  if (xv2[i] > 0.0) gx[i] += go[i];
                }
              },
              "relu");
}

NodeId Graph::sum(NodeId x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return emit(Tensor::scalar(acc), {x},
              [x](Graph& g, NodeId self) {
                const double go = g.grad(self)[0];
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < gx.size(); ++i) gx[i] += go;
              },
              "sum");
}

NodeId Graph::sum_squares(NodeId x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i] * xv[i];
  return emit(Tensor::scalar(acc), {x},
              [x](Graph& g, NodeId self) {
                const double go = g.grad(self)[0];
                const Tensor& xv2 = g.value(x);
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * go * xv2[i];
              },
              "sum_squares");
}

NodeId Graph::index(NodeId v, int i) {
  const Tensor& vv = value(v);
  if (i < 0 || static_cast<int64_t>(i) >= vv.size()) {
    throw DomainError("index: position " + std::to_string(i) + " outside tensor of " +
                      std::to_string(vv.size()) + " elements");
  }
  return emit(Tensor::scalar(vv[i]), {v},
              [v, i](Graph& g, NodeId self) { g.grad(v)[i] += g.grad(self)[0]; }, "index");
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  const Tensor& xv = value(x);
  if (shape_numel(shape) != xv.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(xv.data(), xv.data() + xv.size()));
  return emit(std::move(out), {x},
              [x](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                Tensor& gx = g.grad(x);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
              },
              "reshape");
}

NodeId Graph::weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " tensors vs " +
                     std::to_string(coeffs.size()) + " coefficients");
  }
  Tensor out = Tensor::zeros_like(value(xs[0]));
  for (size_t i = 0; i < xs.size(); ++i) {
    check_same_shape(out, value(xs[i]), "weighted_sum");
    out.add_scaled(value(xs[i]), coeffs[i]);
  }
  return emit(std::move(out), xs,
              [xs, coeffs](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                for (size_t i = 0; i < xs.size(); ++i) g.grad(xs[i]).add_scaled(go, coeffs[i]);
              },
              "weighted_sum");
}

NodeId Graph::scale_by(NodeId x, NodeId s) {
  const Tensor& xv = value(x);
  const Tensor& sv = value(s);
  if (sv.size() != 1) throw ShapeError("scale_by: scale must be scalar, got " + shape_str(sv.shape()));
  Tensor out = Tensor::zeros_like(xv);
  out.add_scaled(xv, sv[0]);
  return emit(std::move(out), {x, s},
              [x, s](Graph& g, NodeId self) {
                const Tensor& go = g.grad(self);
                const Tensor& xv2 = g.value(x);
                const double sval = g.value(s)[0];
                Tensor& gx = g.grad(x);
                double acc = 0.0;
                for (int64_t i = 0; i < go.size(); ++i) {
                  gx[i] += sval * go[i];
                  acc += go[i] * xv2[i];
                }
                g.grad(s)[0] += acc;
              },
              "scale_by");
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: expected (N,C) logits, got " + shape_str(logits.shape()));
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor out = Tensor::zeros_like(logits);
  for (int i = 0; i < n; ++i) {
    const double* row = logits.data() + static_cast<int64_t>(i) * c;
    double* orow = out.data() + static_cast<int64_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= z;
  }
  return out;
}

}  // namespace snds::ad
