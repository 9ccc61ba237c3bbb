#include "qgen/autodiff.hpp"

#include <cmath>
#include <utility>

namespace qgen {

void Param::init_normal(Rng& rng, double stddev) {
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * stddev;
  }
}

void Adam::step(const std::vector<Param*>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Param* p : params) {
    p->m = cfg_.beta1 * p->m + (1.0 - cfg_.beta1) * p->g;
    p->v = cfg_.beta2 * p->v + (1.0 - cfg_.beta2) * p->g.cwiseProduct(p->g);
    Mat mhat = p->m / bc1;
    Mat vhat = p->v / bc2;
    Mat update = (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
    if (cfg_.weight_decay > 0.0) update += cfg_.weight_decay * p->w;
    p->w -= cfg_.lr * update;
    p->g.setZero();
  }
}

int Tape::push(Mat val, bool needs_grad, std::function<void(Tape&, Node&)> back) {
  Node n;
  if (needs_grad) n.grad = Mat::Zero(val.rows(), val.cols());
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

void Tape::add_grad(int id, const Mat& g) {
  Node& n = node(id);
  if (n.needs_grad) n.grad += g;
}

int Tape::param(Param& p) {
  int id = push(p.w, true, nullptr);
  node(id).bound = &p;
  return id;
}

int Tape::input(const Mat& v) { return push(v, true, nullptr); }

int Tape::constant(const Mat& v) { return push(v, false, nullptr); }

int Tape::matmul(int a, int b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(node(a).val * node(b).val, ng, [a, b](Tape& t, Node& self) {
    t.add_grad(a, self.grad * t.value(b).transpose());
    t.add_grad(b, t.value(a).transpose() * self.grad);
  });
}

int Tape::add(int a, int b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(node(a).val + node(b).val, ng, [a, b](Tape& t, Node& self) {
    t.add_grad(a, self.grad);
    t.add_grad(b, self.grad);
  });
}

int Tape::add_rowwise(int a, int row) {
  bool ng = node(a).needs_grad || node(row).needs_grad;
  Mat out = node(a).val;
  out.rowwise() += node(row).val.row(0);
  return push(std::move(out), ng, [a, row](Tape& t, Node& self) {
    t.add_grad(a, self.grad);
    t.add_grad(row, self.grad.colwise().sum());
  });
}

int Tape::mul_elem(int a, int b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(node(a).val.cwiseProduct(node(b).val), ng, [a, b](Tape& t, Node& self) {
    t.add_grad(a, self.grad.cwiseProduct(t.value(b)));
    t.add_grad(b, self.grad.cwiseProduct(t.value(a)));
  });
}

int Tape::scale(int a, double s) {
  return push(node(a).val * s, node(a).needs_grad,
              [a, s](Tape& t, Node& self) { t.add_grad(a, self.grad * s); });
}

int Tape::transpose(int a) {
  return push(node(a).val.transpose(), node(a).needs_grad,
              [a](Tape& t, Node& self) { t.add_grad(a, self.grad.transpose()); });
}

int Tape::relu(int a) {
  return push(node(a).val.cwiseMax(0.0), node(a).needs_grad, [a](Tape& t, Node& self) {
    Mat g = self.grad;
    const Mat& x = t.value(a);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (x(i) <= 0.0) g(i) = 0.0;
    }
    t.add_grad(a, g);
  });
}

int Tape::sigmoid(int a) {
  Mat y = (1.0 / (1.0 + (-node(a).val.array()).exp())).matrix();
  int id = push(std::move(y), node(a).needs_grad, [a](Tape& t, Node& self) {
    Mat d = self.grad.cwiseProduct(
        self.val.cwiseProduct((Mat::Ones(self.val.rows(), self.val.cols()) - self.val)));
    t.add_grad(a, d);
  });
  return id;
}

int Tape::softmax_rows(int a, const Mat& additive) {
  const Mat& x = node(a).val;
  if (additive.rows() != x.rows() || additive.cols() != x.cols())
    fail("softmax_rows: mask shape mismatch");
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::RowVectorXd row = x.row(r) + additive.row(r);
    double mx = row.maxCoeff();
    if (mx <= -kMaskPenalty / 2) fail("softmax_rows: every entry of a row is masked");
    Eigen::RowVectorXd e(x.cols());
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      // masked entries become exactly 0; Eigen's fast exp leaves denormals
      e(c) = additive(r, c) <= -kMaskPenalty / 2 ? 0.0 : std::exp(row(c) - mx);
      z += e(c);
    }
    y.row(r) = e / z;
  }
  return push(std::move(y), node(a).needs_grad, [a](Tape& t, Node& self) {
    Mat d(self.val.rows(), self.val.cols());
    for (Eigen::Index r = 0; r < self.val.rows(); ++r) {
      double dot = self.grad.row(r).dot(self.val.row(r));
      d.row(r) =
          (self.grad.row(r).array() - dot).matrix().cwiseProduct(self.val.row(r));
    }
    t.add_grad(a, d);
  });
}

int Tape::softmax_rows(int a) {
  return softmax_rows(a, Mat::Zero(node(a).val.rows(), node(a).val.cols()));
}

int Tape::layernorm_rows(int a, int gain, int bias) {
  constexpr double kEps = 1e-5;
  const Mat& x = node(a).val;
  const Eigen::Index cols = x.cols();
  Mat xhat(x.rows(), cols);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma(r) = is;
    xhat.row(r) = ((x.row(r).array() - mu) * is).matrix();
  }
  Mat out = xhat;
  out.array().rowwise() *= node(gain).val.row(0).array();
  out.rowwise() += node(bias).val.row(0);
  bool ng = node(a).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
  return push(std::move(out), ng,
              [a, gain, bias, xhat, inv_sigma](Tape& t, Node& self) {
                const Eigen::Index cols = self.val.cols();
                t.add_grad(bias, self.grad.colwise().sum());
                t.add_grad(gain, self.grad.cwiseProduct(xhat).colwise().sum());
                Mat dxhat = self.grad;
                dxhat.array().rowwise() *= t.value(gain).row(0).array();
                Mat dx(self.val.rows(), cols);
                for (Eigen::Index r = 0; r < self.val.rows(); ++r) {
                  double m1 = dxhat.row(r).mean();
                  double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                  dx.row(r) = (inv_sigma(r) *
                               (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2))
                                  .matrix();
                }
                t.add_grad(a, dx);
              });
}

int Tape::mean_rows(int a) {
  const Mat& x = node(a).val;
  Mat out = x.colwise().mean();
  double rows = static_cast<double>(x.rows());
  return push(std::move(out), node(a).needs_grad, [a, rows](Tape& t, Node& self) {
    Mat d = (self.grad / rows).replicate(static_cast<Eigen::Index>(rows), 1);
    t.add_grad(a, d);
  });
}

int Tape::gather_rows(int table, std::vector<int> ids) {
  const Mat& src = node(table).val;
  Mat out(static_cast<Eigen::Index>(ids.size()), src.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= src.rows()) fail("gather_rows: row id out of range");
    out.row(static_cast<Eigen::Index>(i)) = src.row(ids[i]);
  }
  return push(std::move(out), node(table).needs_grad,
              [table, ids = std::move(ids)](Tape& t, Node& self) {
                Node& tbl = t.node(table);
                if (!tbl.needs_grad) return;
                for (size_t i = 0; i < ids.size(); ++i)
                  tbl.grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
              });
}

int Tape::vstack(int a, int b) {
  const Mat& x = node(a).val;
  const Mat& y = node(b).val;
  if (x.cols() != y.cols()) fail("vstack: column count mismatch");
  Mat out(x.rows() + y.rows(), x.cols());
  out.topRows(x.rows()) = x;
  out.bottomRows(y.rows()) = y;
  Eigen::Index split = x.rows();
  bool ng = node(a).needs_grad || node(b).needs_grad;
  return push(std::move(out), ng, [a, b, split](Tape& t, Node& self) {
    t.add_grad(a, self.grad.topRows(split));
    t.add_grad(b, self.grad.bottomRows(self.grad.rows() - split));
  });
}

int Tape::slice_rows(int a, int r0, int nrows) {
  const Mat& x = node(a).val;
  if (r0 < 0 || nrows < 0 || r0 + nrows > x.rows()) fail("slice_rows: range out of bounds");
  Mat out = x.middleRows(r0, nrows);
  return push(std::move(out), node(a).needs_grad, [a, r0, nrows](Tape& t, Node& self) {
    Node& src = t.node(a);
    if (!src.needs_grad) return;
    src.grad.middleRows(r0, nrows) += self.grad;
  });
}

int Tape::dropout(int a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) fail("dropout: rate must be below 1");
  const Mat& x = node(a).val;
  Mat mask(x.rows(), x.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      mask(r, c) = rng.unit() < keep ? 1.0 / keep : 0.0;
  }
  return push(x.cwiseProduct(mask), node(a).needs_grad,
              [a, mask](Tape& t, Node& self) { t.add_grad(a, self.grad.cwiseProduct(mask)); });
}

int Tape::sum(int a) {
  Mat out(1, 1);
  out(0, 0) = node(a).val.sum();
  return push(std::move(out), node(a).needs_grad, [a](Tape& t, Node& self) {
    const Mat& x = t.value(a);
    t.add_grad(a, Mat::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

int Tape::weighted_nll(int probs, std::vector<int> targets, std::vector<double> weights,
                       double denom) {
  const Mat& p = node(probs).val;
  if (targets.size() != weights.size()) fail("weighted_nll: targets/weights size mismatch");
  if (static_cast<Eigen::Index>(targets.size()) != p.rows())
    fail("weighted_nll: one target per row required");
  if (denom <= 0.0) fail("weighted_nll: denom must be positive");
  double loss = 0.0;
  for (size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] < 0 || targets[t] >= p.cols()) fail("weighted_nll: target out of range");
    loss -= weights[t] * std::log(std::max(p(static_cast<Eigen::Index>(t), targets[t]),
                                           kProbFloor));
  }
  Mat out(1, 1);
  out(0, 0) = loss / denom;
  return push(std::move(out), node(probs).needs_grad,
              [probs, targets = std::move(targets), weights = std::move(weights),
               denom](Tape& t, Node& self) {
                const Mat& p = t.value(probs);
                Mat d = Mat::Zero(p.rows(), p.cols());
                for (size_t i = 0; i < targets.size(); ++i) {
                  double pi = p(static_cast<Eigen::Index>(i), targets[i]);
                  if (pi < kProbFloor) continue;  // clamped: locally constant
                  d(static_cast<Eigen::Index>(i), targets[i]) =
                      -weights[i] / (denom * pi) * self.grad(0, 0);
                }
                t.add_grad(probs, d);
              });
}

void Tape::backward(int loss_id) {
  Node& loss = node(loss_id);
  if (loss.val.rows() != 1 || loss.val.cols() != 1) fail("backward: loss must be 1x1");
  if (!loss.needs_grad) fail("backward: loss does not depend on any tracked leaf");
  loss.grad(0, 0) = 1.0;
  for (int i = loss_id; i >= 0; --i) {
    Node& n = node(i);
    if (n.needs_grad && n.back) n.back(*this, n);
  }
  for (Node& n : nodes_) {
    if (n.bound) n.bound->g += n.grad;
  }
}

}  // namespace qgen
