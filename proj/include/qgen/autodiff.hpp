#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

using Mat = Eigen::MatrixXd;

// probabilities are clamped here before log; keeps targets that the masks
// rule out from producing infinities
inline constexpr double kProbFloor = 1e-12;

// additive logit penalty standing in for -inf on masked entries
inline constexpr double kMaskPenalty = 1e30;

// One trainable tensor with its gradient accumulator and Adam state.
struct Param {
  std::string name;
  Mat w;
  Mat g;
  Mat m;
  Mat v;

  Param(std::string n, int rows, int cols)
      : name(std::move(n)),
        w(Mat::Zero(rows, cols)),
        g(Mat::Zero(rows, cols)),
        m(Mat::Zero(rows, cols)),
        v(Mat::Zero(rows, cols)) {}

  void init_normal(Rng& rng, double stddev);
  size_t count() const { return static_cast<size_t>(w.size()); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied in the step
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  // consumes and zeroes every param's gradient
  void step(const std::vector<Param*>& params);
  long long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
};

// Reverse-mode tape over dense matrices. Build a fresh tape per forward
// pass; backward() accumulates parameter gradients into the bound Params
// and input gradients into the tape nodes.
class Tape {
 public:
  int param(Param& p);
  int input(const Mat& v);     // gradient-tracked leaf (interpolates, priors)
  int constant(const Mat& v);  // no gradient

  int matmul(int a, int b);
  int add(int a, int b);           // same shape
  int add_rowwise(int a, int row); // broadcast a 1xC row over every row of a
  int mul_elem(int a, int b);
  int scale(int a, double s);
  int transpose(int a);
  int relu(int a);
  int sigmoid(int a);
  // softmax per row after adding `additive` (0 on live entries, -kMaskPenalty
  // on masked ones); masked entries come out exactly 0
  int softmax_rows(int a, const Mat& additive);
  int softmax_rows(int a);
  // per-row normalization with learned 1xC gain and bias
  int layernorm_rows(int a, int gain, int bias);
  int mean_rows(int a);  // RxC -> 1xC
  int gather_rows(int table, std::vector<int> ids);
  int vstack(int a, int b);
  int slice_rows(int a, int r0, int nrows);
  // inverted dropout; pass p = 0 for the identity (inference)
  int dropout(int a, double p, Rng& rng);
  int sum(int a);  // 1x1

  // -(1/denom) * sum_t w_t * log(max(probs[t, targets[t]], kProbFloor));
  // rows of `probs` are distributions, one per step
  int weighted_nll(int probs, std::vector<int> targets, std::vector<double> weights,
                   double denom);

  const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  const Mat& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

  // seeds d(loss)=1 at a 1x1 node and sweeps the tape in reverse
  void backward(int loss_id);

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    Param* bound = nullptr;
    std::function<void(Tape&, Node&)> back;  // empty for leaves
  };

  int push(Mat val, bool needs_grad, std::function<void(Tape&, Node&)> back);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  void add_grad(int id, const Mat& g);

  std::vector<Node> nodes_;
};

}  // namespace qgen
