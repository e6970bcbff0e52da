#include "ndoflow/lstm.hpp"

#include <cmath>
#include <memory>

namespace ndoflow::ad {

namespace {

struct LstmCache {
  RowMatrix gates;   // (L*B) x 4H post-activation i, f, g, o
  RowMatrix cells;   // (L*B) x H
  RowMatrix tanh_c;  // (L*B) x H
};

template <typename Block>
void sigmoid_inplace(Block&& b) {
  b = (1.0 + (-b.array()).exp()).inverse().matrix();
}

// tanh(x) = 2 sigmoid(2x) - 1, which vectorises through exp.
template <typename Block>
void tanh_inplace(Block&& b) {
  b = (2.0 * (1.0 + (-2.0 * b.array()).exp()).inverse() - 1.0).matrix();
}

}  // namespace

Var lstm_layer(const Var& x, std::size_t batch, const Var& w_ih, const Var& w_hh, const Var& bias, bool reverse) {
  Tape& tape = x.tape();
  if (w_ih.tape_ptr() != &tape || w_hh.tape_ptr() != &tape || bias.tape_ptr() != &tape) {
    throw Error("lstm_layer: operands live on different tapes");
  }
  const Tensor& xv = x.value();
  const Tensor& wi = w_ih.value();
  const Tensor& wh = w_hh.value();
  const Tensor& bv = bias.value();
  const std::size_t H = wh.rows();
  if (batch == 0 || xv.rows() % batch != 0) throw ShapeError("lstm_layer: rows are not a multiple of the batch");
  if (wi.rows() != xv.cols() || wi.cols() != 4 * H || wh.cols() != 4 * H || bv.rows() != 1 ||
      bv.cols() != 4 * H) {
    throw ShapeError("lstm_layer: x " + to_string(xv.shape()) + ", w_ih " + to_string(wi.shape()) + ", w_hh " +
                     to_string(wh.shape()) + ", bias " + to_string(bv.shape()));
  }
  const std::size_t L = xv.rows() / batch;
  const Eigen::Index B = Eigen::Index(batch), Hi = Eigen::Index(H);

  auto cache = std::make_shared<LstmCache>();
  cache->gates.resize(Eigen::Index(L) * B, 4 * Hi);
  cache->gates.noalias() = xv.matrix() * wi.matrix();
  cache->gates.rowwise() += bv.matrix().row(0);
  cache->cells.resize(Eigen::Index(L) * B, Hi);
  cache->tanh_c.resize(Eigen::Index(L) * B, Hi);

  Tensor out = Tensor::zeros(L * batch, H);
  auto hs = out.matrix();
  RowMatrix pre(B, 4 * Hi);
  for (std::size_t s = 0; s < L; ++s) {
    const Eigen::Index t = Eigen::Index(reverse ? L - 1 - s : s);
    const Eigen::Index prev = reverse ? t + 1 : t - 1;
    auto g = cache->gates.middleRows(t * B, B);
    if (s > 0) g.noalias() += hs.middleRows(prev * B, B) * wh.matrix();
    sigmoid_inplace(g.leftCols(2 * Hi));
    tanh_inplace(g.middleCols(2 * Hi, Hi));
    sigmoid_inplace(g.rightCols(Hi));
    auto c = cache->cells.middleRows(t * B, B);
    c.array() = g.leftCols(Hi).array() * g.middleCols(2 * Hi, Hi).array();
    if (s > 0) c.array() += g.middleCols(Hi, Hi).array() * cache->cells.middleRows(prev * B, B).array();
    auto tc = cache->tanh_c.middleRows(t * B, B);
    tc = c;
    tanh_inplace(tc);
    hs.middleRows(t * B, B).array() = g.rightCols(Hi).array() * tc.array();
  }

  const std::size_t ix = x.id(), iwi = w_ih.id(), iwh = w_hh.id(), ib = bias.id();
  return tape.record(
      "lstm", std::move(out), {ix, iwi, iwh, ib},
      [cache, ix, iwi, iwh, ib, L, B, Hi, reverse](Tape& tp, std::size_t self) {
        const auto dh_out = tp.grad_buffer(self).matrix();
        const auto h_all = tp.value(self).matrix();
        const auto whm = tp.value(iwh).matrix();
        RowMatrix dgates(Eigen::Index(L) * B, 4 * Hi);
        RowMatrix h_prev = RowMatrix::Zero(Eigen::Index(L) * B, Hi);
        RowMatrix dh_next = RowMatrix::Zero(B, Hi);
        RowMatrix dc_next = RowMatrix::Zero(B, Hi);
        Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dh(B, Hi), dc(B, Hi);
        for (std::size_t s = L; s-- > 0;) {
          const Eigen::Index t = Eigen::Index(reverse ? L - 1 - s : s);
          const Eigen::Index prev = reverse ? t + 1 : t - 1;
          const auto gt = cache->gates.middleRows(t * B, B).array();
          const auto ig = gt.leftCols(Hi), fg = gt.middleCols(Hi, Hi), gg = gt.middleCols(2 * Hi, Hi),
                     og = gt.rightCols(Hi);
          const auto tc = cache->tanh_c.middleRows(t * B, B).array();
          dh = dh_out.middleRows(t * B, B).array() + dh_next.array();
          dc = dc_next.array() + dh * og * (1.0 - tc.square());
          auto dg = dgates.middleRows(t * B, B).array();
          dg.leftCols(Hi) = dc * gg * ig * (1.0 - ig);
          if (s > 0) {
            dg.middleCols(Hi, Hi) = dc * cache->cells.middleRows(prev * B, B).array() * fg * (1.0 - fg);
          } else {
            dg.middleCols(Hi, Hi).setZero();
          }
          dg.middleCols(2 * Hi, Hi) = dc * ig * (1.0 - gg.square());
          dg.rightCols(Hi) = dh * tc * og * (1.0 - og);
          dc_next.array() = dc * fg;
          if (s > 0) {
            dh_next.noalias() = dgates.middleRows(t * B, B) * whm.transpose();
            h_prev.middleRows(t * B, B) = h_all.middleRows(prev * B, B);
          }
        }
        if (tp.requires_grad(iwh)) tp.grad_buffer(iwh).matrix().noalias() += h_prev.transpose() * dgates;
        if (tp.requires_grad(iwi)) {
          tp.grad_buffer(iwi).matrix().noalias() += tp.value(ix).matrix().transpose() * dgates;
        }
        if (tp.requires_grad(ib)) tp.grad_buffer(ib).matrix().row(0) += dgates.colwise().sum();
        if (tp.requires_grad(ix)) {
          tp.grad_buffer(ix).matrix().noalias() += dgates * tp.value(iwi).matrix().transpose();
        }
      });
}

}  // namespace ndoflow::ad
