#include "gapfill/nncore.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include "gapfill/random.hpp"
#include "json_io.hpp"
#include "text.hpp"

namespace gapfill::nn {

// ---------------------------------------------------------------------------
// ParamStore

Eigen::MatrixXd& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (contains(name)) throw ShapeError("duplicate parameter block '" + name + "'");
  if (rows < 0 || cols < 0) throw ShapeError("negative block shape for '" + name + "'");
  index_.emplace(name, blocks_.size());
  blocks_.emplace_back(name, Eigen::MatrixXd::Zero(rows, cols));
  return blocks_.back().second;
}

Eigen::MatrixXd& ParamStore::block(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter block '" + name + "'");
  return blocks_[it->second].second;
}

const Eigen::MatrixXd& ParamStore::block(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter block '" + name + "'");
  return blocks_[it->second].second;
}

Eigen::Index ParamStore::size() const {
  Eigen::Index n = 0;
  for (const auto& [_, m] : blocks_) n += m.size();
  return n;
}

Eigen::VectorXd ParamStore::flatten() const {
  Eigen::VectorXd flat(size());
  Eigen::Index at = 0;
  for (const auto& [_, m] : blocks_) {
    flat.segment(at, m.size()) = m.reshaped();
    at += m.size();
  }
  return flat;
}

void ParamStore::unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (flat.size() != size()) throw ShapeError("unflatten: length mismatch");
  Eigen::Index at = 0;
  for (auto& [_, m] : blocks_) {
    m.reshaped() = flat.segment(at, m.size());
    at += m.size();
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out = *this;
  out.set_zero();
  return out;
}

void ParamStore::set_zero() {
  for (auto& [_, m] : blocks_) m.setZero();
}

ParamStore& ParamStore::operator+=(const ParamStore& other) {
  if (!same_layout(other)) throw ShapeError("ParamStore += with different layout");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].second += other.blocks_[i].second;
  return *this;
}

bool ParamStore::all_finite() const {
  for (const auto& [_, m] : blocks_) {
    if (!m.allFinite()) return false;
  }
  return true;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.first != b.first || a.second.rows() != b.second.rows() || a.second.cols() != b.second.cols()) {
      return false;
    }
  }
  return true;
}

std::string ParamStore::to_json_text() const {
  return detail::param_store_to_json(*this).dump(1);
}

ParamStore ParamStore::from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("parameter JSON: ") + e.what());
  }
  return detail::param_store_from_json(doc);
}

ParamStore init_params(const ShapePlan& plan, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  for (const auto& s : plan) {
    auto& m = store.add(s.name, s.rows, s.cols);
    if (s.bias) continue;
    std::uniform_real_distribution<double> dist(-glorot_bound(s.rows, s.cols), glorot_bound(s.rows, s.cols));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// GRU

void add_gru_shapes(ShapePlan& plan, const std::string& prefix, Eigen::Index input, Eigen::Index hidden) {
  for (const char* g : {"Wz", "Wr", "Wh"}) plan.push_back({prefix + "." + g, hidden, input, false});
  for (const char* g : {"Uz", "Ur", "Uh"}) plan.push_back({prefix + "." + g, hidden, hidden, false});
  for (const char* g : {"bz", "br", "bh"}) plan.push_back({prefix + "." + g, hidden, 1, true});
}

namespace {

template <typename Store, typename View>
View make_view(Store& s, const std::string& p) {
  View v{&s.block(p + ".Wz"), &s.block(p + ".Wr"), &s.block(p + ".Wh"), &s.block(p + ".Uz"), &s.block(p + ".Ur"),
         &s.block(p + ".Uh"), &s.block(p + ".bz"), &s.block(p + ".br"), &s.block(p + ".bh")};
  const auto H = v.Wz->rows();
  const auto I = v.Wz->cols();
  for (auto* w : {v.Wr, v.Wh}) {
    if (w->rows() != H || w->cols() != I) throw ShapeError("GRU '" + p + "': input weights disagree");
  }
  for (auto* u : {v.Uz, v.Ur, v.Uh}) {
    if (u->rows() != H || u->cols() != H) throw ShapeError("GRU '" + p + "': recurrent weights not square");
  }
  for (auto* b : {v.bz, v.br, v.bh}) {
    if (b->rows() != H || b->cols() != 1) throw ShapeError("GRU '" + p + "': bias shape");
  }
  return v;
}

// Weights copied into one contiguous buffer so the step kernels read plain
// arrays. HS and IS are compile-time sizes when positive, letting the compiler
// unroll the common hidden-2 cells; 0 means "use the runtime size".
struct PackedGru {
  Eigen::Index H = 0;
  Eigen::Index I = 0;
  std::vector<double> buf;
  const double* W[3];  // z, r, h gates; row-major H x I
  const double* U[3];  // row-major H x H
  const double* b[3];

  explicit PackedGru(const GruView& g) : H(g.hidden()), I(g.input()) {
    buf.reserve(static_cast<std::size_t>(3 * H * I + 3 * H * H + 3 * H));
    const Eigen::MatrixXd* ws[3] = {g.Wz, g.Wr, g.Wh};
    const Eigen::MatrixXd* us[3] = {g.Uz, g.Ur, g.Uh};
    const Eigen::MatrixXd* bs[3] = {g.bz, g.br, g.bh};
    std::size_t off[9];
    for (int k = 0; k < 3; ++k) {
      off[k] = buf.size();
      for (Eigen::Index i = 0; i < H; ++i)
        for (Eigen::Index j = 0; j < I; ++j) buf.push_back((*ws[k])(i, j));
    }
    for (int k = 0; k < 3; ++k) {
      off[3 + k] = buf.size();
      for (Eigen::Index i = 0; i < H; ++i)
        for (Eigen::Index j = 0; j < H; ++j) buf.push_back((*us[k])(i, j));
    }
    for (int k = 0; k < 3; ++k) {
      off[6 + k] = buf.size();
      for (Eigen::Index i = 0; i < H; ++i) buf.push_back((*bs[k])(i));
    }
    for (int k = 0; k < 3; ++k) {
      W[k] = buf.data() + off[k];
      U[k] = buf.data() + off[3 + k];
      b[k] = buf.data() + off[6 + k];
    }
  }
};

template <int HS, int IS>
void step_forward(const PackedGru& g, const double* x, const double* hp, double* z, double* r, double* hc,
                  double* h) {
  const Eigen::Index H = HS > 0 ? HS : g.H;
  const Eigen::Index I = IS > 0 ? IS : g.I;
  for (Eigen::Index i = 0; i < H; ++i) {
    double az = g.b[0][i];
    double ar = g.b[1][i];
    for (Eigen::Index j = 0; j < I; ++j) {
      az += g.W[0][i * I + j] * x[j];
      ar += g.W[1][i * I + j] * x[j];
    }
    for (Eigen::Index k = 0; k < H; ++k) {
      az += g.U[0][i * H + k] * hp[k];
      ar += g.U[1][i * H + k] * hp[k];
    }
    z[i] = sigmoid(az);
    r[i] = sigmoid(ar);
  }
  for (Eigen::Index i = 0; i < H; ++i) {
    double ah = g.b[2][i];
    for (Eigen::Index j = 0; j < I; ++j) ah += g.W[2][i * I + j] * x[j];
    for (Eigen::Index k = 0; k < H; ++k) ah += g.U[2][i * H + k] * (r[k] * hp[k]);
    hc[i] = std::tanh(ah);
    h[i] = (1.0 - z[i]) * hp[i] + z[i] * hc[i];
  }
}

template <int HS, int IS>
void sequence_forward(const PackedGru& g, GruTrace& trace) {
  const auto L = trace.length;
  const bool reverse = trace.reverse;
  const double zero[8] = {};
  std::vector<double> zeros;
  const double* z0 = zero;
  if (g.H > 8) {
    zeros.assign(static_cast<std::size_t>(g.H), 0.0);
    z0 = zeros.data();
  }
  for (Eigen::Index k = 0; k < L; ++k) {
    const Eigen::Index t = reverse ? L - 1 - k : k;
    const double* hp = k == 0 ? z0 : trace.h.col(reverse ? t + 1 : t - 1).data();
    step_forward<HS, IS>(g, trace.x.col(t).data(), hp, trace.z.col(t).data(), trace.r.col(t).data(),
                         trace.hc.col(t).data(), trace.h.col(t).data());
  }
}

template <int HS, int IS>
void sequence_backward(const PackedGru& g, const GruTrace& trace, const Eigen::Ref<const Eigen::MatrixXd>& dh,
                       const GruGradView& grad, Eigen::Ref<Eigen::MatrixXd> dx) {
  const Eigen::Index H = HS > 0 ? HS : g.H;
  const Eigen::Index I = IS > 0 ? IS : g.I;
  const auto L = trace.length;
  // Local gradient accumulators, same packing as the weights.
  std::vector<double> acc(g.buf.size(), 0.0);
  double* gW[3] = {acc.data() + (g.W[0] - g.buf.data()), acc.data() + (g.W[1] - g.buf.data()),
                   acc.data() + (g.W[2] - g.buf.data())};
  double* gU[3] = {acc.data() + (g.U[0] - g.buf.data()), acc.data() + (g.U[1] - g.buf.data()),
                   acc.data() + (g.U[2] - g.buf.data())};
  double* gb[3] = {acc.data() + (g.b[0] - g.buf.data()), acc.data() + (g.b[1] - g.buf.data()),
                   acc.data() + (g.b[2] - g.buf.data())};
  std::vector<double> work(static_cast<std::size_t>(8 * H), 0.0);
  double* carry = work.data();  // dLoss/dh_t flowing back from later steps
  double* dhp = carry + H;
  double* daz = dhp + H;
  double* dar = daz + H;
  double* dah = dar + H;
  double* drhp = dah + H;
  double* rhp = drhp + H;
  const double* zero = rhp + H;
  for (Eigen::Index k = L - 1; k >= 0; --k) {
    const Eigen::Index t = trace.reverse ? L - 1 - k : k;
    const double* hp = k == 0 ? zero : trace.h.col(trace.reverse ? t + 1 : t - 1).data();
    const double* x = trace.x.col(t).data();
    const double* z = trace.z.col(t).data();
    const double* r = trace.r.col(t).data();
    const double* hc = trace.hc.col(t).data();
    for (Eigen::Index i = 0; i < H; ++i) {
      const double dht = carry[i] + dh(i, t);
      dah[i] = dht * z[i] * (1.0 - hc[i] * hc[i]);
      daz[i] = dht * (hc[i] - hp[i]) * z[i] * (1.0 - z[i]);
      dhp[i] = dht * (1.0 - z[i]);
      rhp[i] = r[i] * hp[i];
    }
    for (Eigen::Index k2 = 0; k2 < H; ++k2) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < H; ++i) s += g.U[2][i * H + k2] * dah[i];
      drhp[k2] = s;
    }
    for (Eigen::Index i = 0; i < H; ++i) {
      dar[i] = drhp[i] * hp[i] * r[i] * (1.0 - r[i]);
      dhp[i] += drhp[i] * r[i];
    }
    double* xcol = dx.col(t).data();
    for (Eigen::Index j = 0; j < I; ++j) xcol[j] = 0.0;
    for (Eigen::Index i = 0; i < H; ++i) {
      gb[0][i] += daz[i];
      gb[1][i] += dar[i];
      gb[2][i] += dah[i];
      for (Eigen::Index j = 0; j < I; ++j) {
        gW[0][i * I + j] += daz[i] * x[j];
        gW[1][i * I + j] += dar[i] * x[j];
        gW[2][i * I + j] += dah[i] * x[j];
        xcol[j] += g.W[0][i * I + j] * daz[i] + g.W[1][i * I + j] * dar[i] + g.W[2][i * I + j] * dah[i];
      }
      for (Eigen::Index k2 = 0; k2 < H; ++k2) {
        gU[0][i * H + k2] += daz[i] * hp[k2];
        gU[1][i * H + k2] += dar[i] * hp[k2];
        gU[2][i * H + k2] += dah[i] * rhp[k2];
        dhp[k2] += g.U[0][i * H + k2] * daz[i] + g.U[1][i * H + k2] * dar[i];
      }
    }
    std::copy(dhp, dhp + H, carry);
  }
  Eigen::MatrixXd* ws[3] = {grad.Wz, grad.Wr, grad.Wh};
  Eigen::MatrixXd* us[3] = {grad.Uz, grad.Ur, grad.Uh};
  Eigen::MatrixXd* bs[3] = {grad.bz, grad.br, grad.bh};
  for (int q = 0; q < 3; ++q) {
    for (Eigen::Index i = 0; i < H; ++i) {
      for (Eigen::Index j = 0; j < I; ++j) (*ws[q])(i, j) += gW[q][i * I + j];
      for (Eigen::Index j = 0; j < H; ++j) (*us[q])(i, j) += gU[q][i * H + j];
      (*bs[q])(i) += gb[q][i];
    }
  }
}

}  // namespace

GruView gru_view(const ParamStore& store, const std::string& prefix) {
  return make_view<const ParamStore, GruView>(store, prefix);
}

GruGradView gru_grad_view(ParamStore& store, const std::string& prefix) {
  return make_view<ParamStore, GruGradView>(store, prefix);
}

Eigen::VectorXd gru_cell(const GruView& cell, const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& h_prev) {
  const auto H = cell.hidden();
  if (x.size() != cell.input() || h_prev.size() != H) throw ShapeError("gru_cell: input or state size mismatch");
  const PackedGru g(cell);
  Eigen::VectorXd xv = x;
  Eigen::VectorXd hp = h_prev;
  Eigen::VectorXd z(H), r(H), hc(H), h(H);
  step_forward<0, 0>(g, xv.data(), hp.data(), z.data(), r.data(), hc.data(), h.data());
  return h;
}

void gru_sequence_forward(const GruView& cell, const Eigen::Ref<const Eigen::MatrixXd>& inputs, bool reverse,
                          GruTrace& trace) {
  if (inputs.rows() != cell.input()) throw ShapeError("gru_sequence_forward: input rows != cell input size");
  const auto H = cell.hidden();
  const auto L = inputs.cols();
  trace.input = cell.input();
  trace.hidden = H;
  trace.length = L;
  trace.reverse = reverse;
  trace.x = inputs;
  trace.h.resize(H, L);
  trace.z.resize(H, L);
  trace.r.resize(H, L);
  trace.hc.resize(H, L);
  const PackedGru g(cell);
  if (H == 2 && trace.input == 3) {
    sequence_forward<2, 3>(g, trace);
  } else if (H == 2 && trace.input == 2) {
    sequence_forward<2, 2>(g, trace);
  } else {
    sequence_forward<0, 0>(g, trace);
  }
}

void gru_sequence_backward(const GruView& cell, const GruTrace& trace, const Eigen::Ref<const Eigen::MatrixXd>& dh,
                           const GruGradView& grad, Eigen::Ref<Eigen::MatrixXd> dx) {
  const auto H = trace.hidden;
  const auto I = trace.input;
  const auto L = trace.length;
  if (cell.hidden() != H || cell.input() != I || grad.hidden() != H || grad.input() != I) {
    throw ShapeError("gru_sequence_backward: trace does not match cell");
  }
  if (dh.rows() != H || dh.cols() != L || dx.rows() != I || dx.cols() != L) {
    throw ShapeError("gru_sequence_backward: gradient grid shape");
  }
  const PackedGru g(cell);
  if (H == 2 && I == 3) {
    sequence_backward<2, 3>(g, trace, dh, grad, dx);
  } else if (H == 2 && I == 2) {
    sequence_backward<2, 2>(g, trace, dh, grad, dx);
  } else {
    sequence_backward<0, 0>(g, trace, dh, grad, dx);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckResult grad_check(const LossFn& loss, const ParamStore& params, double h) {
  ParamStore analytic = params.zeros_like();
  const double f0 = loss(params, &analytic);
  if (!std::isfinite(f0)) throw NumericalError("grad_check: loss is not finite at params");
  GradCheckResult result;
  ParamStore probe = params;
  for (std::size_t b = 0; b < probe.block_count(); ++b) {
    auto& m = probe.block(b);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double fp = loss(probe, nullptr);
      m.data()[i] = saved - h;
      const double fm = loss(probe, nullptr);
      m.data()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericalError("grad_check: non-finite loss probing '" + probe.name(b) + "'");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.block(b).data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.coordinates;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        if (rel >= result.max_rel_error) {
          result.worst_block = probe.name(b);
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace gapfill::nn

namespace gapfill::detail {

nlohmann::ordered_json param_store_to_json(const nn::ParamStore& store) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  auto blocks = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < store.block_count(); ++b) {
    const auto& m = store.block(b);
    nlohmann::ordered_json entry;
    entry["name"] = store.name(b);
    entry["shape"] = {m.rows(), m.cols()};
    auto values = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) values.push_back(format_double(m(i, j)));
    }
    entry["values"] = std::move(values);
    blocks.push_back(std::move(entry));
  }
  doc["blocks"] = std::move(blocks);
  return doc;
}

nn::ParamStore param_store_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("format_version") || doc["format_version"] != 1) {
    throw SchemaError("parameter JSON: unsupported format_version");
  }
  nn::ParamStore store;
  try {
    for (const auto& b : doc.at("blocks")) {
      const auto name = b.at("name").get<std::string>();
      const auto rows = b.at("shape").at(0).get<Eigen::Index>();
      const auto cols = b.at("shape").at(1).get<Eigen::Index>();
      auto& m = store.add(name, rows, cols);
      const auto& values = b.at("values");
      if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
        throw SchemaError("parameter JSON: block '" + name + "' has wrong value count");
      }
      std::size_t k = 0;
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
          const auto text = values[k++].get<std::string>();
          auto v = parse_number<double>(text);
          if (!v || !std::isfinite(*v)) throw SchemaError("parameter JSON: bad value '" + text + "'");
          m(i, j) = *v;
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("parameter JSON: ") + e.what());
  }
  return store;
}

}  // namespace gapfill::detail
