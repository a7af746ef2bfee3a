#include "gapfill/mrnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gapfill/random.hpp"
#include "json_io.hpp"
#include "text.hpp"

namespace gapfill {

namespace {

std::string layer_name(Eigen::Index layer, bool reverse) {
  return "interp.l" + std::to_string(layer) + (reverse ? ".bwd" : ".fwd");
}

struct Views {
  std::vector<nn::GruView> fwd;
  std::vector<nn::GruView> bwd;
  const Eigen::MatrixXd* out_w;
  const Eigen::MatrixXd* out_b;
  const Eigen::MatrixXd* imp_w;
  const Eigen::MatrixXd* imp_b;
};

Views views_of(const MrnnModel& model) {
  Views v;
  for (Eigen::Index l = 0; l < model.dims.layers; ++l) {
    v.fwd.push_back(nn::gru_view(model.params, layer_name(l, false)));
    v.bwd.push_back(nn::gru_view(model.params, layer_name(l, true)));
  }
  v.out_w = &model.params.block("interp.out.W");
  v.out_b = &model.params.block("interp.out.b");
  v.imp_w = &model.params.block("impute.W");
  v.imp_b = &model.params.block("impute.b");
  return v;
}

void check_triplet(const MrnnModel& model, const MaskedTriplet& tri) {
  if (tri.streams() != model.dims.streams) {
    throw ShapeError("triplet has " + std::to_string(tri.streams()) + " streams, model expects " +
                     std::to_string(model.dims.streams));
  }
  if (tri.length() < 1 || tri.m.rows() != tri.z.rows() || tri.m.cols() != tri.z.cols() ||
      tri.delta.rows() != tri.z.rows() || tri.delta.cols() != tri.z.cols()) {
    throw ShapeError("triplet grids disagree in shape");
  }
}

struct StreamTape {
  std::vector<nn::GruTrace> fwd;
  std::vector<nn::GruTrace> bwd;
};

struct Tape {
  std::vector<StreamTape> streams;
  Grid x_tilde;
  Grid x_hat;
};

void forward_pass(const MrnnModel& model, const Views& v, const MaskedTriplet& tri, Tape& tape) {
  check_triplet(model, tri);
  const auto D = tri.streams();
  const auto L = tri.length();
  const auto H = model.dims.hidden;
  const auto layers = model.dims.layers;
  tape.streams.resize(static_cast<std::size_t>(D));
  tape.x_tilde.resize(D, L);
  tape.x_hat.resize(D, L);

  Eigen::MatrixXd input(kMrnnInputWidth, L);
  const auto& out_w = *v.out_w;
  const auto& out_b = *v.out_b;
  for (Eigen::Index d = 0; d < D; ++d) {
    input.row(0) = tri.z.row(d);
    input.row(1) = tri.m.row(d);
    input.row(2) = tri.delta.row(d) * model.delta_scale;
    auto& st = tape.streams[d];
    st.fwd.resize(static_cast<std::size_t>(layers));
    st.bwd.resize(static_cast<std::size_t>(layers));
    for (Eigen::Index l = 0; l < layers; ++l) {
      nn::gru_sequence_forward(v.fwd[l], l == 0 ? input : st.fwd[l - 1].h, false, st.fwd[l]);
      nn::gru_sequence_forward(v.bwd[l], l == 0 ? input : st.bwd[l - 1].h, true, st.bwd[l]);
    }
    const auto& hf = st.fwd.back().h;
    const auto& hb = st.bwd.back().h;
    for (Eigen::Index t = 0; t < L; ++t) {
      double a = out_b(d);
      if (t > 0) {
        for (Eigen::Index i = 0; i < H; ++i) a += out_w(d, i) * hf(i, t - 1);
      }
      if (t + 1 < L) {
        for (Eigen::Index i = 0; i < H; ++i) a += out_w(d, H + i) * hb(i, t + 1);
      }
      tape.x_tilde(d, t) = nn::sigmoid(a);
    }
  }

  const auto& imp_w = *v.imp_w;
  const auto& imp_b = *v.imp_b;
  for (Eigen::Index t = 0; t < L; ++t) {
    for (Eigen::Index d = 0; d < D; ++d) {
      double a = imp_b(d);
      for (Eigen::Index j = 0; j < D; ++j) {
        if (j != d) a += imp_w(d, j) * tri.z(j, t) * tri.m(j, t);
        if (j != d) a += imp_w(d, D + j) * tri.m(j, t);
        a += imp_w(d, 2 * D + j) * tape.x_tilde(j, t);
      }
      tape.x_hat(d, t) = nn::sigmoid(a);
    }
  }
}

void backward_pass(const MrnnModel& model, const Views& v, const MaskedTriplet& tri, const Tape& tape,
                   const Grid& d_x_hat, nn::ParamStore& grad) {
  const auto D = tri.streams();
  const auto L = tri.length();
  const auto H = model.dims.hidden;
  const auto layers = model.dims.layers;

  auto& g_imp_w = grad.block("impute.W");
  auto& g_imp_b = grad.block("impute.b");
  auto& g_out_w = grad.block("interp.out.W");
  auto& g_out_b = grad.block("interp.out.b");
  const auto& imp_w = *v.imp_w;
  const auto& out_w = *v.out_w;

  Grid d_x_tilde = Grid::Zero(D, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    for (Eigen::Index d = 0; d < D; ++d) {
      const double y = tape.x_hat(d, t);
      const double da = d_x_hat(d, t) * y * (1.0 - y);
      if (da == 0.0) continue;
      g_imp_b(d) += da;
      for (Eigen::Index j = 0; j < D; ++j) {
        if (j != d) g_imp_w(d, j) += da * tri.z(j, t) * tri.m(j, t);
        if (j != d) g_imp_w(d, D + j) += da * tri.m(j, t);
        g_imp_w(d, 2 * D + j) += da * tape.x_tilde(j, t);
        d_x_tilde(j, t) += imp_w(d, 2 * D + j) * da;
      }
    }
  }

  std::vector<nn::GruGradView> g_fwd, g_bwd;
  for (Eigen::Index l = 0; l < layers; ++l) {
    g_fwd.push_back(nn::gru_grad_view(grad, layer_name(l, false)));
    g_bwd.push_back(nn::gru_grad_view(grad, layer_name(l, true)));
  }
  Eigen::MatrixXd d_top_f(H, L), d_top_b(H, L), dh, dx;
  for (Eigen::Index d = 0; d < D; ++d) {
    const auto& st = tape.streams[d];
    const auto& hf = st.fwd.back().h;
    const auto& hb = st.bwd.back().h;
    d_top_f.setZero();
    d_top_b.setZero();
    for (Eigen::Index t = 0; t < L; ++t) {
      const double y = tape.x_tilde(d, t);
      const double da = d_x_tilde(d, t) * y * (1.0 - y);
      if (da == 0.0) continue;
      g_out_b(d) += da;
      if (t > 0) {
        for (Eigen::Index i = 0; i < H; ++i) {
          g_out_w(d, i) += da * hf(i, t - 1);
          d_top_f(i, t - 1) += da * out_w(d, i);
        }
      }
      if (t + 1 < L) {
        for (Eigen::Index i = 0; i < H; ++i) {
          g_out_w(d, H + i) += da * hb(i, t + 1);
          d_top_b(i, t + 1) += da * out_w(d, H + i);
        }
      }
    }
    for (int dir = 0; dir < 2; ++dir) {
      const auto& traces = dir == 0 ? st.fwd : st.bwd;
      const auto& cells = dir == 0 ? v.fwd : v.bwd;
      const auto& gviews = dir == 0 ? g_fwd : g_bwd;
      dh = dir == 0 ? d_top_f : d_top_b;
      for (Eigen::Index l = layers - 1; l >= 0; --l) {
        dx.resize(traces[l].input, L);
        nn::gru_sequence_backward(cells[l], traces[l], dh, gviews[l], dx);
        if (l > 0) dh.swap(dx);
      }
    }
  }
}

}  // namespace

nn::ShapePlan MrnnModel::shape_plan(const MrnnDims& dims) {
  if (dims.streams < 1 || dims.hidden < 1 || dims.layers < 1) {
    throw ShapeError("model dims must all be >= 1");
  }
  nn::ShapePlan plan;
  for (Eigen::Index l = 0; l < dims.layers; ++l) {
    const auto input = l == 0 ? kMrnnInputWidth : dims.hidden;
    nn::add_gru_shapes(plan, layer_name(l, false), input, dims.hidden);
    nn::add_gru_shapes(plan, layer_name(l, true), input, dims.hidden);
  }
  plan.push_back({"interp.out.W", dims.streams, 2 * dims.hidden, false});
  plan.push_back({"interp.out.b", dims.streams, 1, true});
  plan.push_back({"impute.W", dims.streams, 3 * dims.streams, false});
  plan.push_back({"impute.b", dims.streams, 1, true});
  return plan;
}

MrnnModel MrnnModel::initialize(const MrnnDims& dims, double delta_scale, std::uint64_t seed) {
  MrnnModel model;
  model.dims = dims;
  model.delta_scale = delta_scale;
  model.params = nn::init_params(shape_plan(dims), seed);
  model.enforce_constraints();
  return model;
}

void MrnnModel::enforce_constraints() {
  auto& w = params.block("impute.W");
  for (Eigen::Index d = 0; d < dims.streams; ++d) {
    w(d, d) = 0.0;
    w(d, dims.streams + d) = 0.0;
  }
  if (!params.all_finite()) throw NumericalError("model parameters are not finite");
}

std::string MrnnModel::to_json_text() const {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["D"] = dims.streams;
  doc["hidden"] = dims.hidden;
  doc["layers"] = dims.layers;
  doc["delta_scale"] = detail::format_double(delta_scale);
  if (norm) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : *norm) arr.push_back({detail::format_double(r.min), detail::format_double(r.max)});
    doc["norm_params"] = std::move(arr);
  } else {
    doc["norm_params"] = nullptr;
  }
  doc["params"] = detail::param_store_to_json(params);
  return doc.dump(1) + "\n";
}

MrnnModel MrnnModel::from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model checkpoint: ") + e.what());
  }
  MrnnModel model;
  try {
    if (doc.at("format_version") != 1) throw SchemaError("model checkpoint: unsupported format_version");
    model.dims = {doc.at("D").get<Eigen::Index>(), doc.at("hidden").get<Eigen::Index>(),
                  doc.at("layers").get<Eigen::Index>()};
    auto number = [](const nlohmann::json& j) {
      auto v = detail::parse_number<double>(j.get<std::string>());
      if (!v || !std::isfinite(*v)) throw SchemaError("model checkpoint: bad number");
      return *v;
    };
    model.delta_scale = number(doc.at("delta_scale"));
    if (!doc.at("norm_params").is_null()) {
      std::vector<StreamRange> ranges;
      for (const auto& r : doc.at("norm_params")) ranges.push_back({number(r.at(0)), number(r.at(1))});
      model.norm = std::move(ranges);
    }
    model.params = detail::param_store_from_json(doc.at("params"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model checkpoint: ") + e.what());
  }
  nn::ParamStore expected = nn::init_params(shape_plan(model.dims), 0);
  if (!expected.same_layout(model.params)) throw SchemaError("model checkpoint: parameter layout mismatch");
  if (model.norm && static_cast<Eigen::Index>(model.norm->size()) != model.dims.streams) {
    throw SchemaError("model checkpoint: norm_params length != D");
  }
  model.enforce_constraints();
  return model;
}

double default_delta_scale(const Cohort& cohort) {
  const auto L = cohort.length();
  if (L < 1) throw PreconditionError("empty cohort grid");
  const auto& ts = cohort.timestamps();
  const double spacing = L > 1 ? static_cast<double>(ts.back() - ts.front()) / static_cast<double>(L - 1) : 1.0;
  return 1.0 / (static_cast<double>(L) * spacing);
}

Grid interpolate_block(const MrnnModel& model, const MaskedTriplet& triplet) {
  Tape tape;
  forward_pass(model, views_of(model), triplet, tape);
  return tape.x_tilde;
}

Eigen::VectorXd impute_block(const MrnnModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_t,
                             const Eigen::Ref<const Eigen::VectorXd>& m_t,
                             const Eigen::Ref<const Eigen::VectorXd>& x_tilde_t) {
  const auto D = model.dims.streams;
  if (z_t.size() != D || m_t.size() != D || x_tilde_t.size() != D) throw ShapeError("impute_block: vector length != D");
  const auto& w = model.params.block("impute.W");
  const auto& b = model.params.block("impute.b");
  Eigen::VectorXd out(D);
  for (Eigen::Index d = 0; d < D; ++d) {
    double a = b(d);
    for (Eigen::Index j = 0; j < D; ++j) {
      if (j != d) a += w(d, j) * z_t(j) * m_t(j);
      if (j != d) a += w(d, D + j) * m_t(j);
      a += w(d, 2 * D + j) * x_tilde_t(j);
    }
    out(d) = nn::sigmoid(a);
  }
  return out;
}

Grid mrnn_forward(const MrnnModel& model, const MaskedTriplet& triplet) {
  Tape tape;
  forward_pass(model, views_of(model), triplet, tape);
  return tape.x_hat;
}

double segment_loss(const MrnnModel& model, const MaskedTriplet& tri, nn::ParamStore* grad) {
  const double observed = tri.m.sum();
  if (observed == 0.0) {
    check_triplet(model, tri);
    return 0.0;
  }
  const Views v = views_of(model);
  Tape tape;
  forward_pass(model, v, tri, tape);
  const Grid diff = (tape.x_hat - tri.z).cwiseProduct(tri.m);
  const double loss = diff.squaredNorm() / observed;
  if (grad != nullptr) {
    const Grid d_x_hat = diff * (2.0 / observed);
    backward_pass(model, v, tri, tape, d_x_hat, *grad);
  }
  return loss;
}

double total_loss(const MrnnModel& model, std::span<const MaskedTriplet> triplets, nn::ParamStore* grad) {
  double sum = 0.0;
  for (const auto& tri : triplets) sum += segment_loss(model, tri, grad);
  return sum;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  MrnnModel::shape_plan(dims);
}

std::vector<MaskedTriplet> build_triplets(const Cohort& cohort) {
  std::vector<MaskedTriplet> out;
  out.reserve(cohort.size());
  for (const auto& s : cohort.segments) out.push_back(build_triplet(s));
  return out;
}

TrainResult train(const Cohort& cohort, const TrainConfig& config) {
  config.validate();
  if (!cohort.norm) throw PreconditionError("train expects a normalized cohort");
  if (cohort.streams() != config.dims.streams) throw ShapeError("cohort stream count differs from model dims");
  const auto triplets = build_triplets(cohort);

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    if (triplets[i].m.sum() > 0.0) usable.push_back(i);
  }
  if (usable.empty()) throw UntrainableError("no segment has an observed entry");

  Rng split_rng(derive_seed(config.seed, "split"));
  std::shuffle(usable.begin(), usable.end(), split_rng);
  std::vector<MaskedTriplet> train_set, val_set;
  std::size_t n_val = 0;
  if (usable.size() >= 2) {
    n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(usable.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, usable.size() - 1);
  }
  for (std::size_t k = 0; k < usable.size(); ++k) {
    (k < n_val ? val_set : train_set).push_back(triplets[usable[k]]);
  }

  TrainResult result;
  result.model = MrnnModel::initialize(config.dims, default_delta_scale(cohort), derive_seed(config.seed, "init"));
  result.model.norm = cohort.norm;
  auto& model = result.model;
  result.initial_train_loss = total_loss(model, train_set, nullptr);
  const double initial_monitor = val_set.empty() ? result.initial_train_loss : total_loss(model, val_set, nullptr);

  nn::ParamStore best = model.params;
  double best_loss = initial_monitor;
  int since_best = 0;
  nn::AdamState adam;
  const nn::AdamConfig adam_cfg{config.lr};
  nn::ParamStore grad = model.params.zeros_like();
  Rng order_rng(derive_seed(config.seed, "order"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochStats stats;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) batch_loss += segment_loss(model, train_set[order[k]], &grad);
      if (!std::isfinite(batch_loss) || !grad.all_finite()) throw DivergenceError(epoch, "non-finite training loss");
      stats.train_loss += batch_loss;
      const Eigen::VectorXd g = grad.flatten();
      stats.grad_norm += g.norm();
      Eigen::VectorXd theta = model.params.flatten();
      nn::adam_step<double>(theta, g, adam, adam_cfg);
      model.params.unflatten(theta);
      try {
        model.enforce_constraints();
      } catch (const NumericalError&) {
        throw DivergenceError(epoch, "parameters became non-finite");
      }
      ++steps;
    }
    if (steps > 0) stats.grad_norm /= static_cast<double>(steps);
    stats.validation_loss = val_set.empty() ? total_loss(model, train_set, nullptr) : total_loss(model, val_set, nullptr);
    if (!std::isfinite(stats.validation_loss)) throw DivergenceError(epoch, "non-finite validation loss");
    result.trace.push_back(stats);
    if (stats.validation_loss < best_loss) {
      best_loss = stats.validation_loss;
      best = model.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.params = best;
  return result;
}

Cohort impute(const MrnnModel& model, const Cohort& cohort) {
  if (cohort.streams() != model.dims.streams) throw ShapeError("cohort stream count differs from model dims");
  Cohort out = cohort;
  const Views v = views_of(model);
  Tape tape;
  for (auto& s : out.segments) {
    if (s.fully_observed()) continue;
    forward_pass(model, v, build_triplet(s), tape);
    for (Eigen::Index d = 0; d < s.streams(); ++d) {
      for (Eigen::Index t = 0; t < s.length(); ++t) {
        if (s.observed(d, t)) continue;
        s.values(d, t) = tape.x_hat(d, t);
        s.observed(d, t) = true;
      }
    }
  }
  return out;
}

}  // namespace gapfill
