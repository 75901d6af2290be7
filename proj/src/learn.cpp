#include "evplab/learn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "evplab/common.hpp"
#include "json.hpp"

namespace evplab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// curves

const char* to_string(CurveForm form) {
  switch (form) {
    case CurveForm::Linear: return "linear";
    case CurveForm::Quadratic: return "quadratic";
    case CurveForm::PositiveExponential: return "positive_exponential";
    case CurveForm::NegativeExponential: return "negative_exponential";
    case CurveForm::Sigmoid: return "sigmoid";
  }
  return "?";
}

CurveForm curve_from_string(const std::string& name) {
  for (CurveForm f : kAllCurves) {
    if (name == to_string(f)) return f;
  }
  throw DataError("unknown curve form: " + name);
}

double curve_value(CurveForm form, double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    throw std::invalid_argument("curve_value: u outside [0,1]");
  }
  switch (form) {
    case CurveForm::Linear:
      return u;
    case CurveForm::Quadratic:
      return u * u;
    case CurveForm::PositiveExponential:
      return (std::exp(3.0 * u) - 1.0) / (std::exp(3.0) - 1.0);
    case CurveForm::NegativeExponential:
      return (1.0 - std::exp(-3.0 * u)) / (1.0 - std::exp(-3.0));
    case CurveForm::Sigmoid: {
      auto s = [](double v) { return 1.0 / (1.0 + std::exp(-10.0 * (v - 0.5))); };
      return (s(u) - s(0.0)) / (s(1.0) - s(0.0));
    }
  }
  return u;
}

std::vector<std::pair<long, double>> build_labels(long entry_s, long call_s, bool needed,
                                                  const SoftLabelParams& params) {
  if (call_s <= entry_s) throw DataError("build_labels: call second not after entry");
  std::vector<std::pair<long, double>> out;
  out.reserve(call_s - entry_s + 1);
  const double span = static_cast<double>(call_s - entry_s);
  const double top = needed ? 1.0 : params.no_pr_thres;
  for (long t = entry_s; t <= call_s; ++t) {
    double u = static_cast<double>(t - entry_s) / span;
    out.emplace_back(t, top * curve_value(params.curve, u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// feature vectors

void build_feature_vector(double tau_s, double distance_ft, std::span<const std::uint8_t> occ_hist,
                          std::span<const std::uint8_t> color_hist,
                          std::span<const std::uint8_t> preempt_hist, std::span<double> out) {
  if (occ_hist.size() != kHistorySeconds || color_hist.size() != kHistorySeconds ||
      preempt_hist.size() != kHistorySeconds || out.size() != kFeatureCount) {
    throw DataError("build_feature_vector: bad window length");
  }
  out[0] = tau_s;
  out[1] = distance_ft;
  double* d = out.data() + 2;
  for (int k = 0; k < kHistorySeconds; ++k) d[k] = static_cast<double>(occ_hist[k]);
  double* s = d + kHistorySeconds;
  std::memset(s, 0, sizeof(double) * 3 * kHistorySeconds);
  for (int k = 0; k < kHistorySeconds; ++k) {
    // one-hot triple per second, order red/green/yellow
    s[3 * k + color_hist[k]] = 1.0;
  }
  double* p = s + 3 * kHistorySeconds;
  for (int k = 0; k < kHistorySeconds; ++k) p[k] = static_cast<double>(preempt_hist[k]);
}

RunSeries build_run_series(const RunResult& run, const NetworkSpec& net) {
  RunSeries rs;
  const int n = static_cast<int>(net.size());
  long end = 0;
  for (const Event& e : run.events) end = std::max(end, static_cast<long>(e.t));
  rs.end_s = end;
  rs.occ.assign(n, std::vector<std::uint8_t>(end + 1, 0));
  rs.color.assign(n, std::vector<std::uint8_t>(end + 1, static_cast<std::uint8_t>(Color::Red)));
  rs.preempt.assign(n, std::vector<std::uint8_t>(end + 1, 0));
  rs.erv_pos_at.assign(end + 1, -1.0);
  rs.call_s.assign(n, -1);
  rs.checkin_s.assign(n, -1);
  rs.stopbar_s.assign(n, -1.0);
  rs.entry_s = run.erv_entry_s >= 0 ? std::lround(run.erv_entry_s) : -1;

  struct ColorChange {
    long t;
    std::uint8_t color;
  };
  std::vector<std::vector<ColorChange>> changes(n);
  std::vector<std::vector<std::pair<long, long>>> preempt_spans(n);  // (call, release)

  for (const Event& e : run.events) {
    switch (e.kind) {
      case EventKind::Detector:
        if (e.intersection >= 0 && e.intersection < n) {
          rs.occ[e.intersection][static_cast<long>(e.t)] = static_cast<std::uint8_t>(e.a);
        }
        break;
      case EventKind::Signal:
        if (e.a == 0 && e.intersection >= 0 && e.intersection < n) {
          changes[e.intersection].push_back(
              {static_cast<long>(e.t), static_cast<std::uint8_t>(e.b)});
        }
        break;
      case EventKind::Preempt:
        if (e.intersection >= 0 && e.intersection < n) {
          auto& spans = preempt_spans[e.intersection];
          if (e.a == 1) {
            spans.push_back({static_cast<long>(e.t), -1});
            if (rs.call_s[e.intersection] < 0) rs.call_s[e.intersection] = static_cast<long>(e.t);
          } else if (!spans.empty()) {
            spans.back().second = static_cast<long>(e.t);
          }
        }
        break;
      case EventKind::Erv:
        if (e.a == 2 && e.intersection >= 0) rs.checkin_s[e.intersection] = static_cast<long>(e.t);
        if (e.a == 3 && e.intersection >= 0) rs.stopbar_s[e.intersection] = e.t;
        break;
      case EventKind::Vehicle:
        break;
    }
  }

  for (int i = 0; i < n; ++i) {
    // color entering second t: the indication served during [t-1, t)
    std::uint8_t cur = static_cast<std::uint8_t>(Color::Red);
    std::size_t k = 0;
    for (long t = 0; t <= end; ++t) {
      while (k < changes[i].size() && changes[i][k].t <= t - 1) cur = changes[i][k++].color;
      rs.color[i][t] = cur;
    }
    // preempt flag entering second t: call fired strictly before t, not yet released
    for (const auto& [call, release] : preempt_spans[i]) {
      long hi = release >= 0 ? release : end + 1;
      for (long t = call + 1; t < hi && t <= end; ++t) rs.preempt[i][t] = 1;
    }
  }

  for (const auto& row : run.erv_trajectory) {
    long t = std::lround(row[0]);
    if (t >= 0 && t <= end) rs.erv_pos_at[t] = row[1];
  }
  return rs;
}

std::vector<double> extract_features(const RunSeries& series, const NetworkSpec& net,
                                     int intersection, long t) {
  if (intersection < 0 || intersection >= static_cast<int>(net.size())) {
    throw DataError("extract_features: unknown intersection");
  }
  if (series.entry_s < 0 || t < series.entry_s) {
    throw DataError("extract_features: t before ERV entry");
  }
  if (t > series.end_s || series.erv_pos_at[t] < 0) {
    throw DataError("extract_features: no ERV position recorded at t");
  }
  std::array<std::uint8_t, kHistorySeconds> occ{}, color{}, preempt{};
  color.fill(static_cast<std::uint8_t>(Color::Red));
  const int up = intersection - 1;
  for (int k = 0; k < kHistorySeconds; ++k) {
    long sec = t - (kHistorySeconds - 1) + k;
    if (sec < 0) continue;
    occ[k] = series.occ[intersection][sec];
    color[k] = series.color[intersection][sec];
    if (up >= 0) preempt[k] = series.preempt[up][sec];
  }
  double d = std::max(0.0, net.intersections[intersection].position_ft - series.erv_pos_at[t]);
  std::vector<double> out(kFeatureCount);
  build_feature_vector(static_cast<double>(t - series.entry_s), d, occ, color, preempt, out);
  return out;
}

// ---------------------------------------------------------------------------
// datasets

Eigen::VectorXd IntersectionData::labels(const SoftLabelParams& params) const {
  Eigen::VectorXd y(rows());
  for (std::size_t r = 0; r < rows(); ++r) {
    const ScenInfo& sc = scenarios[row_scenario[r]];
    double span = static_cast<double>(sc.call_s - sc.entry_s);
    double u = static_cast<double>(row_t[r] - sc.entry_s) / span;
    double top = sc.needed ? 1.0 : params.no_pr_thres;
    y[r] = top * curve_value(params.curve, u);
  }
  return y;
}

std::string IntersectionData::to_csv(const SoftLabelParams& params) const {
  std::string out = "scenario_id,intersection_id,t,tau_s,distance_ft";
  char buf[64];
  for (int k = 0; k < kHistorySeconds; ++k) {
    std::snprintf(buf, sizeof(buf), ",d_%d", k);
    out += buf;
  }
  for (int k = 0; k < 3 * kHistorySeconds; ++k) {
    std::snprintf(buf, sizeof(buf), ",s_%d", k);
    out += buf;
  }
  for (int k = 0; k < kHistorySeconds; ++k) {
    std::snprintf(buf, sizeof(buf), ",p_%d", k);
    out += buf;
  }
  out += ",label\n";

  Eigen::VectorXd y = labels(params);
  for (std::size_t r = 0; r < rows(); ++r) {
    const ScenInfo& sc = scenarios[row_scenario[r]];
    out += std::to_string(sc.scenario_id);
    out += ',';
    out += intersection_id;
    std::snprintf(buf, sizeof(buf), ",%ld", row_t[r]);
    out += buf;
    std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", x(r, 0), x(r, 1));
    out += buf;
    for (int c = 2; c < kFeatureCount; ++c) {
      out += (x(r, c) != 0.0) ? ",1" : ",0";
    }
    std::snprintf(buf, sizeof(buf), ",%.12g\n", y[r]);
    out += buf;
  }
  return out;
}

IntersectionData IntersectionData::from_csv(const std::string& text) {
  IntersectionData data;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    line = std::string_view(text).substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  };
  std::string_view header;
  if (!next_line(header) || header.substr(0, 11) != "scenario_id") {
    throw DataError("dataset csv: missing header");
  }

  std::vector<std::vector<double>> rows_x;
  std::vector<double> labels;
  std::vector<int> scen_ids;
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) continue;
    const char* p = line.data();
    const char* pe = p + line.size();
    auto next_field = [&]() -> std::string_view {
      const char* start = p;
      while (p < pe && *p != ',') ++p;
      std::string_view f(start, static_cast<std::size_t>(p - start));
      if (p < pe) ++p;
      return f;
    };
    int scen = static_cast<int>(std::strtol(std::string(next_field()).c_str(), nullptr, 10));
    std::string xid(next_field());
    long t = std::strtol(std::string(next_field()).c_str(), nullptr, 10);
    std::vector<double> fv(kFeatureCount);
    for (int c = 0; c < kFeatureCount; ++c) {
      fv[c] = std::strtod(std::string(next_field()).c_str(), nullptr);
    }
    double label = std::strtod(std::string(next_field()).c_str(), nullptr);
    if (data.intersection_id.empty()) data.intersection_id = xid;
    rows_x.push_back(std::move(fv));
    labels.push_back(label);
    scen_ids.push_back(scen);
    data.row_t.push_back(t);
  }
  if (rows_x.empty()) throw DataError("dataset csv: no rows");

  data.x.resize(rows_x.size(), kFeatureCount);
  for (std::size_t r = 0; r < rows_x.size(); ++r) {
    for (int c = 0; c < kFeatureCount; ++c) data.x(r, c) = rows_x[r][c];
  }
  // rows are grouped by scenario; recover per-scenario structure
  data.row_scenario.resize(rows_x.size());
  for (std::size_t r = 0; r < rows_x.size(); ++r) {
    if (data.scenarios.empty() || data.scenarios.back().scenario_id != scen_ids[r]) {
      ScenInfo sc;
      sc.scenario_id = scen_ids[r];
      sc.entry_s = data.row_t[r];
      sc.row_begin = static_cast<int>(r);
      data.scenarios.push_back(sc);
    }
    ScenInfo& sc = data.scenarios.back();
    sc.call_s = data.row_t[r];
    sc.row_end = static_cast<int>(r + 1);
    sc.needed = labels[r] >= 1.0 - 1e-9;
    data.row_scenario[r] = static_cast<int>(data.scenarios.size() - 1);
  }
  return data;
}

// ---------------------------------------------------------------------------
// models

double MlpModel::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Eigen::VectorXd z = weights[k] * a + biases[k];
    if (k + 1 < weights.size()) a = z.array().tanh();
    else a = z;
  }
  return a[0];
}

Eigen::VectorXd MlpModel::forward_batch(const Eigen::MatrixXd& x_rows) const {
  Eigen::MatrixXd a = x_rows;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    Eigen::MatrixXd z = a * weights[k].transpose();
    z.rowwise() += biases[k].transpose();
    if (k + 1 < weights.size()) a = z.array().tanh();
    else a = z;
  }
  return a.col(0);
}

void Normalization::apply_in_place(Eigen::MatrixXd& x_rows) const {
  x_rows.rowwise() -= mean.transpose();
  x_rows.array().rowwise() /= scale.transpose().array();
}

Normalization fit_normalization(const Eigen::MatrixXd& x_rows) {
  Normalization n;
  n.mean = x_rows.colwise().mean();
  Eigen::MatrixXd centered = x_rows.rowwise() - n.mean.transpose();
  Eigen::VectorXd var = centered.array().square().colwise().mean();
  n.scale = var.array().sqrt();
  for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
    if (n.scale[i] < 1e-9) n.scale[i] = 1.0;
  }
  return n;
}

double TrainedModel::predict(std::span<const double> features) const {
  if (static_cast<Eigen::Index>(features.size()) != norm.mean.size()) {
    throw DataError("predict: feature length mismatch");
  }
  Eigen::VectorXd z(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    z[i] = (features[i] - norm.mean[i]) / norm.scale[i];
  }
  double raw;
  if (std::holds_alternative<LinearModel>(regressor)) {
    const auto& lm = std::get<LinearModel>(regressor);
    raw = lm.b;
    for (Eigen::Index i = 0; i < z.size(); ++i) raw += lm.w[i] * z[i];
  } else {
    raw = std::get<MlpModel>(regressor).forward(z);
  }
  return std::clamp(raw, 0.0, 1.0);
}

Eigen::VectorXd TrainedModel::predict_batch(const Eigen::MatrixXd& raw_rows) const {
  if (raw_rows.cols() != norm.mean.size()) {
    throw DataError("predict_batch: feature length mismatch");
  }
  Eigen::MatrixXd z = raw_rows;
  norm.apply_in_place(z);
  Eigen::VectorXd out;
  if (std::holds_alternative<LinearModel>(regressor)) {
    const auto& lm = std::get<LinearModel>(regressor);
    out = (z * Eigen::Map<const Eigen::VectorXd>(lm.w.data(), lm.w.size())).array() + lm.b;
  } else {
    out = std::get<MlpModel>(regressor).forward_batch(z);
  }
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

TrainedModel make_constant_model(const std::string& intersection_id, double value,
                                 const SoftLabelParams& params) {
  TrainedModel m;
  m.intersection_id = intersection_id;
  LinearModel lm;
  lm.w = Eigen::VectorXd::Zero(kFeatureCount);
  lm.b = value;
  m.regressor = std::move(lm);
  m.params = params;
  m.norm.mean = Eigen::VectorXd::Zero(kFeatureCount);
  m.norm.scale = Eigen::VectorXd::Ones(kFeatureCount);
  m.meta.regressor = "linear";
  m.meta.degenerate = true;
  m.meta.hyper = "constant";
  return m;
}

const TrainedModel* CorridorPolicy::find(const std::string& intersection_id) const {
  for (const auto& m : models) {
    if (m.intersection_id == intersection_id) return &m;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// training

LinearModel fit_ridge(const Eigen::MatrixXd& x_norm, const Eigen::VectorXd& y, double l2) {
  const Eigen::Index d = x_norm.cols();
  double ymean = y.mean();
  Eigen::MatrixXd gram = x_norm.transpose() * x_norm;
  gram.diagonal().array() += l2 + 1e-10;  // tiny jitter keeps l2=0 solvable
  Eigen::VectorXd rhs = x_norm.transpose() * (y.array() - ymean).matrix();
  LinearModel lm;
  lm.w = gram.ldlt().solve(rhs);
  lm.b = ymean;
  lm.l2 = l2;
  (void)d;
  return lm;
}

namespace {

MlpModel init_mlp(const std::vector<int>& layers, std::uint64_t seed) {
  MlpModel m;
  m.layers = layers;
  RandomStream rng(substream_seed(seed, 1234));
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    int in = layers[k], out = layers[k + 1];
    double limit = std::sqrt(6.0 / (in + out));
    Eigen::MatrixXd w(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return m;
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;
};

}  // namespace

MlpFitResult fit_mlp(const Eigen::MatrixXd& x_norm, const Eigen::VectorXd& y,
                     const MlpFitOptions& opts) {
  const Eigen::Index n = x_norm.rows();
  std::vector<int> layers;
  layers.push_back(static_cast<int>(x_norm.cols()));
  for (int h : opts.hidden) layers.push_back(h);
  layers.push_back(1);

  MlpFitResult res;
  res.model = init_mlp(layers, opts.seed);
  MlpModel& m = res.model;
  const std::size_t L = m.weights.size();

  AdamState adam;
  if (opts.adam) {
    for (std::size_t k = 0; k < L; ++k) {
      adam.mw.push_back(Eigen::MatrixXd::Zero(m.weights[k].rows(), m.weights[k].cols()));
      adam.vw.push_back(Eigen::MatrixXd::Zero(m.weights[k].rows(), m.weights[k].cols()));
      adam.mb.push_back(Eigen::VectorXd::Zero(m.biases[k].size()));
      adam.vb.push_back(Eigen::VectorXd::Zero(m.biases[k].size()));
    }
  }
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;

  RandomStream shuffle_rng(substream_seed(opts.seed, 555));
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index batch = opts.batch <= 0 ? n : std::min<Eigen::Index>(opts.batch, n);

  std::vector<Eigen::MatrixXd> acts(L + 1);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (batch < n) {
      for (Eigen::Index i = n - 1; i > 0; --i) {
        Eigen::Index j = static_cast<Eigen::Index>(shuffle_rng.next_u64() % (i + 1));
        std::swap(order[i], order[j]);
      }
    }
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index b = std::min(batch, n - start);
      Eigen::MatrixXd xb(b, x_norm.cols());
      Eigen::VectorXd yb(b);
      for (Eigen::Index r = 0; r < b; ++r) {
        xb.row(r) = x_norm.row(order[start + r]);
        yb[r] = y[order[start + r]];
      }

      // forward
      acts[0] = std::move(xb);
      for (std::size_t k = 0; k < L; ++k) {
        Eigen::MatrixXd z = acts[k] * m.weights[k].transpose();
        z.rowwise() += m.biases[k].transpose();
        acts[k + 1] = (k + 1 < L) ? z.array().tanh().matrix() : std::move(z);
      }

      // backward, MSE loss
      Eigen::MatrixXd delta = (acts[L].col(0) - yb) * (2.0 / static_cast<double>(b));
      for (std::size_t kk = L; kk-- > 0;) {
        Eigen::MatrixXd dw = delta.transpose() * acts[kk];
        Eigen::VectorXd db = delta.colwise().sum();
        if (kk > 0) {
          Eigen::MatrixXd da = delta * m.weights[kk];
          delta = da.array() * (1.0 - acts[kk].array().square());
        }
        if (opts.adam) {
          adam.step += (kk == L - 1) ? 1 : 0;
          double corr1 = 1.0 - std::pow(kB1, static_cast<double>(adam.step));
          double corr2 = 1.0 - std::pow(kB2, static_cast<double>(adam.step));
          adam.mw[kk] = kB1 * adam.mw[kk] + (1 - kB1) * dw;
          adam.vw[kk] = kB2 * adam.vw[kk].array() + (1 - kB2) * dw.array().square();
          adam.mb[kk] = kB1 * adam.mb[kk] + (1 - kB1) * db;
          adam.vb[kk] = kB2 * adam.vb[kk].array() + (1 - kB2) * db.array().square();
          m.weights[kk].array() -=
              opts.lr * (adam.mw[kk].array() / corr1) /
              ((adam.vw[kk].array() / corr2).sqrt() + kEps);
          m.biases[kk].array() -= opts.lr * (adam.mb[kk].array() / corr1) /
                                  ((adam.vb[kk].array() / corr2).sqrt() + kEps);
        } else {
          m.weights[kk] -= opts.lr * dw;
          m.biases[kk] -= opts.lr * db;
        }
      }
    }
    if (opts.track_epoch_mse) {
      Eigen::VectorXd pred = m.forward_batch(x_norm);
      res.epoch_mse.push_back((pred - y).squaredNorm() / static_cast<double>(n));
    }
  }
  return res;
}

double gradient_check(const MlpModel& mlp, const Eigen::VectorXd& x, double y) {
  // analytic gradient of L = (f(x) - y)^2
  const std::size_t L = mlp.weights.size();
  std::vector<Eigen::VectorXd> acts(L + 1);
  acts[0] = x;
  for (std::size_t k = 0; k < L; ++k) {
    Eigen::VectorXd z = mlp.weights[k] * acts[k] + mlp.biases[k];
    acts[k + 1] = (k + 1 < L) ? z.array().tanh().matrix() : z;
  }
  double out = acts[L][0];
  std::vector<Eigen::MatrixXd> gw(L);
  std::vector<Eigen::VectorXd> gb(L);
  Eigen::VectorXd delta(1);
  delta[0] = 2.0 * (out - y);
  for (std::size_t kk = L; kk-- > 0;) {
    gw[kk] = delta * acts[kk].transpose();
    gb[kk] = delta;
    if (kk > 0) {
      Eigen::VectorXd da = mlp.weights[kk].transpose() * delta;
      delta = da.array() * (1.0 - acts[kk].array().square());
    }
  }

  MlpModel probe = mlp;
  const double h = 1e-5;
  auto loss = [&]() {
    double v = probe.forward(x) - y;
    return v * v;
  };
  double max_rel = 0.0;
  auto compare = [&](double analytic, double& param) {
    double saved = param;
    param = saved + h;
    double lp = loss();
    param = saved - h;
    double lm = loss();
    param = saved;
    double fd = (lp - lm) / (2.0 * h);
    double rel = std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic) + std::abs(fd));
    max_rel = std::max(max_rel, rel);
  };
  for (std::size_t k = 0; k < L; ++k) {
    for (Eigen::Index r = 0; r < probe.weights[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < probe.weights[k].cols(); ++c) {
        compare(gw[k](r, c), probe.weights[k](r, c));
      }
    }
    for (Eigen::Index r = 0; r < probe.biases[k].size(); ++r) {
      compare(gb[k][r], probe.biases[k][r]);
    }
  }
  return max_rel;
}

namespace {

struct FoldSplit {
  std::vector<int> scenario_fold;  // fold id per scenario index
  int k = 0;
};

FoldSplit make_folds(std::size_t scenario_count, int k, std::uint64_t seed) {
  FoldSplit fs;
  fs.k = std::max(2, std::min<int>(k, static_cast<int>(scenario_count)));
  std::vector<int> order(scenario_count);
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(substream_seed(seed, 77));
  for (std::size_t i = scenario_count; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  fs.scenario_fold.assign(scenario_count, 0);
  for (std::size_t r = 0; r < scenario_count; ++r) {
    fs.scenario_fold[order[r]] = static_cast<int>(r % fs.k);
  }
  return fs;
}

}  // namespace

TrainedModel train_regressor(const IntersectionData& data, const SoftLabelParams& params,
                             const TrainSpec& spec, int k, std::uint64_t seed) {
  if (data.rows() == 0) throw DataError("train_regressor: empty dataset");
  auto t0 = std::chrono::steady_clock::now();
  Eigen::VectorXd y = data.labels(params);

  TrainedModel model;
  model.intersection_id = data.intersection_id;
  model.params = params;
  model.meta.seed = seed;

  if ((y.maxCoeff() - y.minCoeff()) < 1e-12) {
    model = make_constant_model(data.intersection_id, y[0], params);
    model.meta.seed = seed;
    model.meta.hyper = "constant (degenerate labels)";
    return model;
  }

  const bool do_cv = data.scenarios.size() >= 2;
  FoldSplit folds = do_cv ? make_folds(data.scenarios.size(), k, seed) : FoldSplit{};
  model.meta.folds = do_cv ? folds.k : 0;

  auto fold_rows = [&](int fold, bool train) {
    std::vector<Eigen::Index> idx;
    for (std::size_t r = 0; r < data.rows(); ++r) {
      bool in_fold = folds.scenario_fold[data.row_scenario[r]] == fold;
      if (in_fold != train) idx.push_back(static_cast<Eigen::Index>(r));
    }
    return idx;
  };
  auto gather = [&](const std::vector<Eigen::Index>& idx, Eigen::MatrixXd& xo,
                    Eigen::VectorXd& yo) {
    xo.resize(idx.size(), data.x.cols());
    yo.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      xo.row(r) = data.x.row(idx[r]);
      yo[r] = y[idx[r]];
    }
  };

  if (std::holds_alternative<LinearTrainSpec>(spec)) {
    const auto& ls = std::get<LinearTrainSpec>(spec);
    double best_mse = std::numeric_limits<double>::infinity();
    double best_l2 = ls.l2_grid.front();
    if (do_cv && ls.l2_grid.size() > 1) {
      std::vector<double> mse(ls.l2_grid.size(), 0.0);
      for (int f = 0; f < folds.k; ++f) {
        Eigen::MatrixXd xt, xv;
        Eigen::VectorXd yt, yv;
        gather(fold_rows(f, true), xt, yt);
        gather(fold_rows(f, false), xv, yv);
        if (xt.rows() == 0 || xv.rows() == 0) continue;
        Normalization fn = fit_normalization(xt);
        fn.apply_in_place(xt);
        fn.apply_in_place(xv);
        double ymean = yt.mean();
        Eigen::MatrixXd gram = xt.transpose() * xt;
        Eigen::VectorXd rhs = xt.transpose() * (yt.array() - ymean).matrix();
        for (std::size_t g = 0; g < ls.l2_grid.size(); ++g) {
          Eigen::MatrixXd reg = gram;
          reg.diagonal().array() += ls.l2_grid[g] + 1e-10;
          Eigen::VectorXd w = reg.ldlt().solve(rhs);
          Eigen::VectorXd pred = (xv * w).array() + ymean;
          mse[g] += (pred - yv).squaredNorm() / static_cast<double>(yv.size());
        }
      }
      for (std::size_t g = 0; g < ls.l2_grid.size(); ++g) {
        if (mse[g] < best_mse) {
          best_mse = mse[g];
          best_l2 = ls.l2_grid[g];
        }
      }
      model.meta.cv_mse = best_mse / folds.k;
    } else {
      best_l2 = ls.l2_grid.front();
    }
    Eigen::MatrixXd xn = data.x;
    model.norm = fit_normalization(xn);
    model.norm.apply_in_place(xn);
    LinearModel lm = fit_ridge(xn, y, best_l2);
    Eigen::VectorXd pred = (xn * lm.w).array() + lm.b;
    model.meta.final_mse = (pred - y).squaredNorm() / static_cast<double>(y.size());
    model.meta.regressor = "linear";
    model.meta.hyper = "l2=" + std::to_string(best_l2);
    model.regressor = std::move(lm);
  } else {
    const auto& ms = std::get<MlpTrainSpec>(spec);
    struct Combo {
      std::vector<int> hidden;
      double lr;
    };
    std::vector<Combo> combos;
    for (const auto& h : ms.hidden_grid) {
      for (double lr : ms.lr_grid) combos.push_back({h, lr});
    }
    std::size_t best = 0;
    if (do_cv && combos.size() > 1) {
      std::vector<double> mse(combos.size(), 0.0);
      for (int f = 0; f < folds.k; ++f) {
        Eigen::MatrixXd xt, xv;
        Eigen::VectorXd yt, yv;
        gather(fold_rows(f, true), xt, yt);
        gather(fold_rows(f, false), xv, yv);
        if (xt.rows() == 0 || xv.rows() == 0) continue;
        Normalization fn = fit_normalization(xt);
        fn.apply_in_place(xt);
        fn.apply_in_place(xv);
        for (std::size_t g = 0; g < combos.size(); ++g) {
          MlpFitOptions fo;
          fo.hidden = combos[g].hidden;
          fo.lr = combos[g].lr;
          fo.epochs = ms.epochs;
          fo.batch = ms.batch;
          fo.seed = substream_seed(seed, 1000 + f);
          MlpFitResult fit = fit_mlp(xt, yt, fo);
          Eigen::VectorXd pred = fit.model.forward_batch(xv);
          mse[g] += (pred - yv).squaredNorm() / static_cast<double>(yv.size());
        }
      }
      double best_val = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < combos.size(); ++g) {
        if (mse[g] < best_val) {
          best_val = mse[g];
          best = g;
        }
      }
      model.meta.cv_mse = best_val / folds.k;
    }
    Eigen::MatrixXd xn = data.x;
    model.norm = fit_normalization(xn);
    model.norm.apply_in_place(xn);
    MlpFitOptions fo;
    fo.hidden = combos[best].hidden;
    fo.lr = combos[best].lr;
    fo.epochs = ms.epochs;
    fo.batch = ms.batch;
    fo.seed = seed;
    MlpFitResult fit = fit_mlp(xn, y, fo);
    Eigen::VectorXd pred = fit.model.forward_batch(xn);
    model.meta.final_mse = (pred - y).squaredNorm() / static_cast<double>(y.size());
    model.meta.regressor = "mlp";
    std::string hs = "hidden=";
    for (int h : combos[best].hidden) hs += std::to_string(h) + "-";
    hs += " lr=" + std::to_string(combos[best].lr);
    model.meta.hyper = hs;
    model.regressor = std::move(fit.model);
  }

  model.meta.train_wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return model;
}

// ---------------------------------------------------------------------------
// scoring

ModelScore model_score(double fp_s, double fn_s, double tp_s) {
  if (tp_s <= 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {(0.1 * fp_s + fn_s) / tp_s, false};
}

bool score_prefers(const ModelScore& a, double a_train_s, const ModelScore& b,
                   double b_train_s) {
  if (a.rejected) return false;
  if (b.rejected) return true;
  if (a.value < b.value - 1e-12) return true;
  if (b.value < a.value - 1e-12) return false;
  return a_train_s < b_train_s - 1e-9;
}

long predicted_call_second(const TrainedModel& model, const ValidationSet&,
                           const ValidationSet::Scenario& sc,
                           const Eigen::VectorXd& predictions) {
  for (int r = sc.row_begin; r < sc.row_end; ++r) {
    if (predictions[r] > model.params.cutoff) {
      return sc.entry_s + (r - sc.row_begin);
    }
  }
  return sc.t_default;
}

ConfusionDurations confusion_from_times(double t_pred, double t_ideal, double t_cross) {
  ConfusionDurations cd;
  cd.fp_s = std::max(0.0, t_ideal - t_pred);
  cd.fn_s = std::max(0.0, std::min(t_pred, t_cross) - t_ideal);
  cd.tp_s = std::max(0.0, t_cross - std::max(t_pred, t_ideal));
  return cd;
}

ConfusionDurations confusion_durations(const TrainedModel& model, const ValidationSet& vs) {
  ConfusionDurations cd;
  if (vs.scenarios.empty()) return cd;
  Eigen::VectorXd pred = model.predict_batch(vs.x);
  for (const auto& sc : vs.scenarios) {
    double t_pred = static_cast<double>(predicted_call_second(model, vs, sc, pred));
    ConfusionDurations one =
        confusion_from_times(t_pred, static_cast<double>(sc.t_ideal), sc.t_cross);
    cd.fp_s += one.fp_s;
    cd.fn_s += one.fn_s;
    cd.tp_s += one.tp_s;
  }
  return cd;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json weights_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd weights_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw DataError("model file: bad weight matrix");
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw DataError("model file: ragged weight matrix");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json model_to_json(const TrainedModel& m) {
  json doc;
  doc["version"] = 1;
  doc["intersection_id"] = m.intersection_id;
  doc["params"] = {{"curve", to_string(m.params.curve)},
                   {"cutoff", m.params.cutoff},
                   {"no_pr_thres", m.params.no_pr_thres}};
  doc["normalization"] = {{"mean", vector_to_json(m.norm.mean)},
                          {"scale", vector_to_json(m.norm.scale)}};
  if (std::holds_alternative<LinearModel>(m.regressor)) {
    const auto& lm = std::get<LinearModel>(m.regressor);
    doc["regressor"] = {{"kind", "linear"},
                        {"w", vector_to_json(lm.w)},
                        {"b", lm.b},
                        {"l2", lm.l2}};
  } else {
    const auto& mlp = std::get<MlpModel>(m.regressor);
    json ws = json::array(), bs = json::array();
    for (const auto& w : mlp.weights) ws.push_back(weights_to_json(w));
    for (const auto& b : mlp.biases) bs.push_back(vector_to_json(b));
    doc["regressor"] = {{"kind", "mlp"}, {"layers", mlp.layers}, {"weights", std::move(ws)},
                        {"biases", std::move(bs)}};
  }
  doc["training"] = {{"seed", m.meta.seed},       {"folds", m.meta.folds},
                     {"cv_mse", m.meta.cv_mse},   {"final_mse", m.meta.final_mse},
                     {"train_wall_s", m.meta.train_wall_s},
                     {"degenerate", m.meta.degenerate},
                     {"regressor", m.meta.regressor},
                     {"hyper", m.meta.hyper}};
  return doc;
}

TrainedModel model_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("version")) throw DataError("model file: not a model");
  if (doc["version"].get<int>() != 1) throw DataError("model file: unsupported version");
  TrainedModel m;
  m.intersection_id = doc.at("intersection_id").get<std::string>();
  const json& p = doc.at("params");
  m.params.curve = curve_from_string(p.at("curve").get<std::string>());
  m.params.cutoff = p.at("cutoff").get<double>();
  m.params.no_pr_thres = p.at("no_pr_thres").get<double>();
  m.norm.mean = vector_from_json(doc.at("normalization").at("mean"));
  m.norm.scale = vector_from_json(doc.at("normalization").at("scale"));
  const json& r = doc.at("regressor");
  if (r.at("kind") == "linear") {
    LinearModel lm;
    lm.w = vector_from_json(r.at("w"));
    lm.b = r.at("b").get<double>();
    lm.l2 = r.value("l2", 0.0);
    m.regressor = std::move(lm);
  } else if (r.at("kind") == "mlp") {
    MlpModel mlp;
    mlp.layers = r.at("layers").get<std::vector<int>>();
    for (const auto& w : r.at("weights")) mlp.weights.push_back(weights_from_json(w));
    for (const auto& b : r.at("biases")) mlp.biases.push_back(vector_from_json(b));
    if (mlp.weights.size() != mlp.biases.size() || mlp.weights.empty()) {
      throw DataError("model file: inconsistent mlp arrays");
    }
    m.regressor = std::move(mlp);
  } else {
    throw DataError("model file: unknown regressor kind");
  }
  const json& t = doc.at("training");
  m.meta.seed = t.value("seed", 0ULL);
  m.meta.folds = t.value("folds", 0);
  m.meta.cv_mse = t.value("cv_mse", -1.0);
  m.meta.final_mse = t.value("final_mse", -1.0);
  m.meta.train_wall_s = t.value("train_wall_s", 0.0);
  m.meta.degenerate = t.value("degenerate", false);
  m.meta.regressor = t.value("regressor", "");
  m.meta.hyper = t.value("hyper", "");
  return m;
}

}  // namespace

std::string save_model(const TrainedModel& model) { return model_to_json(model).dump() + "\n"; }

TrainedModel load_model(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model file: invalid JSON: ") + e.what());
  }
  return model_from_json(doc);
}

std::string save_policy(const CorridorPolicy& policy) {
  json doc;
  doc["version"] = 1;
  json ms = json::array();
  for (const auto& m : policy.models) ms.push_back(model_to_json(m));
  doc["models"] = std::move(ms);
  return doc.dump() + "\n";
}

CorridorPolicy load_policy(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("policy file: invalid JSON: ") + e.what());
  }
  if (!doc.contains("models")) throw DataError("policy file: missing models");
  CorridorPolicy cp;
  for (const auto& jm : doc["models"]) cp.models.push_back(model_from_json(jm));
  return cp;
}

}  // namespace evplab
