#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evplab/net.hpp"
#include "evplab/sim.hpp"

namespace evplab {

// ---------------------------------------------------------------------------
// soft-label curves

enum class CurveForm : std::uint8_t {
  Linear = 0,
  Quadratic = 1,
  PositiveExponential = 2,
  NegativeExponential = 3,
  Sigmoid = 4,
};
inline constexpr CurveForm kAllCurves[] = {
    CurveForm::Linear, CurveForm::Quadratic, CurveForm::PositiveExponential,
    CurveForm::NegativeExponential, CurveForm::Sigmoid};

const char* to_string(CurveForm form);
CurveForm curve_from_string(const std::string& name);

// Monotone map of progress u in [0,1] onto [0,1] with g(0)=0, g(1)=1.
// Throws std::invalid_argument outside the domain.
double curve_value(CurveForm form, double u);

struct SoftLabelParams {
  CurveForm curve = CurveForm::Linear;
  double cutoff = 0.95;       // predicted score that fires the call
  double no_pr_thres = 0.95;  // label ceiling when no early call is beneficial
};

// Per-second labels from ERV entry through the call second (inclusive).
// needed: labels rise to exactly 1 at call_s; otherwise they rise to
// no_pr_thres at the default (check-in) second. Throws on call_s <= entry_s.
std::vector<std::pair<long, double>> build_labels(long entry_s, long call_s, bool needed,
                                                  const SoftLabelParams& params);

// ---------------------------------------------------------------------------
// feature vectors

inline constexpr int kHistorySeconds = 160;
inline constexpr int kFeatureCount = 2 + kHistorySeconds * 5;  // 802

// layout: [tau_s, distance_ft, occ x160, signal one-hot x480, preempt x160],
// histories oldest-first; one-hot triple order Red/Green/Yellow.
void build_feature_vector(double tau_s, double distance_ft, std::span<const std::uint8_t> occ_hist,
                          std::span<const std::uint8_t> color_hist,
                          std::span<const std::uint8_t> preempt_hist, std::span<double> out);

// Per-second state series reconstructed from a recorded run; the offline twin
// of the live CorridorSeries kept by the scenario engine.
struct RunSeries {
  std::vector<std::vector<std::uint8_t>> occ, color, preempt;  // [intersection][second]
  std::vector<double> erv_pos_at;  // [second]; <0 when the ERV is absent
  long entry_s = -1;
  long end_s = 0;
  std::vector<long> call_s;      // -1 when no call fired
  std::vector<long> checkin_s;   // -1 if never reached
  std::vector<double> stopbar_s; // substep resolution, -1 if never crossed
  int scenario_id = -1;
};

RunSeries build_run_series(const RunResult& run, const NetworkSpec& net);

// Feature vector for one intersection at whole second t. Deterministic
// function of the recorded run. Throws DataError for t before ERV entry or
// an unknown intersection.
std::vector<double> extract_features(const RunSeries& series, const NetworkSpec& net,
                                     int intersection, long t);

// ---------------------------------------------------------------------------
// datasets

// Training rows for one intersection: raw features plus enough per-scenario
// structure to re-derive labels for any soft-label parameter choice.
struct IntersectionData {
  struct ScenInfo {
    int scenario_id = -1;
    long entry_s = 0;
    long call_s = 0;   // label target second (ideal call or default crossing)
    bool needed = false;
    int row_begin = 0, row_end = 0;  // [begin, end)
  };
  std::string intersection_id;
  Eigen::MatrixXd x;  // rows x kFeatureCount, unnormalized
  std::vector<long> row_t;
  std::vector<int> row_scenario;  // index into scenarios
  std::vector<ScenInfo> scenarios;

  std::size_t rows() const { return row_t.size(); }
  Eigen::VectorXd labels(const SoftLabelParams& params) const;
  std::string to_csv(const SoftLabelParams& params) const;
  static IntersectionData from_csv(const std::string& text);
};

// ---------------------------------------------------------------------------
// regressors

struct LinearModel {
  Eigen::VectorXd w;
  double b = 0.0;
  double l2 = 0.0;
};

// tanh hidden layers, linear output
struct MlpModel {
  std::vector<int> layers;  // {in, hidden..., 1}
  std::vector<Eigen::MatrixXd> weights;  // weights[k]: layers[k+1] x layers[k]
  std::vector<Eigen::VectorXd> biases;

  double forward(const Eigen::VectorXd& x) const;
  Eigen::VectorXd forward_batch(const Eigen::MatrixXd& x_rows) const;
};

struct Normalization {
  Eigen::VectorXd mean, scale;
  void apply_in_place(Eigen::MatrixXd& x_rows) const;
};

// fitted on training rows only; zero-variance features get scale 1
Normalization fit_normalization(const Eigen::MatrixXd& x_rows);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int folds = 0;
  double cv_mse = -1.0;
  double final_mse = -1.0;
  double train_wall_s = 0.0;
  bool degenerate = false;
  std::string regressor;  // "linear" | "mlp"
  std::string hyper;      // chosen hyper-parameters, human readable
};

struct TrainedModel {
  std::string intersection_id;
  std::variant<LinearModel, MlpModel> regressor;
  SoftLabelParams params;
  Normalization norm;
  TrainingMeta meta;

  // raw regression output clipped to [0,1]; throws DataError on length mismatch
  double predict(std::span<const double> features) const;
  Eigen::VectorXd predict_batch(const Eigen::MatrixXd& raw_rows) const;
};

// constant-output model (degenerate datasets, fallback baselines, tests)
TrainedModel make_constant_model(const std::string& intersection_id, double value,
                                 const SoftLabelParams& params);

struct CorridorPolicy {
  std::vector<TrainedModel> models;
  const TrainedModel* find(const std::string& intersection_id) const;
};

// ---------------------------------------------------------------------------
// training

struct LinearTrainSpec {
  std::vector<double> l2_grid = {0.0, 0.1, 1.0};
};
struct MlpTrainSpec {
  std::vector<std::vector<int>> hidden_grid = {{32}, {64, 32}};
  std::vector<double> lr_grid = {1e-3, 1e-2};
  int epochs = 24;
  int batch = 256;
};
using TrainSpec = std::variant<LinearTrainSpec, MlpTrainSpec>;

struct MlpFitOptions {
  std::vector<int> hidden = {32};
  double lr = 1e-3;
  int epochs = 24;
  int batch = 256;      // 0 = full batch
  bool adam = true;     // false = plain gradient descent
  bool track_epoch_mse = false;
  std::uint64_t seed = 1;
};
struct MlpFitResult {
  MlpModel model;
  std::vector<double> epoch_mse;  // training MSE after each epoch
};

MlpFitResult fit_mlp(const Eigen::MatrixXd& x_norm, const Eigen::VectorXd& y,
                     const MlpFitOptions& opts);
LinearModel fit_ridge(const Eigen::MatrixXd& x_norm, const Eigen::VectorXd& y, double l2);

// K-fold CV over the spec's hyper grid (folds split by scenario), then a
// refit on all rows with the winning combination.
TrainedModel train_regressor(const IntersectionData& data, const SoftLabelParams& params,
                             const TrainSpec& spec, int k = 5, std::uint64_t seed = 1);

// Max relative error between analytic MSE gradients and central finite
// differences (h = 1e-5) over every weight and bias of the network.
double gradient_check(const MlpModel& mlp, const Eigen::VectorXd& x, double y);

// ---------------------------------------------------------------------------
// model scoring and selection

struct ModelScore {
  double value = 0.0;
  bool rejected = false;  // TP duration of zero
};
ModelScore model_score(double fp_s, double fn_s, double tp_s);

// selection order: lower score wins, exact ties prefer the faster training
// run; returns true when a beats b outright, false when b wins or the pair
// stays tied for the delay-based tie-break
bool score_prefers(const ModelScore& a, double a_train_s, const ModelScore& b,
                   double b_train_s);

struct ConfusionDurations {
  double fp_s = 0.0, fn_s = 0.0, tp_s = 0.0;
};

// FP: call active before it was needed; FN: needed but not yet called;
// TP: correctly-preempted span up to the stop-bar crossing.
ConfusionDurations confusion_from_times(double t_pred, double t_ideal, double t_cross);

// Offline evaluation rows for one intersection: features for every second
// from entry through the default (check-in) second of each scenario.
struct ValidationSet {
  struct Scenario {
    int scenario_id = -1;
    long entry_s = 0;
    long t_ideal = 0;    // ideal call second (default second when not needed)
    long t_default = 0;  // check-in crossing second
    double t_cross = 0;  // stop-bar crossing
    int row_begin = 0, row_end = 0;
  };
  std::string intersection_id;
  Eigen::MatrixXd x;
  std::vector<Scenario> scenarios;
};

// first second with prediction above the cutoff, else the default second
long predicted_call_second(const TrainedModel& model, const ValidationSet& vs,
                           const ValidationSet::Scenario& sc,
                           const Eigen::VectorXd& predictions);
ConfusionDurations confusion_durations(const TrainedModel& model, const ValidationSet& vs);

// ---------------------------------------------------------------------------
// persistence (versioned JSON with explicit weight arrays)

std::string save_model(const TrainedModel& model);
TrainedModel load_model(const std::string& json_text);
std::string save_policy(const CorridorPolicy& policy);
CorridorPolicy load_policy(const std::string& json_text);

}  // namespace evplab
