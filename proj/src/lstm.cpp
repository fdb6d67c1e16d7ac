#include "wzmerge/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "wzmerge/kernels.hpp"

namespace wzmerge {

namespace {

using nlohmann::json;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr size_t kGates = 4;  // input, forget, candidate, output
constexpr double kProbEps = 1e-12;

void check_dims(const LstmDims& d) {
  if (d.input == 0 || d.hidden == 0 || d.steps == 0)
    throw Error("model: zero lstm dimension");
}

}  // namespace

LstmParams LstmParams::zeros(const LstmDims& d) {
  check_dims(d);
  LstmParams p;
  p.dims = d;
  for (size_t k = 0; k < kGates; ++k) {
    p.w_in[k].assign(d.hidden * d.input, 0.0);
    p.w_rec[k].assign(d.hidden * d.hidden, 0.0);
    p.bias[k].assign(d.hidden, 0.0);
  }
  p.head_w.assign(d.hidden, 0.0);
  return p;
}

LstmParams LstmParams::init(const LstmDims& d, uint64_t seed) {
  LstmParams p = zeros(d);
  Rng rng(substream_seed(seed, "lstm:init"));
  const auto fill = [&rng](std::vector<double>& w, size_t fan_in, size_t fan_out) {
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-r, r);
  };
  for (size_t k = 0; k < kGates; ++k) {
    fill(p.w_in[k], d.input, d.hidden);
    fill(p.w_rec[k], d.hidden, d.hidden);
  }
  fill(p.head_w, d.hidden, 1);
  std::fill(p.bias[1].begin(), p.bias[1].end(), 1.0);  // forget gate starts open
  return p;
}

size_t LstmParams::parameter_count() const {
  return kGates * (dims.hidden * dims.input + dims.hidden * dims.hidden + dims.hidden) +
         dims.hidden + 1;
}

// Traversal order is part of the artifact contract: w_in[0..3], w_rec[0..3],
// bias[0..3], head_w, head_b.
template <typename P, typename Fn>
static void for_each_tensor(P& p, Fn&& fn) {
  for (auto& t : p.w_in) fn(t);
  for (auto& t : p.w_rec) fn(t);
  for (auto& t : p.bias) fn(t);
  fn(p.head_w);
}

std::vector<double> LstmParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_tensor(*this, [&](const std::vector<double>& t) {
    out.insert(out.end(), t.begin(), t.end());
  });
  out.push_back(head_b);
  return out;
}

void LstmParams::unflatten(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw Error("model: flat parameter size mismatch");
  size_t off = 0;
  for_each_tensor(*this, [&](std::vector<double>& t) {
    std::copy(flat.begin() + static_cast<ptrdiff_t>(off),
              flat.begin() + static_cast<ptrdiff_t>(off + t.size()), t.begin());
    off += t.size();
  });
  head_b = flat[off];
}

bool LstmParams::all_finite() const {
  bool ok = std::isfinite(head_b);
  for_each_tensor(*this, [&](const std::vector<double>& t) {
    for (double v : t)
      if (!std::isfinite(v)) ok = false;
  });
  return ok;
}

double lstm_forward(const LstmParams& p, std::span<const double> window,
                    std::span<const double> dropout_scale, ForwardCache* cache) {
  const LstmDims& d = p.dims;
  if (window.size() != d.steps * d.input) throw Error("model: window size mismatch");
  if (!dropout_scale.empty() && dropout_scale.size() != d.hidden)
    throw Error("model: dropout mask size mismatch");

  ForwardCache local;
  ForwardCache& fc = cache != nullptr ? *cache : local;
  fc.steps.resize(d.steps);

  std::vector<double> pre[kGates];
  std::vector<double> h_prev(d.hidden, 0.0), c_prev(d.hidden, 0.0);

  for (size_t t = 0; t < d.steps; ++t) {
    StepCache& sc = fc.steps[t];
    const double* x = window.data() + t * d.input;
    for (size_t k = 0; k < kGates; ++k) {
      pre[k] = p.bias[k];
      kernels::matvec_addto(p.w_in[k].data(), d.hidden, d.input, x, pre[k].data());
      kernels::matvec_addto(p.w_rec[k].data(), d.hidden, d.hidden, h_prev.data(),
                            pre[k].data());
    }
    for (size_t k = 0; k < kGates; ++k) sc.gate[k].resize(d.hidden);
    for (size_t j = 0; j < d.hidden; ++j) {
      sc.gate[0][j] = sigmoid(pre[0][j]);
      sc.gate[1][j] = sigmoid(pre[1][j]);
      sc.gate[2][j] = std::tanh(pre[2][j]);
      sc.gate[3][j] = sigmoid(pre[3][j]);
    }
    sc.c.resize(d.hidden);
    kernels::cell_update(sc.gate[1].data(), c_prev.data(), sc.gate[0].data(),
                         sc.gate[2].data(), sc.c.data(), d.hidden);
    sc.tanh_c.resize(d.hidden);
    sc.h.resize(d.hidden);
    for (size_t j = 0; j < d.hidden; ++j) {
      sc.tanh_c[j] = std::tanh(sc.c[j]);
      sc.h[j] = sc.gate[3][j] * sc.tanh_c[j];
    }
    h_prev = sc.h;
    c_prev = sc.c;
  }

  fc.h_used = fc.steps.back().h;
  if (!dropout_scale.empty())
    for (size_t j = 0; j < d.hidden; ++j) fc.h_used[j] *= dropout_scale[j];

  fc.z = kernels::dot(p.head_w.data(), fc.h_used.data(), d.hidden) + p.head_b;
  fc.prob = sigmoid(fc.z);
  return fc.prob;
}

double bce_loss(double prob, int label, double pos_weight) {
  if (label != 0 && label != 1) throw Error("model: label outside {0, 1}");
  if (!(pos_weight > 0.0)) throw Error("model: non-positive class weight");
  const double p = std::clamp(prob, kProbEps, 1.0 - kProbEps);
  return label == 1 ? -pos_weight * std::log(p) : -std::log(1.0 - p);
}

namespace {

// Accumulates one sample's gradients into g (unscaled; caller divides by the
// batch size). Standard BPTT for the cell in lstm_forward.
double backward_one(const LstmParams& p, const TrainItem& item, double pos_weight,
                    ForwardCache& fc, LstmParams& g) {
  const LstmDims& d = p.dims;
  const std::span<const double> window(item.window, d.steps * d.input);
  const std::span<const double> scale =
      item.dropout_scale != nullptr ? std::span<const double>(item.dropout_scale, d.hidden)
                                    : std::span<const double>();
  const double prob = lstm_forward(p, window, scale, &fc);
  const double loss = bce_loss(prob, item.label, pos_weight);

  // dL/dz for weighted binary cross-entropy
  const double dz = item.label == 1 ? pos_weight * (prob - 1.0) : prob;

  kernels::axpy(dz, fc.h_used.data(), g.head_w.data(), d.hidden);
  g.head_b += dz;

  std::vector<double> dh(d.hidden), dc(d.hidden, 0.0);
  for (size_t j = 0; j < d.hidden; ++j) {
    double v = dz * p.head_w[j];
    if (!scale.empty()) v *= scale[j];
    dh[j] = v;
  }

  std::vector<double> dpre[kGates];
  for (auto& v : dpre) v.resize(d.hidden);
  std::vector<double> dh_prev(d.hidden);

  for (size_t t = d.steps; t-- > 0;) {
    const StepCache& sc = fc.steps[t];
    const double* c_prev = t > 0 ? fc.steps[t - 1].c.data() : nullptr;
    const double* x = window.data() + t * d.input;
    const double* h_prev = t > 0 ? fc.steps[t - 1].h.data() : nullptr;

    for (size_t j = 0; j < d.hidden; ++j) {
      const double i_g = sc.gate[0][j], f_g = sc.gate[1][j];
      const double g_g = sc.gate[2][j], o_g = sc.gate[3][j];
      const double dcj = dc[j] + dh[j] * o_g * (1.0 - sc.tanh_c[j] * sc.tanh_c[j]);
      const double doj = dh[j] * sc.tanh_c[j];
      const double dij = dcj * g_g;
      const double dgj = dcj * i_g;
      const double dfj = dcj * (t > 0 ? c_prev[j] : 0.0);
      dpre[0][j] = dij * i_g * (1.0 - i_g);
      dpre[1][j] = dfj * f_g * (1.0 - f_g);
      dpre[2][j] = dgj * (1.0 - g_g * g_g);
      dpre[3][j] = doj * o_g * (1.0 - o_g);
      dc[j] = dcj * f_g;  // becomes next iteration's incoming dc
    }

    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    for (size_t k = 0; k < kGates; ++k) {
      double* gwi = g.w_in[k].data();
      double* gwr = g.w_rec[k].data();
      const double* wr = p.w_rec[k].data();
      for (size_t r = 0; r < d.hidden; ++r) {
        const double dp = dpre[k][r];
        if (dp != 0.0) {
          kernels::axpy(dp, x, gwi + r * d.input, d.input);
          if (t > 0) kernels::axpy(dp, h_prev, gwr + r * d.hidden, d.hidden);
          kernels::axpy(dp, wr + r * d.hidden, dh_prev.data(), d.hidden);
        }
        g.bias[k][r] += dp;
      }
    }
    dh = dh_prev;
  }
  return loss;
}

}  // namespace

double lstm_batch_backward(const LstmParams& p, std::span<const TrainItem> items,
                           double pos_weight, LstmParams& grads) {
  if (items.empty()) throw Error("model: empty batch");
  ForwardCache fc;
  double loss_sum = 0.0;
  for (const TrainItem& item : items) loss_sum += backward_one(p, item, pos_weight, fc, grads);

  const double inv = 1.0 / static_cast<double>(items.size());
  for_each_tensor(grads, [&](std::vector<double>& t) {
    for (double& v : t) v *= inv;
  });
  grads.head_b *= inv;
  return loss_sum * inv;
}

double lstm_batch_loss(const LstmParams& p, std::span<const TrainItem> items,
                       double pos_weight) {
  if (items.empty()) throw Error("model: empty batch");
  double loss_sum = 0.0;
  for (const TrainItem& item : items) {
    const std::span<const double> window(item.window, p.dims.steps * p.dims.input);
    const std::span<const double> scale =
        item.dropout_scale != nullptr
            ? std::span<const double>(item.dropout_scale, p.dims.hidden)
            : std::span<const double>();
    loss_sum += bce_loss(lstm_forward(p, window, scale), item.label, pos_weight);
  }
  return loss_sum / static_cast<double>(items.size());
}

namespace {

struct FlatDataset {
  std::vector<double> values;  // n x (steps * input), normalized
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  const double* window(size_t i, size_t stride) const { return values.data() + i * stride; }
};

FlatDataset flatten_normalized(const Dataset& d, const NormStats& norm) {
  FlatDataset out;
  out.values.resize(d.samples.size() * kWindowValues);
  out.labels.resize(d.samples.size());
  for (size_t i = 0; i < d.samples.size(); ++i) {
    const FeatureWindow w = apply_normalizer(norm, d.samples[i].window);
    std::copy(w.values.begin(), w.values.end(), out.values.begin() + i * kWindowValues);
    out.labels[i] = d.samples[i].label;
  }
  return out;
}

ConfusionMatrix evaluate_confusion(const LstmParams& p, const FlatDataset& data) {
  ConfusionMatrix cm;
  for (size_t i = 0; i < data.size(); ++i) {
    const double prob =
        lstm_forward(p, std::span<const double>(data.window(i, kWindowValues), kWindowValues));
    const bool hit = prob >= 0.5;
    if (data.labels[i] == 1)
      hit ? ++cm.tp : ++cm.fn;
    else
      hit ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

}  // namespace

ModelArtifact train_lstm(const Dataset& train, const Dataset& test, Direction dir,
                         const TrainConfig& cfg) {
  if (cfg.hidden == 0) throw Error("model: zero hidden size");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw Error("model: dropout outside [0, 1)");
  if (train.samples.empty()) throw Error("model: empty training set");

  const auto [fit, val] =
      split_stratified(train, 1.0 - cfg.val_fraction, substream_seed(cfg.seed, "lstm:val"));

  const NormStats norm = fit_normalizer(train);
  const FlatDataset fit_data = flatten_normalized(fit, norm);
  const FlatDataset val_data = flatten_normalized(val, norm);

  const size_t fit_pos = fit.positives();
  const size_t fit_neg = fit.size() - fit_pos;
  if (fit_pos == 0 || fit_neg == 0) throw Error("model: single-class fit split");
  const double pos_weight =
      cfg.pos_weight > 0.0
          ? cfg.pos_weight
          : static_cast<double>(fit_neg) / static_cast<double>(fit_pos);

  const LstmDims dims{kFeatureCount, cfg.hidden, kWindowSteps};
  LstmParams params = LstmParams::init(dims, cfg.seed);
  LstmParams grads = LstmParams::zeros(dims);
  LstmParams adam_m = LstmParams::zeros(dims);
  LstmParams adam_v = LstmParams::zeros(dims);

  Rng shuffle_rng(substream_seed(cfg.seed, "lstm:shuffle"));
  Rng dropout_rng(substream_seed(cfg.seed, "lstm:dropout"));

  std::vector<size_t> order(fit_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<TrainItem> batch;
  std::vector<double> masks;
  const double keep = 1.0 - cfg.dropout;

  std::vector<TrainItem> val_items(val_data.size());
  for (size_t i = 0; i < val_data.size(); ++i)
    val_items[i] = {val_data.window(i, kWindowValues), val_data.labels[i], nullptr};

  TrainMetadata meta;
  meta.pos_weight_used = pos_weight;
  LstmParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  size_t since_best = 0;
  uint64_t adam_t = 0;

  for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t batches = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t n = std::min(cfg.batch_size, order.size() - start);
      batch.resize(n);
      if (cfg.dropout > 0.0) {
        masks.resize(n * cfg.hidden);
        for (double& m : masks) m = dropout_rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      }
      for (size_t b = 0; b < n; ++b) {
        const size_t idx = order[start + b];
        batch[b] = {fit_data.window(idx, kWindowValues), fit_data.labels[idx],
                    cfg.dropout > 0.0 ? masks.data() + b * cfg.hidden : nullptr};
      }

      for_each_tensor(grads, [](std::vector<double>& t) {
        std::fill(t.begin(), t.end(), 0.0);
      });
      grads.head_b = 0.0;
      epoch_loss += lstm_batch_backward(params, batch, pos_weight, grads);
      ++batches;
      if (!grads.all_finite()) throw Error("model: non-finite gradient");

      ++adam_t;
      const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
      const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
      const auto step = [&](std::vector<double>& w, std::vector<double>& gr,
                            std::vector<double>& m, std::vector<double>& v) {
        kernels::adam_update(w.data(), gr.data(), m.data(), v.data(), w.size(),
                             cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                             cfg.adam_eps, bias1, bias2);
      };
      for (size_t k = 0; k < 4; ++k) {
        step(params.w_in[k], grads.w_in[k], adam_m.w_in[k], adam_v.w_in[k]);
        step(params.w_rec[k], grads.w_rec[k], adam_m.w_rec[k], adam_v.w_rec[k]);
        step(params.bias[k], grads.bias[k], adam_m.bias[k], adam_v.bias[k]);
      }
      step(params.head_w, grads.head_w, adam_m.head_w, adam_v.head_w);
      {
        double g1 = grads.head_b;
        adam_m.head_b = cfg.adam_beta1 * adam_m.head_b + (1.0 - cfg.adam_beta1) * g1;
        adam_v.head_b = cfg.adam_beta2 * adam_v.head_b + (1.0 - cfg.adam_beta2) * g1 * g1;
        params.head_b -= cfg.learning_rate * (adam_m.head_b / bias1) /
                         (std::sqrt(adam_v.head_b / bias2) + cfg.adam_eps);
      }
    }

    meta.epoch_train_loss.push_back(epoch_loss / static_cast<double>(batches));
    const double val_loss = lstm_batch_loss(params, val_items, pos_weight);
    meta.epoch_val_loss.push_back(val_loss);
    meta.epochs_run = epoch + 1;

    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  params = best;
  meta.final_train_loss = meta.epoch_train_loss.back();
  meta.best_val_loss = best_val;

  const FlatDataset test_data = flatten_normalized(test, norm);
  meta.test_confusion = evaluate_confusion(params, test_data);
  meta.test_accuracy = meta.test_confusion.accuracy();

  ModelArtifact artifact;
  artifact.direction = dir;
  artifact.params = std::move(params);
  artifact.norm = norm;
  artifact.meta = std::move(meta);
  return artifact;
}

Prediction predict(const ModelArtifact& m, const FeatureWindow& raw_window) {
  const FeatureWindow w = apply_normalizer(m.norm, raw_window);
  Prediction out;
  out.probability = lstm_forward(m.params, w.values);
  out.conflicting = out.probability >= 0.5;
  return out;
}

namespace {

std::string model_checksum(const ModelArtifact& m) {
  uint64_t h = kFnvOffset;
  const auto mix = [&h](double v) {
    h = fnv1a64(fmt_double(v), h);
    h = fnv1a64(",", h);
  };
  for (double v : m.params.flatten()) mix(v);
  for (double v : m.norm.mean) mix(v);
  for (double v : m.norm.stddev) mix(v);
  return to_hex(h);
}

json confusion_to_json(const ConfusionMatrix& cm) {
  return json{{"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}, {"tp", cm.tp}};
}

ConfusionMatrix confusion_from_json(const json& j) {
  ConfusionMatrix cm;
  cm.tn = j.at("tn").get<uint64_t>();
  cm.fp = j.at("fp").get<uint64_t>();
  cm.fn = j.at("fn").get<uint64_t>();
  cm.tp = j.at("tp").get<uint64_t>();
  return cm;
}

}  // namespace

void save_model(const ModelArtifact& m, const std::string& path,
                std::string_view config_hash, uint64_t seed) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "lstm-conflict-classifier";
  j["config_hash"] = std::string(config_hash);
  j["seed"] = seed;
  j["direction"] = to_string(m.direction);
  j["dims"] = {{"input", m.params.dims.input},
               {"hidden", m.params.dims.hidden},
               {"steps", m.params.dims.steps}};
  j["gate_order"] = {"input", "forget", "candidate", "output"};
  j["w_in"] = m.params.w_in;
  j["w_rec"] = m.params.w_rec;
  j["bias"] = m.params.bias;
  j["head_w"] = m.params.head_w;
  j["head_b"] = m.params.head_b;
  j["norm"] = {{"mean", m.norm.mean}, {"stddev", m.norm.stddev}};
  j["checksum"] = model_checksum(m);
  j["meta"] = {{"epochs_run", m.meta.epochs_run},
               {"pos_weight", m.meta.pos_weight_used},
               {"final_train_loss", m.meta.final_train_loss},
               {"best_val_loss", m.meta.best_val_loss},
               {"epoch_train_loss", m.meta.epoch_train_loss},
               {"epoch_val_loss", m.meta.epoch_val_loss},
               {"test_accuracy", m.meta.test_accuracy},
               {"test_confusion", confusion_to_json(m.meta.test_confusion)}};

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io: cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
  if (!os) throw Error("io: write failed for '" + path + "'");
}

ModelArtifact load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("model: unparseable model file '" + path + "': " + e.what());
  }

  if (j.value("format_version", -1) != 1)
    throw Error("model: unsupported format_version in '" + path + "'");

  ModelArtifact m;
  m.direction = direction_from_string(j.at("direction").get<std::string>());
  LstmDims d;
  d.input = j.at("dims").at("input").get<size_t>();
  d.hidden = j.at("dims").at("hidden").get<size_t>();
  d.steps = j.at("dims").at("steps").get<size_t>();
  m.params = LstmParams::zeros(d);

  const auto load_array = [&](const char* name, const json& src, std::vector<double>& dst,
                              size_t expect) {
    if (!src.is_array() || src.size() != expect)
      throw Error("model: " + std::string(name) + " size mismatch in '" + path + "'");
    dst.clear();
    dst.reserve(expect);
    for (const auto& v : src) dst.push_back(v.get<double>());
  };

  const auto& jwi = j.at("w_in");
  const auto& jwr = j.at("w_rec");
  const auto& jb = j.at("bias");
  if (!jwi.is_array() || jwi.size() != 4 || !jwr.is_array() || jwr.size() != 4 ||
      !jb.is_array() || jb.size() != 4)
    throw Error("model: gate matrix list size mismatch in '" + path + "'");
  for (size_t k = 0; k < 4; ++k) {
    load_array("w_in", jwi[k], m.params.w_in[k], d.hidden * d.input);
    load_array("w_rec", jwr[k], m.params.w_rec[k], d.hidden * d.hidden);
    load_array("bias", jb[k], m.params.bias[k], d.hidden);
  }
  load_array("head_w", j.at("head_w"), m.params.head_w, d.hidden);
  m.params.head_b = j.at("head_b").get<double>();

  const auto& jn = j.at("norm");
  const auto load_norm = [&](const char* name, std::array<double, kFeatureCount>& dst) {
    const auto& src = jn.at(name);
    if (!src.is_array() || src.size() != kFeatureCount)
      throw Error("model: norm " + std::string(name) + " size mismatch in '" + path + "'");
    for (size_t i = 0; i < kFeatureCount; ++i) dst[i] = src[i].get<double>();
  };
  load_norm("mean", m.norm.mean);
  load_norm("stddev", m.norm.stddev);

  if (j.contains("meta")) {
    const auto& jm = j.at("meta");
    m.meta.epochs_run = jm.value("epochs_run", size_t{0});
    m.meta.pos_weight_used = jm.value("pos_weight", 0.0);
    m.meta.final_train_loss = jm.value("final_train_loss", 0.0);
    m.meta.best_val_loss = jm.value("best_val_loss", 0.0);
    m.meta.test_accuracy = jm.value("test_accuracy", 0.0);
    if (jm.contains("epoch_train_loss"))
      m.meta.epoch_train_loss = jm.at("epoch_train_loss").get<std::vector<double>>();
    if (jm.contains("epoch_val_loss"))
      m.meta.epoch_val_loss = jm.at("epoch_val_loss").get<std::vector<double>>();
    if (jm.contains("test_confusion"))
      m.meta.test_confusion = confusion_from_json(jm.at("test_confusion"));
  }

  if (j.at("checksum").get<std::string>() != model_checksum(m))
    throw Error("model: checksum mismatch in '" + path + "'");
  return m;
}

}  // namespace wzmerge
