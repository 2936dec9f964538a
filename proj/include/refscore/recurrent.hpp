#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refscore/corpus.hpp"
#include "refscore/detail/rng.hpp"

namespace refscore {

inline constexpr int kRecurrentModelSchemaVersion = 1;

/// Gated recurrent cell (update gate z, reset gate r, tanh candidate) over a
/// scalar input per step, followed by a linear projection of the final hidden
/// state to class logits. Parameters live in one flat vector with named
/// tensor ranges so training, serialization and finite-difference checks all
/// operate on the same memory.
class GruNet {
 public:
  GruNet(int hidden, int n_classes, std::uint64_t seed)
      : hidden_(hidden), n_classes_(n_classes) {
    if (hidden < 1 || n_classes < 2) throw Error("gru: need hidden >= 1 and >= 2 classes");
    layout();
    params_.resize(total_);
    detail::Rng rng(detail::mix_seed(seed, 0xfeedULL));
    for (auto& p : params_) p = rng.uniform(-0.1, 0.1);
  }

  int hidden() const { return hidden_; }
  int n_classes() const { return n_classes_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Named [begin, end) ranges into the flat parameter vector.
  const std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>& tensors() const {
    return tensors_;
  }

  /// Class probabilities for one input sequence (already scaled).
  std::vector<double> forward_probs(const std::vector<double>& xs) const {
    std::vector<double> h(static_cast<std::size_t>(hidden_), 0.0);
    std::vector<double> z(h.size()), r(h.size()), c(h.size()), rh(h.size());
    for (double x : xs) step(x, h, z, r, c, rh);
    return softmax(logits(h));
  }

  /// Mean cross-entropy over the batch (weighted mean when sample_weights is
  /// given); when grad is non-null it receives d(loss)/d(params) via
  /// backpropagation through time.
  double loss_and_grad(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                       std::vector<double>* grad,
                       const std::vector<double>* sample_weights = nullptr) const {
    if (xs.size() != ys.size() || xs.empty()) throw Error("gru: bad batch");
    if (sample_weights && sample_weights->size() != xs.size())
      throw Error("gru: sample weight count mismatch");
    if (grad) grad->assign(total_, 0.0);
    double weight_sum = 0.0;
    if (sample_weights) {
      for (double w : *sample_weights) weight_sum += w;
      if (weight_sum <= 0.0) throw Error("gru: nonpositive sample weights");
    } else {
      weight_sum = static_cast<double>(xs.size());
    }
    double loss = 0.0;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const double w = (sample_weights ? (*sample_weights)[s] : 1.0) / weight_sum;
      loss += w * sample_loss(xs[s], ys[s], grad, w);
    }
    if (!std::isfinite(loss)) throw Error("gru: loss diverged (not finite)");
    return loss;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"hidden", hidden_}, {"n_classes", n_classes_}, {"params", params_}};
  }

  static GruNet from_json(const nlohmann::json& j) {
    GruNet net(j.at("hidden").get<int>(), j.at("n_classes").get<int>(), 0);
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params_.size()) throw Error("gru: parameter count mismatch");
    net.params_ = std::move(params);
    return net;
  }

 private:
  static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  void layout() {
    tensors_.clear();
    std::size_t off = 0;
    auto add = [&](const std::string& name, std::size_t count) {
      tensors_.emplace_back(name, std::make_pair(off, off + count));
      offsets_[name] = off;
      off += count;
    };
    const auto h = static_cast<std::size_t>(hidden_);
    const auto c = static_cast<std::size_t>(n_classes_);
    add("Wz", h); add("Uz", h * h); add("bz", h);
    add("Wr", h); add("Ur", h * h); add("br", h);
    add("Wh", h); add("Uh", h * h); add("bh", h);
    add("Wo", c * h); add("bo", c);
    total_ = off;
  }

  const double* at(const char* name) const { return params_.data() + offsets_.at(name); }
  static double* gat(std::vector<double>* g, std::size_t off) { return g->data() + off; }

  void step(double x, std::vector<double>& h, std::vector<double>& z, std::vector<double>& r,
            std::vector<double>& c, std::vector<double>& rh) const {
    const auto H = static_cast<std::size_t>(hidden_);
    const double *Wz = at("Wz"), *Uz = at("Uz"), *bz = at("bz");
    const double *Wr = at("Wr"), *Ur = at("Ur"), *br = at("br");
    const double *Wh = at("Wh"), *Uh = at("Uh"), *bh = at("bh");
    std::vector<double> h_prev = h;
    for (std::size_t i = 0; i < H; ++i) {
      double az = Wz[i] * x + bz[i];
      double ar = Wr[i] * x + br[i];
      for (std::size_t j = 0; j < H; ++j) {
        az += Uz[i * H + j] * h_prev[j];
        ar += Ur[i * H + j] * h_prev[j];
      }
      z[i] = sigmoid(az);
      r[i] = sigmoid(ar);
    }
    for (std::size_t i = 0; i < H; ++i) rh[i] = r[i] * h_prev[i];
    for (std::size_t i = 0; i < H; ++i) {
      double ac = Wh[i] * x + bh[i];
      for (std::size_t j = 0; j < H; ++j) ac += Uh[i * H + j] * rh[j];
      c[i] = std::tanh(ac);
      h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
    }
  }

  std::vector<double> logits(const std::vector<double>& h) const {
    const auto H = static_cast<std::size_t>(hidden_);
    const auto C = static_cast<std::size_t>(n_classes_);
    const double *Wo = at("Wo"), *bo = at("bo");
    std::vector<double> out(C);
    for (std::size_t k = 0; k < C; ++k) {
      double v = bo[k];
      for (std::size_t j = 0; j < H; ++j) v += Wo[k * H + j] * h[j];
      out[k] = v;
    }
    return out;
  }

  static std::vector<double> softmax(std::vector<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0;
    for (auto& x : v) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
  }

  struct StepCache {
    double x;
    std::vector<double> h_prev, z, r, c, rh;
  };

  double sample_loss(const std::vector<double>& xs, int y, std::vector<double>* grad,
                     double weight) const {
    const auto H = static_cast<std::size_t>(hidden_);
    const auto C = static_cast<std::size_t>(n_classes_);
    if (y < 0 || y >= n_classes_) throw Error("gru: target out of range");

    std::vector<StepCache> caches;
    caches.reserve(xs.size());
    std::vector<double> h(H, 0.0), z(H), r(H), c(H), rh(H);
    for (double x : xs) {
      StepCache cache;
      cache.x = x;
      cache.h_prev = h;
      step(x, h, z, r, c, rh);
      cache.z = z;
      cache.r = r;
      cache.c = c;
      cache.rh = rh;
      caches.push_back(std::move(cache));
    }
    const std::vector<double> probs = softmax(logits(h));
    const double loss = -std::log(std::max(probs[static_cast<std::size_t>(y)], 1e-300));
    if (!grad) return loss;

    const double *Uz = at("Uz"), *Ur = at("Ur"), *Uh = at("Uh"), *Wo = at("Wo");
    double* gWz = gat(grad, offsets_.at("Wz"));
    double* gUz = gat(grad, offsets_.at("Uz"));
    double* gbz = gat(grad, offsets_.at("bz"));
    double* gWr = gat(grad, offsets_.at("Wr"));
    double* gUr = gat(grad, offsets_.at("Ur"));
    double* gbr = gat(grad, offsets_.at("br"));
    double* gWh = gat(grad, offsets_.at("Wh"));
    double* gUh = gat(grad, offsets_.at("Uh"));
    double* gbh = gat(grad, offsets_.at("bh"));
    double* gWo = gat(grad, offsets_.at("Wo"));
    double* gbo = gat(grad, offsets_.at("bo"));

    // output layer
    std::vector<double> dh(H, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
      const double dlogit =
          (probs[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) * weight;
      gbo[k] += dlogit;
      for (std::size_t j = 0; j < H; ++j) {
        gWo[k * H + j] += dlogit * h[j];
        dh[j] += Wo[k * H + j] * dlogit;
      }
    }

    // backpropagation through time
    std::vector<double> dzpre(H), drpre(H), dcpre(H), drh(H), dh_prev(H);
    for (std::size_t t = caches.size(); t-- > 0;) {
      const StepCache& cc = caches[t];
      for (std::size_t i = 0; i < H; ++i) {
        const double dz = dh[i] * (cc.c[i] - cc.h_prev[i]);
        dzpre[i] = dz * cc.z[i] * (1.0 - cc.z[i]);
        const double dc = dh[i] * cc.z[i];
        dcpre[i] = dc * (1.0 - cc.c[i] * cc.c[i]);
      }
      std::fill(drh.begin(), drh.end(), 0.0);
      for (std::size_t i = 0; i < H; ++i) {
        gWh[i] += dcpre[i] * cc.x;
        gbh[i] += dcpre[i];
        for (std::size_t j = 0; j < H; ++j) {
          gUh[i * H + j] += dcpre[i] * cc.rh[j];
          drh[j] += Uh[i * H + j] * dcpre[i];
        }
      }
      for (std::size_t i = 0; i < H; ++i) {
        const double dr = drh[i] * cc.h_prev[i];
        drpre[i] = dr * cc.r[i] * (1.0 - cc.r[i]);
      }
      std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
      for (std::size_t i = 0; i < H; ++i) {
        gWz[i] += dzpre[i] * cc.x;
        gbz[i] += dzpre[i];
        gWr[i] += drpre[i] * cc.x;
        gbr[i] += drpre[i];
        dh_prev[i] += dh[i] * (1.0 - cc.z[i]) + drh[i] * cc.r[i];
        for (std::size_t j = 0; j < H; ++j) {
          gUz[i * H + j] += dzpre[i] * cc.h_prev[j];
          gUr[i * H + j] += drpre[i] * cc.h_prev[j];
          dh_prev[j] += Uz[i * H + j] * dzpre[i] + Ur[i * H + j] * drpre[i];
        }
      }
      dh = dh_prev;
    }
    return loss;
  }

  int hidden_;
  int n_classes_;
  std::size_t total_ = 0;
  std::vector<double> params_;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> tensors_;
  std::map<std::string, std::size_t> offsets_;
};

// ---------------------------------------------------------------------------
// Classifier on score sequences
// ---------------------------------------------------------------------------

struct RecurrentHyper {
  int hidden = 16;
  int epochs = 200;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  double input_scale = 1.0 / 3.0;      // scores 0..3 scaled into [0,1]
  bool inverse_class_weights = false;  // weight samples by N/(K * n_class)
};

struct TrainingCurve {
  std::vector<double> losses;  // one per epoch
  /// Epochs where the loss rose above the 20-epoch window minimum by more
  /// than numerical noise. Empty for a healthy run.
  std::vector<int> monotonicity_warnings;
};

/// Sequence classifier: GRU trained by full-batch Adam on mean cross-entropy,
/// deterministic under the seed.
class RecurrentClassifier {
 public:
  static RecurrentClassifier train(const std::vector<std::vector<int>>& sequences,
                                   const std::vector<std::string>& labels,
                                   const RecurrentHyper& hyper, TrainingCurve* curve = nullptr) {
    if (sequences.size() != labels.size() || sequences.empty())
      throw Error("recurrent: sequences/labels mismatch or empty");
    const std::size_t len = sequences.front().size();
    for (const auto& s : sequences)
      if (s.size() != len) throw Error("recurrent: sequences must have equal length");

    RecurrentClassifier model;
    model.hyper_ = hyper;
    std::set<std::string> class_set(labels.begin(), labels.end());
    if (class_set.size() < 2) throw Error("recurrent: training set has a single class");
    model.classes_.assign(class_set.begin(), class_set.end());
    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < model.classes_.size(); ++i)
      class_index[model.classes_[i]] = static_cast<int>(i);

    std::vector<std::vector<double>> xs;
    xs.reserve(sequences.size());
    for (const auto& s : sequences) xs.push_back(model.scale(s));
    std::vector<int> ys;
    ys.reserve(labels.size());
    for (const auto& l : labels) ys.push_back(class_index.at(l));

    std::vector<double> weights;
    const std::vector<double>* weights_ptr = nullptr;
    if (hyper.inverse_class_weights) {
      std::vector<double> counts(model.classes_.size(), 0.0);
      for (int y : ys) counts[static_cast<std::size_t>(y)] += 1.0;
      weights.reserve(ys.size());
      for (int y : ys)
        weights.push_back(static_cast<double>(ys.size()) /
                          (static_cast<double>(counts.size()) * counts[static_cast<std::size_t>(y)]));
      weights_ptr = &weights;
    }

    model.net_ = std::make_unique<GruNet>(hyper.hidden, static_cast<int>(model.classes_.size()),
                                          hyper.seed);
    auto& params = model.net_->params();
    std::vector<double> grad, trial(params.size());
    TrainingCurve local;
    TrainingCurve& log = curve ? *curve : local;

    // Full-batch gradient descent with Armijo backtracking. The step starts at
    // the configured learning rate, halves until the sufficient-decrease test
    // holds and doubles (capped) after every accepted epoch, so the recorded
    // loss sequence is non-increasing up to the backtracking floor.
    double step = hyper.learning_rate;
    const double step_cap = 1.0, armijo = 1e-4, step_floor = 1e-14;
    double loss = model.net_->loss_and_grad(xs, ys, &grad, weights_ptr);
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
      log.losses.push_back(loss);
      const std::size_t window = 20;
      if (log.losses.size() > window) {
        double window_min = log.losses.back();
        for (std::size_t i = log.losses.size() - window - 1; i + 1 < log.losses.size(); ++i)
          window_min = std::min(window_min, log.losses[i]);
        if (log.losses.back() > window_min + 1e-9) log.monotonicity_warnings.push_back(epoch);
      }
      double gnorm2 = 0;
      for (double g : grad) gnorm2 += g * g;
      if (gnorm2 == 0.0) {  // exact stationary point; nothing left to do
        for (int rest = epoch + 1; rest <= hyper.epochs; ++rest) log.losses.push_back(loss);
        break;
      }
      double s = step, trial_loss = loss;
      for (;;) {
        for (std::size_t i = 0; i < params.size(); ++i) trial[i] = params[i] - s * grad[i];
        std::swap(params, trial);
        trial_loss = model.net_->loss_and_grad(xs, ys, nullptr, weights_ptr);
        std::swap(params, trial);
        if (trial_loss <= loss - armijo * s * gnorm2 || s < step_floor) break;
        s /= 2;
      }
      std::swap(params, trial);
      step = std::min(s * 2.0, step_cap);
      loss = model.net_->loss_and_grad(xs, ys, &grad, weights_ptr);
    }
    return model;
  }

  std::vector<double> predict_proba(const std::vector<int>& sequence) const {
    return net_->forward_probs(scale(sequence));
  }

  /// Argmax class; ties break toward the lexicographically smallest label.
  std::string predict(const std::vector<int>& sequence) const {
    const auto probs = predict_proba(sequence);
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    return classes_[best];
  }

  std::vector<std::string> predict_batch(const std::vector<std::vector<int>>& sequences) const {
    std::vector<std::string> out;
    out.reserve(sequences.size());
    for (const auto& s : sequences) out.push_back(predict(s));
    return out;
  }

  const std::vector<std::string>& classes() const { return classes_; }
  const GruNet& net() const { return *net_; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"schema_version", kRecurrentModelSchemaVersion},
                          {"kind", "recurrent"},
                          {"classes", classes_},
                          {"hyper",
                           {{"hidden", hyper_.hidden},
                            {"epochs", hyper_.epochs},
                            {"learning_rate", hyper_.learning_rate},
                            {"seed", hyper_.seed},
                            {"input_scale", hyper_.input_scale},
                            {"inverse_class_weights", hyper_.inverse_class_weights}}},
                          {"net", net_->to_json()}};
  }

  static RecurrentClassifier from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "recurrent" || j.value("schema_version", -1) != kRecurrentModelSchemaVersion)
      throw Error("recurrent: not a supported model file");
    RecurrentClassifier model;
    model.classes_ = j.at("classes").get<std::vector<std::string>>();
    const auto& h = j.at("hyper");
    model.hyper_ = {h.at("hidden").get<int>(), h.at("epochs").get<int>(),
                    h.at("learning_rate").get<double>(), h.at("seed").get<std::uint64_t>(),
                    h.at("input_scale").get<double>(), h.value("inverse_class_weights", false)};
    model.net_ = std::make_unique<GruNet>(GruNet::from_json(j.at("net")));
    return model;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write model file: " + path.string());
    out << to_json().dump() << "\n";
  }

  static RecurrentClassifier load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model file: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("model file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  RecurrentClassifier(const RecurrentClassifier& other) { *this = other; }
  RecurrentClassifier& operator=(const RecurrentClassifier& other) {
    classes_ = other.classes_;
    hyper_ = other.hyper_;
    net_ = other.net_ ? std::make_unique<GruNet>(*other.net_) : nullptr;
    return *this;
  }
  RecurrentClassifier(RecurrentClassifier&&) = default;
  RecurrentClassifier& operator=(RecurrentClassifier&&) = default;

 private:
  RecurrentClassifier() = default;

  std::vector<double> scale(const std::vector<int>& seq) const {
    std::vector<double> out;
    out.reserve(seq.size());
    for (int v : seq) out.push_back(static_cast<double>(v) * hyper_.input_scale);
    return out;
  }

  RecurrentHyper hyper_;
  std::vector<std::string> classes_;
  std::unique_ptr<GruNet> net_;
};

}  // namespace refscore
