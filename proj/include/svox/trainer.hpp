#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "svox/model.hpp"
#include "svox/parallel.hpp"
#include "svox/sampler.hpp"
#include "svox/volume_io.hpp"

namespace svox {

/// Adam moments and hyperparameters. Moments use the parameter precision.
template <class T>
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<T> m, v;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : m(n, T(0)), v(n, T(0)) {}
};

namespace detail {

template <class T>
void adam_update(std::span<T> params, std::span<const double> grads, OptimizerState<T>& s, std::size_t offset) {
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(s.beta1, static_cast<double>(s.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(s.beta2, static_cast<double>(s.t)));
  const T lr = static_cast<T>(s.lr), eps = static_cast<T>(s.epsilon);
  T* m = s.m.data() + offset;
  T* v = s.v.data() + offset;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = static_cast<T>(grads[i]);
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] / c1;
    const T v_hat = v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

inline void check_finite_grads(std::span<const double> grads, std::size_t offset) {
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw Error("trainer", "non-finite gradient at parameter " + std::to_string(offset + i) + "; step aborted");
}

}  // namespace detail

/// One in-place Adam step with bias correction. Nothing is modified when a
/// gradient is non-finite.
template <class T>
void adam_step(std::span<T> params, std::span<const double> grads, OptimizerState<T>& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw Error("trainer", "adam_step size mismatch");
  detail::check_finite_grads(grads, 0);
  ++state.t;
  detail::adam_update(params, grads, state, 0);
}

/// Network overload: parameters are visited in topology order, weights then
/// bias per layer, matching NetworkGrads::flat().
template <class T>
void adam_step(Network<T>& net, const NetworkGrads<T>& grads, OptimizerState<T>& state) {
  auto layers = net.layers();
  if (grads.layers.size() != layers.size() || state.m.size() != count_params(net))
    throw Error("trainer", "adam_step size mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    detail::check_finite_grads(grads.layers[i].weights, off);
    off += grads.layers[i].weights.size();
    detail::check_finite_grads(grads.layers[i].bias, off);
    off += grads.layers[i].bias.size();
  }
  ++state.t;
  off = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    detail::adam_update<T>(layers[i]->weights, grads.layers[i].weights, state, off);
    off += layers[i]->weights.size();
    detail::adam_update<T>(layers[i]->bias, grads.layers[i].bias, state, off);
    off += layers[i]->bias.size();
  }
}

struct TrainPlan {
  int epochs = 25;
  int batch_size = 64;
  std::uint64_t seed = 1;
  OrientationTag orientation = OrientationTag::axial;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Training samples drawn per epoch from the shuffled training split; 0 = all.
  std::size_t samples_per_epoch = 0;
  /// Fixed validation subset size (leading part of the shuffled split); 0 = all.
  std::size_t val_samples = 0;
  int threads = 0;
  bool verbose = false;

  void validate() const {
    if (epochs < 1) throw Error("trainer", "epochs must be >= 1");
    if (batch_size < 1) throw Error("trainer", "batch_size must be >= 1");
    if (!(lr > 0.0)) throw Error("trainer", "lr must be positive");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::string divergence_reason;
  std::uint64_t model_seed = 0;
  std::uint64_t plan_seed = 0;
  OrientationTag orientation = OrientationTag::axial;
  std::size_t n_centers = 0, n_train = 0, n_val = 0;
  std::size_t samples_per_epoch = 0, val_samples = 0;
};

inline void to_json(nlohmann::json& j, const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"seconds", e.seconds}});
  j = nlohmann::json{{"epochs", epochs},
                     {"best_epoch", h.best_epoch},
                     {"best_val_loss", h.best_val_loss},
                     {"diverged", h.diverged},
                     {"divergence_reason", h.divergence_reason},
                     {"seeds", {{"model", h.model_seed}, {"plan", h.plan_seed}}},
                     {"orientation", std::string(to_string(h.orientation))},
                     {"n_centers", h.n_centers},
                     {"n_train", h.n_train},
                     {"n_val", h.n_val},
                     {"samples_per_epoch", h.samples_per_epoch},
                     {"val_samples", h.val_samples}};
}

/// Co-registered training subject in the canonical frame.
struct Atlas {
  Volume echo1, echo2, ct;
  Mask mask;

  void validate() const {
    echo1.validate();
    echo2.validate();
    ct.validate();
    if (echo1.dims != echo2.dims || echo1.dims != ct.dims || echo1.dims != mask.dims)
      throw Error("trainer", "atlas volumes and mask must share dims");
    if (mask.count() == 0) throw Error("trainer", "atlas mask is empty");
  }
};

struct TrainResult {
  Network<float> network;
  NormalizationSpec normalization;
  Orientation orientation;
  TrainHistory history;

  ModelMetadata metadata() const { return {orientation, normalization}; }
};

namespace detail {

template <class T>
void add_grads(NetworkGrads<T>& acc, const NetworkGrads<T>& g) {
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    auto& a = acc.layers[l];
    const auto& b = g.layers[l];
    for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += b.weights[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
  }
}

template <class T>
void scale_grads(NetworkGrads<T>& acc, double s) {
  for (auto& a : acc.layers) {
    for (auto& w : a.weights) w *= s;
    for (auto& b : a.bias) b *= s;
  }
}

struct OrientedAtlas {
  Volume echo1, echo2, ct;
};

/// Per-sample work runs in waves of `threads`; the sample with in-wave slot w
/// goes to worker w and results are reduced in sample order.
class BatchRunner {
public:
  BatchRunner(const Network<float>& net, int threads) : threads_(std::max(1, threads)) {
    for (int w = 0; w < threads_; ++w) {
      grads_.emplace_back(net);
      caches_.emplace_back();
    }
  }

  int threads() const { return threads_; }

  /// Mean loss over `picks`; `acc` receives the mean parameter gradient.
  double train_batch(const Network<float>& net, const OrientedAtlas& a, const PatchIndex& idx,
                     std::span<const std::size_t> picks, const NormalizationSpec& norm, NetworkGrads<float>& acc) {
    acc.zero();
    double loss_sum = 0.0;
    std::vector<double> losses(threads_);
    for (std::size_t base = 0; base < picks.size(); base += threads_) {
      const std::size_t end = std::min(picks.size(), base + threads_);
      parallel_for(base, end, threads_, [&](std::size_t i, int w) {
        const PatchBatch b = extract_batch(a.echo1, a.echo2, a.ct, idx, picks.subspan(i, 1), norm);
        auto& cache = caches_[w];
        forward_full(net, b.echo1, b.echo2, &cache);
        losses[w] = mse_loss(cache.out, b.ct);
        mse_loss_backward(cache.out, b.ct);
        grads_[w].zero();
        backward(net, cache, grads_[w]);
      });
      for (std::size_t i = base; i < end; ++i) {
        const int w = static_cast<int>(i - base);
        loss_sum += losses[w];
        add_grads(acc, grads_[w]);
      }
    }
    scale_grads(acc, 1.0 / static_cast<double>(picks.size()));
    return loss_sum / static_cast<double>(picks.size());
  }

  double eval_loss(const Network<float>& net, const OrientedAtlas& a, const PatchIndex& idx,
                   std::span<const std::size_t> picks, const NormalizationSpec& norm) {
    std::vector<double> losses(picks.size());
    parallel_for(0, picks.size(), threads_, [&](std::size_t i, int) {
      const PatchBatch b = extract_batch(a.echo1, a.echo2, a.ct, idx, picks.subspan(i, 1), norm);
      losses[i] = mse_loss(forward_full(net, b.echo1, b.echo2), b.ct);
    });
    double s = 0.0;
    for (double l : losses) s += l;
    return s / static_cast<double>(picks.size());
  }

private:
  int threads_;
  std::vector<NetworkGrads<float>> grads_;
  std::vector<ForwardCache<float>> caches_;
};

inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace detail

/// Training pick order of one epoch: a seeded shuffle of the training split,
/// truncated to samples_per_epoch when that is set.
inline std::vector<std::size_t> epoch_picks(const Split& split, const TrainPlan& plan, int epoch) {
  std::vector<std::size_t> order = split.train;
  std::mt19937_64 rng(detail::epoch_seed(plan.seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  if (plan.samples_per_epoch > 0 && order.size() > plan.samples_per_epoch) order.resize(plan.samples_per_epoch);
  return order;
}

/// Trains one orientation model; returns the best-validation checkpoint.
inline TrainResult train(const Atlas& atlas, const ModelConfig& cfg, const TrainPlan& plan) {
  using clock = std::chrono::steady_clock;
  atlas.validate();
  plan.validate();
  const Orientation o = Orientation::from_tag(plan.orientation);

  TrainResult res;
  res.orientation = o;
  res.normalization = compute_normalization(atlas.echo1, atlas.echo2, atlas.mask);
  const detail::OrientedAtlas oriented{reorient(atlas.echo1, o), reorient(atlas.echo2, o), reorient(atlas.ct, o)};
  const PatchIndex idx = enumerate_centers(atlas.mask, o, cfg.patch_shape);
  const Split split = split_train_val(idx, plan.seed);
  std::vector<std::size_t> val = split.val;
  if (plan.val_samples > 0 && val.size() > plan.val_samples) val.resize(plan.val_samples);

  Network<float> net = build_network<float>(cfg);
  res.network = net;
  OptimizerState<float> opt(count_params(net));
  opt.lr = plan.lr;
  opt.beta1 = plan.beta1;
  opt.beta2 = plan.beta2;
  opt.epsilon = plan.epsilon;

  TrainHistory& h = res.history;
  h.model_seed = cfg.seed;
  h.plan_seed = plan.seed;
  h.orientation = plan.orientation;
  h.n_centers = idx.size();
  h.n_train = split.train.size();
  h.n_val = split.val.size();
  h.samples_per_epoch = plan.samples_per_epoch;
  h.val_samples = val.size();

  detail::BatchRunner runner(net, resolve_threads(plan.threads));
  NetworkGrads<float> grads(net);
  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    const auto t0 = clock::now();
    const auto picks = epoch_picks(split, plan, epoch);
    double train_sum = 0.0;
    for (std::size_t b = 0; b < picks.size() && !h.diverged; b += plan.batch_size) {
      const std::size_t n = std::min<std::size_t>(plan.batch_size, picks.size() - b);
      const double loss = runner.train_batch(net, oriented, idx, std::span(picks).subspan(b, n), res.normalization, grads);
      train_sum += loss * static_cast<double>(n);
      try {
        adam_step(net, grads, opt);
      } catch (const Error& e) {
        h.diverged = true;
        h.divergence_reason = e.what();
      }
    }
    if (h.diverged) break;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_sum / static_cast<double>(picks.size());
    rec.val_loss = runner.eval_loss(net, oriented, idx, val, res.normalization);
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    h.epochs.push_back(rec);
    if (plan.verbose)
      std::fprintf(stderr, "[%s] epoch %d/%d train %.6g val %.6g (%.1fs)\n", std::string(to_string(plan.orientation)).c_str(),
                   epoch, plan.epochs, rec.train_loss, rec.val_loss, rec.seconds);
    if (!std::isfinite(rec.val_loss)) {
      h.diverged = true;
      h.divergence_reason = "validation loss is not finite at epoch " + std::to_string(epoch);
      break;
    }
    if (rec.val_loss < h.best_val_loss) {
      h.best_val_loss = rec.val_loss;
      h.best_epoch = epoch;
      res.network = net;
    }
  }
  return res;
}

inline std::string model_filename(OrientationTag t) { return "model_" + std::string(to_string(t)) + ".svoxnet"; }
inline std::string history_filename(OrientationTag t) { return "history_" + std::string(to_string(t)) + ".json"; }

/// Trains axial, coronal and sagittal models with seeds seed, seed+1, seed+2
/// and writes model_<tag>.svoxnet plus history_<tag>.json into `out_dir`.
inline std::vector<std::filesystem::path> train_all_orientations(const Atlas& atlas, const ModelConfig& cfg,
                                                                 const TrainPlan& plan,
                                                                 const std::filesystem::path& out_dir,
                                                                 std::vector<TrainHistory>* histories = nullptr) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < kAllOrientations.size(); ++i) {
    ModelConfig c = cfg;
    c.seed = cfg.seed + i;
    TrainPlan p = plan;
    p.seed = plan.seed + i;
    p.orientation = kAllOrientations[i];
    const TrainResult r = train(atlas, c, p);
    const auto path = out_dir / model_filename(p.orientation);
    save_model(r.network, r.metadata(), path);
    const std::string hist = nlohmann::json(r.history).dump(2);
    binary::write_file(out_dir / history_filename(p.orientation),
                       std::span(reinterpret_cast<const std::uint8_t*>(hist.data()), hist.size()), "trainer");
    if (histories) histories->push_back(r.history);
    written.push_back(path);
  }
  return written;
}

}  // namespace svox
