// Generative two-person contact prior: a denoising-diffusion model over the
// packed 158-dim pair parameter vector.
//
// Pieces: a linear noising schedule with cumulative retention products, a
// per-dimension normalizer fitted on the training set, a small feed-forward
// denoiser (sinusoidal time embedding, SiLU hidden layers, hand-written
// backprop) that predicts the clean sample directly, ancestral sampling,
// and a test-time guidance loss that pulls the current estimate toward its
// own denoised version. Guided fitting reuses the two-stage Adam runner with
// the contact-map, GMM, and shape terms replaced by the diffusion pull.

#pragma once

#include "apu/body.hpp"
#include "apu/dual.hpp"
#include "apu/error.hpp"
#include "apu/losses.hpp"
#include "apu/optimize.hpp"
#include "apu/rng.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace apu {

// Packed pair vector in Eigen form for linear algebra.
using PriorVec = Eigen::Matrix<double, kPairParamDims, 1>;

inline PriorVec to_prior_vec(const PairParamVector& v) {
    return Eigen::Map<const PriorVec>(v.data());
}

inline PairParamVector from_prior_vec(const PriorVec& v) {
    PairParamVector out;
    Eigen::Map<PriorVec>(out.data()) = v;
    return out;
}

// ---------------------------------------------------------------------------
// Noising schedule

constexpr int kDefaultDiffusionSteps = 100;
constexpr double kDefaultSigmaFirst = 1e-4;
constexpr double kDefaultSigmaLast = 0.02;

// Per-step noise rates sigma_t and cumulative retention products
// sigma'_t = prod_{i<=t} (1 - sigma_i), with sigma'_0 = 1 by definition.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> sigma;        // sigma[t-1] holds sigma_t, t = 1..T
    std::vector<double> sigma_prime;  // sigma_prime[t] holds sigma'_t, t = 0..T

    double sigma_at(int t) const { return sigma[static_cast<size_t>(t) - 1]; }
    double sigma_prime_at(int t) const { return sigma_prime[static_cast<size_t>(t)]; }

    void validate() const {
        if (T < 1) throw ValidationError("diffusion schedule needs at least one step");
        if (static_cast<int>(sigma.size()) != T ||
            static_cast<int>(sigma_prime.size()) != T + 1)
            throw ValidationError("diffusion schedule arrays disagree with T");
        if (sigma_prime[0] != 1.0) throw ValidationError("sigma'_0 must equal 1");
        for (int t = 1; t <= T; ++t) {
            if (!(sigma[t - 1] > 0.0 && sigma[t - 1] < 1.0))
                throw ValidationError("sigma_t must lie in (0, 1)");
            if (!(sigma_prime[t] < sigma_prime[t - 1]))
                throw ValidationError("sigma'_t must be strictly decreasing");
        }
        if (!(sigma_prime[T] > 0.0)) throw ValidationError("sigma'_T must stay positive");
    }
};

inline DiffusionSchedule make_schedule(int T = kDefaultDiffusionSteps,
                                       double sigma_first = kDefaultSigmaFirst,
                                       double sigma_last = kDefaultSigmaLast) {
    if (T < 1) throw ValidationError("diffusion schedule needs at least one step");
    if (!(sigma_first > 0.0 && sigma_first <= sigma_last && sigma_last < 1.0))
        throw ValidationError("noise rates must satisfy 0 < sigma_first <= sigma_last < 1");
    DiffusionSchedule s;
    s.T = T;
    s.sigma.resize(T);
    s.sigma_prime.resize(T + 1);
    s.sigma_prime[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
        s.sigma[t - 1] = sigma_first + (sigma_last - sigma_first) * frac;
        s.sigma_prime[t] = s.sigma_prime[t - 1] * (1.0 - s.sigma[t - 1]);
    }
    s.validate();
    return s;
}

// x_t = sqrt(sigma'_t) x_0 + sqrt(1 - sigma'_t) eps; t = 0 returns x_0 exactly.
inline PriorVec diffuse(const PriorVec& x0, int t, const PriorVec& eps,
                        const DiffusionSchedule& schedule) {
    if (t < 0 || t > schedule.T) throw ValidationError("diffusion step out of range");
    const double sp = schedule.sigma_prime_at(t);
    return std::sqrt(sp) * x0 + std::sqrt(1.0 - sp) * eps;
}

// ---------------------------------------------------------------------------
// Per-dimension normalization

constexpr double kNormalizerStdFloor = 1e-8;

struct ParamNormalizer {
    PriorVec mean = PriorVec::Zero();
    PriorVec std = PriorVec::Ones();

    static ParamNormalizer identity() { return {}; }

    static ParamNormalizer fit(const std::vector<PriorVec>& samples) {
        if (samples.empty()) throw ValidationError("cannot fit a normalizer on no samples");
        ParamNormalizer n;
        n.mean.setZero();
        for (const auto& s : samples) n.mean += s;
        n.mean /= static_cast<double>(samples.size());
        PriorVec var = PriorVec::Zero();
        for (const auto& s : samples) var += (s - n.mean).cwiseAbs2();
        var /= static_cast<double>(samples.size());
        n.std = var.cwiseSqrt().cwiseMax(kNormalizerStdFloor);
        n.validate();
        return n;
    }

    PriorVec encode(const PriorVec& raw) const { return (raw - mean).cwiseQuotient(std); }
    PriorVec decode(const PriorVec& z) const { return z.cwiseProduct(std) + mean; }

    void validate() const {
        if (!mean.allFinite() || !std.allFinite())
            throw ValidationError("normalizer statistics must be finite");
        if ((std.array() < kNormalizerStdFloor).any())
            throw ValidationError("normalizer std fell below the floor");
    }
};

// ---------------------------------------------------------------------------
// Denoiser network

constexpr int kTimeEmbedDims = 64;
constexpr int kDenoiserHiddenDims = 512;
constexpr int kDenoiserHiddenLayers = 3;

inline Eigen::Matrix<double, kTimeEmbedDims, 1> time_embedding(int t) {
    Eigen::Matrix<double, kTimeEmbedDims, 1> e;
    for (int k = 0; k < kTimeEmbedDims / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / kTimeEmbedDims);
        e[2 * k] = std::sin(t * freq);
        e[2 * k + 1] = std::cos(t * freq);
    }
    return e;
}

// Anything that maps a noisy normalized vector at step t to a clean estimate.
// Test doubles implement this alongside the trained network.
class DenoiserBase {
  public:
    virtual ~DenoiserBase() = default;
    virtual PriorVec denoise(const PriorVec& x_t, int t) const = 0;
    virtual const ParamNormalizer& normalizer() const = 0;
};

// Feed-forward x0-predictor: [x_t ; time embedding] -> hidden SiLU layers ->
// clean normalized vector. Weights row-major [out x in]; biases per layer.
struct Denoiser : DenoiserBase {
    ParamNormalizer norm;
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
    std::vector<double> loss_curve;  // recorded batch loss per training step

    static Denoiser seeded(std::uint64_t seed, int hidden_layers = kDenoiserHiddenLayers,
                           int hidden_dims = kDenoiserHiddenDims) {
        if (hidden_layers < 1 || hidden_dims < 1)
            throw ValidationError("denoiser needs at least one hidden layer and unit");
        Denoiser d;
        Rng rng(seed);
        std::vector<int> dims;
        dims.push_back(kPairParamDims + kTimeEmbedDims);
        for (int i = 0; i < hidden_layers; ++i) dims.push_back(hidden_dims);
        dims.push_back(kPairParamDims);
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            const int fan_in = dims[l], fan_out = dims[l + 1];
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            Eigen::MatrixXd wl(fan_out, fan_in);
            for (int r = 0; r < fan_out; ++r)
                for (int c = 0; c < fan_in; ++c) wl(r, c) = rng.uniform_in(-a, a);
            d.w.push_back(std::move(wl));
            d.b.push_back(Eigen::VectorXd::Zero(fan_out));
        }
        return d;
    }

    int layer_count() const { return static_cast<int>(w.size()); }

    void validate() const {
        if (w.empty() || w.size() != b.size())
            throw ValidationError("denoiser layer lists are inconsistent");
        if (w.front().cols() != kPairParamDims + kTimeEmbedDims)
            throw ValidationError("denoiser input width disagrees with the parameter layout");
        if (w.back().rows() != kPairParamDims)
            throw ValidationError("denoiser output width disagrees with the parameter layout");
        for (size_t l = 0; l < w.size(); ++l) {
            if (w[l].rows() != b[l].size())
                throw ValidationError("denoiser bias length disagrees with its layer");
            if (l > 0 && w[l].cols() != w[l - 1].rows())
                throw ValidationError("denoiser layer widths do not chain");
        }
        norm.validate();
    }

    PriorVec denoise(const PriorVec& x_t, int t) const override;
    const ParamNormalizer& normalizer() const override { return norm; }

    nlohmann::json to_json() const;
    static Denoiser from_json(const nlohmann::json& j);
};

namespace detail {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

struct DenoiserActivations {
    Eigen::VectorXd input;           // [x_t ; time embedding]
    std::vector<Eigen::VectorXd> z;  // pre-activations, one per layer
    std::vector<Eigen::VectorXd> h;  // SiLU outputs, one per hidden layer
};

inline DenoiserActivations denoiser_forward(const Denoiser& d, const PriorVec& x_t, int t) {
    DenoiserActivations acts;
    acts.input.resize(kPairParamDims + kTimeEmbedDims);
    acts.input.head<kPairParamDims>() = x_t;
    acts.input.tail<kTimeEmbedDims>() = time_embedding(t);

    const Eigen::VectorXd* prev = &acts.input;
    const int layers = d.layer_count();
    for (int l = 0; l < layers; ++l) {
        acts.z.push_back(d.w[l] * (*prev) + d.b[l]);
        if (l + 1 < layers) {
            acts.h.push_back(acts.z.back().unaryExpr([](double x) { return silu(x); }));
            prev = &acts.h.back();
        }
    }
    return acts;
}

struct DenoiserGrads {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;

    static DenoiserGrads zeros_like(const Denoiser& d) {
        DenoiserGrads g;
        for (int l = 0; l < d.layer_count(); ++l) {
            g.w.push_back(Eigen::MatrixXd::Zero(d.w[l].rows(), d.w[l].cols()));
            g.b.push_back(Eigen::VectorXd::Zero(d.b[l].size()));
        }
        return g;
    }

    void set_zero() {
        for (auto& m : w) m.setZero();
        for (auto& v : b) v.setZero();
    }
};

// Accumulates dL/dweights given dL/doutput for one forward pass.
inline void denoiser_backprop(const Denoiser& d, const DenoiserActivations& acts,
                              const Eigen::VectorXd& dout, DenoiserGrads& grads) {
    const int layers = d.layer_count();
    Eigen::VectorXd delta = dout;  // dL/dz of the current layer
    for (int l = layers - 1; l >= 0; --l) {
        const Eigen::VectorXd& below = l == 0 ? acts.input : acts.h[l - 1];
        grads.w[l].noalias() += delta * below.transpose();
        grads.b[l] += delta;
        if (l > 0) {
            Eigen::VectorXd dh = d.w[l].transpose() * delta;
            delta = dh.cwiseProduct(
                acts.z[l - 1].unaryExpr([](double x) { return silu_grad(x); }));
        }
    }
}

}  // namespace detail

inline PriorVec Denoiser::denoise(const PriorVec& x_t, int t) const {
    return detail::denoiser_forward(*this, x_t, t).z.back();
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr int kDenoiserSchemaVersion = 1;

inline nlohmann::json Denoiser::to_json() const {
    nlohmann::json j;
    j["schema_version"] = kDenoiserSchemaVersion;
    j["input_dims"] = kPairParamDims;
    j["time_embed_dims"] = kTimeEmbedDims;
    j["normalizer"] = {{"mean", std::vector<double>(norm.mean.data(), norm.mean.data() + kPairParamDims)},
                       {"std", std::vector<double>(norm.std.data(), norm.std.data() + kPairParamDims)}};
    nlohmann::json layers = nlohmann::json::array();
    for (size_t l = 0; l < w.size(); ++l) {
        nlohmann::json layer;
        layer["rows"] = w[l].rows();
        layer["cols"] = w[l].cols();
        std::vector<double> flat(static_cast<size_t>(w[l].size()));
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            flat.data(), w[l].rows(), w[l].cols()) = w[l];
        layer["weights"] = std::move(flat);
        layer["bias"] = std::vector<double>(b[l].data(), b[l].data() + b[l].size());
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    j["loss_curve"] = loss_curve;
    return j;
}

inline Denoiser Denoiser::from_json(const nlohmann::json& j) {
    Denoiser d;
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kDenoiserSchemaVersion)
            throw ValidationError("unsupported denoiser schema_version " +
                                  std::to_string(version));
        if (j.at("input_dims").get<int>() != kPairParamDims ||
            j.at("time_embed_dims").get<int>() != kTimeEmbedDims)
            throw ValidationError("denoiser checkpoint dims disagree with this build");
        const auto mean = j.at("normalizer").at("mean").get<std::vector<double>>();
        const auto std_v = j.at("normalizer").at("std").get<std::vector<double>>();
        if (mean.size() != kPairParamDims || std_v.size() != kPairParamDims)
            throw ValidationError("normalizer statistics have the wrong length");
        d.norm.mean = Eigen::Map<const PriorVec>(mean.data());
        d.norm.std = Eigen::Map<const PriorVec>(std_v.data());
        for (const auto& layer : j.at("layers")) {
            const int rows = layer.at("rows").get<int>();
            const int cols = layer.at("cols").get<int>();
            const auto flat = layer.at("weights").get<std::vector<double>>();
            const auto bias = layer.at("bias").get<std::vector<double>>();
            if (static_cast<int>(flat.size()) != rows * cols ||
                static_cast<int>(bias.size()) != rows)
                throw ValidationError("denoiser layer payload has the wrong length");
            Eigen::MatrixXd wl(rows, cols);
            wl = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>>(flat.data(), rows, cols);
            d.w.push_back(std::move(wl));
            d.b.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), rows));
        }
        d.loss_curve = j.value("loss_curve", std::vector<double>{});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("denoiser checkpoint parse error: ") + e.what());
    }
    d.validate();
    return d;
}

inline void save_denoiser(const Denoiser& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << d.to_json().dump();
    if (!out) throw Error("failed writing denoiser checkpoint to '" + path + "'");
}

inline Denoiser load_denoiser(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open denoiser checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("denoiser checkpoint parse error: ") + e.what());
    }
    return Denoiser::from_json(j);
}

// ---------------------------------------------------------------------------
// Training

constexpr size_t kMinTrainingExamples = 64;

struct PriorExample {
    BodyParams a, b;
    std::string source;  // dataset tag used by the mixing fractions; may be empty
};

struct PriorTrainConfig {
    int steps = 1000;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double lambda_phi = 1.0;
    double lambda_theta = 1.0;
    double lambda_beta = 1.0;
    double lambda_gamma = 1.0;
    double lambda_v2v = 1.0;
    int hidden_layers = kDenoiserHiddenLayers;
    int hidden_dims = kDenoiserHiddenDims;
    std::uint64_t seed = 0;
    // Sampling fraction per source tag; empty means uniform over all examples.
    std::map<std::string, double> source_fractions;

    void validate() const {
        if (steps < 1) throw ValidationError("training step count must be positive");
        if (batch_size < 1) throw ValidationError("training batch size must be positive");
        if (learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
        if (lambda_phi < 0.0 || lambda_theta < 0.0 || lambda_beta < 0.0 ||
            lambda_gamma < 0.0 || lambda_v2v < 0.0)
            throw ValidationError("training loss weights must be nonnegative");
        if (hidden_layers < 1 || hidden_dims < 1)
            throw ValidationError("denoiser needs at least one hidden layer and unit");
    }
};

namespace detail {

// Per-dimension group weight: phi, theta, beta, gamma blocks per person.
inline PriorVec group_lambda_vector(double lambda_phi, double lambda_theta, double lambda_beta,
                                    double lambda_gamma) {
    PriorVec lam;
    for (int person = 0; person < 2; ++person) {
        const int base = person * kPersonParamDims;
        for (int i = 0; i < 3; ++i) lam[base + i] = lambda_phi;
        for (int i = 3; i < 66; ++i) lam[base + i] = lambda_theta;
        for (int i = 66; i < 76; ++i) lam[base + i] = lambda_beta;
        for (int i = 76; i < 79; ++i) lam[base + i] = lambda_gamma;
    }
    return lam;
}

struct PreparedExample {
    PriorVec raw = PriorVec::Zero();
    PriorVec z = PriorVec::Zero();  // normalized
    double sigma_a = 0.0, sigma_b = 0.0;
    std::vector<Vec3d> surface;  // posed surface points, person a then person b
};

struct TrainBatchItem {
    int example = 0;
    int t = 1;
    PriorVec eps = PriorVec::Zero();
};

// Deterministic training objective on a fixed batch: parameter-group squared
// L2 in normalized space plus the surface term in meters through the decoded
// parameters. Fills grads (batch mean) when non-null and returns the loss.
inline double training_batch_loss(const Denoiser& d, const std::vector<PreparedExample>& prep,
                                  const std::vector<TrainBatchItem>& batch,
                                  const PriorVec& group_lambda, double lambda_v2v,
                                  const DiffusionSchedule& schedule, const BodyModelAsset& model,
                                  DenoiserGrads* grads) {
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    for (const auto& item : batch) {
        const auto& ex = prep[static_cast<size_t>(item.example)];
        const PriorVec x_t = diffuse(ex.z, item.t, item.eps, schedule);
        const auto acts = denoiser_forward(d, x_t, item.t);
        const PriorVec pred = acts.z.back();

        const PriorVec diff = pred - ex.z;
        double loss = group_lambda.cwiseProduct(diff.cwiseAbs2()).sum();
        PriorVec dout = 2.0 * group_lambda.cwiseProduct(diff);

        if (lambda_v2v > 0.0) {
            const PriorVec raw_pred = d.norm.decode(pred);
            const auto [la, lb] = lift_pair(from_prior_vec(raw_pred), ex.sigma_a, ex.sigma_b);
            const auto posed_a = forward_kinematics(model, la);
            const auto posed_b = forward_kinematics(model, lb);
            PairDual v2v(0.0);
            size_t k = 0;
            auto add_body = [&](const PosedBodyT<PairDual>& posed) {
                for (const auto& s : posed.surface) {
                    const Vec3d& tgt = ex.surface[k++];
                    const PairDual dx = s.position.x - tgt.x;
                    const PairDual dy = s.position.y - tgt.y;
                    const PairDual dz = s.position.z - tgt.z;
                    v2v += dx * dx + dy * dy + dz * dz;
                }
            };
            add_body(posed_a);
            add_body(posed_b);
            loss += lambda_v2v * v2v.v;
            // Chain through the affine decode: d(raw)/d(normalized) = std.
            dout += lambda_v2v * v2v.d.cwiseProduct(d.norm.std);
        }

        if (grads) denoiser_backprop(d, acts, (inv_n * dout).eval(), *grads);
        loss_sum += loss;
    }
    return loss_sum * inv_n;
}

struct DenoiserAdam {
    DenoiserGrads m, v;
    int t = 0;

    static DenoiserAdam zeros_like(const Denoiser& d) {
        return {DenoiserGrads::zeros_like(d), DenoiserGrads::zeros_like(d), 0};
    }
};

// Cumulative sampling bins over source tags; empty bins = uniform sampling.
struct SourceTable {
    std::vector<std::pair<double, std::vector<int>>> bins;  // cumulative fraction, indices
};

inline SourceTable build_source_table(const std::vector<PriorExample>& dataset,
                                      const std::map<std::string, double>& fractions) {
    SourceTable table;
    if (fractions.empty()) return table;
    double total = 0.0;
    for (const auto& [tag, frac] : fractions) {
        if (frac < 0.0) throw ValidationError("source fraction for '" + tag + "' is negative");
        if (frac == 0.0) continue;
        std::vector<int> idx;
        for (size_t i = 0; i < dataset.size(); ++i)
            if (dataset[i].source == tag) idx.push_back(static_cast<int>(i));
        if (idx.empty()) throw ValidationError("source '" + tag + "' has no training examples");
        total += frac;
        table.bins.emplace_back(total, std::move(idx));
    }
    if (table.bins.empty()) throw ValidationError("source fractions sum to zero");
    for (auto& bin : table.bins) bin.first /= total;
    table.bins.back().first = 1.0;  // guard against rounding in the last bin
    return table;
}

inline int pick_example(const SourceTable& table, size_t dataset_size, Rng& rng) {
    if (table.bins.empty()) return rng.uniform_int(0, static_cast<int>(dataset_size) - 1);
    const double u = rng.uniform();
    const auto it = std::find_if(table.bins.begin(), table.bins.end(),
                                 [&](const auto& bin) { return u <= bin.first; });
    const auto& idx = it->second;
    return idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(idx.size()) - 1))];
}

inline void adam_update(Denoiser& d, const DenoiserGrads& g, DenoiserAdam& adam, double lr) {
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, adam.t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, adam.t);
    for (int l = 0; l < d.layer_count(); ++l) {
        adam.m.w[l] = kAdamBeta1 * adam.m.w[l] + (1.0 - kAdamBeta1) * g.w[l];
        adam.v.w[l] = kAdamBeta2 * adam.v.w[l] + (1.0 - kAdamBeta2) * g.w[l].cwiseAbs2();
        d.w[l].array() -=
            lr * (adam.m.w[l].array() / bc1) / ((adam.v.w[l].array() / bc2).sqrt() + kAdamEpsilon);
        adam.m.b[l] = kAdamBeta1 * adam.m.b[l] + (1.0 - kAdamBeta1) * g.b[l];
        adam.v.b[l] = kAdamBeta2 * adam.v.b[l] + (1.0 - kAdamBeta2) * g.b[l].cwiseAbs2();
        d.b[l].array() -=
            lr * (adam.m.b[l].array() / bc1) / ((adam.v.b[l].array() / bc2).sqrt() + kAdamEpsilon);
    }
}

}  // namespace detail

// Trains an x0-predicting denoiser on packed pairs. Each step samples a batch
// (optionally by source fractions), a uniform step t in {1..T}, and fresh
// noise, then takes one Adam step on the group + surface loss. Deterministic
// given the seed; the per-step batch loss is recorded on the returned model.
inline Denoiser train_prior(const std::vector<PriorExample>& dataset,
                            const DiffusionSchedule& schedule, const PriorTrainConfig& config,
                            const BodyModelAsset& model) {
    config.validate();
    schedule.validate();
    if (dataset.size() < kMinTrainingExamples)
        throw ValidationError("training set needs at least " +
                              std::to_string(kMinTrainingExamples) + " examples, got " +
                              std::to_string(dataset.size()));

    std::vector<PriorVec> raws;
    raws.reserve(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        validate_params(dataset[i].a);
        validate_params(dataset[i].b);
        PriorVec r = to_prior_vec(pack_pair(dataset[i].a, dataset[i].b));
        if (!r.allFinite())
            throw ValidationError("training example " + std::to_string(i) +
                                  " has non-finite parameters");
        raws.push_back(std::move(r));
    }

    Denoiser d = Denoiser::seeded(config.seed, config.hidden_layers, config.hidden_dims);
    d.norm = ParamNormalizer::fit(raws);

    std::vector<detail::PreparedExample> prep(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        prep[i].raw = raws[i];
        prep[i].z = d.norm.encode(raws[i]);
        prep[i].sigma_a = dataset[i].a.sigma;
        prep[i].sigma_b = dataset[i].b.sigma;
        if (config.lambda_v2v > 0.0) {
            for (const auto* person : {&dataset[i].a, &dataset[i].b}) {
                const auto posed = forward_kinematics(model, *person);
                for (const auto& s : posed.surface) prep[i].surface.push_back(s.position);
            }
        }
    }

    const detail::SourceTable sources =
        detail::build_source_table(dataset, config.source_fractions);

    const PriorVec group_lambda = detail::group_lambda_vector(
        config.lambda_phi, config.lambda_theta, config.lambda_beta, config.lambda_gamma);
    auto grads = detail::DenoiserGrads::zeros_like(d);
    auto adam = detail::DenoiserAdam::zeros_like(d);
    Rng rng(config.seed);

    d.loss_curve.reserve(static_cast<size_t>(config.steps));
    for (int step = 1; step <= config.steps; ++step) {
        std::vector<detail::TrainBatchItem> batch(static_cast<size_t>(config.batch_size));
        for (auto& item : batch) {
            item.example = detail::pick_example(sources, dataset.size(), rng);
            item.t = rng.uniform_int(1, schedule.T);
            for (int i = 0; i < kPairParamDims; ++i) item.eps[i] = rng.normal();
        }

        grads.set_zero();
        const double loss = detail::training_batch_loss(d, prep, batch, group_lambda,
                                                        config.lambda_v2v, schedule, model,
                                                        &grads);
        if (!std::isfinite(loss))
            throw Error("non-finite training loss at step " + std::to_string(step));
        detail::adam_update(d, grads, adam, config.learning_rate);
        d.loss_curve.push_back(loss);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Unconditional sampling

// Ancestral sampling from pure noise down to t = 0: predict the clean sample,
// then step to t-1 through the posterior implied by the x0 parameterization.
// The t = 1 posterior collapses to the prediction itself. Returns the decoded
// (raw-space) packed pair vector; deterministic given the seed.
inline PriorVec sample_prior(const DenoiserBase& denoiser, const DiffusionSchedule& schedule,
                             std::uint64_t seed) {
    schedule.validate();
    Rng rng(seed);
    auto draw = [&rng] {
        PriorVec e;
        for (int i = 0; i < kPairParamDims; ++i) e[i] = rng.normal();
        return e;
    };

    PriorVec x = draw();  // x_T ~ N(0, I)
    for (int t = schedule.T; t >= 1; --t) {
        const PriorVec x0 = denoiser.denoise(x, t);
        if (t == 1) {
            x = x0;
            break;
        }
        const double sp = schedule.sigma_prime_at(t);
        const double sp_prev = schedule.sigma_prime_at(t - 1);
        const double beta_t = schedule.sigma_at(t);
        const double coef_x0 = std::sqrt(sp_prev) * beta_t / (1.0 - sp);
        const double coef_xt = std::sqrt(1.0 - beta_t) * (1.0 - sp_prev) / (1.0 - sp);
        const double var = (1.0 - sp_prev) / (1.0 - sp) * beta_t;
        x = coef_x0 * x0 + coef_xt * x + std::sqrt(var) * draw();
    }
    return denoiser.normalizer().decode(x);
}

// ---------------------------------------------------------------------------
// Test-time guidance

struct GuidanceWeights {
    double lambda_phi_hat = 1.0;
    double lambda_theta_hat = 1.0;
    double lambda_beta_hat = 1.0;
    double lambda_gamma_hat = 1.0;
    int t_guid = 10;  // noise level for the diffuse-denoise round trip

    void validate(const DiffusionSchedule& schedule) const {
        if (lambda_phi_hat < 0.0 || lambda_theta_hat < 0.0 || lambda_beta_hat < 0.0 ||
            lambda_gamma_hat < 0.0)
            throw ValidationError("guidance weights must be nonnegative");
        if (t_guid < 1 || t_guid > schedule.T)
            throw ValidationError("t_guid must lie in [1, T]");
    }
};

// One diffuse-denoise round trip of the current estimate; the result is the
// constant target the guidance terms pull toward (no gradient flows through
// the denoiser).
inline PriorVec guidance_target(const PriorVec& current_raw, const DenoiserBase& denoiser,
                                const DiffusionSchedule& schedule, int t_guid,
                                const PriorVec& eps) {
    const ParamNormalizer& norm = denoiser.normalizer();
    const PriorVec x_t = diffuse(norm.encode(current_raw), t_guid, eps, schedule);
    return norm.decode(denoiser.denoise(x_t, t_guid));
}

// Weighted squared distances between the current parameter groups and the
// denoised target, summed over both people.
template <typename T>
T guidance_group_loss(const BodyParamsT<T>& a, const BodyParamsT<T>& b,
                      const BodyParams& target_a, const BodyParams& target_b,
                      const GuidanceWeights& gw) {
    auto person = [&gw](const BodyParamsT<T>& p, const BodyParams& tgt) {
        auto sq = [](const T& x) { return x * x; };
        const T phi = sq(p.phi.x - tgt.phi.x) + sq(p.phi.y - tgt.phi.y) + sq(p.phi.z - tgt.phi.z);
        T theta(0.0);
        for (int j = 0; j < kArticulatedJoints; ++j)
            theta += sq(p.theta[j].x - tgt.theta[j].x) + sq(p.theta[j].y - tgt.theta[j].y) +
                     sq(p.theta[j].z - tgt.theta[j].z);
        T beta(0.0);
        for (int i = 0; i < kShapeDims; ++i) beta += sq(p.beta[i] - tgt.beta[i]);
        const T gamma =
            sq(p.gamma.x - tgt.gamma.x) + sq(p.gamma.y - tgt.gamma.y) + sq(p.gamma.z - tgt.gamma.z);
        return gw.lambda_phi_hat * phi + gw.lambda_theta_hat * theta + gw.lambda_beta_hat * beta +
               gw.lambda_gamma_hat * gamma;
    };
    return person(a, target_a) + person(b, target_b);
}

// Guidance loss with explicit noise (deterministic form).
inline double guidance_loss(const BodyParams& a, const BodyParams& b, const DenoiserBase& denoiser,
                            const DiffusionSchedule& schedule, const GuidanceWeights& gw,
                            const PriorVec& eps) {
    gw.validate(schedule);
    const PriorVec current = to_prior_vec(pack_pair(a, b));
    const PriorVec target = guidance_target(current, denoiser, schedule, gw.t_guid, eps);
    const auto [ta, tb] = unpack_pair(from_prior_vec(target), a.sigma, b.sigma);
    return guidance_group_loss(BodyParamsT<double>::lift(a), BodyParamsT<double>::lift(b), ta, tb,
                               gw);
}

inline double guidance_loss(const BodyParams& a, const BodyParams& b, const DenoiserBase& denoiser,
                            const DiffusionSchedule& schedule, const GuidanceWeights& gw,
                            Rng& rng) {
    PriorVec eps;
    for (int i = 0; i < kPairParamDims; ++i) eps[i] = rng.normal();
    return guidance_loss(a, b, denoiser, schedule, gw, eps);
}

// ---------------------------------------------------------------------------
// Guided fitting

// Two-stage fit with the contact-map, GMM, and shape terms replaced by the
// diffusion pull. The pose anchor is the denoised initialization (one
// diffuse-denoise pass of the init), and every iteration re-diffuses the
// current estimate with fresh seeded noise to form that iteration's target.
inline FitResult fit_with_prior(const FitInit& init, const Keypoints2D& kps_a,
                                const Keypoints2D& kps_b, const Camera& camera,
                                const DenoiserBase& denoiser, const DiffusionSchedule& schedule,
                                const LossWeights& weights, const GuidanceWeights& gw,
                                const OptimConfig& config, const BodyModelAsset& model) {
    config.validate();
    weights.validate();
    schedule.validate();
    gw.validate(schedule);
    validate_params(init.a);
    validate_params(init.b);

    Rng rng(config.seed);
    auto draw = [&rng] {
        PriorVec e;
        for (int i = 0; i < kPairParamDims; ++i) e[i] = rng.normal();
        return e;
    };

    // Pose anchor: one diffuse-denoise round trip of the initialization.
    const PriorVec init_raw = to_prior_vec(pack_pair(init.a, init.b));
    const PriorVec denoised_init =
        guidance_target(init_raw, denoiser, schedule, gw.t_guid, draw());
    const auto [anchor_a, anchor_b] =
        unpack_pair(from_prior_vec(denoised_init), init.a.sigma, init.b.sigma);

    // Contact, GMM, and shape terms are out; their weights are zeroed and an
    // empty contact map keeps the shared evaluator inert on those paths.
    LossWeights guided = weights;
    guided.lambda_c = 0.0;
    guided.lambda_gmm = 0.0;
    guided.lambda_beta = 0.0;
    const ContactMap no_contacts;
    const SoftWeights no_soft_weights;

    BodyParams target_a, target_b;  // this iteration's denoised target
    auto begin_iteration = [&](int, const PairParamVector& xx) {
        const PriorVec target =
            guidance_target(to_prior_vec(xx), denoiser, schedule, gw.t_guid, draw());
        std::tie(target_a, target_b) =
            unpack_pair(from_prior_vec(target), init.a.sigma, init.b.sigma);
    };
    auto eval_terms = [&](int stage, const auto& pa, const auto& pb) {
        auto terms = total_loss_terms(stage, pa, pb, kps_a, kps_b, camera, guided, no_contacts,
                                      no_soft_weights, anchor_a.theta, anchor_b.theta, nullptr,
                                      model);
        terms.diffusion = guidance_group_loss(pa, pb, target_a, target_b, gw);
        detail::check_finite(terms.diffusion, "L_diffusion");
        terms.total += terms.diffusion;
        return terms;
    };
    auto eval_value = [&](int stage, const PairParamVector& xx) {
        const auto [pa, pb] = unpack_pair(xx, init.a.sigma, init.b.sigma);
        return eval_terms(stage, BodyParamsT<double>::lift(pa), BodyParamsT<double>::lift(pb));
    };
    auto eval_grad = [&](int stage, const PairParamVector& xx) {
        const auto [la, lb] = lift_pair(xx, init.a.sigma, init.b.sigma);
        return eval_terms(stage, la, lb);
    };

    FitResult result;
    result.init = init;

    PairParamVector x = pack_pair(init.a, init.b);
    auto run = [&](int stage, int steps, std::vector<LossTerms<double>>& trace, int& iters) {
        detail::run_adam_stage(
            stage, steps, config, detail::stage_mask(stage, config.optimize_phi_stage1),
            [&](const PairParamVector& xx) { return eval_value(stage, xx); },
            [&](const PairParamVector& xx) { return eval_grad(stage, xx); }, begin_iteration, x,
            trace, iters);
    };
    run(1, config.stage1_steps, result.trace_stage1, result.iterations_stage1);
    run(2, config.stage2_steps, result.trace_stage2, result.iterations_stage2);

    std::tie(result.final_a, result.final_b) = unpack_pair(x, init.a.sigma, init.b.sigma);
    result.config_swapped = result.trace_stage2.back().config_swapped;
    std::tie(result.reproj_error_a, result.reproj_error_b) =
        reprojection_error(result.final_a, result.final_b, kps_a, kps_b, camera, model);
    return result;
}

}  // namespace apu
