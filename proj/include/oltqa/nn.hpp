#pragma once

// Small neural building blocks on top of the autograd engine: parameter stores,
// AdamW, linear/layer-norm/attention layers and a deterministic RNG.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oltqa/autograd.hpp"

namespace oltqa::nn {

using ag::Matrix;
using ag::Var;

/// Deterministic generator. Distributions are implemented here rather than through
/// <random>'s distribution classes so that streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform();                          // [0, 1)
    double normal();                           // N(0, 1), Box-Muller
    std::size_t below(std::size_t n);          // [0, n)

    /// k distinct indices from [0, n), in sampling order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);
    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Mixes several integers into one seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

/// Ordered, named collection of trainable parameters.
class ParamSet {
public:
    Var& add(const std::string& name, Matrix init);
    void extend(const ParamSet& other, const std::string& prefix = "");

    std::vector<std::pair<std::string, Var>>& items() { return items_; }
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    /// Squared L2 norm of every accumulated gradient.
    double grad_norm_sq() const;

    nlohmann::json to_json() const;
    /// Loads values by name; shapes must match exactly.
    void load_json(const nlohmann::json& j);
    std::uint64_t fingerprint() const;

private:
    std::vector<std::pair<std::string, Var>> items_;
};

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Decoupled weight-decay Adam.
class AdamW {
public:
    AdamW(ParamSet params, AdamWConfig config);

    /// Applies one update from the accumulated gradients, then zeroes them.
    void step();
    void zero_grad() { params_.zero_grad(); }

    ParamSet& params() { return params_; }
    std::int64_t steps() const { return t_; }

    nlohmann::json state_json() const;
    void load_state_json(const nlohmann::json& j);

private:
    ParamSet params_;
    AdamWConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::int64_t t_ = 0;
};

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    Linear() = default;
    Linear(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
           bool with_bias = true);
    Var operator()(const Var& x) const;
};

struct LayerNorm {
    Var gain;
    Var bias;

    LayerNorm() = default;
    LayerNorm(ParamSet& params, const std::string& name, Eigen::Index dim);
    Var operator()(const Var& x) const;
};

/// Multi-head scaled dot-product attention.
struct Attention {
    Linear q, k, v, o;
    int heads = 1;

    Attention() = default;
    Attention(ParamSet& params, const std::string& name, Eigen::Index dim, int heads, Rng& rng);

    /// key_valid marks which key rows may be attended (padding is false). With causal set,
    /// query row i sees key rows <= i.
    Var operator()(const Var& queries, const Var& keys, const std::vector<bool>& key_valid,
                   bool causal) const;
};

struct FeedForward {
    Linear in, out;

    FeedForward() = default;
    FeedForward(ParamSet& params, const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                Rng& rng);
    Var operator()(const Var& x) const;
};

/// Pre-norm transformer encoder block.
struct EncoderBlock {
    LayerNorm ln1, ln2;
    Attention attn;
    FeedForward ff;

    EncoderBlock() = default;
    EncoderBlock(ParamSet& params, const std::string& name, Eigen::Index dim, int heads,
                 Eigen::Index ff_dim, Rng& rng);
    Var operator()(const Var& x, const std::vector<bool>& valid) const;
};

/// Pre-norm transformer decoder block (causal self-attention + cross-attention).
struct DecoderBlock {
    LayerNorm ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    FeedForward ff;

    DecoderBlock() = default;
    DecoderBlock(ParamSet& params, const std::string& name, Eigen::Index dim, int heads,
                 Eigen::Index ff_dim, Rng& rng);
    Var operator()(const Var& y, const Var& memory, const std::vector<bool>& memory_valid) const;
};

/// Fixed sinusoidal position table, rows = positions.
Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index dim);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace oltqa::nn
