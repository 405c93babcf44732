#include "oltqa/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "oltqa/errors.hpp"
#include "oltqa/text.hpp"

namespace oltqa::nn {

double Rng::uniform()
{
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal()
{
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) {
        u1 = 1e-300;
    }
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n)
{
    if (n == 0) {
        throw InvalidArgument("Rng::below(0)");
    }
    return static_cast<std::size_t>(engine_() % n);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k)
{
    if (k > n) {
        throw InvalidArgument("cannot sample more items than available");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts)
{
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (auto p : parts) {
        h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        std::uint64_t z = h;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        h = z ^ (z >> 31);
    }
    return h;
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng)
{
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = rng.normal() * stddev;
        }
    }
    return m;
}

Var& ParamSet::add(const std::string& name, Matrix init)
{
    for (const auto& [n, _] : items_) {
        if (n == name) {
            throw InvalidArgument("duplicate parameter name: " + name);
        }
    }
    items_.emplace_back(name, ag::parameter(std::move(init)));
    return items_.back().second;
}

void ParamSet::extend(const ParamSet& other, const std::string& prefix)
{
    for (const auto& [n, v] : other.items_) {
        items_.emplace_back(prefix + n, v);
    }
}

std::size_t ParamSet::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& [_, v] : items_) {
        n += static_cast<std::size_t>(v.value().size());
    }
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& [_, v] : items_) {
        v.zero_grad();
    }
}

double ParamSet::grad_norm_sq() const
{
    double total = 0.0;
    for (const auto& [_, v] : items_) {
        if (v.node()->grad.size() != 0) {
            total += v.node()->grad.squaredNorm();
        }
    }
    return total;
}

nlohmann::json matrix_to_json(const Matrix& m)
{
    nlohmann::json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
    }
    j["data"] = std::move(data);
    return j;
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    auto rows = j.at("rows").get<Eigen::Index>();
    auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw InvalidArgument("matrix payload size does not match its shape");
    }
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
        }
    }
    return m;
}

nlohmann::json ParamSet::to_json() const
{
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [name, v] : items_) {
        auto entry = matrix_to_json(v.value());
        entry["name"] = name;
        j.push_back(std::move(entry));
    }
    return j;
}

void ParamSet::load_json(const nlohmann::json& j)
{
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& entry : j) {
        by_name[entry.at("name").get<std::string>()] = &entry;
    }
    for (auto& [name, v] : items_) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw InvalidArgument("checkpoint is missing parameter " + name);
        }
        Matrix m = matrix_from_json(*it->second);
        if (m.rows() != v.rows() || m.cols() != v.cols()) {
            throw InvalidArgument("checkpoint shape mismatch for parameter " + name);
        }
        v.mutable_value() = std::move(m);
    }
}

std::uint64_t ParamSet::fingerprint() const
{
    std::uint64_t h = text::fnv1a("params");
    for (const auto& [name, v] : items_) {
        h = text::fnv1a(name, h);
        const auto& m = v.value();
        std::string_view bytes(reinterpret_cast<const char*>(m.data()),
                               static_cast<std::size_t>(m.size()) * sizeof(double));
        h = text::fnv1a(bytes, h);
    }
    return h;
}

AdamW::AdamW(ParamSet params, AdamWConfig config) : params_(std::move(params)), cfg_(config)
{
    for (const auto& [_, v] : params_.items()) {
        m_.push_back(Matrix::Zero(v.rows(), v.cols()));
        v_.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
}

void AdamW::step()
{
    ++t_;
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double norm = std::sqrt(params_.grad_norm_sq());
        if (norm > cfg_.clip_norm) {
            clip = cfg_.clip_norm / norm;
        }
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& var = items[i].second;
        auto& node = *var.node();
        if (node.grad.size() == 0) {
            continue;
        }
        Matrix g = node.grad * clip;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        node.value *= (1.0 - cfg_.learning_rate * cfg_.weight_decay);
        node.value.array() -= cfg_.learning_rate * (m_[i].array() / bc1) /
                              ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    params_.zero_grad();
}

nlohmann::json AdamW::state_json() const
{
    nlohmann::json j;
    j["t"] = t_;
    j["m"] = nlohmann::json::array();
    j["v"] = nlohmann::json::array();
    for (std::size_t i = 0; i < m_.size(); ++i) {
        j["m"].push_back(matrix_to_json(m_[i]));
        j["v"].push_back(matrix_to_json(v_[i]));
    }
    return j;
}

void AdamW::load_state_json(const nlohmann::json& j)
{
    if (j.at("m").size() != m_.size() || j.at("v").size() != v_.size()) {
        throw InvalidArgument("optimizer state does not match the parameter set");
    }
    t_ = j.at("t").get<std::int64_t>();
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = matrix_from_json(j["m"][i]);
        v_[i] = matrix_from_json(j["v"][i]);
    }
}

Linear::Linear(ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
               bool with_bias)
{
    weight = params.add(name + ".weight", random_normal(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (with_bias) {
        bias = params.add(name + ".bias", Matrix::Zero(1, out));
    }
}

Var Linear::operator()(const Var& x) const
{
    Var y = ag::matmul(x, weight);
    return bias.defined() ? ag::add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, Eigen::Index dim)
{
    gain = params.add(name + ".gain", Matrix::Ones(1, dim));
    bias = params.add(name + ".bias", Matrix::Zero(1, dim));
}

Var LayerNorm::operator()(const Var& x) const
{
    return ag::layer_norm_rows(x, gain, bias);
}

Attention::Attention(ParamSet& params, const std::string& name, Eigen::Index dim, int heads_, Rng& rng)
    : q(params, name + ".q", dim, dim, rng),
      k(params, name + ".k", dim, dim, rng),
      v(params, name + ".v", dim, dim, rng),
      o(params, name + ".o", dim, dim, rng),
      heads(heads_)
{
    if (heads <= 0 || dim % heads != 0) {
        throw InvalidArgument("attention dimension must be divisible by the head count");
    }
}

Var Attention::operator()(const Var& queries, const Var& keys, const std::vector<bool>& key_valid,
                          bool causal) const
{
    const Eigen::Index nq = queries.rows();
    const Eigen::Index nk = keys.rows();
    if (static_cast<Eigen::Index>(key_valid.size()) != nk) {
        throw InvalidArgument("attention mask length does not match key count");
    }
    Matrix mask = Matrix::Zero(nq, nk);
    constexpr double kBlocked = -1e9;
    for (Eigen::Index i = 0; i < nq; ++i) {
        for (Eigen::Index j = 0; j < nk; ++j) {
            if (!key_valid[static_cast<std::size_t>(j)] || (causal && j > i)) {
                mask(i, j) = kBlocked;
            }
        }
    }
    Var Q = q(queries);
    Var K = k(keys);
    Var V = v(keys);
    const Eigen::Index dh = Q.cols() / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? Q : ag::slice_cols(Q, h * dh, dh);
        Var kh = heads == 1 ? K : ag::slice_cols(K, h * dh, dh);
        Var vh = heads == 1 ? V : ag::slice_cols(V, h * dh, dh);
        Var scores = ag::add_constant(ag::scale(ag::matmul_nt(qh, kh), inv), mask);
        outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
    }
    Var joined = heads == 1 ? outs.front() : ag::concat_cols(outs);
    return o(joined);
}

FeedForward::FeedForward(ParamSet& params, const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                         Rng& rng)
    : in(params, name + ".in", dim, hidden, rng), out(params, name + ".out", hidden, dim, rng)
{
}

Var FeedForward::operator()(const Var& x) const
{
    return out(ag::relu(in(x)));
}

EncoderBlock::EncoderBlock(ParamSet& params, const std::string& name, Eigen::Index dim, int heads,
                           Eigen::Index ff_dim, Rng& rng)
    : ln1(params, name + ".ln1", dim),
      ln2(params, name + ".ln2", dim),
      attn(params, name + ".attn", dim, heads, rng),
      ff(params, name + ".ff", dim, ff_dim, rng)
{
}

Var EncoderBlock::operator()(const Var& x, const std::vector<bool>& valid) const
{
    Var h = ln1(x);
    Var y = ag::add(x, attn(h, h, valid, false));
    return ag::add(y, ff(ln2(y)));
}

DecoderBlock::DecoderBlock(ParamSet& params, const std::string& name, Eigen::Index dim, int heads,
                           Eigen::Index ff_dim, Rng& rng)
    : ln1(params, name + ".ln1", dim),
      ln2(params, name + ".ln2", dim),
      ln3(params, name + ".ln3", dim),
      self_attn(params, name + ".self", dim, heads, rng),
      cross_attn(params, name + ".cross", dim, heads, rng),
      ff(params, name + ".ff", dim, ff_dim, rng)
{
}

Var DecoderBlock::operator()(const Var& y, const Var& memory, const std::vector<bool>& memory_valid) const
{
    std::vector<bool> all(static_cast<std::size_t>(y.rows()), true);
    Var h = ln1(y);
    Var a = ag::add(y, self_attn(h, h, all, true));
    Var b = ag::add(a, cross_attn(ln2(a), memory, memory_valid, false));
    return ag::add(b, ff(ln3(b)));
}

Matrix sinusoidal_positions(Eigen::Index length, Eigen::Index dim)
{
    Matrix pe(length, dim);
    for (Eigen::Index pos = 0; pos < length; ++pos) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            double angle = static_cast<double>(pos) * rate;
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace oltqa::nn
