#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kanfpn/autodiff.hpp"
#include "kanfpn/tensor.hpp"

namespace kanfpn::nn {

struct Param {
    std::string name;  // dotted path, unique within a model
    Tensor value;
    bool trainable = true;
};

class ParamMap;

/// Owns a model's parameters in registration order.
class ParamStore {
public:
    void add(Param p);
    bool contains(const std::string& name) const;
    const Param& at(const std::string& name) const;
    /// Replaces a value; the shape must not change.
    void set(const std::string& name, Tensor value);

    const std::vector<Param>& params() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::vector<std::string> names() const;
    std::int64_t scalar_count(bool trainable_only = true) const;

    /// Untracked name -> value mapping.
    ParamMap view() const;
    /// Registers every trainable parameter on `tape`; frozen ones stay untracked.
    ParamMap bind(Tape& tape) const;
    ParamStore to(DType dtype) const;

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class ParamMap {
public:
    void insert(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return map_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    const std::unordered_map<std::string, Tensor>& entries() const { return map_; }

private:
    std::unordered_map<std::string, Tensor> map_;
};

/// Prefix-scoped read access, e.g. scope("encoder.blocks.0")["attn.q.w"].
class Scope {
public:
    Scope(const ParamMap& map, std::string prefix);

    const Tensor& operator[](std::string_view leaf) const;
    bool contains(std::string_view leaf) const;
    Scope sub(std::string_view name) const;
    const std::string& prefix() const { return prefix_; }
    const ParamMap& map() const { return *map_; }

private:
    std::string join(std::string_view leaf) const;

    const ParamMap* map_;
    std::string prefix_;
};

/// Prefix-scoped parameter registration with deterministic per-name seeding:
/// the draw for a parameter depends only on (seed, full name).
class Builder {
public:
    Builder(ParamStore& store, std::string prefix, std::uint64_t seed, DType dtype = DType::f32);

    Builder sub(std::string_view name) const;
    /// Uniform in +-sqrt(6 / fan_in).
    void kaiming(std::string_view leaf, Shape shape, std::int64_t fan_in) const;
    void constant(std::string_view leaf, Shape shape, double value, bool trainable = true) const;
    void zeros(std::string_view leaf, Shape shape) const { constant(leaf, std::move(shape), 0.0); }
    void ones(std::string_view leaf, Shape shape) const { constant(leaf, std::move(shape), 1.0); }

    DType dtype() const { return dtype_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::string join(std::string_view leaf) const;

    ParamStore* store_;
    std::string prefix_;
    std::uint64_t seed_;
    DType dtype_;
};

// --- layer building blocks -------------------------------------------------
// Each layer has an init_* that registers parameters under a Builder prefix and
// a forward function that reads them back through a Scope with the same prefix.

void init_linear(const Builder& b, std::int64_t in, std::int64_t out, bool bias = true);
Tensor linear(const Scope& p, const Tensor& x);

void init_conv(const Builder& b, std::int64_t in, std::int64_t out, std::int64_t k,
               std::int64_t groups = 1, bool bias = true);
Tensor conv(const Scope& p, const Tensor& x, std::int64_t stride = 1, std::int64_t padding = 0,
            std::int64_t groups = 1);

void init_norm(const Builder& b, std::int64_t channels);
Tensor norm(const Scope& p, const Tensor& x);

void init_layer_norm(const Builder& b, std::int64_t dim);
Tensor layer_norm(const Scope& p, const Tensor& x);

/// conv2d (k x k, "same"-style padding k/2) -> norm2d -> relu.
void init_conv_block(const Builder& b, std::int64_t in, std::int64_t out, std::int64_t k = 3);
Tensor conv_block(const Scope& p, const Tensor& x, std::int64_t stride = 1);

/// conv_transpose2d (k=4, s=2, p=1) -> norm2d -> relu; doubles the spatial extent.
void init_deconv_block(const Builder& b, std::int64_t in, std::int64_t out);
Tensor deconv_block(const Scope& p, const Tensor& x);

void init_mhsa(const Builder& b, std::int64_t dim);

struct AttentionOutput {
    Tensor out;      // [B,T,D]
    Tensor weights;  // [B*heads,T,T], rows sum to one
};

AttentionOutput mhsa_with_weights(const Scope& p, const Tensor& x, std::int64_t heads);
Tensor mhsa(const Scope& p, const Tensor& x, std::int64_t heads);

/// Pre-norm block: x + attn(norm1(x)), then + mlp(norm2(.)) with a SiLU MLP.
void init_transformer_block(const Builder& b, std::int64_t dim, double mlp_ratio);
Tensor transformer_block(const Scope& p, const Tensor& x, std::int64_t heads);

// --- geometry-level specs --------------------------------------------------

enum class LayerKind { ConvBlock, Linear, MHSA, TransformerBlock, DeconvBlock };

struct LayerSpec {
    LayerKind kind = LayerKind::Linear;
    std::int64_t in = 0;         // input channels / features
    std::int64_t out = 0;        // output channels / features
    std::int64_t kernel = 3;     // ConvBlock only
    std::int64_t embed_dim = 0;  // MHSA, TransformerBlock
    std::int64_t heads = 1;
    double mlp_ratio = 4.0;

    void validate() const;
};

/// Parameters of one layer, named relative to the layer (e.g. "conv.w").
std::vector<Param> init_params(const LayerSpec& spec, std::uint64_t seed, DType dtype = DType::f32);
/// Closed-form trainable scalar count.
std::int64_t param_count(const LayerSpec& spec);

// --- checkpoints -----------------------------------------------------------
// "CKPT", u16 version 1, then records of (u32 name length, name bytes, TNSR blob)
// until end of file.

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);
/// Fails with CheckpointMismatch unless names and shapes match exactly.
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);

} // namespace kanfpn::nn
