#include "kanfpn/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "kanfpn/ops.hpp"
#include "kanfpn/rng.hpp"
#include "kanfpn/tnsr_io.hpp"

namespace kanfpn::nn {

// --- ParamStore --------------------------------------------------------------

void ParamStore::add(Param p) {
    if (p.name.empty()) {
        throw InvalidSpec("parameter without a name");
    }
    if (index_.count(p.name)) {
        throw InvalidSpec("duplicate parameter name '" + p.name + "'");
    }
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
}

bool ParamStore::contains(const std::string& name) const {
    return index_.count(name) != 0;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw InvalidSpec("no parameter named '" + name + "'");
    }
    return params_[it->second];
}

void ParamStore::set(const std::string& name, Tensor value) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw InvalidSpec("no parameter named '" + name + "'");
    }
    auto& p = params_[it->second];
    if (value.shape() != p.value.shape()) {
        throw ShapeMismatch("parameter '" + name + "' is " + to_string(p.value.shape()) +
                            ", got " + to_string(value.shape()));
    }
    p.value = value.detach();
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.name);
    }
    return out;
}

std::int64_t ParamStore::scalar_count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& p : params_) {
        if (p.trainable || !trainable_only) {
            n += p.value.numel();
        }
    }
    return n;
}

ParamMap ParamStore::view() const {
    ParamMap m;
    for (const auto& p : params_) {
        m.insert(p.name, p.value.detach());
    }
    return m;
}

ParamMap ParamStore::bind(Tape& tape) const {
    ParamMap m;
    for (const auto& p : params_) {
        m.insert(p.name, p.trainable ? tape.watch(p.value) : p.value.detach());
    }
    return m;
}

ParamStore ParamStore::to(DType dtype) const {
    ParamStore out;
    for (const auto& p : params_) {
        out.add(Param{p.name, p.value.to(dtype), p.trainable});
    }
    return out;
}

void ParamMap::insert(const std::string& name, Tensor value) {
    map_.insert_or_assign(name, std::move(value));
}

const Tensor& ParamMap::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) {
        throw InvalidSpec("missing parameter '" + name + "'");
    }
    return it->second;
}

// --- Scope / Builder ---------------------------------------------------------

Scope::Scope(const ParamMap& map, std::string prefix) : map_(&map), prefix_(std::move(prefix)) {}

std::string Scope::join(std::string_view leaf) const {
    if (prefix_.empty()) {
        return std::string(leaf);
    }
    return prefix_ + "." + std::string(leaf);
}

const Tensor& Scope::operator[](std::string_view leaf) const {
    return map_->at(join(leaf));
}

bool Scope::contains(std::string_view leaf) const {
    return map_->contains(join(leaf));
}

Scope Scope::sub(std::string_view name) const {
    return Scope(*map_, join(name));
}

Builder::Builder(ParamStore& store, std::string prefix, std::uint64_t seed, DType dtype)
    : store_(&store), prefix_(std::move(prefix)), seed_(seed), dtype_(dtype) {}

std::string Builder::join(std::string_view leaf) const {
    if (prefix_.empty()) {
        return std::string(leaf);
    }
    return prefix_ + "." + std::string(leaf);
}

Builder Builder::sub(std::string_view name) const {
    return Builder(*store_, join(name), seed_, dtype_);
}

void Builder::kaiming(std::string_view leaf, Shape shape, std::int64_t fan_in) const {
    if (fan_in < 1) {
        throw InvalidSpec("fan_in must be positive");
    }
    const std::string name = join(leaf);
    SplitMix64 rng(mix_seed(seed_, hash_name(name)));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> values(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : values) {
        v = rng.uniform(-bound, bound);
    }
    store_->add(Param{name, Tensor::from_vector(values, std::move(shape), dtype_), true});
}

void Builder::constant(std::string_view leaf, Shape shape, double value, bool trainable) const {
    store_->add(Param{join(leaf), Tensor::full(std::move(shape), value, dtype_), trainable});
}

// --- layers ------------------------------------------------------------------

void init_linear(const Builder& b, std::int64_t in, std::int64_t out, bool bias) {
    b.kaiming("w", {in, out}, in);
    if (bias) {
        b.zeros("b", {out});
    }
}

Tensor linear(const Scope& p, const Tensor& x) {
    return ops::linear(x, p["w"], p.contains("b") ? p["b"] : Tensor{});
}

void init_conv(const Builder& b, std::int64_t in, std::int64_t out, std::int64_t k,
               std::int64_t groups, bool bias) {
    if (groups < 1 || in % groups != 0 || out % groups != 0) {
        throw InvalidSpec("conv channels must be divisible by groups");
    }
    b.kaiming("w", {out, in / groups, k, k}, in / groups * k * k);
    if (bias) {
        b.zeros("b", {out});
    }
}

Tensor conv(const Scope& p, const Tensor& x, std::int64_t stride, std::int64_t padding,
            std::int64_t groups) {
    return ops::conv2d(x, p["w"], p.contains("b") ? p["b"] : Tensor{}, stride, padding, groups);
}

void init_norm(const Builder& b, std::int64_t channels) {
    b.ones("gamma", {channels});
    b.zeros("beta", {channels});
}

Tensor norm(const Scope& p, const Tensor& x) {
    return ops::norm2d(x, p["gamma"], p["beta"]);
}

void init_layer_norm(const Builder& b, std::int64_t dim) {
    init_norm(b, dim);
}

Tensor layer_norm(const Scope& p, const Tensor& x) {
    return ops::layer_norm(x, p["gamma"], p["beta"]);
}

void init_conv_block(const Builder& b, std::int64_t in, std::int64_t out, std::int64_t k) {
    init_conv(b.sub("conv"), in, out, k);
    init_norm(b.sub("norm"), out);
}

Tensor conv_block(const Scope& p, const Tensor& x, std::int64_t stride) {
    const auto k = p["conv.w"].dim(2);
    auto y = conv(p.sub("conv"), x, stride, k / 2);
    return ops::relu(norm(p.sub("norm"), y));
}

void init_deconv_block(const Builder& b, std::int64_t in, std::int64_t out) {
    b.kaiming("w", {in, out, 4, 4}, out * 16);
    init_norm(b.sub("norm"), out);
}

Tensor deconv_block(const Scope& p, const Tensor& x) {
    auto y = ops::conv_transpose2d(x, p["w"], 2, 1);
    return ops::relu(norm(p.sub("norm"), y));
}

void init_mhsa(const Builder& b, std::int64_t dim) {
    for (const char* name : {"q", "k", "v", "proj"}) {
        init_linear(b.sub(name), dim, dim);
    }
}

AttentionOutput mhsa_with_weights(const Scope& p, const Tensor& x, std::int64_t heads) {
    if (x.ndim() != 3) {
        throw ShapeMismatch("mhsa expects [B,T,D], got " + to_string(x.shape()));
    }
    const std::int64_t B = x.dim(0);
    const std::int64_t T = x.dim(1);
    const std::int64_t D = x.dim(2);
    if (heads < 1 || D % heads != 0) {
        throw InvalidSpec("embed dim " + std::to_string(D) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const std::int64_t dh = D / heads;
    auto split_heads = [&](const Tensor& t) {
        auto r = ops::reshape(t, {B, T, heads, dh});
        return ops::reshape(ops::permute(r, {0, 2, 1, 3}), {B * heads, T, dh});
    };
    auto q = split_heads(linear(p.sub("q"), x));
    auto k = split_heads(linear(p.sub("k"), x));
    auto v = split_heads(linear(p.sub("v"), x));
    auto scores = ops::scale(ops::matmul(q, ops::permute(k, {0, 2, 1})),
                             1.0 / std::sqrt(static_cast<double>(dh)));
    auto weights = ops::softmax(scores);
    auto ctx = ops::matmul(weights, v);
    ctx = ops::permute(ops::reshape(ctx, {B, heads, T, dh}), {0, 2, 1, 3});
    auto out = linear(p.sub("proj"), ops::reshape(ctx, {B, T, D}));
    return {out, weights};
}

Tensor mhsa(const Scope& p, const Tensor& x, std::int64_t heads) {
    return mhsa_with_weights(p, x, heads).out;
}

void init_transformer_block(const Builder& b, std::int64_t dim, double mlp_ratio) {
    const auto hidden = static_cast<std::int64_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
    if (hidden < 1) {
        throw InvalidSpec("mlp ratio yields an empty hidden layer");
    }
    init_layer_norm(b.sub("norm1"), dim);
    init_mhsa(b.sub("attn"), dim);
    init_layer_norm(b.sub("norm2"), dim);
    init_linear(b.sub("mlp.fc1"), dim, hidden);
    init_linear(b.sub("mlp.fc2"), hidden, dim);
}

Tensor transformer_block(const Scope& p, const Tensor& x, std::int64_t heads) {
    auto h = ops::add(x, mhsa(p.sub("attn"), layer_norm(p.sub("norm1"), x), heads));
    auto m = linear(p.sub("mlp.fc2"), ops::silu(linear(p.sub("mlp.fc1"), layer_norm(p.sub("norm2"), h))));
    return ops::add(h, m);
}

// --- LayerSpec ---------------------------------------------------------------

void LayerSpec::validate() const {
    switch (kind) {
    case LayerKind::ConvBlock:
        if (in < 1 || out < 1 || kernel < 1) {
            throw InvalidSpec("ConvBlock needs positive channels and kernel");
        }
        break;
    case LayerKind::Linear:
    case LayerKind::DeconvBlock:
        if (in < 1 || out < 1) {
            throw InvalidSpec("layer needs positive in/out extents");
        }
        break;
    case LayerKind::MHSA:
    case LayerKind::TransformerBlock:
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
            throw InvalidSpec("embed dim must be positive and divisible by heads");
        }
        if (kind == LayerKind::TransformerBlock && !(mlp_ratio > 0.0)) {
            throw InvalidSpec("mlp ratio must be positive");
        }
        break;
    }
}

std::vector<Param> init_params(const LayerSpec& spec, std::uint64_t seed, DType dtype) {
    spec.validate();
    ParamStore store;
    Builder b(store, "", seed, dtype);
    switch (spec.kind) {
    case LayerKind::ConvBlock: init_conv_block(b, spec.in, spec.out, spec.kernel); break;
    case LayerKind::Linear: init_linear(b, spec.in, spec.out); break;
    case LayerKind::MHSA: init_mhsa(b, spec.embed_dim); break;
    case LayerKind::TransformerBlock: init_transformer_block(b, spec.embed_dim, spec.mlp_ratio); break;
    case LayerKind::DeconvBlock: init_deconv_block(b, spec.in, spec.out); break;
    }
    return store.params();
}

std::int64_t param_count(const LayerSpec& spec) {
    spec.validate();
    switch (spec.kind) {
    case LayerKind::ConvBlock:
        return spec.out * spec.in * spec.kernel * spec.kernel + spec.out + 2 * spec.out;
    case LayerKind::Linear:
        return spec.in * spec.out + spec.out;
    case LayerKind::MHSA:
        return 4 * (spec.embed_dim * spec.embed_dim + spec.embed_dim);
    case LayerKind::TransformerBlock: {
        const std::int64_t d = spec.embed_dim;
        const auto h = static_cast<std::int64_t>(std::llround(static_cast<double>(d) * spec.mlp_ratio));
        return 2 * d + 4 * (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
    }
    case LayerKind::DeconvBlock:
        return spec.in * spec.out * 16 + 2 * spec.out;
    }
    return 0;
}

// --- checkpoints -------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint16_t kCkptVersion = 1;
} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    os.write(kCkptMagic, 4);
    os.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
    for (const auto& p : store.params()) {
        const auto len = static_cast<std::uint32_t>(p.name.size());
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_tnsr(os, p.value);
    }
    if (!os) {
        throw FormatError("failed writing checkpoint " + path.string());
    }
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    char magic[4];
    std::uint16_t version = 0;
    if (!is.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw FormatError(path.string() + " is not a CKPT file");
    }
    if (!is.read(reinterpret_cast<char*>(&version), sizeof(version)) || version != kCkptVersion) {
        throw FormatError("unsupported CKPT version");
    }
    std::vector<std::pair<std::string, Tensor>> records;
    while (is.peek() != std::char_traits<char>::eof()) {
        std::uint32_t len = 0;
        if (!is.read(reinterpret_cast<char*>(&len), sizeof(len))) {
            throw FormatError("truncated CKPT record");
        }
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) {
            throw FormatError("truncated CKPT name");
        }
        records.emplace_back(std::move(name), read_tnsr(is));
    }
    return records;
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
    auto records = read_checkpoint(path);
    std::set<std::string> expected;
    for (const auto& name : store.names()) {
        expected.insert(name);
    }
    std::set<std::string> found;
    for (const auto& [name, value] : records) {
        found.insert(name);
    }
    if (found != expected) {
        std::string detail;
        for (const auto& n : expected) {
            if (!found.count(n)) {
                detail += " missing:" + n;
            }
        }
        for (const auto& n : found) {
            if (!expected.count(n)) {
                detail += " unexpected:" + n;
            }
        }
        throw CheckpointMismatch("parameter names differ from the model:" + detail.substr(0, 400));
    }
    for (const auto& [name, value] : records) {
        if (value.shape() != store.at(name).value.shape()) {
            throw CheckpointMismatch("shape of '" + name + "' is " + to_string(value.shape()) +
                                     ", model expects " + to_string(store.at(name).value.shape()));
        }
    }
    for (auto& [name, value] : records) {
        store.set(name, value.to(store.at(name).value.dtype()));
    }
}

} // namespace kanfpn::nn
