#include "ila/zoo.hpp"

#include <cmath>
#include <cstring>

#include "binio.hpp"

namespace ila {

using detail::Block;
using detail::ConvLayer;
using detail::GapBlock;
using detail::InceptionBlock;
using detail::ResidualBlock;
using detail::SEBlock;
using detail::StackBlock;
using nlohmann::json;

const std::vector<std::string> kArchNames = {"plain_cnn", "mini_resnet", "mini_inception",
                                             "mini_senet"};

namespace {

constexpr int kClasses = 10;

struct Builder {
    std::vector<Param>& params;
    Rng rng;

    int weight(const std::string& name, Shape shape, int fan_in) {
        Tensor t = Tensor::zeros(shape);
        const double scale = std::sqrt(2.0 / fan_in);
        for (auto& v : t.values_mut()) v = static_cast<float>(rng.normal() * scale);
        params.push_back({name, std::move(t)});
        return static_cast<int>(params.size()) - 1;
    }

    int bias(const std::string& name, int n) {
        params.push_back({name, Tensor::zeros({n})});
        return static_cast<int>(params.size()) - 1;
    }

    ConvLayer conv(const std::string& name, int ci, int co, int k, int stride, int pad) {
        ConvLayer c;
        c.w = weight(name + ".w", {co, ci, k, k}, ci * k * k);
        c.b = bias(name + ".b", co);
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    ConvLayer fc(const std::string& name, int d, int k) {
        ConvLayer c;
        c.w = weight(name + ".w", {k, d}, d);
        c.b = bias(name + ".b", k);
        return c;
    }
};

using binio::get_u32;
using binio::get_u64;
using binio::need;
using binio::put_u32;
using binio::put_u64;

}  // namespace

Model Model::build(const std::string& arch, uint64_t seed) {
    Model m;
    m.arch_ = arch;
    m.seed_ = seed;
    Builder b{m.params_, Rng(seed)};

    auto tap = [&](Block block, const std::string& name, int channels) {
        m.blocks_.push_back(std::move(block));
        m.tap_names_.push_back(name);
        m.tap_channels_.push_back(channels);
    };
    auto residual = [&](const std::string& name, int ci, int co, int stride) {
        ResidualBlock r;
        r.c1 = b.conv(name + ".conv1", ci, co, 3, stride, 1);
        r.c2 = b.conv(name + ".conv2", co, co, 3, 1, 1);
        if (stride != 1 || ci != co) {
            r.has_proj = true;
            r.proj = b.conv(name + ".proj", ci, co, 1, stride, 0);
        }
        return r;
    };
    auto se_residual = [&](const std::string& name, int ci, int co, int stride) {
        SEBlock e;
        e.c1 = b.conv(name + ".conv1", ci, co, 3, stride, 1);
        e.c2 = b.conv(name + ".conv2", co, co, 3, 1, 1);
        if (stride != 1 || ci != co) {
            e.has_proj = true;
            e.proj = b.conv(name + ".proj", ci, co, 1, stride, 0);
        }
        const int hidden = co / 4;
        ConvLayer fc1 = b.fc(name + ".fc1", co, hidden);
        ConvLayer fc2 = b.fc(name + ".fc2", hidden, co);
        e.fc1_w = fc1.w;
        e.fc1_b = fc1.b;
        e.fc2_w = fc2.w;
        e.fc2_b = fc2.b;
        return e;
    };
    auto inception = [&](const std::string& name, int ci, bool pool_after) {
        InceptionBlock i;
        i.b1 = b.conv(name + ".b1", ci, 8, 1, 1, 0);
        i.b2a = b.conv(name + ".b2a", ci, 8, 1, 1, 0);
        i.b2b = b.conv(name + ".b2b", 8, 8, 3, 1, 1);
        i.b3a = b.conv(name + ".b3a", ci, 8, 1, 1, 0);
        i.b3b = b.conv(name + ".b3b", 8, 8, 5, 1, 2);
        i.b4 = b.conv(name + ".b4", ci, 8, 1, 1, 0);
        i.pool_after = pool_after;
        return i;
    };

    if (arch == "plain_cnn") {
        tap(StackBlock{{b.conv("conv1", 3, 16, 3, 1, 1)}, false, 2, 2}, "conv1", 16);
        tap(StackBlock{{b.conv("conv2", 16, 16, 3, 1, 1)}, true, 2, 2}, "conv2", 16);
        tap(StackBlock{{b.conv("conv3", 16, 32, 3, 1, 1)}, false, 2, 2}, "conv3", 32);
        tap(StackBlock{{b.conv("conv4", 32, 32, 3, 1, 1)}, true, 2, 2}, "conv4", 32);
        tap(GapBlock{}, "gap", 32);
    } else if (arch == "mini_resnet") {
        tap(StackBlock{{b.conv("stem", 3, 16, 3, 1, 1)}, false, 2, 2}, "stem", 16);
        tap(residual("res1", 16, 16, 1), "res1", 16);
        tap(residual("res2", 16, 32, 2), "res2", 32);
        tap(residual("res3", 32, 32, 1), "res3", 32);
        tap(residual("res4", 32, 32, 2), "res4", 32);
        tap(GapBlock{}, "gap", 32);
    } else if (arch == "mini_inception") {
        tap(StackBlock{{b.conv("stem", 3, 16, 3, 1, 1)}, false, 2, 2}, "stem", 16);
        tap(inception("inc1", 16, true), "inc1", 32);
        tap(inception("inc2", 32, true), "inc2", 32);
        tap(inception("inc3", 32, false), "inc3", 32);
        tap(GapBlock{}, "gap", 32);
    } else if (arch == "mini_senet") {
        tap(StackBlock{{b.conv("stem", 3, 16, 3, 1, 1)}, false, 2, 2}, "stem", 16);
        tap(se_residual("se1", 16, 16, 1), "se1", 16);
        tap(se_residual("se2", 16, 32, 2), "se2", 32);
        tap(se_residual("se3", 32, 32, 1), "se3", 32);
        tap(se_residual("se4", 32, 32, 2), "se4", 32);
        tap(GapBlock{}, "gap", 32);
    } else {
        throw Error("unknown architecture '" + arch + "'");
    }
    m.classifier_ = b.fc("classifier", 32, kClasses);
    m.set_params_requires_grad(true);
    return m;
}

int Model::tap_channels(int layer) const {
    if (layer < 0 || layer >= num_taps()) {
        throw Error("tap index " + std::to_string(layer) + " out of range [0, " +
                    std::to_string(num_taps()) + ")");
    }
    return tap_channels_[layer];
}

int Model::num_classes() const {
    return params_[classifier_.w].tensor.shape()[0];
}

void Model::set_params_requires_grad(bool v) {
    for (auto& p : params_) p.tensor.set_requires_grad(v);
}

void Model::zero_param_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Model::validate_input(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != 32 || x.dim(3) != 32) {
        throw ShapeError("model input must be Nx3x32x32, got " + shape_str(x.shape()));
    }
}

Tensor Model::run_blocks(Tape& tape, const Tensor& x, int upto,
                         std::vector<Tensor>* taps) const {
    auto P = [&](int i) -> const Tensor& { return params_[i].tensor; };
    auto conv = [&](const ConvLayer& c, const Tensor& h) {
        return tape.conv2d(h, P(c.w), P(c.b), c.stride, c.pad);
    };
    Tensor h = x;
    for (int l = 0; l <= upto; ++l) {
        const Block& blk = blocks_[l];
        if (const auto* s = std::get_if<StackBlock>(&blk)) {
            for (const auto& c : s->convs) h = tape.relu(conv(c, h));
            if (s->pool) h = tape.pool2d(h, PoolMode::Max, s->pool_k, s->pool_s);
        } else if (const auto* r = std::get_if<ResidualBlock>(&blk)) {
            Tensor skip = r->has_proj ? conv(r->proj, h) : h;
            Tensor branch = conv(r->c2, tape.relu(conv(r->c1, h)));
            h = tape.relu(tape.add(branch, skip));
        } else if (const auto* e = std::get_if<SEBlock>(&blk)) {
            Tensor skip = e->has_proj ? conv(e->proj, h) : h;
            Tensor branch = conv(e->c2, tape.relu(conv(e->c1, h)));
            Tensor squeeze = tape.global_avg_pool(branch);
            Tensor hidden = tape.relu(tape.linear(squeeze, P(e->fc1_w), P(e->fc1_b)));
            Tensor gate = tape.sigmoid(tape.linear(hidden, P(e->fc2_w), P(e->fc2_b)));
            h = tape.relu(tape.add(tape.channel_scale(branch, gate), skip));
        } else if (const auto* i = std::get_if<InceptionBlock>(&blk)) {
            Tensor b1 = tape.relu(conv(i->b1, h));
            Tensor b2 = tape.relu(conv(i->b2b, tape.relu(conv(i->b2a, h))));
            Tensor b3 = tape.relu(conv(i->b3b, tape.relu(conv(i->b3a, h))));
            Tensor b4 = tape.relu(conv(i->b4, tape.pool2d_padded(h, PoolMode::Max, 3, 1, 1)));
            const std::vector<Tensor> parts{b1, b2, b3, b4};
            h = tape.concat_channels(parts);
            if (i->pool_after) h = tape.pool2d(h, PoolMode::Max, i->pool_k, i->pool_s);
        } else {
            h = tape.global_avg_pool(h);
        }
        if (taps) taps->push_back(h);
    }
    return h;
}

Tensor Model::forward(Tape& tape, const Tensor& x, std::vector<Tensor>* taps) const {
    validate_input(x);
    Tensor h = run_blocks(tape, x, num_taps() - 1, taps);
    return tape.linear(h, params_[classifier_.w].tensor, params_[classifier_.b].tensor);
}

Tensor Model::forward_to_layer(Tape& tape, const Tensor& x, int layer) const {
    validate_input(x);
    if (layer < 0 || layer >= num_taps()) {
        throw Error("tap index " + std::to_string(layer) + " out of range [0, " +
                    std::to_string(num_taps()) + ")");
    }
    return run_blocks(tape, x, layer, nullptr);
}

json Model::spec_json() const {
    json params = json::array();
    for (const auto& p : params_) {
        params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    }
    return json{{"arch", arch_}, {"seed", seed_}, {"taps", tap_names_}, {"params", params}};
}

void Model::save(const std::string& path, const json& metadata) const {
    std::string buf;
    buf.append("ILAC", 4);
    put_u32(buf, 1);
    const std::string spec = spec_json().dump();
    put_u64(buf, spec.size());
    buf.append(spec);
    for (const auto& p : params_) {
        const auto v = p.tensor.values();
        buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    const std::string meta = metadata.is_null() ? "{}" : metadata.dump();
    put_u64(buf, meta.size());
    buf.append(meta);
    atomic_write_file(path, buf);
}

Model Model::load(const std::string& path, json* metadata) {
    const std::string buf = read_file(path);
    size_t off = 0;
    need(buf, off, 4, "magic");
    if (buf.compare(0, 4, "ILAC") != 0) {
        throw IoError("not a model checkpoint (bad magic): " + path);
    }
    off += 4;
    const uint32_t version = get_u32(buf, off, "version");
    if (version != 1) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected 1): " + path);
    }
    const uint64_t spec_len = get_u64(buf, off, "spec length");
    need(buf, off, spec_len, "spec blob");
    json spec;
    try {
        spec = json::parse(buf.substr(off, spec_len));
    } catch (const json::exception& e) {
        throw IoError("unreadable checkpoint spec: " + std::string(e.what()));
    }
    off += spec_len;

    Model m;
    try {
        m = build(spec.at("arch").get<std::string>(), spec.at("seed").get<uint64_t>());
    } catch (const json::exception& e) {
        throw IoError("checkpoint spec missing fields: " + std::string(e.what()));
    }
    // the stored parameter table must match what the rebuilt arch declares
    const json& stored = spec.at("params");
    if (stored.size() != m.params_.size()) {
        throw IoError("checkpoint parameter count does not match architecture '" + m.arch_ + "'");
    }
    for (size_t i = 0; i < m.params_.size(); ++i) {
        if (stored[i].at("name") != m.params_[i].name ||
            stored[i].at("shape").get<Shape>() != m.params_[i].tensor.shape()) {
            throw IoError("checkpoint parameter '" + stored[i].at("name").get<std::string>() +
                          "' does not match architecture declaration");
        }
    }
    for (auto& p : m.params_) {
        auto v = p.tensor.values_mut();
        need(buf, off, v.size() * sizeof(float), "parameter " + p.name);
        std::memcpy(v.data(), buf.data() + off, v.size() * sizeof(float));
        off += v.size() * sizeof(float);
    }
    const uint64_t meta_len = get_u64(buf, off, "metadata length");
    need(buf, off, meta_len, "metadata");
    if (metadata) {
        try {
            *metadata = json::parse(buf.substr(off, meta_len));
        } catch (const json::exception& e) {
            throw IoError("unreadable checkpoint metadata: " + std::string(e.what()));
        }
    }
    return m;
}

}  // namespace ila
