#include "hfx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hfx/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "HFX1 payloads are little-endian");

namespace hfx {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'H', 'F', 'X', '1'};
constexpr int kFormatVersion = 1;

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t parse_hex64(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

void write_all(std::ofstream& out, const void* data, size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) {
            throw IoError("cannot open checkpoint " + p);
        }
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, kMagic, 4) != 0) {
            throw ParseError(p + ": not an HFX1 checkpoint");
        }
    }

    json metadata() {
        uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!in) {
            throw ParseError(path + ": truncated metadata length");
        }
        std::string raw(len, '\0');
        in.read(raw.data(), len);
        if (!in) {
            throw ParseError(path + ": truncated metadata");
        }
        json meta;
        try {
            meta = json::parse(raw);
        } catch (const json::exception& e) {
            throw ParseError(path + ": bad metadata JSON: " + e.what());
        }
        if (meta.value("format_version", -1) != kFormatVersion) {
            throw ParseError(path + ": unsupported format version");
        }
        return meta;
    }

    std::vector<double> read_f64(size_t count) {
        std::vector<double> out(count);
        in.read(reinterpret_cast<char*>(out.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) {
            throw ParseError(path + ": truncated payload");
        }
        return out;
    }

    std::vector<int8_t> read_i8(size_t count) {
        std::vector<int8_t> out(count);
        in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count));
        if (!in) {
            throw ParseError(path + ": truncated payload");
        }
        return out;
    }

    void expect_eof() {
        char extra;
        if (in.read(&extra, 1)) {
            throw ParseError(path + ": trailing bytes after declared payload");
        }
    }
};

json shape_json(const std::vector<size_t>& shape) {
    json arr = json::array();
    for (size_t d : shape) arr.push_back(d);
    return arr;
}

json model_config_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"context_len", c.context_len}, {"seed", c.seed}};
}

ModelConfig model_config_from(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.embed_dim = j.at("embed_dim").get<size_t>();
    c.n_layers = j.at("n_layers").get<size_t>();
    c.n_heads = j.at("n_heads").get<size_t>();
    c.context_len = j.at("context_len").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

json adapter_spec_json(const AdapterSpec& s) {
    return json{{"kind", adapter_kind_name(s.kind)}, {"rank", s.rank},
                {"alpha", s.alpha},                  {"prefix_len", s.prefix_len},
                {"quant_bits", s.quant_bits},        {"targets", s.targets}};
}

AdapterSpec adapter_spec_from(const json& j) {
    AdapterSpec s;
    s.kind = adapter_kind_from(j.at("kind").get<std::string>());
    s.rank = j.at("rank").get<size_t>();
    s.alpha = j.at("alpha").get<double>();
    s.prefix_len = j.at("prefix_len").get<size_t>();
    s.quant_bits = j.at("quant_bits").get<int>();
    s.targets = j.at("targets").get<std::vector<std::string>>();
    return s;
}

void write_container(const std::string& path, const json& meta,
                     const std::function<void(std::ofstream&)>& payload_writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint " + path);
    }
    write_all(out, kMagic, 4);
    const std::string meta_str = meta.dump();
    const uint32_t len = static_cast<uint32_t>(meta_str.size());
    write_all(out, &len, sizeof(len));
    write_all(out, meta_str.data(), meta_str.size());
    payload_writer(out);
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Base checkpoints
// ---------------------------------------------------------------------------

void save_base_checkpoint(const std::string& path, const TransformerLM& model) {
    json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = "base";
    meta["model"] = model_config_json(model.config());
    meta["fingerprint"] = hex64(model.fingerprint());

    json manifest = json::array();
    const auto& quant = model.quant_store();
    for (const auto& [name, t] : model.params()) {
        if (quant.count(name)) {
            const QuantTensor& q = quant.at(name);
            manifest.push_back(json{{"name", name},
                                    {"dtype", "i8"},
                                    {"shape", shape_json({q.rows, q.cols})},
                                    {"quant_bits", q.bits}});
            manifest.push_back(json{{"name", name + ".scales"},
                                    {"dtype", "f64"},
                                    {"shape", shape_json({q.rows})}});
        } else {
            manifest.push_back(
                json{{"name", name}, {"dtype", "f64"}, {"shape", shape_json(t.shape())}});
        }
    }
    meta["tensors"] = manifest;
    if (model.quantized()) {
        meta["quant"] = json{{"bits", model.quant_bits()}};
    }

    write_container(path, meta, [&](std::ofstream& out) {
        for (const auto& [name, t] : model.params()) {
            auto it = quant.find(name);
            if (it != quant.end()) {
                write_all(out, it->second.codes.data(), it->second.codes.size());
                write_all(out, it->second.scales.data(),
                          it->second.scales.size() * sizeof(double));
            } else {
                write_all(out, t.data().data(), t.data().size() * sizeof(double));
            }
        }
    });
}

TransformerLM load_base_checkpoint(const std::string& path) {
    Reader reader(path);
    json meta = reader.metadata();
    if (meta.value("kind", "") != "base") {
        throw ParseError(path + ": expected a base checkpoint, found '" +
                         meta.value("kind", "?") + "'");
    }
    const ModelConfig config = model_config_from(meta.at("model"));
    TransformerLM model(config);

    const bool is_quant = meta.contains("quant");
    std::map<std::string, QuantTensor> store;

    // Manifest entries must match the construction order exactly.
    size_t mi = 0;
    const json& manifest = meta.at("tensors");
    for (auto& [name, t] : model.params_mutable()) {
        if (mi >= manifest.size()) {
            throw ParseError(path + ": manifest shorter than parameter list");
        }
        const json& entry = manifest[mi];
        if (entry.at("name") != name) {
            throw ParseError(path + ": manifest entry '" +
                             entry.at("name").get<std::string>() + "' does not match '" +
                             name + "'");
        }
        if (entry.at("dtype") == "i8") {
            QuantTensor q;
            q.rows = entry.at("shape")[0].get<size_t>();
            q.cols = entry.at("shape")[1].get<size_t>();
            q.bits = entry.at("quant_bits").get<int>();
            if (q.rows != t.shape()[0] || q.cols != t.shape()[1]) {
                throw ParseError(path + ": shape mismatch for " + name);
            }
            q.codes = reader.read_i8(q.rows * q.cols);
            ++mi;
            const json& scales_entry = manifest[mi];
            if (scales_entry.at("name") != name + ".scales") {
                throw ParseError(path + ": missing scales entry for " + name);
            }
            q.scales = reader.read_f64(q.rows);
            t.data() = q.dequantize();
            store[name] = std::move(q);
        } else {
            size_t count = 1;
            for (const auto& d : entry.at("shape")) count *= d.get<size_t>();
            if (count != t.size()) {
                throw ParseError(path + ": shape mismatch for " + name);
            }
            t.data() = reader.read_f64(count);
        }
        ++mi;
    }
    if (mi != manifest.size()) {
        throw ParseError(path + ": manifest longer than parameter list");
    }
    reader.expect_eof();

    const uint64_t stored_fp = parse_hex64(meta.at("fingerprint").get<std::string>());
    if (is_quant) {
        model.install_quantization(std::move(store), meta["quant"].at("bits").get<int>(),
                                   stored_fp);
    } else {
        model.freeze();
        if (model.fingerprint() != stored_fp) {
            throw ParseError(path + ": payload does not match stored fingerprint");
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Adapter checkpoints
// ---------------------------------------------------------------------------

void save_adapter_checkpoint(const std::string& path, const AdapterState& state) {
    json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = "adapter";
    meta["adapter"] = adapter_spec_json(state.spec);
    meta["base_fingerprint"] = hex64(state.base_fingerprint);
    json manifest = json::array();
    for (const auto& [name, t] : state.tensors) {
        manifest.push_back(
            json{{"name", name}, {"dtype", "f64"}, {"shape", shape_json(t.shape())}});
    }
    meta["tensors"] = manifest;

    write_container(path, meta, [&](std::ofstream& out) {
        for (const auto& [name, t] : state.tensors) {
            write_all(out, t.data().data(), t.data().size() * sizeof(double));
        }
    });
}

AdapterState load_adapter_checkpoint(const std::string& path) {
    Reader reader(path);
    json meta = reader.metadata();
    if (meta.value("kind", "") != "adapter") {
        throw ParseError(path + ": expected an adapter checkpoint, found '" +
                         meta.value("kind", "?") + "'");
    }
    AdapterState state;
    state.spec = adapter_spec_from(meta.at("adapter"));
    state.base_fingerprint = parse_hex64(meta.at("base_fingerprint").get<std::string>());
    for (const auto& entry : meta.at("tensors")) {
        std::vector<size_t> shape;
        size_t count = 1;
        for (const auto& d : entry.at("shape")) {
            shape.push_back(d.get<size_t>());
            count *= d.get<size_t>();
        }
        state.tensors.emplace_back(
            entry.at("name").get<std::string>(),
            Tensor::from_data(shape, reader.read_f64(count), true));
    }
    reader.expect_eof();
    return state;
}

std::string checkpoint_kind(const std::string& path) {
    Reader reader(path);
    return reader.metadata().value("kind", "");
}

}  // namespace hfx
