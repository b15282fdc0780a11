#include "citras/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "citras/errors.hpp"

namespace citras {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'T', 'R', 'A', 'S', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw CheckpointError(source_ + ": truncated checkpoint");
    }

    std::string data_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const CitrasParams& params, const std::filesystem::path& path, CheckpointDtype dtype) {
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const nlohmann::json header = {{"model", params.config.to_json()}, {"dtype", dtype == CheckpointDtype::f64 ? "f64" : "f32"}};
    const std::string hs = header.dump();
    put_le<std::uint64_t>(out, hs.size());
    out += hs;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.store.size()));
    for (const auto& e : params.store) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e->name.size()));
        out += e->name;
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e->value.rank()));
        for (auto d : e->value.shape()) put_le<std::uint64_t>(out, d);
        for (double v : e->value.values()) {
            if (dtype == CheckpointDtype::f64) {
                put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
            } else {
                put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
    }

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("failed writing checkpoint '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

CitrasParams load_checkpoint(const std::filesystem::path& path, const std::optional<CitrasConfig>& expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    Reader r(buf.str(), path.string());

    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw CheckpointError(path.string() + ": not a checkpoint (bad magic bytes)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_len = r.get<std::uint64_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": malformed checkpoint header: " + e.what());
    }
    if (!header.contains("model") || !header.contains("dtype")) throw CheckpointError(path.string() + ": incomplete checkpoint header");
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "f64" && dtype != "f32") throw CheckpointError(path.string() + ": unknown dtype '" + dtype + "'");
    CitrasConfig stored;
    try {
        stored = CitrasConfig::from_json(header.at("model"));
    } catch (const Error& e) {
        throw CheckpointError(path.string() + ": invalid stored config: " + e.what());
    }

    if (expected && expected->heads != stored.heads) {
        throw CheckpointError(path.string() + ": checkpoint has " + std::to_string(stored.heads) + " heads, config requests " +
                              std::to_string(expected->heads));
    }
    CitrasParams params = CitrasParams::zeros(expected ? *expected : stored);
    const auto count = r.get<std::uint32_t>();
    if (count != params.store.size()) {
        throw CheckpointError(path.string() + ": checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                              std::to_string(params.store.size()));
    }
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string name = r.bytes(r.get<std::uint32_t>());
        if (!params.store.contains(name)) throw CheckpointError(path.string() + ": unexpected tensor '" + name + "'");
        ParamEntry& e = params.store.at(name);
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
        if (shape != e.value.shape()) {
            throw CheckpointError(path.string() + ": shape mismatch for '" + name + "': stored " + shape_string(shape) + ", expected " +
                                  shape_string(e.value.shape()));
        }
        for (auto& v : e.value.values()) {
            v = dtype == "f64" ? std::bit_cast<double>(r.get<std::uint64_t>())
                               : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
        }
    }
    if (!r.at_end()) throw CheckpointError(path.string() + ": trailing bytes after the last tensor");
    if (expected) params.config = *expected;
    return params;
}

}  // namespace citras
