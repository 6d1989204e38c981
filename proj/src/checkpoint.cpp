#include "macl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace macl::gan {
namespace {

class Writer {
public:
    template <typename U>
    void put(U v) {
        using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                        std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                           std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                                              std::uint8_t>>>;
        const Bits bits = std::bit_cast<Bits>(v);
        for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }

    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }

    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                        std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                           std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                                              std::uint8_t>>>;
        Bits bits = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(Bits(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return std::bit_cast<U>(bits);
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > in_.size())
            throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what +
                              " (need " + std::to_string(n) + " bytes, " + std::to_string(in_.size() - pos_) +
                              " left)");
    }

    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

template <typename T>
void append_store(CheckpointData& data, const nn::ParamStore<T>& store) {
    for (const auto& p : store.params()) {
        CheckpointEntry e;
        e.name = p.name;
        e.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
        e.shape = p.value.shape();
        e.values.assign(p.value.values().begin(), p.value.values().end());
        data.entries.push_back(std::move(e));
    }
}

template <typename T>
std::size_t fill_store(nn::ParamStore<T>& store, const CheckpointData& data, std::size_t offset) {
    for (std::size_t i = 0; i < store.size(); ++i, ++offset) {
        auto& p = store[i];
        if (offset >= data.entries.size())
            throw FormatError("checkpoint has too few parameters: missing " + p.name);
        const auto& e = data.entries[offset];
        if (e.name != p.name)
            throw FormatError("checkpoint parameter " + std::to_string(offset) + " name mismatch: expected '" +
                              p.name + "', found '" + e.name + "'");
        if (e.shape != p.value.shape())
            throw FormatError("checkpoint parameter '" + e.name + "' shape " + shape_str(e.shape) +
                              " does not match model " + shape_str(p.value.shape()));
        for (std::size_t j = 0; j < e.values.size(); ++j) p.value[j] = static_cast<T>(e.values[j]);
    }
    return offset;
}

std::size_t count_rows(const CheckpointData& data, const std::string& prefix) {
    std::size_t n = 0;
    while (true) {
        const std::string name = prefix + ".embedding." + std::to_string(n);
        bool found = false;
        for (const auto& e : data.entries)
            if (e.name == name) {
                found = true;
                break;
            }
        if (!found) return n;
        ++n;
    }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
    Writer w;
    w.bytes(kCheckpointMagic, 4);
    w.put<std::uint32_t>(data.version);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.entries.size()));
    for (const auto& e : data.entries) {
        if (e.name.size() > 0xffff) throw ContractError("parameter name too long: " + e.name);
        if (e.values.size() != shape_numel(e.shape)) throw DimensionError("checkpoint entry size mismatch: " + e.name);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
        for (std::size_t d : e.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (double v : e.values) {
            if (e.dtype == DType::f32)
                w.put<float>(static_cast<float>(v));
            else
                w.put<double>(v);
        }
    }
    w.put<std::uint64_t>(data.step);
    for (std::uint64_t word : data.rng) w.put<std::uint64_t>(word);
    return std::move(w.out);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const std::string magic = r.str(4, "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint bad magic at offset 0: expected 'MACL'");
    CheckpointData data;
    const std::size_t version_at = r.pos();
    data.version = r.get<std::uint32_t>("version");
    if (data.version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(data.version) + " at offset " +
                          std::to_string(version_at) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t count = r.get<std::uint32_t>("parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const auto len = r.get<std::uint16_t>("name length");
        e.name = r.str(len, "name");
        const std::size_t dtype_at = r.pos();
        const auto tag = r.get<std::uint8_t>("dtype");
        if (tag > 1)
            throw FormatError("checkpoint unknown dtype tag " + std::to_string(tag) + " at offset " +
                              std::to_string(dtype_at));
        e.dtype = static_cast<DType>(tag);
        const auto rank = r.get<std::uint8_t>("rank");
        for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>("dim"));
        const std::size_t n = shape_numel(e.shape);
        e.values.resize(n);
        for (std::size_t j = 0; j < n; ++j)
            e.values[j] = e.dtype == DType::f32 ? static_cast<double>(r.get<float>("values")) : r.get<double>("values");
        data.entries.push_back(std::move(e));
    }
    data.step = r.get<std::uint64_t>("training step");
    for (auto& word : data.rng) word = r.get<std::uint64_t>("rng state");
    if (!r.done())
        throw FormatError("checkpoint has trailing bytes at offset " + std::to_string(r.pos()));
    return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    const auto bytes = encode_checkpoint(data);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

template <typename T>
CheckpointData to_checkpoint(const Cgan<T>& model) {
    CheckpointData data;
    append_store(data, model.g.store);
    append_store(data, model.d.store);
    data.step = model.step;
    data.rng = model.rng.state();
    return data;
}

template <typename T>
Cgan<T> from_checkpoint(const CheckpointData& data, const ModelSpec& base) {
    ModelSpec spec = base;
    spec.num_labels = count_rows(data, "generator");
    const std::size_t d_rows = count_rows(data, "discriminator");
    if (spec.num_labels == 0 || d_rows != spec.num_labels)
        throw FormatError("checkpoint embedding tables disagree: generator has " + std::to_string(spec.num_labels) +
                          " rows, discriminator " + std::to_string(d_rows));

    Cgan<T> model = create_cgan<T>(spec, 0);
    std::size_t offset = fill_store(model.g.store, data, 0);
    offset = fill_store(model.d.store, data, offset);
    if (offset != data.entries.size())
        throw FormatError("checkpoint has " + std::to_string(data.entries.size() - offset) + " unexpected parameters");
    model.step = data.step;
    model.rng.set_state(data.rng);
    return model;
}

template CheckpointData to_checkpoint<float>(const Cgan<float>&);
template CheckpointData to_checkpoint<double>(const Cgan<double>&);
template Cgan<float> from_checkpoint<float>(const CheckpointData&, const ModelSpec&);
template Cgan<double> from_checkpoint<double>(const CheckpointData&, const ModelSpec&);

}  // namespace macl::gan
