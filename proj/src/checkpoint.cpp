#include "seavae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <zlib.h>

namespace seavae {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'A', 'E', 'C'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& off) {
    if (off + sizeof(T) > bytes.size()) {
        throw CheckpointError("checkpoint truncated");
    }
    T value;
    std::memcpy(&value, bytes.data() + off, sizeof(T));
    off += sizeof(T);
    return value;
}

nlohmann::json history_json(const TrainingHistory& h) {
    return {{"epochs", h.epochs}, {"best_epoch", h.best_epoch}, {"early_stopped", h.early_stopped}};
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large blobs
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto len = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, bytes.data() + off, len);
        off += len;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    const auto bufs = ckpt.model.buffers();
    std::vector<std::uint8_t> blob;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& b : bufs) {
        const std::size_t start = blob.size();
        for (double v : b.values) {
            put(blob, static_cast<float>(v));
        }
        const std::span<const std::uint8_t> piece(blob.data() + start, blob.size() - start);
        params.push_back({{"name", b.name}, {"size", b.values.size()}, {"trainable", b.trainable},
                          {"crc32", fmt::format("{:08x}", crc32_of(piece))}});
    }
    nlohmann::json header{{"format", "vaeckpt"},
                          {"config", ckpt.model.config()},
                          {"history", history_json(ckpt.history)},
                          {"parameters", params},
                          {"blob_bytes", blob.size()},
                          {"blob_crc32", fmt::format("{:08x}", crc32_of(blob))}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put(out, kCheckpointVersion);
    put(out, static_cast<std::uint64_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    put(out, crc32_of(out));
    return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError("not a .vaeckpt file (bad magic)");
    }
    std::size_t off = 4;
    const auto version = get<std::uint32_t>(bytes, off);
    if (version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("unsupported checkpoint version {} (expected {})", version,
                                          kCheckpointVersion));
    }
    std::size_t tail = bytes.size() - 4;
    std::size_t tail_off = tail;
    const auto stored_crc = get<std::uint32_t>(bytes, tail_off);
    const auto actual_crc = crc32_of(bytes.first(tail));
    if (stored_crc != actual_crc) {
        throw CheckpointError(fmt::format("checkpoint CRC mismatch: stored {:08x}, computed {:08x}", stored_crc,
                                          actual_crc));
    }
    const auto header_len = get<std::uint64_t>(bytes, off);
    if (header_len > tail - off) {
        throw CheckpointError("checkpoint header length exceeds file size");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(off + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint header is not valid JSON: {}", e.what()));
    }
    off += header_len;

    Checkpoint ckpt{Vae(header.at("config").get<VaeConfig>()), {}};
    const auto& hist = header.at("history");
    ckpt.history.epochs = hist.at("epochs").get<std::vector<EpochRecord>>();
    ckpt.history.best_epoch = hist.at("best_epoch").get<std::size_t>();
    ckpt.history.early_stopped = hist.at("early_stopped").get<bool>();

    auto bufs = ckpt.model.buffers();
    const auto& params = header.at("parameters");
    if (params.size() != bufs.size()) {
        throw CheckpointError(fmt::format("checkpoint has {} parameter blobs, model expects {}", params.size(),
                                          bufs.size()));
    }
    if (tail - off != header.at("blob_bytes").get<std::size_t>()) {
        throw CheckpointError("checkpoint blob size does not match header");
    }
    for (std::size_t i = 0; i < bufs.size(); ++i) {
        const auto& entry = params[i];
        if (entry.at("name").get<std::string>() != bufs[i].name ||
            entry.at("size").get<std::size_t>() != bufs[i].values.size()) {
            throw CheckpointError(fmt::format("parameter {} mismatch: file has {} ({}), model expects {} ({})", i,
                                              entry.at("name").get<std::string>(),
                                              entry.at("size").get<std::size_t>(), bufs[i].name,
                                              bufs[i].values.size()));
        }
        for (double& v : bufs[i].values) {
            v = static_cast<double>(get<float>(bytes, off));
        }
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError(fmt::format("cannot open {} for writing", tmp.string()));
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw CheckpointError(fmt::format("failed writing {}", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

std::string checkpoint_id(const Checkpoint& ckpt) {
    return fmt::format("{:08x}", crc32_of(serialize_checkpoint(ckpt)));
}

}  // namespace seavae
