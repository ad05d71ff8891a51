#include "manrec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace manrec {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'N', 'C', 'K', 'P', 'T', '1'};

void append_u32(std::string& buf, std::uint32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void append_u64(std::string& buf, std::uint64_t v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t crc_of(const std::string& buf) {
    return static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(buf.size())));
}

}  // namespace

void SectionWriter::add(const std::string& name, std::string payload) {
    sections_.emplace_back(name, std::move(payload));
}

void SectionWriter::write(const std::string& path) const {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    append_u32(buf, kCheckpointVersion);
    append_u32(buf, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& [name, payload] : sections_) {
        append_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        append_u64(buf, payload.size());
        buf.append(payload);
    }
    append_u32(buf, crc_of(buf));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("write to " + path + " failed");
}

SectionReader::SectionReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < sizeof(kMagic) + 2 * sizeof(std::uint32_t) + sizeof(std::uint32_t))
        throw TruncatedError(path + ": file shorter than the fixed header");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw BadMagicError(path + ": not a manrec checkpoint");

    // checksum first; nothing gets parsed out of a corrupt file
    const std::string body = buf.substr(0, buf.size() - sizeof(std::uint32_t));
    std::uint32_t stored = 0;
    std::memcpy(&stored, buf.data() + buf.size() - sizeof(stored), sizeof(stored));
    if (crc_of(body) != stored)
        throw ChecksumError(path + ": checksum mismatch, the file is corrupt");

    std::size_t pos = sizeof(kMagic);
    auto read_u32 = [&]() {
        if (pos + 4 > body.size()) throw TruncatedError(path_ + ": truncated header");
        std::uint32_t v;
        std::memcpy(&v, body.data() + pos, 4);
        pos += 4;
        return v;
    };
    auto read_u64 = [&]() {
        if (pos + 8 > body.size()) throw TruncatedError(path_ + ": truncated header");
        std::uint64_t v;
        std::memcpy(&v, body.data() + pos, 8);
        pos += 8;
        return v;
    };

    const std::uint32_t version = read_u32();
    if (version != kCheckpointVersion)
        throw VersionError(path + ": checkpoint format version " + std::to_string(version) +
                           " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t n = read_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = read_u32();
        if (pos + name_len > body.size()) throw TruncatedError(path_ + ": truncated name");
        std::string name(body.data() + pos, name_len);
        pos += name_len;
        const std::uint64_t payload_len = read_u64();
        if (pos + payload_len > body.size())
            throw TruncatedError(path_ + ": truncated section '" + name + "'");
        sections_[name] = body.substr(pos, payload_len);
        pos += payload_len;
    }
    if (pos != body.size()) throw TruncatedError(path_ + ": trailing bytes after sections");
}

bool SectionReader::has(const std::string& name) const { return sections_.count(name) > 0; }

const std::string& SectionReader::get(const std::string& name) const {
    const auto it = sections_.find(name);
    if (it == sections_.end())
        throw MissingSectionError(path_ + ": missing required section '" + name + "'");
    return it->second;
}

// ---- typed artifacts --------------------------------------------------------

namespace {

template <class T>
std::string blob_of(const T& obj) {
    std::ostringstream ss(std::ios::binary);
    obj.save(ss);
    return ss.str();
}

}  // namespace

void save_model_checkpoint(const std::string& path, const RecommenderModel& model,
                           const GateNetwork* gate, const std::string& config_json) {
    SectionWriter w;
    w.add("kind", "model");
    w.add("config", config_json);
    w.add("model", blob_of(model));
    if (gate) w.add("gate", blob_of(*gate));
    w.write(path);
}

LoadedCheckpoint load_model_checkpoint(const std::string& path) {
    SectionReader r(path);
    if (r.get("kind") != "model")
        throw MissingSectionError(path + ": checkpoint holds a '" + r.get("kind") +
                                  "', not a model");
    LoadedCheckpoint out;
    out.config_json = r.get("config");
    {
        std::istringstream ss(r.get("model"), std::ios::binary);
        out.model.load(ss);
    }
    if (r.has("gate")) {
        std::istringstream ss(r.get("gate"), std::ios::binary);
        GateNetwork g;
        g.load(ss);
        out.gate = std::move(g);
    }
    return out;
}

void save_memory_snapshot(const std::string& path, const MemoryStore& memory) {
    SectionWriter w;
    w.add("kind", "memory");
    w.add("memory", blob_of(memory));
    w.write(path);
}

MemoryStore load_memory_snapshot(const std::string& path) {
    SectionReader r(path);
    if (r.get("kind") != "memory")
        throw MissingSectionError(path + ": checkpoint holds a '" + r.get("kind") +
                                  "', not a memory snapshot");
    std::istringstream ss(r.get("memory"), std::ios::binary);
    MemoryStore m;
    m.load(ss);
    return m;
}

void save_index_snapshot(const std::string& path, const IvfPqIndex& index) {
    SectionWriter w;
    w.add("kind", "index");
    w.add("index", blob_of(index));
    w.write(path);
}

IvfPqIndex load_index_snapshot(const std::string& path) {
    SectionReader r(path);
    if (r.get("kind") != "index")
        throw MissingSectionError(path + ": checkpoint holds a '" + r.get("kind") +
                                  "', not an index snapshot");
    std::istringstream ss(r.get("index"), std::ios::binary);
    IvfPqIndex idx;
    idx.load(ss);
    return idx;
}

}  // namespace manrec
