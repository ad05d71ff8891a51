#pragma once

#include <map>
#include <optional>

#include "manrec/gating.hpp"
#include "manrec/memory.hpp"
#include "manrec/recommender.hpp"

namespace manrec {

// Artifact container: magic, format version, named binary sections, and a
// trailing CRC32 that is verified in full before any section is parsed.

struct BadMagicError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};
struct TruncatedError : Error {
    using Error::Error;
};
struct ChecksumError : Error {
    using Error::Error;
};
struct MissingSectionError : Error {
    using Error::Error;
};

constexpr std::uint32_t kCheckpointVersion = 1;

class SectionWriter {
public:
    void add(const std::string& name, std::string payload);
    void write(const std::string& path) const;

private:
    std::vector<std::pair<std::string, std::string>> sections_;
};

class SectionReader {
public:
    explicit SectionReader(const std::string& path);  // validates everything upfront
    bool has(const std::string& name) const;
    const std::string& get(const std::string& name) const;

private:
    std::map<std::string, std::string> sections_;
    std::string path_;
};

// ---- typed artifacts ------------------------------------------------------

// Model checkpoints carry the recommender, optionally the fitted gate, and a
// json config echo so a run can be audited without replaying it.
void save_model_checkpoint(const std::string& path, const RecommenderModel& model,
                           const GateNetwork* gate, const std::string& config_json);

struct LoadedCheckpoint {
    RecommenderModel model;
    std::optional<GateNetwork> gate;
    std::string config_json;
};
LoadedCheckpoint load_model_checkpoint(const std::string& path);

void save_memory_snapshot(const std::string& path, const MemoryStore& memory);
MemoryStore load_memory_snapshot(const std::string& path);

void save_index_snapshot(const std::string& path, const IvfPqIndex& index);
IvfPqIndex load_index_snapshot(const std::string& path);

}  // namespace manrec
