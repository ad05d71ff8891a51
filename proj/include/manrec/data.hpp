#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <unordered_map>

#include "manrec/common.hpp"

namespace manrec {

// ---- raw event ingest -------------------------------------------------------

struct RawEvent {
    std::string session_id;
    std::int64_t ts_ms = 0;  // UTC milliseconds since epoch
    std::string item_id;
};

enum class TsFormat { auto_detect, iso8601, epoch_seconds, epoch_millis };

struct IngestConfig {
    char delimiter = ',';
    char quote = '"';
    bool has_header = false;
    int col_session = 0, col_time = 1, col_item = 2;
    TsFormat ts_format = TsFormat::auto_detect;
    bool strict = false;  // throw on the first malformed row instead of collecting it
};

struct IngestError {
    std::size_t line_no = 0;  // 1-based
    std::string reason;
};

struct IngestResult {
    std::vector<RawEvent> events;
    std::vector<IngestError> errors;  // capped at 1000 entries
    std::size_t lines_read = 0;
    std::size_t malformed = 0;
};

IngestResult ingest_events(std::istream& in, const IngestConfig& cfg);

// "2014-04-07T10:51:09.277Z" / "... +02:00" / epoch seconds / epoch millis.
// Returns nullopt on malformed input.
std::optional<std::int64_t> parse_timestamp_ms(const std::string& field, TsFormat fmt);

// "auto", "iso8601", "epoch-s", "epoch-ms"; nullopt otherwise
std::optional<TsFormat> parse_ts_format(const std::string& name);

// ---- sessions and filtering -------------------------------------------------

struct Session {
    std::string id;
    std::vector<ItemId> items;       // corpus dictionary indices
    std::vector<std::int64_t> ts;    // per click, ms
    std::int64_t start_ts() const { return ts.front(); }
};

struct FilterConfig {
    std::int64_t min_item_support = 5;  // by event count
    std::size_t min_session_len = 2;
    std::size_t max_session_len = 20;
};

struct SessionCorpus {
    std::vector<Session> sessions;      // clicks sorted by (ts, arrival) inside a session
    std::vector<std::string> item_ids;  // dictionary: corpus ItemId -> external id
};

// Groups events into sessions and applies the support/length filters to a
// fixed point: dropping rare items shortens sessions, dropping short or long
// sessions lowers item support, and so on until nothing changes.
SessionCorpus build_and_filter_sessions(const std::vector<RawEvent>& events,
                                        const FilterConfig& cfg);

// ---- temporal split ---------------------------------------------------------

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

struct SplitResult {
    std::vector<Split> assign;  // parallel to corpus.sessions
    std::int64_t test_cut_ts = 0;
    std::size_t n_train = 0, n_valid = 0, n_test = 0;
};

// Test = sessions starting within the trailing window (start_ts >= max event
// ts - window). Validation = the round(n * valid_fraction) most recent
// remaining sessions by start time. Throws if the window swallows every
// session or no test session remains.
SplitResult temporal_split(const SessionCorpus& corpus, std::int64_t test_window_ms,
                           double valid_fraction);

// ---- prefix expansion -------------------------------------------------------

struct PrefixPair {
    std::vector<ItemId> prefix;
    ItemId target;
};

// A session of length L yields L-1 (prefix, target) pairs. Throws for L < 2.
std::vector<PrefixPair> expand_prefixes(const Session& s);

// Compact reference form used by the trainers: target =
// sessions[session].items[t], prefix = items[0..t).
struct PairRef {
    std::uint32_t session = 0;
    std::uint32_t t = 0;
};

// ---- processed corpus artifact ---------------------------------------------

struct ProcessedCorpus {
    SessionCorpus corpus;
    SplitResult split;
    std::vector<std::int64_t> train_freq;  // per corpus ItemId, events in the train split

    std::vector<std::uint32_t> sessions_of(Split s) const;
};

ProcessedCorpus finalize_split(SessionCorpus corpus, SplitResult split);

// Line-delimited text artifact, round-trips exactly.
void save_processed_corpus(const std::string& path, const ProcessedCorpus& pc);
ProcessedCorpus load_processed_corpus(const std::string& path);

// ---- growable item vocabulary ----------------------------------------------

// The model's index space: items registered at training time plus anything
// ensure()d later during evaluation. Distinct from the corpus dictionary,
// which also covers test-only items.
class ItemVocabulary {
public:
    ItemId ensure(const std::string& external_id);
    std::optional<ItemId> find(const std::string& external_id) const;
    const std::string& id_of(ItemId i) const { return ids_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return ids_.size(); }

    void set_train_freq(ItemId i, std::int64_t f);
    std::int64_t train_freq(ItemId i) const;

    const std::vector<std::string>& ids() const { return ids_; }

private:
    std::vector<std::string> ids_;
    std::vector<std::int64_t> freq_;
    std::unordered_map<std::string, ItemId> index_;
};

// Registers train+valid items in click order and copies train frequencies.
ItemVocabulary build_model_vocab(const ProcessedCorpus& pc);

}  // namespace manrec
