#include "manrec/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>

namespace manrec {

namespace {

// Splits one physical line. Returns false on an unterminated quote.
bool split_fields(const std::string& line, char delim, char quote,
                  std::vector<std::string>& out) {
    out.clear();
    std::string field;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (in_quotes) {
            if (ch == quote) {
                if (i + 1 < line.size() && line[i + 1] == quote) {
                    field.push_back(quote);
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == quote && field.empty()) {
            in_quotes = true;
        } else if (ch == delim) {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    if (in_quotes) return false;
    out.push_back(std::move(field));
    return true;
}

bool parse_int(const char* b, const char* e, std::int64_t& out) {
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

// Howard Hinnant's civil-days algorithm; proleptic Gregorian, UTC.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

unsigned days_in_month(std::int64_t y, unsigned m) {
    static const unsigned lens[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) return 29;
    return lens[m - 1];
}

std::optional<std::int64_t> parse_iso8601_ms(const std::string& s) {
    // YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|+HH:MM|-HH:MM]
    auto digits = [&](std::size_t pos, std::size_t n, std::int64_t& out) {
        if (pos + n > s.size()) return false;
        out = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const char c = s[pos + i];
            if (c < '0' || c > '9') return false;
            out = out * 10 + (c - '0');
        }
        return true;
    };
    std::int64_t y, mo, d, h, mi, sec;
    if (!digits(0, 4, y) || s.size() < 19) return std::nullopt;
    if (s[4] != '-' || !digits(5, 2, mo) || s[7] != '-' || !digits(8, 2, d)) return std::nullopt;
    if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
    if (!digits(11, 2, h) || s[13] != ':' || !digits(14, 2, mi) || s[16] != ':' ||
        !digits(17, 2, sec))
        return std::nullopt;
    if (mo < 1 || mo > 12 || d < 1 ||
        d > days_in_month(y, static_cast<unsigned>(mo)) || h > 23 || mi > 59 || sec > 60)
        return std::nullopt;

    std::size_t pos = 19;
    std::int64_t frac_ms = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t nd = 0;
        std::int64_t frac = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            if (nd < 3) frac = frac * 10 + (s[pos] - '0');
            ++nd;
            ++pos;
        }
        if (nd == 0) return std::nullopt;
        while (nd < 3) {
            frac *= 10;
            ++nd;
        }
        frac_ms = frac;
    }
    std::int64_t offset_min = 0;
    if (pos < s.size()) {
        const char c = s[pos];
        if (c == 'Z' && pos + 1 == s.size()) {
            // UTC
        } else if ((c == '+' || c == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
            std::int64_t oh, om;
            if (!digits(pos + 1, 2, oh) || !digits(pos + 4, 2, om)) return std::nullopt;
            offset_min = (oh * 60 + om) * (c == '-' ? -1 : 1);
        } else {
            return std::nullopt;
        }
    }
    const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo),
                                              static_cast<unsigned>(d));
    return ((days * 86400 + h * 3600 + mi * 60 + sec) - offset_min * 60) * 1000 + frac_ms;
}

}  // namespace

std::optional<std::int64_t> parse_timestamp_ms(const std::string& field, TsFormat fmt) {
    if (field.empty()) return std::nullopt;
    if (fmt == TsFormat::auto_detect) {
        const bool numeric = field.find_first_not_of("0123456789") == std::string::npos;
        if (!numeric)
            fmt = TsFormat::iso8601;
        else
            fmt = TsFormat::epoch_seconds;  // magnitude-resolved below
    }
    if (fmt == TsFormat::iso8601) return parse_iso8601_ms(field);
    std::int64_t v;
    if (!parse_int(field.data(), field.data() + field.size(), v)) return std::nullopt;
    if (fmt == TsFormat::epoch_millis) return v;
    // epoch_seconds, or an auto-detected numeric field: values at or past
    // 1e11 can only be milliseconds (year 5138 in seconds)
    if (v >= 100000000000ll) return v;
    return v * 1000;
}

std::optional<TsFormat> parse_ts_format(const std::string& name) {
    if (name == "auto") return TsFormat::auto_detect;
    if (name == "iso8601") return TsFormat::iso8601;
    if (name == "epoch-s") return TsFormat::epoch_seconds;
    if (name == "epoch-ms") return TsFormat::epoch_millis;
    return std::nullopt;
}

IngestResult ingest_events(std::istream& in, const IngestConfig& cfg) {
    IngestResult res;
    const int max_col = std::max({cfg.col_session, cfg.col_time, cfg.col_item});
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        res.malformed += 1;
        if (cfg.strict) throw Error("line " + std::to_string(line_no) + ": " + why);
        if (res.errors.size() < 1000) res.errors.push_back({line_no, why});
    };
    while (std::getline(in, line)) {
        ++line_no;
        res.lines_read += 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (cfg.has_header && line_no == 1) continue;
        if (line.empty()) continue;
        if (!split_fields(line, cfg.delimiter, cfg.quote, fields)) {
            fail("unterminated quoted field");
            continue;
        }
        if (static_cast<int>(fields.size()) <= max_col) {
            fail("expected at least " + std::to_string(max_col + 1) + " columns, got " +
                 std::to_string(fields.size()));
            continue;
        }
        const std::string& sid = fields[static_cast<std::size_t>(cfg.col_session)];
        const std::string& tsf = fields[static_cast<std::size_t>(cfg.col_time)];
        const std::string& iid = fields[static_cast<std::size_t>(cfg.col_item)];
        if (sid.empty() || iid.empty()) {
            fail("empty session or item id");
            continue;
        }
        const auto ts = parse_timestamp_ms(tsf, cfg.ts_format);
        if (!ts) {
            fail("unparseable timestamp '" + tsf + "'");
            continue;
        }
        res.events.push_back({sid, *ts, iid});
    }
    return res;
}

SessionCorpus build_and_filter_sessions(const std::vector<RawEvent>& events,
                                        const FilterConfig& cfg) {
    // group clicks by session id, first-appearance order
    struct RawSession {
        std::string id;
        std::vector<std::pair<std::int64_t, const std::string*>> clicks;
    };
    std::vector<RawSession> raw;
    {
        std::unordered_map<std::string, std::size_t> pos;
        for (const auto& e : events) {
            auto [it, fresh] = pos.try_emplace(e.session_id, raw.size());
            if (fresh) raw.push_back({e.session_id, {}});
            raw[it->second].clicks.emplace_back(e.ts_ms, &e.item_id);
        }
    }
    for (auto& s : raw)
        std::stable_sort(s.clicks.begin(), s.clicks.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

    // iterate support/length filters to a fixed point
    std::vector<char> session_alive(raw.size(), 1);
    std::unordered_map<std::string, std::int64_t> support;
    bool changed = true;
    while (changed) {
        changed = false;
        support.clear();
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (!session_alive[i]) continue;
            for (const auto& c : raw[i].clicks) support[*c.second] += 1;
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (!session_alive[i]) continue;
            auto& clicks = raw[i].clicks;
            const std::size_t before = clicks.size();
            std::erase_if(clicks, [&](const auto& c) {
                return support.at(*c.second) < cfg.min_item_support;
            });
            if (clicks.size() != before) changed = true;
            if (clicks.size() < cfg.min_session_len || clicks.size() > cfg.max_session_len) {
                session_alive[i] = 0;
                changed = true;
            }
        }
    }

    SessionCorpus out;
    std::unordered_map<std::string, ItemId> dict;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!session_alive[i]) continue;
        Session s;
        s.id = raw[i].id;
        for (const auto& c : raw[i].clicks) {
            auto [it, fresh] =
                dict.try_emplace(*c.second, static_cast<ItemId>(out.item_ids.size()));
            if (fresh) out.item_ids.push_back(*c.second);
            s.items.push_back(it->second);
            s.ts.push_back(c.first);
        }
        out.sessions.push_back(std::move(s));
    }
    return out;
}

SplitResult temporal_split(const SessionCorpus& corpus, std::int64_t test_window_ms,
                           double valid_fraction) {
    if (corpus.sessions.empty()) throw Error("cannot split an empty corpus");
    if (test_window_ms <= 0) throw Error("test window must be positive");
    if (valid_fraction < 0.0 || valid_fraction >= 1.0)
        throw Error("valid fraction must lie in [0, 1)");

    std::int64_t max_ts = corpus.sessions[0].ts[0];
    for (const auto& s : corpus.sessions)
        for (auto t : s.ts) max_ts = std::max(max_ts, t);
    const std::int64_t cut = max_ts - test_window_ms;

    SplitResult res;
    res.test_cut_ts = cut;
    res.assign.assign(corpus.sessions.size(), Split::train);
    std::vector<std::uint32_t> pretest;
    for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
        if (corpus.sessions[i].start_ts() >= cut)
            res.assign[i] = Split::test;
        else
            pretest.push_back(static_cast<std::uint32_t>(i));
    }
    if (pretest.empty())
        throw Error("test window covers every session; nothing left to train on");
    if (pretest.size() == corpus.sessions.size())
        throw Error("test window is empty; no session starts inside it");

    const auto n_valid =
        static_cast<std::size_t>(std::llround(static_cast<double>(pretest.size()) *
                                              valid_fraction));
    if (n_valid > 0) {
        std::stable_sort(pretest.begin(), pretest.end(),
                         [&](std::uint32_t a, std::uint32_t b) {
                             return corpus.sessions[a].start_ts() >
                                    corpus.sessions[b].start_ts();
                         });
        for (std::size_t k = 0; k < n_valid; ++k) res.assign[pretest[k]] = Split::valid;
    }
    for (auto a : res.assign) {
        if (a == Split::train) res.n_train += 1;
        else if (a == Split::valid) res.n_valid += 1;
        else res.n_test += 1;
    }
    if (res.n_train == 0) throw Error("validation fraction leaves no training sessions");
    return res;
}

std::vector<PrefixPair> expand_prefixes(const Session& s) {
    if (s.items.size() < 2) throw Error("cannot expand a session shorter than 2 clicks");
    std::vector<PrefixPair> out;
    out.reserve(s.items.size() - 1);
    for (std::size_t t = 1; t < s.items.size(); ++t) {
        PrefixPair p;
        p.prefix.assign(s.items.begin(), s.items.begin() + static_cast<std::ptrdiff_t>(t));
        p.target = s.items[t];
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::uint32_t> ProcessedCorpus::sessions_of(Split s) const {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < corpus.sessions.size(); ++i)
        if (split.assign[i] == s) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

ProcessedCorpus finalize_split(SessionCorpus corpus, SplitResult split) {
    if (split.assign.size() != corpus.sessions.size())
        throw Error("split does not match corpus");
    ProcessedCorpus pc;
    pc.train_freq.assign(corpus.item_ids.size(), 0);
    for (std::size_t i = 0; i < corpus.sessions.size(); ++i)
        if (split.assign[i] == Split::train)
            for (ItemId it : corpus.sessions[i].items)
                pc.train_freq[static_cast<std::size_t>(it)] += 1;
    pc.corpus = std::move(corpus);
    pc.split = std::move(split);
    return pc;
}

// ---- corpus artifact io -----------------------------------------------------

namespace {

std::string escape_id(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else out.push_back(c);
    }
    return out;
}

std::string unescape_id(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            ++i;
            if (s[i] == 't') out.push_back('\t');
            else if (s[i] == 'n') out.push_back('\n');
            else out.push_back(s[i]);
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto p = line.find('\t', start);
        if (p == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

}  // namespace

void save_processed_corpus(const std::string& path, const ProcessedCorpus& pc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "#manrec-corpus v1\n";
    out << "items " << pc.corpus.item_ids.size() << '\n';
    for (std::size_t i = 0; i < pc.corpus.item_ids.size(); ++i)
        out << escape_id(pc.corpus.item_ids[i]) << '\t' << pc.train_freq[i] << '\n';
    out << "test_cut_ts " << pc.split.test_cut_ts << '\n';
    out << "sessions " << pc.corpus.sessions.size() << '\n';
    static const char marks[] = {'T', 'V', 'E'};
    for (std::size_t i = 0; i < pc.corpus.sessions.size(); ++i) {
        const auto& s = pc.corpus.sessions[i];
        out << marks[static_cast<int>(pc.split.assign[i])] << '\t' << escape_id(s.id) << '\t'
            << s.items.size() << '\t';
        for (std::size_t k = 0; k < s.items.size(); ++k) {
            if (k) out << ' ';
            out << s.items[k] << ':' << s.ts[k];
        }
        out << '\n';
    }
    out << "end\n";
    if (!out) throw Error("write to " + path + " failed");
}

ProcessedCorpus load_processed_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open corpus file " + path);
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() {
        if (!std::getline(in, line)) throw Error(path + ": truncated corpus file");
        ++line_no;
    };
    auto bad = [&](const std::string& why) -> Error {
        return Error(path + ":" + std::to_string(line_no) + ": " + why);
    };

    next_line();
    if (line != "#manrec-corpus v1") throw bad("not a manrec corpus file");

    ProcessedCorpus pc;
    next_line();
    std::size_t n_items = 0;
    if (sscanf(line.c_str(), "items %zu", &n_items) != 1) throw bad("expected items header");
    pc.corpus.item_ids.reserve(n_items);
    pc.train_freq.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        next_line();
        const auto f = split_tabs(line);
        if (f.size() != 2) throw bad("expected '<id>\\t<freq>'");
        std::int64_t freq;
        if (!parse_int(f[1].data(), f[1].data() + f[1].size(), freq))
            throw bad("bad frequency");
        pc.corpus.item_ids.push_back(unescape_id(f[0]));
        pc.train_freq.push_back(freq);
    }

    next_line();
    long long cut = 0;
    if (sscanf(line.c_str(), "test_cut_ts %lld", &cut) != 1)
        throw bad("expected test_cut_ts");
    pc.split.test_cut_ts = cut;

    next_line();
    std::size_t n_sessions = 0;
    if (sscanf(line.c_str(), "sessions %zu", &n_sessions) != 1)
        throw bad("expected sessions header");
    for (std::size_t i = 0; i < n_sessions; ++i) {
        next_line();
        const auto f = split_tabs(line);
        if (f.size() != 4) throw bad("expected 4 session fields");
        Split sp;
        if (f[0] == "T") sp = Split::train;
        else if (f[0] == "V") sp = Split::valid;
        else if (f[0] == "E") sp = Split::test;
        else throw bad("unknown split marker '" + f[0] + "'");
        Session s;
        s.id = unescape_id(f[1]);
        std::int64_t len;
        if (!parse_int(f[2].data(), f[2].data() + f[2].size(), len) || len < 0)
            throw bad("bad session length");
        std::size_t start = 0;
        const std::string& body = f[3];
        for (std::int64_t k = 0; k < len; ++k) {
            auto end = body.find(' ', start);
            if (end == std::string::npos) end = body.size();
            const auto colon = body.find(':', start);
            if (colon == std::string::npos || colon >= end) throw bad("bad click entry");
            std::int64_t item, ts;
            if (!parse_int(body.data() + start, body.data() + colon, item) ||
                !parse_int(body.data() + colon + 1, body.data() + end, ts))
                throw bad("bad click entry");
            if (item < 0 || static_cast<std::size_t>(item) >= n_items)
                throw bad("item index out of dictionary range");
            s.items.push_back(static_cast<ItemId>(item));
            s.ts.push_back(ts);
            start = end + 1;
        }
        if (s.items.size() != static_cast<std::size_t>(len)) throw bad("length mismatch");
        pc.split.assign.push_back(sp);
        if (sp == Split::train) pc.split.n_train += 1;
        else if (sp == Split::valid) pc.split.n_valid += 1;
        else pc.split.n_test += 1;
        pc.corpus.sessions.push_back(std::move(s));
    }
    next_line();
    if (line != "end") throw bad("missing end marker");
    return pc;
}

// ---- vocabulary ---------------------------------------------------------------

ItemId ItemVocabulary::ensure(const std::string& external_id) {
    auto [it, fresh] = index_.try_emplace(external_id, static_cast<ItemId>(ids_.size()));
    if (fresh) {
        ids_.push_back(external_id);
        freq_.push_back(0);
    }
    return it->second;
}

std::optional<ItemId> ItemVocabulary::find(const std::string& external_id) const {
    const auto it = index_.find(external_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void ItemVocabulary::set_train_freq(ItemId i, std::int64_t f) {
    freq_.at(static_cast<std::size_t>(i)) = f;
}

std::int64_t ItemVocabulary::train_freq(ItemId i) const {
    return freq_.at(static_cast<std::size_t>(i));
}

ItemVocabulary build_model_vocab(const ProcessedCorpus& pc) {
    ItemVocabulary vocab;
    for (std::size_t i = 0; i < pc.corpus.sessions.size(); ++i) {
        const auto sp = pc.split.assign[i];
        if (sp != Split::train && sp != Split::valid) continue;
        for (ItemId it : pc.corpus.sessions[i].items)
            vocab.ensure(pc.corpus.item_ids[static_cast<std::size_t>(it)]);
    }
    std::unordered_map<std::string, std::int64_t> freq_by_ext;
    for (std::size_t c = 0; c < pc.corpus.item_ids.size(); ++c)
        freq_by_ext.emplace(pc.corpus.item_ids[c], pc.train_freq[c]);
    for (ItemId v = 0; v < static_cast<ItemId>(vocab.size()); ++v)
        vocab.set_train_freq(v, freq_by_ext.at(vocab.id_of(v)));
    return vocab;
}

}  // namespace manrec
