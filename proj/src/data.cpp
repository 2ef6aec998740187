#include "evorec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evorec {

using nlohmann::json;

int64_t InteractionLog::min_ts() const {
    if (records.empty()) throw DataError("log has no records");
    int64_t m = records.front().ts;
    for (const auto& r : records) m = std::min(m, r.ts);
    return m;
}

int64_t InteractionLog::max_ts() const {
    if (records.empty()) throw DataError("log has no records");
    int64_t m = records.front().ts;
    for (const auto& r : records) m = std::max(m, r.ts);
    return m;
}

namespace {

struct RawRow {
    std::string user, item;
    int64_t ts;
};

int64_t parse_ts(const std::string& s, size_t line_no) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("line " + std::to_string(line_no) + ": bad timestamp '" + s + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<RawRow> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    size_t line_no = 0;
    std::vector<RawRow> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            if (fields.size() < 3 || fields[0] != "user_id" || fields[1] != "item_id" ||
                fields[2] != "timestamp")
                throw DataError("line 1: expected header user_id,item_id,timestamp[,rating]");
            continue;
        }
        if (fields.size() < 3 || fields[0].empty() || fields[1].empty())
            throw DataError("line " + std::to_string(line_no) + ": malformed row");
        rows.push_back({fields[0], fields[1], parse_ts(fields[2], line_no)});
    }
    return rows;
}

std::vector<RawRow> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    size_t line_no = 0;
    std::vector<RawRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("user_id") ||
            !j.contains("item_id") || !j.contains("timestamp"))
            throw DataError("line " + std::to_string(line_no) + ": malformed row");
        try {
            rows.push_back({j["user_id"].get<std::string>(), j["item_id"].get<std::string>(),
                            j["timestamp"].get<int64_t>()});
        } catch (const json::exception&) {
            throw DataError("line " + std::to_string(line_no) + ": malformed row");
        }
    }
    return rows;
}

InteractionLog build_log(const std::vector<RawRow>& rows) {
    if (rows.empty()) throw DataError("no records");
    InteractionLog log;
    std::unordered_map<std::string, int> umap, imap;
    log.records.reserve(rows.size());
    for (const auto& r : rows) {
        auto [uit, unew] = umap.emplace(r.user, static_cast<int>(log.user_names.size()));
        if (unew) log.user_names.push_back(r.user);
        auto [iit, inew] = imap.emplace(r.item, static_cast<int>(log.item_names.size()));
        if (inew) log.item_names.push_back(r.item);
        log.records.push_back({uit->second, iit->second, r.ts});
    }
    std::stable_sort(log.records.begin(), log.records.end(),
                     [](const Interaction& a, const Interaction& b) {
                         return a.user != b.user ? a.user < b.user : a.ts < b.ts;
                     });
    return log;
}

}  // namespace

InteractionLog ingest(const std::string& path, LogFormat format) {
    auto rows = format == LogFormat::Csv ? read_csv(path) : read_jsonl(path);
    return build_log(rows);
}

void write_log_csv(const InteractionLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "user_id,item_id,timestamp\n";
    for (const auto& r : log.records)
        out << log.user_names[r.user] << ',' << log.item_names[r.item] << ',' << r.ts << '\n';
}

InteractionLog kcore_filter(const InteractionLog& log, int k) {
    if (k < 1) throw UsageError("kcore_filter: k must be >= 1");
    std::vector<char> keep(log.records.size(), 1);
    for (;;) {
        std::unordered_map<int, int> ucnt, icnt;
        for (size_t i = 0; i < log.records.size(); ++i) {
            if (!keep[i]) continue;
            ++ucnt[log.records[i].user];
            ++icnt[log.records[i].item];
        }
        bool removed = false;
        for (size_t i = 0; i < log.records.size(); ++i) {
            if (!keep[i]) continue;
            if (ucnt[log.records[i].user] < k || icnt[log.records[i].item] < k) {
                keep[i] = 0;
                removed = true;
            }
        }
        if (!removed) break;
    }
    std::vector<RawRow> rows;
    for (size_t i = 0; i < log.records.size(); ++i) {
        if (!keep[i]) continue;
        const auto& r = log.records[i];
        rows.push_back({log.user_names[r.user], log.item_names[r.item], r.ts});
    }
    InteractionLog out;
    if (rows.empty()) return out;
    return build_log(rows);
}

InteractionLog truncate_log(const InteractionLog& log, int64_t horizon) {
    InteractionLog out;
    out.user_names = log.user_names;
    out.item_names = log.item_names;
    for (const auto& r : log.records)
        if (r.ts <= horizon) out.records.push_back(r);
    return out;
}

// ---------------------------------------------------------------------------
// Temporal split
// ---------------------------------------------------------------------------

std::vector<int> UserSeq::full() const {
    std::vector<int> f = pre;
    f.insert(f.end(), post.begin(), post.end());
    return f;
}

const UserSeq* TemporalSplit::find(int user) const {
    auto it = std::lower_bound(users.begin(), users.end(), user,
                               [](const UserSeq& u, int id) { return u.user < id; });
    if (it == users.end() || it->user != user) return nullptr;
    return &*it;
}

int TemporalSplit::active_count() const {
    int n = 0;
    for (const auto& u : users) n += u.active ? 1 : 0;
    return n;
}

int TemporalSplit::inactive_count() const {
    return static_cast<int>(users.size()) - active_count();
}

TemporalSplit temporal_split(const InteractionLog& log, int64_t T) {
    if (log.records.empty()) throw DataError("temporal_split: empty log");
    if (T < log.min_ts() || T > log.max_ts())
        throw DataError("temporal_split: T=" + std::to_string(T) +
                        " outside log timestamp range [" + std::to_string(log.min_ts()) + ", " +
                        std::to_string(log.max_ts()) + "]");
    TemporalSplit split;
    split.T = T;
    split.n_items = log.n_items();

    size_t i = 0;
    while (i < log.records.size()) {
        int user = log.records[i].user;
        UserSeq u;
        u.user = user;
        while (i < log.records.size() && log.records[i].user == user) {
            const auto& r = log.records[i];
            (r.ts <= T ? u.pre : u.post).push_back(r.item);
            ++i;
        }
        if (static_cast<int>(u.pre.size()) < 3) {
            ++split.n_excluded;
            continue;
        }
        u.active = !u.post.empty();
        std::vector<int> f = u.full();
        u.test_item = f[f.size() - 1];
        u.valid_item = f[f.size() - 2];
        split.users.push_back(std::move(u));
    }
    return split;
}

std::string split_to_json(const TemporalSplit& split) {
    json j;
    j["T"] = split.T;
    j["n_items"] = split.n_items;
    j["n_excluded"] = split.n_excluded;
    json arr = json::array();
    for (const auto& u : split.users) {
        arr.push_back(json{{"user", u.user},
                           {"active", u.active},
                           {"pre", u.pre},
                           {"post", u.post},
                           {"test", u.test_item},
                           {"valid", u.valid_item}});
    }
    j["users"] = std::move(arr);
    return j.dump();
}

TemporalSplit split_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DataError("split: invalid JSON");
    TemporalSplit split;
    split.T = j.at("T").get<int64_t>();
    split.n_items = j.at("n_items").get<int>();
    split.n_excluded = j.at("n_excluded").get<int>();
    for (const auto& ju : j.at("users")) {
        UserSeq u;
        u.user = ju.at("user").get<int>();
        u.active = ju.at("active").get<bool>();
        u.pre = ju.at("pre").get<std::vector<int>>();
        u.post = ju.at("post").get<std::vector<int>>();
        u.test_item = ju.at("test").get<int>();
        u.valid_item = ju.at("valid").get<int>();
        split.users.push_back(std::move(u));
    }
    return split;
}

void save_split(const TemporalSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << split_to_json(split);
}

TemporalSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path + " (produced by the split subcommand)");
    std::stringstream ss;
    ss << in.rdbuf();
    return split_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

CandidateSet sample_candidates(const TemporalSplit& split, int user, uint64_t rng_seed,
                               bool use_valid) {
    const UserSeq* u = split.find(user);
    if (!u) throw DataError("sample_candidates: unknown user " + std::to_string(user));
    const int target = use_valid ? u->valid_item : u->test_item;

    std::unordered_set<int> history(u->pre.begin(), u->pre.end());
    history.insert(u->post.begin(), u->post.end());

    std::vector<int> pool;
    pool.reserve(split.n_items);
    for (int it = 0; it < split.n_items; ++it)
        if (!history.count(it)) pool.push_back(it);
    const int need = kCandidateCount - 1;
    if (static_cast<int>(pool.size()) < need)
        throw DataError("sample_candidates: only " + std::to_string(pool.size()) +
                        " non-interacted items, need " + std::to_string(need));

    Rng rng(rng_seed);
    CandidateSet cs;
    cs.target = target;
    for (int j = 0; j < need; ++j) {
        size_t pick = static_cast<size_t>(j) + rng.next_below(pool.size() - j);
        std::swap(pool[j], pool[pick]);
        cs.negatives.push_back(pool[j]);
    }
    cs.presented = cs.negatives;
    cs.presented.push_back(target);
    rng.shuffle(cs.presented);
    return cs;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace {
void check_items(const std::vector<int>& seq, const TokenVocab& vocab) {
    for (int it : seq)
        if (it < 0 || it >= vocab.n_items)
            throw DataError("encode: item id out of vocabulary: " + std::to_string(it));
}
}  // namespace

EncodedInstance encode(const std::vector<int>& sequence, int next_item, const TokenVocab& vocab,
                       int max_seq_len, int user) {
    if (sequence.empty()) throw DataError("encode: empty sequence");
    check_items(sequence, vocab);
    if (next_item < 0 || next_item >= vocab.n_items)
        throw DataError("encode: item id out of vocabulary: " + std::to_string(next_item));
    EncodedInstance inst;
    inst.user = user;
    size_t start = sequence.size() > static_cast<size_t>(max_seq_len)
                       ? sequence.size() - static_cast<size_t>(max_seq_len)
                       : 0;
    inst.input_tokens.push_back(vocab.bos());
    for (size_t i = start; i < sequence.size(); ++i) inst.input_tokens.push_back(sequence[i]);
    inst.input_tokens.push_back(vocab.sep());
    inst.target_tokens = {next_item};
    inst.target_positions = {static_cast<int>(inst.input_tokens.size()) - 1};
    return inst;
}

std::vector<int> encode_context(const std::vector<int>& sequence, const TokenVocab& vocab,
                                int max_seq_len) {
    if (sequence.empty()) throw DataError("encode_context: empty sequence");
    check_items(sequence, vocab);
    size_t start = sequence.size() > static_cast<size_t>(max_seq_len)
                       ? sequence.size() - static_cast<size_t>(max_seq_len)
                       : 0;
    std::vector<int> tokens;
    tokens.push_back(vocab.bos());
    for (size_t i = start; i < sequence.size(); ++i) tokens.push_back(sequence[i]);
    tokens.push_back(vocab.sep());
    return tokens;
}

EncodedInstance make_training_instance(const std::vector<int>& context,
                                       const std::vector<int>& continuation,
                                       const TokenVocab& vocab, int max_seq_len, int user) {
    if (continuation.empty()) throw DataError("make_training_instance: no continuation");
    check_items(context, vocab);
    check_items(continuation, vocab);

    std::vector<int> z = context;
    z.insert(z.end(), continuation.begin(), continuation.end());
    int boundary = static_cast<int>(context.size());
    // keep the most recent max_seq_len+1 items; the final one is target-only
    int keep = max_seq_len + 1;
    if (static_cast<int>(z.size()) > keep) {
        int cut = static_cast<int>(z.size()) - keep;
        z.erase(z.begin(), z.begin() + cut);
        boundary = std::max(0, boundary - cut);
    }
    const int m = static_cast<int>(z.size());
    if (boundary >= m) throw DataError("make_training_instance: truncation left no target");

    EncodedInstance inst;
    inst.user = user;
    inst.input_tokens.push_back(vocab.bos());
    for (int i = 0; i + 1 < m; ++i) inst.input_tokens.push_back(z[i]);
    inst.input_tokens.push_back(vocab.sep());
    // z[j] is predicted at input position j; SEP re-predicts the last item
    for (int j = boundary; j < m; ++j) {
        inst.target_tokens.push_back(z[j]);
        inst.target_positions.push_back(j);
    }
    inst.target_tokens.push_back(z[m - 1]);
    inst.target_positions.push_back(m);  // SEP position
    return inst;
}

std::vector<EncodedInstance> make_pretrain_instances(const InteractionLog& log,
                                                     const TokenVocab& vocab, int max_seq_len,
                                                     int* skipped) {
    std::vector<EncodedInstance> out;
    int skip = 0;
    size_t i = 0;
    while (i < log.records.size()) {
        int user = log.records[i].user;
        std::vector<int> seq;
        while (i < log.records.size() && log.records[i].user == user) {
            seq.push_back(log.records[i].item);
            ++i;
        }
        if (seq.size() < 3) {
            ++skip;
            continue;
        }
        seq.resize(seq.size() - 2);  // leave-one-out holdout
        out.push_back(make_training_instance({}, seq, vocab, max_seq_len, user));
    }
    if (skipped) *skipped = skip;
    return out;
}

std::vector<EncodedInstance> make_alignment_instances(
    const TemporalSplit& split, const std::unordered_map<int, std::vector<int>>& kept_pre,
    const TokenVocab& vocab, int max_seq_len, int* skipped) {
    std::vector<EncodedInstance> out;
    int skip = 0;
    for (const auto& u : split.users) {
        if (!u.active) continue;
        // holdout = last two events of the visible sequence
        if (u.post.size() < 3) {
            ++skip;
            continue;
        }
        std::vector<int> targets(u.post.begin(), u.post.end() - 2);
        auto it = kept_pre.find(u.user);
        const std::vector<int>& ctx = it != kept_pre.end() ? it->second : u.pre;
        out.push_back(make_training_instance(ctx, targets, vocab, max_seq_len, u.user));
    }
    if (skipped) *skipped = skip;
    return out;
}

EncodedInstance make_eval_instance(const UserSeq& u, const TokenVocab& vocab, int max_seq_len,
                                   bool use_valid) {
    std::vector<int> f = u.full();
    int drop = use_valid ? 2 : 1;
    std::vector<int> history(f.begin(), f.end() - drop);
    int target = use_valid ? u.valid_item : u.test_item;
    return encode(history, target, vocab, max_seq_len, u.user);
}

// ---------------------------------------------------------------------------
// Drift generator
// ---------------------------------------------------------------------------

void DriftScenario::validate() const {
    if (n_users < 1 || n_items < 1 || n_clusters < 1) throw UsageError("drift: bad counts");
    if (n_items < n_clusters * 10)
        throw UsageError("drift: n_items must be >= 10 * n_clusters");
    if (drift_fraction < 0.0 || drift_fraction >= 1.0)
        throw UsageError("drift: drift_fraction must be in [0, 1)");
    if (fidelity < 0.8 || fidelity > 1.0)
        throw UsageError("drift: fidelity must be in [0.8, 1.0]");
    if (n_cycles < 1) throw UsageError("drift: n_cycles must be >= 1");
    if (pre_events_min < 3 || pre_events_max < pre_events_min)
        throw UsageError("drift: bad pre event range (min 3)");
    if (post_events_min < 1 || post_events_max < post_events_min)
        throw UsageError("drift: bad post event range");
}

namespace {

// Zipf(1.1) popularity skew inside each cluster.
struct ClusterSampler {
    std::vector<std::vector<int>> members;
    std::vector<std::vector<double>> cdf;

    ClusterSampler(int n_items, int n_clusters) {
        members.resize(n_clusters);
        for (int i = 0; i < n_items; ++i) members[i % n_clusters].push_back(i);
        cdf.resize(n_clusters);
        for (int c = 0; c < n_clusters; ++c) {
            double acc = 0;
            for (size_t r = 0; r < members[c].size(); ++r) {
                acc += std::pow(static_cast<double>(r + 1), -1.1);
                cdf[c].push_back(acc);
            }
            for (auto& v : cdf[c]) v /= acc;
        }
    }

    int draw(int cluster, Rng& rng) const {
        double x = rng.next_double();
        const auto& c = cdf[cluster];
        size_t lo = std::lower_bound(c.begin(), c.end(), x) - c.begin();
        if (lo >= c.size()) lo = c.size() - 1;
        return members[cluster][lo];
    }

    int draw_unused(int cluster, Rng& rng, const std::unordered_set<int>& used) const {
        for (int tries = 0; tries < 200; ++tries) {
            int it = draw(cluster, rng);
            if (!used.count(it)) return it;
        }
        for (int it : members[cluster])
            if (!used.count(it)) return it;
        throw DataError("drift: cluster exhausted; increase n_items per cluster");
    }
};

}  // namespace

DriftResult generate_drift(const DriftScenario& s) {
    s.validate();
    Rng rng(derive_seed(s.seed, "gen-data"));
    ClusterSampler clusters(s.n_items, s.n_clusters);

    DriftResult res;
    res.truth.item_cluster.resize(s.n_items);
    for (int c = 0; c < s.n_clusters; ++c)
        for (int it : clusters.members[c]) res.truth.item_cluster[it] = c;

    std::vector<RawRow> rows;
    char buf[32];
    for (int i = 0; i < s.n_items; ++i) {
        std::snprintf(buf, sizeof buf, "i%04d", i);
        res.truth.item_names.push_back(buf);
    }

    for (int uidx = 0; uidx < s.n_users; ++uidx) {
        std::snprintf(buf, sizeof buf, "u%05d", uidx);
        DriftTruth::User tu;
        tu.name = buf;
        tu.home_cluster = static_cast<int>(rng.next_below(s.n_clusters));
        tu.drifted = rng.next_double() < s.drift_fraction;
        if (tu.drifted) {
            tu.drift_cycle = 1 + static_cast<int>(rng.next_below(s.n_cycles));
            tu.new_cluster = static_cast<int>(
                (tu.home_cluster + 1 + rng.next_below(s.n_clusters - 1)) % s.n_clusters);
        }

        std::unordered_set<int> used;
        int n_pre = rng.next_int(s.pre_events_min, s.pre_events_max);
        std::vector<int64_t> times;
        for (int e = 0; e < n_pre; ++e) times.push_back(1 + rng.next_int(0, 1998));
        std::sort(times.begin(), times.end());
        for (int e = 0; e < n_pre; ++e) {
            int it = clusters.draw_unused(tu.home_cluster, rng, used);
            used.insert(it);
            rows.push_back({tu.name, res.truth.item_names[it], times[e]});
        }

        if (tu.drifted) {
            int n_post = rng.next_int(s.post_events_min, s.post_events_max);
            int64_t lo = s.cycle_T(tu.drift_cycle - 1) + 1, hi = s.cycle_T(tu.drift_cycle);
            times.clear();
            for (int e = 0; e < n_post; ++e)
                times.push_back(lo + rng.next_int(0, static_cast<int>(hi - lo)));
            std::sort(times.begin(), times.end());
            for (int e = 0; e < n_post; ++e) {
                int cluster =
                    rng.next_double() < s.fidelity ? tu.new_cluster : tu.home_cluster;
                int it = clusters.draw_unused(cluster, rng, used);
                used.insert(it);
                rows.push_back({tu.name, res.truth.item_names[it], times[e]});
            }
        }
        res.truth.users.push_back(std::move(tu));
    }

    res.log = build_log(rows);
    return res;
}

void save_truth(const DriftTruth& truth, const DriftScenario& s, const std::string& path) {
    json j;
    j["scenario"] = json{{"n_users", s.n_users},
                         {"n_items", s.n_items},
                         {"n_clusters", s.n_clusters},
                         {"drift_fraction", s.drift_fraction},
                         {"fidelity", s.fidelity},
                         {"n_cycles", s.n_cycles},
                         {"pre_events_min", s.pre_events_min},
                         {"pre_events_max", s.pre_events_max},
                         {"post_events_min", s.post_events_min},
                         {"post_events_max", s.post_events_max},
                         {"seed", s.seed},
                         {"pretrain_T", s.pretrain_T()}};
    json cyc = json::array();
    for (int i = 1; i <= s.n_cycles; ++i) cyc.push_back(s.cycle_T(i));
    j["cycle_T"] = std::move(cyc);
    json items = json::object();
    for (size_t i = 0; i < truth.item_names.size(); ++i)
        items[truth.item_names[i]] = truth.item_cluster[i];
    j["item_cluster"] = std::move(items);
    json users = json::array();
    for (const auto& u : truth.users) {
        users.push_back(json{{"name", u.name},
                             {"home_cluster", u.home_cluster},
                             {"drifted", u.drifted},
                             {"drift_cycle", u.drift_cycle},
                             {"new_cluster", u.new_cluster}});
    }
    j["users"] = std::move(users);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2);
}

}  // namespace evorec
