#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "evorec/common.hpp"

namespace evorec {

// ---------------------------------------------------------------------------
// Interaction logs
// ---------------------------------------------------------------------------

struct Interaction {
    int user;
    int item;
    int64_t ts;
};

// Records are sorted by (user, timestamp), ties keeping input order. Dense
// user/item ids are assigned in first-appearance order of the raw input and
// map bijectively onto the original string ids.
struct InteractionLog {
    std::vector<Interaction> records;
    std::vector<std::string> user_names;
    std::vector<std::string> item_names;

    int n_users() const { return static_cast<int>(user_names.size()); }
    int n_items() const { return static_cast<int>(item_names.size()); }
    int64_t min_ts() const;
    int64_t max_ts() const;
};

enum class LogFormat { Csv, Jsonl };

InteractionLog ingest(const std::string& path, LogFormat format);
void write_log_csv(const InteractionLog& log, const std::string& path);

// Iteratively removes users/items with fewer than k interactions until a
// fixpoint, then re-densifies ids. May return an empty log.
InteractionLog kcore_filter(const InteractionLog& log, int k);

// Drops events with ts > horizon. Dense ids and name tables are preserved so
// the item vocabulary stays stable across evolution cycles.
InteractionLog truncate_log(const InteractionLog& log, int64_t horizon);

// ---------------------------------------------------------------------------
// Temporal split
// ---------------------------------------------------------------------------

struct UserSeq {
    int user = -1;
    bool active = false;
    std::vector<int> pre;   // items with ts <= T, time order
    std::vector<int> post;  // items with ts > T, time order
    int test_item = -1;     // last event of pre+post
    int valid_item = -1;    // second-to-last

    std::vector<int> full() const;
};

struct TemporalSplit {
    int64_t T = 0;
    int n_items = 0;
    int n_excluded = 0;  // users dropped for having < 3 pre-T interactions
    std::vector<UserSeq> users;  // ascending user id

    const UserSeq* find(int user) const;
    int active_count() const;
    int inactive_count() const;
};

TemporalSplit temporal_split(const InteractionLog& log, int64_t T);

std::string split_to_json(const TemporalSplit& split);
TemporalSplit split_from_json(const std::string& text);
void save_split(const TemporalSplit& split, const std::string& path);
TemporalSplit load_split(const std::string& path);

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

constexpr int kCandidateCount = 30;  // 1 target + 29 sampled negatives

struct CandidateSet {
    int target = -1;
    std::vector<int> negatives;  // 29 items, none in the user's history
    std::vector<int> presented;  // permutation of negatives + target
};

CandidateSet sample_candidates(const TemporalSplit& split, int user, uint64_t rng_seed,
                               bool use_valid = false);

// ---------------------------------------------------------------------------
// Token encoding
// ---------------------------------------------------------------------------

// Token vocabulary = item ids plus BOS/SEP/PAD appended after the items.
struct TokenVocab {
    int n_items = 0;
    int bos() const { return n_items; }
    int sep() const { return n_items + 1; }
    int pad() const { return n_items + 2; }
    int size() const { return n_items + 3; }
};

struct EncodedInstance {
    std::vector<int> input_tokens;      // [BOS, items..., SEP]
    std::vector<int> target_tokens;     // next item(s); aligned with positions
    std::vector<int> target_positions;  // input position predicting each target
    int user = -1;
};

// Inference-style instance: [BOS, seq, SEP] predicting `next` at SEP. The
// sequence is truncated to its most recent max_seq_len items.
EncodedInstance encode(const std::vector<int>& sequence, int next_item, const TokenVocab& vocab,
                       int max_seq_len, int user = -1);

// Context-only token stream (same template, no supervision attached).
std::vector<int> encode_context(const std::vector<int>& sequence, const TokenVocab& vocab,
                                int max_seq_len);

// Training instance over context ++ continuation: every continuation item
// becomes a target at its predicting position, and the final continuation
// item is additionally predicted at SEP. Pass an empty context to supervise
// the whole sequence. Throws DataError when truncation leaves no target.
EncodedInstance make_training_instance(const std::vector<int>& context,
                                       const std::vector<int>& continuation,
                                       const TokenVocab& vocab, int max_seq_len, int user = -1);

// Full-supervision pretraining stream: one instance per user built from the
// user's events minus the last two (leave-one-out holdout). Users with fewer
// than 3 events are skipped and counted.
std::vector<EncodedInstance> make_pretrain_instances(const InteractionLog& log,
                                                     const TokenVocab& vocab, int max_seq_len,
                                                     int* skipped = nullptr);

// Alignment instances for active users: context is the (possibly filtered)
// pre-T part, targets are post-T events minus the leave-one-out holdout.
// Users left without any target are skipped and counted.
std::vector<EncodedInstance> make_alignment_instances(
    const TemporalSplit& split,
    const std::unordered_map<int, std::vector<int>>& kept_pre,  // empty -> raw pre
    const TokenVocab& vocab, int max_seq_len, int* skipped = nullptr);

// Evaluation instance: history is everything before the held-out item.
EncodedInstance make_eval_instance(const UserSeq& u, const TokenVocab& vocab, int max_seq_len,
                                   bool use_valid = false);

// ---------------------------------------------------------------------------
// Synthetic drift scenarios
// ---------------------------------------------------------------------------

struct DriftScenario {
    int n_users = 2000;
    int n_items = 500;
    int n_clusters = 4;
    double drift_fraction = 0.25;
    double fidelity = 0.9;  // probability a drifted user's post-T draw is from the new cluster
    int n_cycles = 1;
    int pre_events_min = 8, pre_events_max = 16;
    int post_events_min = 5, post_events_max = 9;
    uint64_t seed = 0;

    // Timeline: pre-T events in [1, pretrain_T()], cycle i events in
    // (cycle_T(i-1), cycle_T(i)] with cycle_T(0) == pretrain_T().
    int64_t pretrain_T() const { return 2000; }
    int64_t cycle_T(int i) const { return 2000 + 1000LL * i; }

    void validate() const;
};

struct DriftTruth {
    struct User {
        std::string name;
        int home_cluster = 0;
        bool drifted = false;
        int drift_cycle = 0;  // 1-based; 0 when not drifted
        int new_cluster = -1;
    };
    std::vector<User> users;
    std::vector<int> item_cluster;  // by generated item index
    std::vector<std::string> item_names;
};

struct DriftResult {
    InteractionLog log;
    DriftTruth truth;
};

DriftResult generate_drift(const DriftScenario& scenario);
void save_truth(const DriftTruth& truth, const DriftScenario& s, const std::string& path);

}  // namespace evorec
