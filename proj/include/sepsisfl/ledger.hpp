#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sepsisfl/digest.hpp"

namespace sepsisfl::ledger {

struct EntryMeta {
    std::string mode;             // aggregation mode label
    std::uint32_t client_count = 0;
    double epsilon = 0.0;         // cumulative privacy budget at this round
};

// Hashed preimage, little-endian fields in declaration order:
//   u64 index | i64 timestamp_ms | 32B param_hash |
//   u32 mode length | mode bytes | u32 client_count | f64 epsilon bits |
//   32B prev_hash
struct LedgerEntry {
    std::uint64_t index = 0;
    std::int64_t timestamp_ms = 0;
    Digest param_hash{};
    EntryMeta meta;
    Digest prev_hash{};  // 32 zero bytes for the genesis entry
    Digest entry_hash{};
};

Digest compute_entry_hash(const LedgerEntry& e);

struct VerifyResult {
    bool ok = true;
    std::size_t first_bad_index = 0;
    std::string what;
};

class Chain {
  public:
    // Verifies the existing chain before linking the new entry; a tampered
    // chain refuses the append. Timestamps are caller-supplied so a seeded
    // simulation stays byte-identical across runs.
    const LedgerEntry& append(const Digest& param_hash, const EntryMeta& meta,
                              std::int64_t timestamp_ms);

    VerifyResult verify() const;

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const LedgerEntry& entry(std::size_t i) const { return entries_.at(i); }
    const std::vector<LedgerEntry>& entries() const { return entries_; }
    std::vector<LedgerEntry>& mutable_entries() { return entries_; }  // tamper tests

    // Newline-delimited records, tab-separated fields, hex digests.
    void save(std::ostream& out) const;
    static Chain load(std::istream& in);

  private:
    std::vector<LedgerEntry> entries_;
};

VerifyResult verify_chain(const std::vector<LedgerEntry>& entries);

}  // namespace sepsisfl::ledger
