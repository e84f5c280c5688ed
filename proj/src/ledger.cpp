#include "sepsisfl/ledger.hpp"

#include <cinttypes>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "sepsisfl/common.hpp"

namespace sepsisfl::ledger {

Digest compute_entry_hash(const LedgerEntry& e) {
    std::vector<unsigned char> pre;
    pre.reserve(128 + e.meta.mode.size());
    put_u64(pre, e.index);
    put_i64(pre, e.timestamp_ms);
    pre.insert(pre.end(), e.param_hash.begin(), e.param_hash.end());
    put_u32(pre, static_cast<std::uint32_t>(e.meta.mode.size()));
    pre.insert(pre.end(), e.meta.mode.begin(), e.meta.mode.end());
    put_u32(pre, e.meta.client_count);
    put_f64(pre, e.meta.epsilon);
    pre.insert(pre.end(), e.prev_hash.begin(), e.prev_hash.end());
    return sha256(pre);
}

VerifyResult verify_chain(const std::vector<LedgerEntry>& entries) {
    Digest prev{};  // genesis links to 32 zero bytes
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const LedgerEntry& e = entries[i];
        if (e.index != i)
            return {false, i, "index mismatch: expected " + std::to_string(i)};
        if (e.prev_hash != prev)
            return {false, i, "prev_hash does not link to preceding entry"};
        if (compute_entry_hash(e) != e.entry_hash)
            return {false, i, "entry_hash does not recompute from fields"};
        prev = e.entry_hash;
    }
    return {};
}

const LedgerEntry& Chain::append(const Digest& param_hash, const EntryMeta& meta,
                                 std::int64_t timestamp_ms) {
    VerifyResult v = verify();
    if (!v.ok)
        throw ProtocolError("ledger append refused, chain tampered at entry " +
                            std::to_string(v.first_bad_index) + ": " + v.what);
    LedgerEntry e;
    e.index = entries_.size();
    e.timestamp_ms = timestamp_ms;
    e.param_hash = param_hash;
    e.meta = meta;
    if (!entries_.empty()) e.prev_hash = entries_.back().entry_hash;
    e.entry_hash = compute_entry_hash(e);
    entries_.push_back(std::move(e));
    return entries_.back();
}

VerifyResult Chain::verify() const {
    return verify_chain(entries_);
}

void Chain::save(std::ostream& out) const {
    char eps[64];
    for (const auto& e : entries_) {
        std::snprintf(eps, sizeof(eps), "%.17g", e.meta.epsilon);
        out << e.index << '\t' << e.timestamp_ms << '\t' << e.meta.mode << '\t'
            << e.meta.client_count << '\t' << eps << '\t' << digest_hex(e.param_hash) << '\t'
            << digest_hex(e.prev_hash) << '\t' << digest_hex(e.entry_hash) << '\n';
    }
}

Chain Chain::load(std::istream& in) {
    Chain chain;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            f.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (f.size() != 8)
            throw DataError("ledger file: malformed line " + std::to_string(lineno));
        LedgerEntry e;
        try {
            e.index = std::stoull(f[0]);
            e.timestamp_ms = std::stoll(f[1]);
            e.meta.mode = f[2];
            e.meta.client_count = static_cast<std::uint32_t>(std::stoul(f[3]));
            e.meta.epsilon = std::stod(f[4]);
        } catch (const std::exception&) {
            throw DataError("ledger file: unparsable field at line " + std::to_string(lineno));
        }
        if (!from_hex(f[5], e.param_hash.data(), 32) || !from_hex(f[6], e.prev_hash.data(), 32) ||
            !from_hex(f[7], e.entry_hash.data(), 32))
            throw DataError("ledger file: bad digest hex at line " + std::to_string(lineno));
        chain.entries_.push_back(std::move(e));
    }
    return chain;
}

}  // namespace sepsisfl::ledger
