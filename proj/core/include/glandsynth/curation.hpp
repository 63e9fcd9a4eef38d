#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"
#include "glandsynth/png_io.hpp"

namespace gsyn {

struct ScreenBounds {
    double area_lo = 0.0;
    double area_hi = 1.0;
    double min_solidity = 0.85;

    bool operator==(const ScreenBounds&) const = default;
};

void to_json(nlohmann::json& j, const ScreenBounds& b);
void from_json(const nlohmann::json& j, ScreenBounds& b);

// Reject reason strings.
inline constexpr const char* kReasonEmpty = "empty";
inline constexpr const char* kReasonDisconnected = "disconnected";
inline constexpr const char* kReasonArea = "area_out_of_range";
inline constexpr const char* kReasonSolidity = "low_solidity";
inline constexpr const char* kReasonBorder = "touches_border";

struct RealismReport {
    int n_components = 0;        // 8-connected
    double area_frac = 0.0;
    double solidity = 0.0;       // area / convex hull area of the pixel squares; 0 when empty
    bool touches_border = false;
    bool accept = false;
    std::vector<std::string> reject_reasons;

    bool operator==(const RealismReport&) const = default;
};

void to_json(nlohmann::json& j, const RealismReport& r);
void from_json(const nlohmann::json& j, RealismReport& r);

/// Number of 8-connected foreground components.
int count_components(const Mask& mask);

/// Area of the convex hull of the foreground pixel squares (unit pixels), 0 when empty.
double convex_hull_area(const Mask& mask);

/// Pure screening function; every violated rule is listed. Throws std::invalid_argument for
/// a mask with values other than 0 and 1.
RealismReport heuristic_screen(const Mask& mask, const ScreenBounds& bounds);

/// [0.5 * min area, 2 * max area] over nonempty masks, clamped inside (0,1). Needs at least 10
/// nonempty masks. min_solidity keeps its default.
ScreenBounds fit_area_bounds(const std::vector<Mask>& real_masks);

// ---------------------------------------------------------------------------------------------
// Candidate store

enum class Verdict { pending, accepted, rejected };
enum class VerdictSource { automatic, human };

std::string to_string(Verdict v);
std::string to_string(VerdictSource s);
Verdict parse_verdict(const std::string& s);

struct UnknownCandidateError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct IllegalTransitionError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Everything about a candidate except its pixels.
struct CandidateRecord {
    std::string id;
    RealismReport report;
    Verdict verdict = Verdict::pending;
    std::optional<VerdictSource> source;  // set iff verdict != pending
    std::string created_at;
    std::string decided_at;               // empty iff pending
    bool has_preview = false;
};

void to_json(nlohmann::json& j, const CandidateRecord& r);

struct AcceptedMask {
    std::string id;
    Mask mask;
};

struct CurationStats {
    std::size_t pending = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
};

struct CurationOptions {
    ScreenBounds bounds;
    bool auto_verdicts = true;  // false leaves ingested candidates pending for human review
};

/// Run-length encoding of a binary mask in row-major order: alternating run lengths of 0s and
/// 1s, starting with 0s (possibly a zero-length first run).
std::vector<std::uint32_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::uint32_t>& runs, int rows, int cols);

/// Append-only candidate ledger with a derived index. Every mutation is one NDJSON event;
/// replaying the ledger rebuilds the index. Thread-safe; writes are serialised.
///
/// Transitions: pending -> accepted|rejected from either source; an automatic verdict may be
/// overridden once by a human verdict; human verdicts are final.
class CurationStore {
public:
    using Clock = std::function<std::string()>;

    /// In-memory store.
    explicit CurationStore(CurationOptions options = {}, Clock clock = {});
    /// Persistent store: replays `ledger` if it exists, then appends to it.
    CurationStore(const std::filesystem::path& ledger, CurationOptions options, Clock clock = {});

    CurationStore(const CurationStore&) = delete;
    CurationStore& operator=(const CurationStore&) = delete;

    /// Screens and stores one candidate. Throws std::invalid_argument on a duplicate id.
    CandidateRecord ingest(const std::string& id, const Mask& mask);
    /// Ids are <prefix>_<index> with a six-digit zero-padded index starting at `first_index`.
    std::vector<std::string> ingest_all(const std::vector<Mask>& masks, const std::string& prefix,
                                        std::size_t first_index = 0);

    CandidateRecord set_verdict(const std::string& id, Verdict verdict, VerdictSource source);

    /// Records in id order, optionally filtered by verdict.
    [[nodiscard]] std::vector<CandidateRecord> list(std::optional<Verdict> status = std::nullopt) const;
    [[nodiscard]] CandidateRecord get(const std::string& id) const;
    [[nodiscard]] Mask mask(const std::string& id) const;
    [[nodiscard]] bool contains(const std::string& id) const;

    /// Attaches a rendered preview. Persistent stores keep it as a PNG next to the ledger.
    void set_preview(const std::string& id, const Image& preview);
    /// PNG bytes of the preview, if any.
    [[nodiscard]] std::optional<std::string> preview_png(const std::string& id) const;

    /// Accepted masks in id order.
    [[nodiscard]] std::vector<AcceptedMask> export_accepted() const;
    [[nodiscard]] CurationStats stats() const;
    [[nodiscard]] const CurationOptions& options() const { return options_; }

private:
    struct Entry {
        CandidateRecord record;
        Mask mask;
        std::optional<std::string> preview_png;  // encoded PNG
    };

    void apply(const nlohmann::json& event);
    void append(const nlohmann::json& event);
    Entry& find(const std::string& id);
    const Entry& find(const std::string& id) const;
    [[nodiscard]] std::string now() const;
    [[nodiscard]] std::filesystem::path preview_dir() const;

    CurationOptions options_;
    Clock clock_;
    std::map<std::string, Entry> entries_;
    std::optional<std::filesystem::path> ledger_;
    std::ofstream out_;
    mutable std::mutex mutex_;
};

/// Default clock: UTC ISO-8601 with second resolution.
std::string utc_timestamp();

}  // namespace gsyn
