#include "glandsynth/curation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <deque>
#include <iterator>

#include "glandsynth/errors.hpp"

namespace gsyn {

void to_json(nlohmann::json& j, const ScreenBounds& b) {
    j = nlohmann::json{{"area_lo", b.area_lo}, {"area_hi", b.area_hi}, {"min_solidity", b.min_solidity}};
}

void from_json(const nlohmann::json& j, ScreenBounds& b) {
    ScreenBounds d;
    d.area_lo = j.value("area_lo", d.area_lo);
    d.area_hi = j.value("area_hi", d.area_hi);
    d.min_solidity = j.value("min_solidity", d.min_solidity);
    if (!(d.area_lo >= 0.0 && d.area_lo <= d.area_hi && d.area_hi <= 1.0)) {
        throw std::invalid_argument("ScreenBounds: need 0 <= area_lo <= area_hi <= 1");
    }
    b = d;
}

void to_json(nlohmann::json& j, const RealismReport& r) {
    j = nlohmann::json{{"n_components", r.n_components},
                       {"area_frac", r.area_frac},
                       {"solidity", r.solidity},
                       {"touches_border", r.touches_border},
                       {"auto_verdict", r.accept ? "accept" : "reject"},
                       {"reject_reasons", r.reject_reasons}};
}

void from_json(const nlohmann::json& j, RealismReport& r) {
    r.n_components = j.at("n_components").get<int>();
    r.area_frac = j.at("area_frac").get<double>();
    r.solidity = j.at("solidity").get<double>();
    r.touches_border = j.at("touches_border").get<bool>();
    r.accept = j.at("auto_verdict").get<std::string>() == "accept";
    r.reject_reasons = j.at("reject_reasons").get<std::vector<std::string>>();
}

// ---------------------------------------------------------------------------------------------
// Screening

int count_components(const Mask& mask) {
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<std::pair<int, int>> stack;
    int count = 0;
    for (int r = 0; r < mask.rows; ++r) {
        for (int c = 0; c < mask.cols; ++c) {
            const auto idx = static_cast<std::size_t>(r) * mask.cols + c;
            if (!mask.px[idx] || seen[idx]) continue;
            ++count;
            seen[idx] = 1;
            stack.emplace_back(r, c);
            while (!stack.empty()) {
                const auto [y, x] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy;
                        const int nx = x + dx;
                        if (ny < 0 || ny >= mask.rows || nx < 0 || nx >= mask.cols) continue;
                        const auto n = static_cast<std::size_t>(ny) * mask.cols + nx;
                        if (mask.px[n] && !seen[n]) {
                            seen[n] = 1;
                            stack.emplace_back(ny, nx);
                        }
                    }
                }
            }
        }
    }
    return count;
}

double convex_hull_area(const Mask& mask) {
    // Only the extreme pixels of each row can contribute hull corners.
    std::vector<std::pair<long, long>> pts;  // (x, y) corners
    for (int r = 0; r < mask.rows; ++r) {
        int lo = -1;
        int hi = -1;
        for (int c = 0; c < mask.cols; ++c) {
            if (mask.at(r, c)) {
                if (lo < 0) lo = c;
                hi = c;
            }
        }
        if (lo < 0) continue;
        pts.emplace_back(lo, r);
        pts.emplace_back(lo, r + 1);
        pts.emplace_back(hi + 1, r);
        pts.emplace_back(hi + 1, r + 1);
    }
    if (pts.empty()) return 0.0;
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    auto cross = [](const std::pair<long, long>& o, const std::pair<long, long>& a, const std::pair<long, long>& b) {
        return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
    };
    // Andrew's monotone chain.
    std::vector<std::pair<long, long>> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    long twice = 0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        twice += a.first * b.second - b.first * a.second;
    }
    return std::abs(static_cast<double>(twice)) / 2.0;
}

RealismReport heuristic_screen(const Mask& mask, const ScreenBounds& bounds) {
    if (mask.rows <= 0 || mask.cols <= 0) throw std::invalid_argument("heuristic_screen: empty grid");
    std::size_t area = 0;
    bool border = false;
    for (int r = 0; r < mask.rows; ++r) {
        for (int c = 0; c < mask.cols; ++c) {
            const auto v = mask.at(r, c);
            if (v > 1) throw std::invalid_argument("heuristic_screen: mask is not binary");
            if (!v) continue;
            ++area;
            if (r == 0 || c == 0 || r == mask.rows - 1 || c == mask.cols - 1) border = true;
        }
    }
    RealismReport rep;
    rep.n_components = count_components(mask);
    rep.area_frac = static_cast<double>(area) / static_cast<double>(mask.size());
    rep.solidity = area == 0 ? 0.0 : static_cast<double>(area) / convex_hull_area(mask);
    rep.touches_border = border;

    if (rep.n_components == 0) rep.reject_reasons.emplace_back(kReasonEmpty);
    if (rep.n_components > 1) rep.reject_reasons.emplace_back(kReasonDisconnected);
    if (rep.area_frac < bounds.area_lo || rep.area_frac > bounds.area_hi) rep.reject_reasons.emplace_back(kReasonArea);
    if (area > 0 && rep.solidity < bounds.min_solidity) rep.reject_reasons.emplace_back(kReasonSolidity);
    if (border) rep.reject_reasons.emplace_back(kReasonBorder);
    rep.accept = rep.reject_reasons.empty();
    return rep;
}

ScreenBounds fit_area_bounds(const std::vector<Mask>& real_masks) {
    double lo = 1.0;
    double hi = 0.0;
    std::size_t n = 0;
    for (const auto& m : real_masks) {
        const auto area = count_foreground(m);
        if (area == 0) continue;
        const double frac = static_cast<double>(area) / static_cast<double>(m.size());
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
        ++n;
    }
    if (n < 10) {
        throw std::invalid_argument("fit_area_bounds: need at least 10 nonempty masks, got " + std::to_string(n));
    }
    ScreenBounds b;
    const double top = std::nextafter(1.0, 0.0);
    b.area_lo = std::clamp(0.5 * lo, std::numeric_limits<double>::min(), top);
    b.area_hi = std::clamp(2.0 * hi, std::numeric_limits<double>::min(), top);
    return b;
}

// ---------------------------------------------------------------------------------------------
// Store

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::pending: return "pending";
        case Verdict::accepted: return "accepted";
        case Verdict::rejected: return "rejected";
    }
    return "pending";
}

std::string to_string(VerdictSource s) { return s == VerdictSource::human ? "human" : "auto"; }

Verdict parse_verdict(const std::string& s) {
    if (s == "pending") return Verdict::pending;
    if (s == "accepted") return Verdict::accepted;
    if (s == "rejected") return Verdict::rejected;
    throw std::invalid_argument("unknown verdict '" + s + "'");
}

namespace {

VerdictSource parse_source(const std::string& s) {
    if (s == "human") return VerdictSource::human;
    if (s == "auto") return VerdictSource::automatic;
    throw std::invalid_argument("unknown verdict source '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const CandidateRecord& r) {
    j = nlohmann::json{{"id", r.id},
                       {"report", r.report},
                       {"verdict", to_string(r.verdict)},
                       {"verdict_source", r.source ? nlohmann::json(to_string(*r.source)) : nlohmann::json(nullptr)},
                       {"created_at", r.created_at},
                       {"decided_at", r.decided_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.decided_at)},
                       {"has_preview", r.has_preview}};
}

std::vector<std::uint32_t> rle_encode(const Mask& mask) {
    std::vector<std::uint32_t> runs;
    std::uint8_t cur = 0;
    std::uint32_t len = 0;
    for (const auto v : mask.px) {
        const std::uint8_t b = v ? 1 : 0;
        if (b != cur) {
            runs.push_back(len);
            cur = b;
            len = 0;
        }
        ++len;
    }
    runs.push_back(len);
    return runs;
}

Mask rle_decode(const std::vector<std::uint32_t>& runs, int rows, int cols) {
    Mask m(rows, cols);
    std::size_t pos = 0;
    std::uint8_t cur = 0;
    for (const auto len : runs) {
        if (pos + len > m.size()) throw std::invalid_argument("rle_decode: runs exceed mask size");
        std::fill(m.px.begin() + static_cast<std::ptrdiff_t>(pos), m.px.begin() + static_cast<std::ptrdiff_t>(pos + len),
                  cur);
        pos += len;
        cur ^= 1;
    }
    if (pos != m.size()) throw std::invalid_argument("rle_decode: runs do not cover the mask");
    return m;
}

std::string utc_timestamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

CurationStore::CurationStore(CurationOptions options, Clock clock)
    : options_(options), clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {}

CurationStore::CurationStore(const std::filesystem::path& ledger, CurationOptions options, Clock clock)
    : CurationStore(options, std::move(clock)) {
    ledger_ = ledger;
    if (std::filesystem::exists(ledger)) {
        std::ifstream in(ledger);
        if (!in) throw IoError("CurationStore: cannot read ledger " + ledger.string());
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                apply(nlohmann::json::parse(line));
            } catch (const std::exception& e) {
                throw IoError("CurationStore: " + ledger.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    } else if (ledger.has_parent_path()) {
        std::filesystem::create_directories(ledger.parent_path());
    }
    out_.open(ledger, std::ios::app);
    if (!out_) throw IoError("CurationStore: cannot open ledger " + ledger.string() + " for append");
}

std::string CurationStore::now() const { return clock_(); }

std::filesystem::path CurationStore::preview_dir() const {
    return ledger_->parent_path() / (ledger_->stem().string() + "_previews");
}

CurationStore::Entry& CurationStore::find(const std::string& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw UnknownCandidateError("unknown candidate '" + id + "'");
    return it->second;
}

const CurationStore::Entry& CurationStore::find(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw UnknownCandidateError("unknown candidate '" + id + "'");
    return it->second;
}

void CurationStore::append(const nlohmann::json& event) {
    if (!ledger_) return;
    out_ << event.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("CurationStore: ledger write failed");
}

// Applies one event to the index. Shared by live mutations and ledger replay so both paths
// enforce the same rules.
void CurationStore::apply(const nlohmann::json& event) {
    const auto kind = event.at("event").get<std::string>();
    const auto id = event.at("id").get<std::string>();
    if (kind == "ingest") {
        if (entries_.count(id)) throw std::invalid_argument("duplicate candidate id '" + id + "'");
        Entry e;
        e.mask = rle_decode(event.at("rle").get<std::vector<std::uint32_t>>(), event.at("rows").get<int>(),
                            event.at("cols").get<int>());
        e.record.id = id;
        e.record.report = event.at("report").get<RealismReport>();
        e.record.created_at = event.at("at").get<std::string>();
        e.record.verdict = parse_verdict(event.at("verdict").get<std::string>());
        if (e.record.verdict != Verdict::pending) {
            e.record.source = VerdictSource::automatic;
            e.record.decided_at = e.record.created_at;
        }
        entries_.emplace(id, std::move(e));
    } else if (kind == "verdict") {
        auto& e = find(id);
        const auto verdict = parse_verdict(event.at("verdict").get<std::string>());
        const auto source = parse_source(event.at("source").get<std::string>());
        if (verdict == Verdict::pending) throw IllegalTransitionError("cannot return '" + id + "' to pending");
        if (e.record.verdict != Verdict::pending) {
            const bool override_ok = e.record.source == VerdictSource::automatic && source == VerdictSource::human;
            if (!override_ok) {
                throw IllegalTransitionError("candidate '" + id + "' is " + to_string(e.record.verdict) + " by " +
                                             to_string(*e.record.source) + "; " + to_string(source) +
                                             " verdict not allowed");
            }
        }
        e.record.verdict = verdict;
        e.record.source = source;
        e.record.decided_at = event.at("at").get<std::string>();
    } else if (kind == "preview") {
        auto& e = find(id);
        const auto file = preview_dir() / event.at("file").get<std::string>();
        std::ifstream in(file, std::ios::binary);
        if (!in) throw IoError("missing preview " + file.string());
        e.preview_png = std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        e.record.has_preview = true;
    } else {
        throw std::invalid_argument("unknown ledger event '" + kind + "'");
    }
}

CandidateRecord CurationStore::ingest(const std::string& id, const Mask& mask) {
    if (id.empty() || id.find('/') != std::string::npos) throw std::invalid_argument("ingest: invalid id '" + id + "'");
    const auto report = heuristic_screen(mask, options_.bounds);
    const Verdict verdict =
        options_.auto_verdicts ? (report.accept ? Verdict::accepted : Verdict::rejected) : Verdict::pending;
    std::lock_guard lock(mutex_);
    if (entries_.count(id)) throw std::invalid_argument("ingest: duplicate candidate id '" + id + "'");
    const nlohmann::json event{{"event", "ingest"},     {"id", id},
                               {"rows", mask.rows},     {"cols", mask.cols},
                               {"rle", rle_encode(mask)}, {"report", report},
                               {"verdict", to_string(verdict)}, {"at", now()}};
    apply(event);
    append(event);
    return entries_.at(id).record;
}

std::vector<std::string> CurationStore::ingest_all(const std::vector<Mask>& masks, const std::string& prefix,
                                                   std::size_t first_index) {
    std::vector<std::string> ids;
    ids.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "_%06zu", first_index + i);
        ids.push_back(prefix + buf);
        ingest(ids.back(), masks[i]);
    }
    return ids;
}

CandidateRecord CurationStore::set_verdict(const std::string& id, Verdict verdict, VerdictSource source) {
    std::lock_guard lock(mutex_);
    const auto& prior = find(id).record;
    nlohmann::json event{{"event", "verdict"},
                         {"id", id},
                         {"verdict", to_string(verdict)},
                         {"source", to_string(source)},
                         {"prior", to_string(prior.verdict)},
                         {"prior_source", prior.source ? nlohmann::json(to_string(*prior.source)) : nlohmann::json()},
                         {"at", now()}};
    apply(event);
    append(event);
    return entries_.at(id).record;
}

std::vector<CandidateRecord> CurationStore::list(std::optional<Verdict> status) const {
    std::lock_guard lock(mutex_);
    std::vector<CandidateRecord> out;
    for (const auto& [id, e] : entries_) {
        if (!status || e.record.verdict == *status) out.push_back(e.record);
    }
    return out;
}

CandidateRecord CurationStore::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return find(id).record;
}

Mask CurationStore::mask(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return find(id).mask;
}

bool CurationStore::contains(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return entries_.count(id) > 0;
}

void CurationStore::set_preview(const std::string& id, const Image& preview) {
    std::lock_guard lock(mutex_);
    auto& e = find(id);
    auto png = encode_png(image_to_gray(preview));
    if (ledger_) {
        const auto file = id + ".png";
        std::filesystem::create_directories(preview_dir());
        std::ofstream f(preview_dir() / file, std::ios::binary);
        f.write(png.data(), static_cast<std::streamsize>(png.size()));
        if (!f) throw IoError("set_preview: cannot write " + (preview_dir() / file).string());
        append(nlohmann::json{{"event", "preview"}, {"id", id}, {"file", file}, {"at", now()}});
    }
    e.preview_png = std::move(png);
    e.record.has_preview = true;
}

std::optional<std::string> CurationStore::preview_png(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return find(id).preview_png;
}

std::vector<AcceptedMask> CurationStore::export_accepted() const {
    std::lock_guard lock(mutex_);
    std::vector<AcceptedMask> out;
    for (const auto& [id, e] : entries_) {
        if (e.record.verdict == Verdict::accepted) out.push_back({id, e.mask});
    }
    return out;
}

CurationStats CurationStore::stats() const {
    std::lock_guard lock(mutex_);
    CurationStats s;
    for (const auto& [id, e] : entries_) {
        switch (e.record.verdict) {
            case Verdict::pending: ++s.pending; break;
            case Verdict::accepted: ++s.accepted; break;
            case Verdict::rejected: ++s.rejected; break;
        }
    }
    return s;
}

}  // namespace gsyn
