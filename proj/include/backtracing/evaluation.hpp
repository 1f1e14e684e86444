#pragma once

// Overlap top-k accuracy, minimum index distance with exclusion, report
// aggregation/rendering, and dataset analyses (query-cause similarity,
// cause locations, shared causes).

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "backtracing/client.hpp"
#include "backtracing/core.hpp"
#include "backtracing/error.hpp"
#include "backtracing/ranking.hpp"
#include "backtracing/similarity.hpp"

namespace backtracing {

// Overlap criterion: any of the first min(k, N) ranked indices is a target.
// Undefined (nullopt) for top1_only rankings when k > 1.
inline std::optional<bool> top_k_hit(const Ranking& r, const std::set<std::size_t>& targets, std::size_t k) {
    if (k > 1 && r.top1_only) return std::nullopt;
    const std::size_t m = std::min(k, r.order.size());
    for (std::size_t p = 0; p < m; ++p)
        if (targets.count(r.order[p])) return true;
    return false;
}

// Smallest |c - t| over non-excluded candidates c among the first k and all
// targets t; nullopt when every candidate is excluded (or top1_only, k > 1).
inline std::optional<std::size_t> min_distance(const Ranking& r, const std::set<std::size_t>& targets,
                                               std::size_t k) {
    if (k > 1 && r.top1_only) return std::nullopt;
    const std::size_t m = std::min(k, r.order.size());
    std::optional<std::size_t> best;
    for (std::size_t p = 0; p < m; ++p) {
        const std::size_t c = r.order[p];
        if (r.excluded.count(c)) continue;
        for (std::size_t t : targets) {
            const std::size_t d = c > t ? c - t : t - c;
            if (!best || d < *best) best = d;
        }
    }
    return best;
}

enum class ResultStatus { Ok, Failed };

struct ExampleResult {
    std::string example_id;
    std::string method;
    Domain domain = Domain::Lecture;
    std::vector<std::size_t> head;  // top-3 indices
    bool hit1 = false;
    std::optional<bool> hit3;       // nullopt: N/A
    std::optional<std::size_t> mindist1;
    std::optional<std::size_t> mindist3;
    bool excluded_top = false;      // a distance was undefined because of exclusion
    bool top1_only = false;
    ResultStatus status = ResultStatus::Ok;
    std::string note;

    bool operator==(const ExampleResult&) const = default;
};

inline ExampleResult evaluate_example(const BacktracingExample& ex, const Ranking& r) {
    ExampleResult res;
    res.example_id = ex.example_id;
    res.method = r.method;
    res.domain = ex.corpus.domain;
    res.top1_only = r.top1_only;
    for (std::size_t p = 0; p < std::min<std::size_t>(3, r.order.size()); ++p) res.head.push_back(r.order[p]);
    res.hit1 = top_k_hit(r, ex.targets, 1).value_or(false);
    res.hit3 = top_k_hit(r, ex.targets, 3);
    res.mindist1 = min_distance(r, ex.targets, 1);
    res.mindist3 = min_distance(r, ex.targets, 3);
    res.excluded_top = !res.mindist1 || (!r.top1_only && !res.mindist3);
    return res;
}

// A scorer that failed on this example: a miss with undefined distances.
inline ExampleResult failed_result(const BacktracingExample& ex, const std::string& method, bool top1_only,
                                   std::string note) {
    ExampleResult res;
    res.example_id = ex.example_id;
    res.method = method;
    res.domain = ex.corpus.domain;
    res.top1_only = top1_only;
    res.hit1 = false;
    if (!top1_only) res.hit3 = false;
    res.status = ResultStatus::Failed;
    res.note = std::move(note);
    return res;
}

inline nlohmann::json result_to_json(const ExampleResult& r) {
    const auto opt = [](const auto& o) -> nlohmann::json { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
    return {{"example_id", r.example_id},
            {"method", r.method},
            {"domain", std::string(domain_name(r.domain))},
            {"head", r.head},
            {"hit1", r.hit1},
            {"hit3", opt(r.hit3)},
            {"mindist1", opt(r.mindist1)},
            {"mindist3", opt(r.mindist3)},
            {"excluded_top", r.excluded_top},
            {"top1_only", r.top1_only},
            {"status", r.status == ResultStatus::Ok ? "ok" : "failed"},
            {"note", r.note}};
}

inline ExampleResult result_from_json(const nlohmann::json& j) {
    ExampleResult r;
    r.example_id = j.at("example_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.domain = parse_domain(j.at("domain").get<std::string>()).value_or(Domain::Lecture);
    r.head = j.at("head").get<std::vector<std::size_t>>();
    r.hit1 = j.at("hit1").get<bool>();
    if (!j.at("hit3").is_null()) r.hit3 = j["hit3"].get<bool>();
    if (!j.at("mindist1").is_null()) r.mindist1 = j["mindist1"].get<std::size_t>();
    if (!j.at("mindist3").is_null()) r.mindist3 = j["mindist3"].get<std::size_t>();
    r.excluded_top = j.value("excluded_top", false);
    r.top1_only = j.value("top1_only", false);
    r.status = j.value("status", std::string("ok")) == "failed" ? ResultStatus::Failed : ResultStatus::Ok;
    r.note = j.value("note", std::string());
    return r;
}

// ---------------------------------------------------------------------------
// Aggregation

struct EvalCell {
    std::string method;
    Domain domain = Domain::Lecture;
    std::size_t n = 0;
    std::size_t hits1 = 0;
    std::size_t hits3 = 0;
    bool top1_only = false;
    double dist1_sum = 0.0;
    std::size_t dist1_count = 0;
    double dist3_sum = 0.0;
    std::size_t dist3_count = 0;
    std::size_t excluded1 = 0;
    std::size_t excluded3 = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;

    double accuracy1() const { return n ? 100.0 * static_cast<double>(hits1) / static_cast<double>(n) : 0.0; }
    std::optional<double> accuracy3() const {
        if (top1_only) return std::nullopt;
        return n ? 100.0 * static_cast<double>(hits3) / static_cast<double>(n) : 0.0;
    }
    std::optional<double> mean_dist1() const {
        if (!dist1_count) return std::nullopt;
        return dist1_sum / static_cast<double>(dist1_count);
    }
    std::optional<double> mean_dist3() const {
        if (top1_only || !dist3_count) return std::nullopt;
        return dist3_sum / static_cast<double>(dist3_count);
    }
    std::size_t excluded_count() const { return std::max(excluded1, excluded3); }
};

struct EvalReport {
    // Row order: methods in first-seen order, then fixed domain order.
    std::vector<std::string> methods;
    std::map<std::pair<std::string, Domain>, EvalCell> cells;

    const EvalCell* find(const std::string& method, Domain d) const {
        auto it = cells.find({method, d});
        return it == cells.end() ? nullptr : &it->second;
    }
};

// `skipped` optionally records examples a scorer could not run at all; they
// are reported but never enter the denominators.
inline EvalReport aggregate(const std::vector<ExampleResult>& results,
                            const std::map<std::pair<std::string, Domain>, std::size_t>& skipped = {},
                            std::vector<std::string> method_order = {}) {
    if (results.empty() && skipped.empty()) throw EmptyReport();
    EvalReport rep;
    std::set<std::string> seen(method_order.begin(), method_order.end());
    rep.methods = std::move(method_order);
    const auto cell_for = [&](const std::string& method, Domain d) -> EvalCell& {
        if (seen.insert(method).second) rep.methods.push_back(method);
        auto& c = rep.cells[{method, d}];
        c.method = method;
        c.domain = d;
        return c;
    };
    for (const auto& r : results) {
        auto& c = cell_for(r.method, r.domain);
        ++c.n;
        c.top1_only = c.top1_only || r.top1_only;
        if (r.hit1) ++c.hits1;
        if (r.hit3.value_or(false)) ++c.hits3;
        if (r.status == ResultStatus::Failed) {
            ++c.failed;
            continue;
        }
        if (r.mindist1) {
            c.dist1_sum += static_cast<double>(*r.mindist1);
            ++c.dist1_count;
        } else {
            ++c.excluded1;
        }
        if (!r.top1_only) {
            if (r.mindist3) {
                c.dist3_sum += static_cast<double>(*r.mindist3);
                ++c.dist3_count;
            } else {
                ++c.excluded3;
            }
        }
    }
    // Integer sums are exact in double, so the means do not depend on input order.
    for (const auto& [key, count] : skipped) cell_for(key.first, key.second).skipped += count;
    return rep;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

// Machine-readable rows: one per method x domain x metric.
inline std::string report_csv(const EvalReport& rep) {
    std::ostringstream out;
    out << "method,domain,metric,value,n,excluded,failed,skipped\n";
    for (const auto& m : rep.methods) {
        for (Domain d : kAllDomains) {
            const auto* c = rep.find(m, d);
            if (!c) continue;
            const auto row = [&](const char* metric, std::optional<double> v, std::size_t excluded) {
                out << m << ',' << domain_name(d) << ',' << metric << ',' << (v ? format_fixed(*v, 6) : "NA") << ','
                    << c->n << ',' << excluded << ',' << c->failed << ',' << c->skipped << '\n';
            };
            row("accuracy@1", c->n ? std::optional<double>(c->accuracy1()) : std::nullopt, 0);
            row("accuracy@3", c->n ? c->accuracy3() : std::nullopt, 0);
            row("mindist@1", c->mean_dist1(), c->excluded1);
            row("mindist@3", c->mean_dist3(), c->excluded3);
        }
    }
    return out.str();
}

inline nlohmann::json report_json(const EvalReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : rep.methods) {
        for (Domain d : kAllDomains) {
            const auto* c = rep.find(m, d);
            if (!c) continue;
            const auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
            rows.push_back({{"method", m},
                            {"domain", std::string(domain_name(d))},
                            {"n", c->n},
                            {"accuracy@1", c->n ? nlohmann::json(c->accuracy1()) : nlohmann::json(nullptr)},
                            {"accuracy@3", c->n ? opt(c->accuracy3()) : nlohmann::json(nullptr)},
                            {"mindist@1", opt(c->mean_dist1())},
                            {"mindist@3", opt(c->mean_dist3())},
                            {"excluded@1", c->excluded1},
                            {"excluded@3", c->excluded3},
                            {"failed", c->failed},
                            {"skipped", c->skipped},
                            {"top1_only", c->top1_only}});
        }
    }
    return {{"rows", std::move(rows)}};
}

namespace detail {

struct Cell {
    std::string text;        // display value without decoration
    std::optional<double> key;
    bool asterisk = false;
};

inline std::string render_table(const std::string& title, const EvalReport& rep, const std::vector<Domain>& domains,
                                bool accuracy) {
    // columns: (domain, @1), (domain, @3)
    const std::size_t ncols = domains.size() * 2;
    std::vector<std::vector<Cell>> grid;
    for (const auto& m : rep.methods) {
        std::vector<Cell> row(ncols);
        for (std::size_t di = 0; di < domains.size(); ++di) {
            const auto* c = rep.find(m, domains[di]);
            for (int at = 0; at < 2; ++at) {
                Cell& cell = row[di * 2 + static_cast<std::size_t>(at)];
                if (!c || c->n == 0) {
                    cell.text = "-";
                    continue;
                }
                std::optional<double> v;
                if (accuracy) v = at == 0 ? std::optional<double>(c->accuracy1()) : c->accuracy3();
                else v = at == 0 ? c->mean_dist1() : c->mean_dist3();
                if (at == 1 && c->top1_only) {
                    cell.text = "N/A";
                    continue;
                }
                if (!v) {
                    cell.text = "-";
                    continue;
                }
                cell.text = format_fixed(*v, accuracy ? 0 : 1);
                cell.key = std::stod(cell.text);
                cell.asterisk = !accuracy && c->excluded_count() > 0;
            }
        }
        grid.push_back(std::move(row));
    }
    // Best per column: max accuracy, min distance; ties all marked.
    for (std::size_t col = 0; col < ncols; ++col) {
        std::optional<double> best;
        for (const auto& row : grid)
            if (row[col].key && (!best || (accuracy ? *row[col].key > *best : *row[col].key < *best))) best = row[col].key;
        if (!best || grid.size() < 2) continue;
        for (auto& row : grid)
            if (row[col].key && *row[col].key == *best) row[col].text = "**" + row[col].text + "**";
    }
    for (auto& row : grid)
        for (auto& cell : row)
            if (cell.asterisk) cell.text += "*";

    std::vector<std::string> header{"method"};
    for (Domain d : domains) {
        header.push_back(std::string(domain_name(d)) + " @1");
        header.push_back(std::string(domain_name(d)) + " @3");
    }
    std::vector<std::vector<std::string>> lines{header};
    for (std::size_t r = 0; r < grid.size(); ++r) {
        std::vector<std::string> line{rep.methods[r]};
        for (const auto& cell : grid[r]) line.push_back(cell.text);
        lines.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& l : lines)
        for (std::size_t i = 0; i < l.size(); ++i) width[i] = std::max(width[i], l[i].size());

    std::ostringstream out;
    out << title << "\n\n";
    for (std::size_t li = 0; li < lines.size(); ++li) {
        out << '|';
        for (std::size_t i = 0; i < lines[li].size(); ++i) {
            const auto& s = lines[li][i];
            out << ' ' << (i == 0 ? s + std::string(width[i] - s.size(), ' ') : std::string(width[i] - s.size(), ' ') + s)
                << " |";
        }
        out << '\n';
        if (li == 0) {
            out << '|';
            for (std::size_t i = 0; i < width.size(); ++i) out << std::string(width[i] + 2, '-') << '|';
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace detail

// Aligned plain-text tables: accuracy (percent, higher is better) and mean
// minimum distance (sentences, lower is better). Best per column in **bold**;
// N/A for top-1-only methods at @3; '*' where candidates were excluded.
inline std::string render_report(const EvalReport& rep) {
    std::vector<Domain> domains;
    for (Domain d : kAllDomains)
        for (const auto& m : rep.methods)
            if (rep.find(m, d)) {
                domains.push_back(d);
                break;
            }
    std::ostringstream out;
    out << detail::render_table("Accuracy (%)", rep, domains, true) << '\n'
        << detail::render_table("Minimum sentence distance from ground truth", rep, domains, false);
    bool any_excluded = false, any_failed = false, any_skipped = false;
    for (const auto& [_, c] : rep.cells) {
        any_excluded = any_excluded || c.excluded_count() > 0;
        any_failed = any_failed || c.failed > 0;
        any_skipped = any_skipped || c.skipped > 0;
    }
    if (any_excluded) out << "\n* some top candidates were unscorable and are excluded from the distance mean\n";
    if (any_failed || any_skipped) {
        out << "\nIncomplete cells:\n";
        for (const auto& m : rep.methods)
            for (Domain d : kAllDomains)
                if (const auto* c = rep.find(m, d); c && (c->failed || c->skipped))
                    out << "  " << m << " / " << domain_name(d) << ": " << c->failed << " failed (counted as misses), "
                        << c->skipped << " skipped\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Analyses

struct SimilarityRow {
    std::string example_id;
    double gt = 0.0;    // best cosine among target sentences
    double max = 0.0;   // best cosine over the corpus
    double diff = 0.0;  // max - gt, >= 0
};

inline std::vector<SimilarityRow> analyze_similarity(const Dataset& ds, ModelClient& client, const std::string& model) {
    std::vector<SimilarityRow> rows;
    rows.reserve(ds.examples.size());
    for (const auto& ex : ds.examples) {
        const auto scores = detail::guarded("analyze-similarity",
                                            [&] { return bi_encoder_scores(ex.corpus, ex.query, client, model); });
        SimilarityRow row{ex.example_id, -1.0, -1.0, 0.0};
        for (std::size_t t : ex.targets) row.gt = std::max(row.gt, scores[t]);
        for (double s : scores) row.max = std::max(row.max, s);
        row.diff = row.max - row.gt;
        rows.push_back(std::move(row));
    }
    return rows;
}

struct LocationHistogram {
    std::size_t bins = 10;
    std::vector<std::size_t> counts;
    std::vector<double> locations;  // every target's relative location

    double bin_lo(std::size_t b) const { return static_cast<double>(b) / static_cast<double>(bins); }
};

// Relative location of index i in a corpus of n sentences.
inline double relative_location(std::size_t index, std::size_t n) {
    return n <= 1 ? 0.0 : static_cast<double>(index) / static_cast<double>(n - 1);
}

inline LocationHistogram analyze_locations(const Dataset& ds, std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("bins must be >= 1");
    LocationHistogram h{bins, std::vector<std::size_t>(bins, 0), {}};
    for (const auto& ex : ds.examples) {
        for (std::size_t t : ex.targets) {
            const double loc = relative_location(t, ex.corpus.size());
            auto b = static_cast<std::size_t>(loc * static_cast<double>(bins));
            if (b >= bins) b = bins - 1;
            ++h.counts[b];
            h.locations.push_back(loc);
        }
    }
    return h;
}

struct CauseKey {
    std::string corpus_id;
    std::size_t index = 0;
    auto operator<=>(const CauseKey&) const = default;
};

inline std::map<CauseKey, std::vector<std::string>> group_by_cause(const Dataset& ds) {
    std::map<CauseKey, std::vector<std::string>> groups;
    for (const auto& ex : ds.examples)
        for (std::size_t t : ex.targets) groups[{ex.corpus.id, t}].push_back(ex.example_id);
    return groups;
}

}  // namespace backtracing
