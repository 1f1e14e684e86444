#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace backtracing {

inline constexpr double kUnscored = -std::numeric_limits<double>::infinity();

// A scorer's output over one corpus. `order` sorts indices by descending
// score with ties toward the lower index; NaN sorts as -inf.
struct Ranking {
    std::string method;
    std::vector<double> scores;
    std::vector<std::size_t> order;
    std::set<std::size_t> excluded;
    // Methods that only name a best guess (the LLM judge) report @1 only.
    bool top1_only = false;
    // Per-stage raw scores (e.g. "bi", "cross") kept for artifacts.
    std::map<std::string, std::vector<double>> components;

    std::size_t size() const noexcept { return scores.size(); }
    std::size_t top() const { return order.at(0); }

    bool operator==(const Ranking&) const = default;
};

namespace detail {
inline double sort_key(double s) noexcept { return std::isnan(s) ? kUnscored : s; }
}  // namespace detail

inline std::vector<std::size_t> order_by_score(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detail::sort_key(scores[a]) > detail::sort_key(scores[b]);
    });
    return order;
}

inline Ranking make_ranking(std::string method, std::vector<double> scores,
                            std::set<std::size_t> excluded = {}) {
    Ranking r;
    r.method = std::move(method);
    r.order = order_by_score(scores);
    r.scores = std::move(scores);
    r.excluded = std::move(excluded);
    return r;
}

// Builds a ranking from an explicit order; scores become N - position so the
// order invariant holds. Indices missing from `head` follow in index order
// with kUnscored.
inline Ranking ranking_from_head(std::string method, std::size_t n, const std::vector<std::size_t>& head) {
    std::vector<double> scores(n, kUnscored);
    std::vector<std::size_t> order;
    std::vector<bool> seen(n, false);
    for (std::size_t idx : head) {
        if (idx >= n || seen[idx]) continue;
        seen[idx] = true;
        scores[idx] = static_cast<double>(n - order.size());
        order.push_back(idx);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!seen[i]) order.push_back(i);
    Ranking r;
    r.method = std::move(method);
    r.scores = std::move(scores);
    r.order = std::move(order);
    return r;
}

inline bool is_valid_order(const Ranking& r) {
    const std::size_t n = r.scores.size();
    if (r.order.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t i : r.order) {
        if (i >= n || seen[i]) return false;
        seen[i] = true;
    }
    for (std::size_t p = 1; p < n; ++p) {
        const std::size_t a = r.order[p - 1], b = r.order[p];
        const double sa = detail::sort_key(r.scores[a]), sb = detail::sort_key(r.scores[b]);
        if (!(sa > sb || (sa == sb && a < b))) return false;
    }
    return true;
}

namespace detail {

inline nlohmann::json scores_to_json(const std::vector<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double s : v) {
        if (std::isfinite(s))
            arr.push_back(s);
        else
            arr.push_back(nullptr);
    }
    return arr;
}

inline std::vector<double> scores_from_json(const nlohmann::json& arr) {
    std::vector<double> v;
    for (const auto& s : arr) v.push_back(s.is_null() ? kUnscored : s.get<double>());
    return v;
}

}  // namespace detail

inline nlohmann::json ranking_to_json(const Ranking& r) {
    nlohmann::json comps = nlohmann::json::object();
    for (const auto& [name, v] : r.components) comps[name] = detail::scores_to_json(v);
    return {{"method", r.method},
            {"scores", detail::scores_to_json(r.scores)},
            {"order", r.order},
            {"excluded", std::vector<std::size_t>(r.excluded.begin(), r.excluded.end())},
            {"top1_only", r.top1_only},
            {"components", std::move(comps)}};
}

inline Ranking ranking_from_json(const nlohmann::json& j) {
    Ranking r;
    r.method = j.at("method").get<std::string>();
    r.scores = detail::scores_from_json(j.at("scores"));
    r.order = j.at("order").get<std::vector<std::size_t>>();
    for (auto i : j.at("excluded")) r.excluded.insert(i.get<std::size_t>());
    r.top1_only = j.value("top1_only", false);
    if (auto it = j.find("components"); it != j.end())
        for (const auto& [name, v] : it->items()) r.components[name] = detail::scores_from_json(v);
    return r;
}

}  // namespace backtracing
