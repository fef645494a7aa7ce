#include "dope/lowshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dope/rng.hpp"

namespace dope::lowshot {

void SplitSpec::validate(const std::vector<int>& all_category_ids) const {
    std::vector<int> seen;
    for (const auto* part : {&base, &val, &test})
        for (int id : *part) {
            if (std::find(seen.begin(), seen.end(), id) != seen.end())
                throw InvalidRange("SplitSpec: category " + std::to_string(id) +
                                   " appears in two splits");
            seen.push_back(id);
        }
    for (int id : all_category_ids)
        if (std::find(seen.begin(), seen.end(), id) == seen.end())
            throw InvalidRange("SplitSpec: category " + std::to_string(id) + " unassigned");
    if (seen.size() != all_category_ids.size())
        throw InvalidRange("SplitSpec: split references unknown categories");
}

SplitSpec make_split(std::vector<int> category_ids, int n_base, int n_val, int n_test,
                     int split_index) {
    if (n_base + n_val + n_test != static_cast<int>(category_ids.size()))
        throw InvalidRange("make_split: split sizes must cover all categories");
    std::sort(category_ids.begin(), category_ids.end());
    Rng rng(derive_seed(0x73706c6974 /* split */, static_cast<std::uint64_t>(split_index)));
    for (std::size_t i = category_ids.size(); i > 1; --i)
        std::swap(category_ids[i - 1],
                  category_ids[rng.uniform_u32(static_cast<std::uint32_t>(i))]);
    SplitSpec s;
    s.split_index = split_index;
    s.base.assign(category_ids.begin(), category_ids.begin() + n_base);
    s.val.assign(category_ids.begin() + n_base, category_ids.begin() + n_base + n_val);
    s.test.assign(category_ids.begin() + n_base + n_val, category_ids.end());
    return s;
}

std::vector<Episode> sample_episodes(const io::LoadedDataset& ds,
                                     const std::vector<int>& categories, int n_way, int k_shot,
                                     int q_queries, int count, std::uint64_t seed) {
    if (n_way < 1 || k_shot < 1 || q_queries < 1 || count < 1)
        throw InvalidRange("sample_episodes: all counts must be >= 1");
    if (static_cast<int>(categories.size()) < n_way)
        throw InsufficientClasses("sample_episodes: " + std::to_string(categories.size()) +
                                  " categories for " + std::to_string(n_way) + "-way episodes");

    // (instance, view) pool per category
    std::map<int, std::vector<std::pair<int, int>>> pools;
    for (std::size_t i = 0; i < ds.instances.size(); ++i)
        for (std::size_t v = 0; v < ds.instances[i].views.size(); ++v)
            pools[ds.instances[i].category_id].emplace_back(static_cast<int>(i),
                                                            static_cast<int>(v));
    for (int cat : categories) {
        const auto it = pools.find(cat);
        if (it == pools.end() || static_cast<int>(it->second.size()) < k_shot + q_queries)
            throw InsufficientViews("sample_episodes: category " + std::to_string(cat) +
                                    " lacks " + std::to_string(k_shot + q_queries) + " views");
    }

    std::vector<Episode> episodes;
    episodes.reserve(count);
    for (int e = 0; e < count; ++e) {
        Rng rng(derive_seed(seed, 0x657069 /* epi */, e));
        Episode ep;
        ep.n_way = n_way;
        ep.k_shot = k_shot;
        ep.q_queries = q_queries;

        std::vector<int> cats = categories;
        for (int i = 0; i < n_way; ++i) {
            const int j =
                i + static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(cats.size() - i)));
            std::swap(cats[i], cats[j]);
        }
        for (int label = 0; label < n_way; ++label) {
            auto pool = pools[cats[label]];
            for (int i = 0; i < k_shot + q_queries; ++i) {
                const int j = i + static_cast<int>(
                                      rng.uniform_u32(static_cast<std::uint32_t>(pool.size() - i)));
                std::swap(pool[i], pool[j]);
            }
            for (int i = 0; i < k_shot; ++i)
                ep.support.push_back({pool[i].first, pool[i].second, label});
            for (int i = 0; i < q_queries; ++i)
                ep.queries.push_back(
                    {pool[k_shot + i].first, pool[k_shot + i].second, label});
        }
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

double local_match_score(const model::FeatureGrid& query, const model::FeatureGrid& support,
                         int k, std::uint64_t seed, bool* degenerate) {
    if (k < 1) throw InvalidRange("local_match_score: k must be >= 1");
    const int cells = query.h * query.w;

    std::vector<std::array<double, 2>> fg;
    std::vector<int> fg_idx;
    for (int gy = 0; gy < query.h; ++gy)
        for (int gx = 0; gx < query.w; ++gx)
            if (query.mask_prob[static_cast<std::size_t>(gy) * query.w + gx] > 0.5f) {
                fg.push_back({static_cast<double>(gx), static_cast<double>(gy)});
                fg_idx.push_back(gy * query.w + gx);
            }

    std::vector<int> chosen; // flat cell indices
    if (static_cast<int>(fg.size()) >= k) {
        for (int i : geom::farthest_point_sample(fg, k, seed)) chosen.push_back(fg_idx[i]);
    } else {
        float lo = query.mask_prob[0], hi = query.mask_prob[0];
        for (const float p : query.mask_prob) {
            lo = std::min(lo, p);
            hi = std::max(hi, p);
        }
        if (fg.empty() && hi - lo < 1e-12f) {
            // Flat, empty prediction: sample the uniform grid and flag it.
            if (degenerate) *degenerate = true;
            std::vector<std::array<double, 2>> all;
            for (int gy = 0; gy < query.h; ++gy)
                for (int gx = 0; gx < query.w; ++gx)
                    all.push_back({static_cast<double>(gx), static_cast<double>(gy)});
            for (int i : geom::farthest_point_sample(all, std::min(k, cells), seed))
                chosen.push_back(i);
        } else {
            // Fewer than k confident cells: take the top-k by probability.
            std::vector<int> order(cells);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return query.mask_prob[a] > query.mask_prob[b];
            });
            for (int i = 0; i < std::min(k, cells); ++i) chosen.push_back(order[i]);
        }
    }

    const std::size_t qcells = static_cast<std::size_t>(query.h) * query.w;
    const std::size_t scells = static_cast<std::size_t>(support.h) * support.w;
    double score = 0;
    for (const int cq : chosen) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t cs = 0; cs < scells; ++cs) {
            double s = 0;
            for (int d = 0; d < query.dim; ++d)
                s += static_cast<double>(query.features[d * qcells + cq]) *
                     static_cast<double>(support.features[d * scells + cs]);
            best = std::max(best, s);
        }
        score += best;
    }
    return score;
}

int classify_query(const model::FeatureGrid& query,
                   const std::vector<const model::FeatureGrid*>& supports, int k,
                   std::uint64_t seed, bool* degenerate) {
    if (supports.empty()) throw InsufficientViews("classify_query: no supports");
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < supports.size(); ++s) {
        const double score = local_match_score(query, *supports[s], k, seed, degenerate);
        if (score > best_score) { // strict: ties keep the lowest index
            best_score = score;
            best = static_cast<int>(s);
        }
    }
    return best;
}

EvalResult evaluate(const std::vector<Episode>& episodes,
                    const std::function<int(const Episode&, int)>& classify) {
    EvalResult r;
    for (const auto& ep : episodes) {
        int correct = 0;
        for (std::size_t q = 0; q < ep.queries.size(); ++q)
            if (classify(ep, static_cast<int>(q)) == ep.queries[q].label) ++correct;
        r.per_episode.push_back(static_cast<double>(correct) /
                                static_cast<double>(ep.queries.size()));
    }
    const double n = static_cast<double>(r.per_episode.size());
    if (n > 0) {
        double sum = 0, sq = 0;
        for (const double a : r.per_episode) {
            sum += a;
            sq += a * a;
        }
        r.mean_accuracy = sum / n;
        const double var = std::max(0.0, sq / n - r.mean_accuracy * r.mean_accuracy);
        r.ci95 = 1.96 * std::sqrt(var) / std::sqrt(n);
    }
    return r;
}

namespace {

class GridCache {
public:
    GridCache(const io::LoadedDataset& ds, const model::ParamDict<float>& params,
              const model::EncoderConfig& config, model::GateMode gate)
        : ds_(ds), params_(params), config_(config), gate_(gate) {}

    const model::FeatureGrid& get(int instance, int view) {
        const std::int64_t key = static_cast<std::int64_t>(instance) * 100000 + view;
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const auto& pv = ds_.instances[instance].views[view];
        model::FeatureGrid grid = model::encode(params_, config_, pv.rgb.data(), gate_);
        return cache_.emplace(key, std::move(grid)).first->second;
    }

private:
    const io::LoadedDataset& ds_;
    const model::ParamDict<float>& params_;
    const model::EncoderConfig& config_;
    model::GateMode gate_;
    std::map<std::int64_t, model::FeatureGrid> cache_;
};

} // namespace

EvalResult evaluate_local(const io::LoadedDataset& ds, const model::ParamDict<float>& params,
                          const model::EncoderConfig& config,
                          const std::vector<Episode>& episodes, int k_points,
                          std::uint64_t seed, model::GateMode gate) {
    GridCache cache(ds, params, config, gate);
    int episode_index = 0;
    int degenerate = 0;
    const Episode* current = nullptr;
    auto classify = [&](const Episode& ep, int qi) {
        if (&ep != current) {
            if (current) ++episode_index;
            current = &ep;
        }
        std::vector<const model::FeatureGrid*> supports;
        supports.reserve(ep.support.size());
        for (const auto& s : ep.support)
            supports.push_back(&cache.get(s.instance_index, s.view_index));
        const auto& q = ep.queries[qi];
        bool flag = false;
        const int winner =
            classify_query(cache.get(q.instance_index, q.view_index), supports, k_points,
                           derive_seed(seed, 0x717074 /* qpt */, episode_index, qi), &flag);
        if (flag) ++degenerate;
        return ep.support[winner].label;
    };
    EvalResult r = evaluate(episodes, classify);
    r.degenerate_episodes = degenerate;
    return r;
}

std::vector<float> global_baseline_embed(const model::ParamDict<float>& params,
                                         const model::EncoderConfig& config,
                                         const float* image) {
    const model::FeatureGrid grid = model::encode(params, config, image);
    const std::size_t cells = static_cast<std::size_t>(grid.h) * grid.w;
    double wsum = 1e-8;
    for (const float w : grid.mask_prob) wsum += w;
    std::vector<float> e(grid.dim, 0.0f);
    for (int d = 0; d < grid.dim; ++d) {
        double s = 0;
        for (std::size_t p = 0; p < cells; ++p)
            s += static_cast<double>(grid.pre_gate[d * cells + p]) * grid.mask_prob[p];
        e[d] = static_cast<float>(s / wsum);
    }
    double nrm = 0;
    for (const float v : e) nrm += static_cast<double>(v) * v;
    nrm = std::max(std::sqrt(nrm), 1e-8);
    for (float& v : e) v = static_cast<float>(v / nrm);
    return e;
}

EvalResult evaluate_global(const io::LoadedDataset& ds, const model::ParamDict<float>& params,
                           const model::EncoderConfig& config,
                           const std::vector<Episode>& episodes) {
    std::map<std::int64_t, std::vector<float>> cache;
    auto embed = [&](int instance, int view) -> const std::vector<float>& {
        const std::int64_t key = static_cast<std::int64_t>(instance) * 100000 + view;
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const auto& pv = ds.instances[instance].views[view];
        return cache.emplace(key, global_baseline_embed(params, config, pv.rgb.data()))
            .first->second;
    };
    auto classify = [&](const Episode& ep, int qi) {
        const auto& q = embed(ep.queries[qi].instance_index, ep.queries[qi].view_index);
        int best = 0;
        double best_cos = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < ep.support.size(); ++s) {
            const auto& sv = embed(ep.support[s].instance_index, ep.support[s].view_index);
            double cosv = 0;
            for (std::size_t d = 0; d < q.size(); ++d) cosv += q[d] * sv[d];
            if (cosv > best_cos) {
                best_cos = cosv;
                best = static_cast<int>(s);
            }
        }
        return ep.support[best].label;
    };
    return evaluate(episodes, classify);
}

} // namespace dope::lowshot
