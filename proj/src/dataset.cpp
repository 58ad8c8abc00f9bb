#include "teracon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace teracon {

namespace {

constexpr const char* kMagic = "teracon-bundle";
constexpr const char* kVersion = "v1";

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_no,
                             const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::uint64_t split_hash(const std::string& user_id, const std::string& task_name,
                         std::uint64_t seed) {
    std::uint64_t st = fnv1a64(user_id) ^ (fnv1a64(task_name) * 0x9e3779b97f4a7c15ULL) ^ seed;
    return splitmix64(st);
}

}  // namespace

const char* task_kind_name(TaskKind k) {
    return k == TaskKind::kNextItem ? "next-item" : "classification";
}

const char* task_metric_name(TaskMetric m) { return m == TaskMetric::kMrr5 ? "mrr5" : "acc"; }

bool TaskSpec::in_roster(std::size_t user, TaskKind) const {
    if (kind == TaskKind::kNextItem) return true;
    return user < labels.size() && labels[user] >= 0;
}

std::vector<std::size_t> DatasetBundle::roster(std::size_t task) const {
    const TaskSpec& t = tasks.at(task);
    std::vector<std::size_t> out;
    out.reserve(users.size());
    for (std::size_t u = 0; u < users.size(); ++u)
        if (t.kind == TaskKind::kNextItem || t.labels[u] >= 0) out.push_back(u);
    return out;
}

int DatasetBundle::label_of(std::size_t task, std::size_t user) const {
    const TaskSpec& t = tasks.at(task);
    if (t.kind == TaskKind::kNextItem) return -1;
    return t.labels.at(user);
}

SplitCounts split_counts(std::size_t n) {
    if (n < 3) throw std::invalid_argument("split: roster smaller than 3 users");
    SplitCounts c{};
    c.valid = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(n)));
    c.test = static_cast<std::size_t>(std::floor(0.15 * static_cast<double>(n)));
    if (c.valid == 0) c.valid = 1;
    if (c.test == 0) c.test = 1;
    c.train = n - c.valid - c.test;
    return c;
}

Split DatasetBundle::split_of(std::size_t task, std::size_t user) const {
    const TaskSpec& t = tasks.at(task);
    std::vector<std::size_t> r = roster(task);
    const SplitCounts counts = split_counts(r.size());
    // Rank of the user's hash among the roster's hashes decides membership.
    const std::uint64_t h = split_hash(users[user].user_id, t.name, split_seed);
    std::size_t below = 0;
    for (std::size_t v : r) {
        const std::uint64_t hv = split_hash(users[v].user_id, t.name, split_seed);
        if (hv < h || (hv == h && users[v].user_id < users[user].user_id)) ++below;
    }
    if (below < counts.valid) return Split::kValid;
    if (below < counts.valid + counts.test) return Split::kTest;
    return Split::kTrain;
}

std::vector<std::size_t> DatasetBundle::split_users(std::size_t task, Split split) const {
    const TaskSpec& t = tasks.at(task);
    std::vector<std::size_t> r = roster(task);
    const SplitCounts counts = split_counts(r.size());
    std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
    ranked.reserve(r.size());
    for (std::size_t v : r)
        ranked.emplace_back(split_hash(users[v].user_id, t.name, split_seed), v);
    std::sort(ranked.begin(), ranked.end(), [this](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return users[a.second].user_id < users[b.second].user_id;
    });
    std::size_t lo = 0, hi = 0;
    switch (split) {
        case Split::kValid: lo = 0; hi = counts.valid; break;
        case Split::kTest: lo = counts.valid; hi = counts.valid + counts.test; break;
        case Split::kTrain: lo = counts.valid + counts.test; hi = ranked.size(); break;
    }
    std::vector<std::size_t> out;
    out.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) out.push_back(ranked[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

void DatasetBundle::validate() const {
    if (tasks.empty()) throw std::runtime_error("bundle: no tasks");
    if (users.empty()) throw std::runtime_error("bundle: no users");
    if (tasks[0].kind != TaskKind::kNextItem)
        throw std::runtime_error("bundle: first task must be next-item");
    for (const auto& u : users) {
        if (u.items.size() != seq_len) throw std::runtime_error("bundle: ragged sequence");
        for (int it : u.items)
            if (it < 0 || static_cast<std::size_t>(it) >= vocab)
                throw std::runtime_error("bundle: item outside vocabulary in user " + u.user_id);
    }
    for (const auto& t : tasks) {
        if (t.kind == TaskKind::kNextItem) continue;
        if (t.labels.size() != users.size())
            throw std::runtime_error("bundle: label array size mismatch in task " + t.name);
        for (int l : t.labels)
            if (l >= 0 && static_cast<std::size_t>(l) >= t.cardinality)
                throw std::runtime_error("bundle: label out of range in task " + t.name);
    }
}

std::vector<TaskDescriptor> preset_tasks(const std::string& preset, std::size_t vocab) {
    auto cls = [](std::string name, std::size_t card, double roster, double dep,
                  std::size_t factor) {
        TaskDescriptor d;
        d.name = std::move(name);
        d.kind = TaskKind::kClassification;
        d.cardinality = card;
        d.roster_fraction = roster;
        d.label_dependence = dep;
        d.latent_factor = factor;
        d.metric = card > 16 ? TaskMetric::kMrr5 : TaskMetric::kAcc;
        return d;
    };
    TaskDescriptor source;
    source.name = "t1";
    source.kind = TaskKind::kNextItem;
    source.cardinality = vocab;
    source.roster_fraction = 1.0;
    source.metric = TaskMetric::kMrr5;

    if (preset == "ttl-like") {
        return {source, cls("t2", 8, 0.7, 0.8, 0), cls("t3", 4, 0.5, 0.9, 0),
                cls("t4", 6, 0.7, 0.8, 0)};
    }
    if (preset == "3task") {
        // Middle task only weakly tied to the sequence-driving factor; the
        // last task shares it strongly.
        return {source, cls("t2", 6, 0.7, 0.35, 0), cls("t3", 4, 0.6, 0.9, 0)};
    }
    throw std::invalid_argument("unknown task preset: " + preset);
}

DatasetBundle generate_bundle(const GeneratorConfig& cfg) {
    if (cfg.tasks.empty()) throw std::invalid_argument("generator: empty task list");
    if (cfg.tasks[0].kind != TaskKind::kNextItem)
        throw std::invalid_argument("generator: first task must be next-item");
    if (cfg.vocab < cfg.latent_states)
        throw std::invalid_argument("generator: vocab smaller than latent states");

    DatasetBundle bundle;
    bundle.vocab = cfg.vocab;
    bundle.seq_len = cfg.seq_len;
    bundle.split_seed = derive_seed(cfg.seed, "splits");

    const std::size_t S = cfg.latent_states;
    const std::size_t V = cfg.vocab;

    // Per-state item preference orders with Zipf-shaped emission mass.
    Rng world(derive_seed(cfg.seed, "world"));
    std::vector<std::vector<int>> order(S);      // rank -> item
    std::vector<std::vector<int>> rank_of(S);    // item -> rank
    for (std::size_t s = 0; s < S; ++s) {
        order[s].resize(V);
        for (std::size_t i = 0; i < V; ++i) order[s][i] = static_cast<int>(i);
        world.shuffle(order[s]);
        rank_of[s].assign(V, 0);
        for (std::size_t r = 0; r < V; ++r) rank_of[s][order[s][r]] = static_cast<int>(r);
    }
    std::vector<double> zipf_cdf(V);
    {
        double total = 0.0;
        for (std::size_t r = 0; r < V; ++r)
            total += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);
        double acc = 0.0;
        for (std::size_t r = 0; r < V; ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent) / total;
            zipf_cdf[r] = acc;
        }
        zipf_cdf[V - 1] = 1.0;
    }
    auto draw_item = [&](Rng& rng, std::size_t state) {
        const double u = rng.uniform();
        const auto it = std::lower_bound(zipf_cdf.begin(), zipf_cdf.end(), u);
        const std::size_t rank = static_cast<std::size_t>(it - zipf_cdf.begin());
        return order[state][rank];
    };

    // Per-user latent factors and sequences. Factor 0 drives the sequences.
    Rng users_rng(derive_seed(cfg.seed, "users"));
    bundle.users.resize(cfg.users);
    std::vector<std::vector<std::size_t>> factors(cfg.users,
                                                  std::vector<std::size_t>(cfg.latent_factors));
    for (std::size_t u = 0; u < cfg.users; ++u) {
        auto& user = bundle.users[u];
        {
            std::ostringstream id;
            id << "u" << std::setw(6) << std::setfill('0') << u;
            user.user_id = id.str();
        }
        for (std::size_t fidx = 0; fidx < cfg.latent_factors; ++fidx)
            factors[u][fidx] = static_cast<std::size_t>(users_rng.below(S));
        const std::size_t z = factors[u][0];
        user.items.resize(cfg.seq_len);
        user.items[0] = draw_item(users_rng, z);
        for (std::size_t t = 1; t < cfg.seq_len; ++t) {
            if (users_rng.uniform() < cfg.successor_prob) {
                const int prev_rank = rank_of[z][user.items[t - 1]];
                user.items[t] = order[z][(prev_rank + 1) % static_cast<int>(V)];
            } else {
                user.items[t] = draw_item(users_rng, z);
            }
        }
    }

    // Tasks: roster by seeded shuffle, labels from the task's latent factor.
    for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
        const TaskDescriptor& d = cfg.tasks[ti];
        TaskSpec spec;
        spec.name = d.name;
        spec.kind = d.kind;
        spec.cardinality = d.kind == TaskKind::kNextItem ? cfg.vocab : d.cardinality;
        spec.metric = d.metric;
        spec.labels.assign(cfg.users, -1);
        if (d.kind == TaskKind::kClassification) {
            if (d.cardinality < 2)
                throw std::invalid_argument("generator: classification task " + d.name +
                                            " needs at least 2 labels");
            if (d.latent_factor >= cfg.latent_factors)
                throw std::invalid_argument("generator: task " + d.name +
                                            " references missing latent factor");
            if (d.cardinality > S)
                bundle.generation_warnings.push_back(
                    "task " + d.name + ": cardinality " + std::to_string(d.cardinality) +
                    " exceeds the " + std::to_string(S) + " distinguishable latent states");
            Rng task_rng(derive_seed(cfg.seed, "task-" + d.name));
            std::vector<std::size_t> pool(cfg.users);
            for (std::size_t u = 0; u < cfg.users; ++u) pool[u] = u;
            task_rng.shuffle(pool);
            const std::size_t roster_size = static_cast<std::size_t>(
                std::ceil(d.roster_fraction * static_cast<double>(cfg.users)));
            const std::uint64_t salt = fnv1a64(d.name);
            for (std::size_t i = 0; i < std::min(roster_size, cfg.users); ++i) {
                const std::size_t u = pool[i];
                const std::size_t state = factors[u][d.latent_factor];
                int label;
                if (task_rng.uniform() < d.label_dependence) {
                    std::uint64_t st = salt ^ (0x100001b3ULL * (state + 1));
                    label = static_cast<int>(splitmix64(st) % d.cardinality);
                } else {
                    label = static_cast<int>(task_rng.below(d.cardinality));
                }
                spec.labels[u] = label;
            }
        }
        bundle.tasks.push_back(std::move(spec));
    }
    bundle.validate();
    return bundle;
}

void inject_noisy_task(DatasetBundle& bundle, double user_fraction, std::size_t classes,
                       std::size_t position, std::uint64_t seed) {
    if (position > bundle.tasks.size())
        throw std::out_of_range("inject_noisy_task: position out of range");
    TaskSpec spec;
    spec.name = "noisy";
    spec.kind = TaskKind::kClassification;
    spec.cardinality = classes;
    spec.metric = TaskMetric::kAcc;
    spec.labels.assign(bundle.users.size(), -1);
    Rng rng(derive_seed(seed, "noisy-task"));
    std::vector<std::size_t> pool(bundle.users.size());
    for (std::size_t u = 0; u < pool.size(); ++u) pool[u] = u;
    rng.shuffle(pool);
    const std::size_t roster_size = static_cast<std::size_t>(
        std::ceil(user_fraction * static_cast<double>(bundle.users.size())));
    for (std::size_t i = 0; i < std::min(roster_size, pool.size()); ++i)
        spec.labels[pool[i]] = static_cast<int>(rng.below(classes));
    bundle.tasks.insert(bundle.tasks.begin() + static_cast<std::ptrdiff_t>(position),
                        std::move(spec));
}

void save_bundle(const DatasetBundle& bundle, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_bundle: cannot open " + path);
    out << kMagic << " " << kVersion << "\n";
    out << "vocab " << bundle.vocab << "\n";
    out << "seqlen " << bundle.seq_len << "\n";
    out << "split_seed " << bundle.split_seed << "\n";
    out << "users " << bundle.users.size() << "\n";
    for (const auto& t : bundle.tasks) {
        if (t.name.find(' ') != std::string::npos || t.name.find('=') != std::string::npos)
            throw std::runtime_error("save_bundle: task name '" + t.name + "' not writable");
        out << "task " << t.name << " " << task_kind_name(t.kind) << " " << t.cardinality
            << " " << task_metric_name(t.metric) << "\n";
    }
    out << "data\n";
    for (std::size_t u = 0; u < bundle.users.size(); ++u) {
        const auto& user = bundle.users[u];
        out << user.user_id << "\t";
        for (std::size_t i = 0; i < user.items.size(); ++i) {
            if (i) out << " ";
            out << user.items[i];
        }
        out << "\t";
        for (std::size_t ti = 0; ti < bundle.tasks.size(); ++ti) {
            const auto& t = bundle.tasks[ti];
            if (ti) out << " ";
            out << t.name << "=";
            if (t.kind == TaskKind::kNextItem || t.labels[u] < 0)
                out << "_";
            else
                out << t.labels[u];
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("save_bundle: write failed for " + path);
}

DatasetBundle load_bundle(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_bundle: cannot open " + path);
    DatasetBundle bundle;
    std::string line;
    std::size_t line_no = 0;
    std::size_t expected_users = 0;
    bool header_done = false;

    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++line_no;
        return true;
    };

    if (!next_line()) parse_fail(path, 1, "empty file");
    {
        std::istringstream ss(line);
        std::string magic, version;
        ss >> magic >> version;
        if (magic != kMagic) parse_fail(path, line_no, "not a bundle file");
        if (version != kVersion)
            parse_fail(path, line_no, "version mismatch: expected " + std::string(kVersion) +
                                          ", found " + version);
    }
    while (!header_done) {
        if (!next_line()) parse_fail(path, line_no + 1, "truncated header");
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "vocab") {
            if (!(ss >> bundle.vocab)) parse_fail(path, line_no, "bad vocab");
        } else if (key == "seqlen") {
            if (!(ss >> bundle.seq_len)) parse_fail(path, line_no, "bad seqlen");
        } else if (key == "split_seed") {
            if (!(ss >> bundle.split_seed)) parse_fail(path, line_no, "bad split_seed");
        } else if (key == "users") {
            if (!(ss >> expected_users)) parse_fail(path, line_no, "bad user count");
        } else if (key == "task") {
            TaskSpec spec;
            std::string kind, metric;
            if (!(ss >> spec.name >> kind >> spec.cardinality >> metric))
                parse_fail(path, line_no, "bad task line");
            if (kind == "next-item")
                spec.kind = TaskKind::kNextItem;
            else if (kind == "classification")
                spec.kind = TaskKind::kClassification;
            else
                parse_fail(path, line_no, "unknown task kind '" + kind + "'");
            if (metric == "mrr5")
                spec.metric = TaskMetric::kMrr5;
            else if (metric == "acc")
                spec.metric = TaskMetric::kAcc;
            else
                parse_fail(path, line_no, "unknown metric '" + metric + "'");
            bundle.tasks.push_back(std::move(spec));
        } else if (key == "data") {
            header_done = true;
        } else {
            parse_fail(path, line_no, "unknown header key '" + key + "'");
        }
    }
    for (auto& t : bundle.tasks) t.labels.assign(expected_users, -1);

    std::unordered_set<std::string> seen_ids;
    for (std::size_t u = 0; u < expected_users; ++u) {
        if (!next_line()) parse_fail(path, line_no + 1, "truncated: expected user record");
        const std::size_t tab1 = line.find('\t');
        const std::size_t tab2 = tab1 == std::string::npos ? std::string::npos
                                                           : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos)
            parse_fail(path, line_no, "user record needs two tab separators");
        BehaviorSequence user;
        user.user_id = line.substr(0, tab1);
        if (user.user_id.empty()) parse_fail(path, line_no, "empty user id");
        if (!seen_ids.insert(user.user_id).second)
            parse_fail(path, line_no, "duplicate user id " + user.user_id);
        {
            std::istringstream items(line.substr(tab1 + 1, tab2 - tab1 - 1));
            int item;
            while (items >> item) user.items.push_back(item);
            if (user.items.size() != bundle.seq_len)
                parse_fail(path, line_no, "expected " + std::to_string(bundle.seq_len) +
                                              " items, found " +
                                              std::to_string(user.items.size()));
        }
        {
            std::istringstream labels(line.substr(tab2 + 1));
            std::string pair;
            std::size_t ti = 0;
            while (labels >> pair) {
                if (ti >= bundle.tasks.size()) parse_fail(path, line_no, "extra label pair");
                const std::size_t eq = pair.find('=');
                if (eq == std::string::npos) parse_fail(path, line_no, "malformed label pair");
                if (pair.substr(0, eq) != bundle.tasks[ti].name)
                    parse_fail(path, line_no, "label pair order does not match header tasks");
                const std::string value = pair.substr(eq + 1);
                if (value != "_") {
                    try {
                        bundle.tasks[ti].labels[u] = std::stoi(value);
                    } catch (const std::exception&) {
                        parse_fail(path, line_no, "bad label value '" + value + "'");
                    }
                }
                ++ti;
            }
            if (ti != bundle.tasks.size())
                parse_fail(path, line_no, "missing label pairs");
        }
        bundle.users.push_back(std::move(user));
    }
    bundle.validate();
    return bundle;
}

}  // namespace teracon
