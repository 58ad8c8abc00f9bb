#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "doctest.h"
#include "oracles.hpp"
#include "teracon/dataset.hpp"

using namespace teracon;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 7) {
    GeneratorConfig g;
    g.seed = seed;
    g.vocab = 60;
    g.users = 600;
    g.seq_len = 15;
    g.tasks = preset_tasks("ttl-like", g.vocab);
    return g;
}

// Multinomial naive-Bayes probe trained on item counts, independent of any
// model code: verifies that labels are recoverable from the sequences.
double probe_accuracy(const DatasetBundle& bundle, std::size_t task) {
    const TaskSpec& spec = bundle.tasks[task];
    const auto roster = bundle.roster(task);
    const std::size_t half = roster.size() / 2;
    const std::size_t C = spec.cardinality, V = bundle.vocab;
    std::vector<std::vector<double>> counts(C, std::vector<double>(V, 1.0));
    std::vector<double> prior(C, 1.0);
    for (std::size_t i = 0; i < half; ++i) {
        const std::size_t u = roster[i];
        const int y = spec.labels[u];
        prior[y] += 1.0;
        for (int item : bundle.users[u].items) counts[y][item] += 1.0;
    }
    std::vector<std::vector<double>> logp(C, std::vector<double>(V));
    std::vector<double> logprior(C);
    for (std::size_t y = 0; y < C; ++y) {
        double total = 0.0;
        for (double v : counts[y]) total += v;
        for (std::size_t i = 0; i < V; ++i) logp[y][i] = std::log(counts[y][i] / total);
        logprior[y] = std::log(prior[y]);
    }
    std::size_t correct = 0;
    for (std::size_t i = half; i < roster.size(); ++i) {
        const std::size_t u = roster[i];
        std::size_t best = 0;
        double best_score = -1e300;
        for (std::size_t y = 0; y < C; ++y) {
            double score = logprior[y];
            for (int item : bundle.users[u].items) score += logp[y][item];
            if (score > best_score) {
                best_score = score;
                best = y;
            }
        }
        if (static_cast<int>(best) == spec.labels[roster[i]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(roster.size() - half);
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("fully dependent labels are recoverable from sequences") {
    GeneratorConfig g = small_config();
    g.tasks = {preset_tasks("ttl-like", g.vocab)[0]};
    TaskDescriptor d;
    d.name = "probe";
    d.kind = TaskKind::kClassification;
    d.cardinality = 2;
    d.roster_fraction = 1.0;
    d.label_dependence = 1.0;
    d.latent_factor = 0;
    d.metric = TaskMetric::kAcc;
    g.tasks.push_back(d);
    const DatasetBundle bundle = generate_bundle(g);
    CHECK(probe_accuracy(bundle, 1) > 0.95);
}

TEST_CASE("independent labels are unlearnable") {
    GeneratorConfig g = small_config();
    g.tasks.resize(1);
    TaskDescriptor d;
    d.name = "noise";
    d.kind = TaskKind::kClassification;
    d.cardinality = 2;
    d.roster_fraction = 1.0;
    d.label_dependence = 0.0;
    d.latent_factor = 0;
    g.tasks.push_back(d);
    const DatasetBundle bundle = generate_bundle(g);
    const double acc = probe_accuracy(bundle, 1);
    CHECK(acc > 0.38);
    CHECK(acc < 0.62);
}

TEST_CASE("generation is bit-deterministic in the seed") {
    const DatasetBundle a = generate_bundle(small_config(99));
    const DatasetBundle b = generate_bundle(small_config(99));
    REQUIRE(a.users.size() == b.users.size());
    for (std::size_t u = 0; u < a.users.size(); ++u) {
        CHECK(a.users[u].user_id == b.users[u].user_id);
        CHECK(a.users[u].items == b.users[u].items);
    }
    for (std::size_t t = 0; t < a.tasks.size(); ++t)
        CHECK(a.tasks[t].labels == b.tasks[t].labels);
    const DatasetBundle c = generate_bundle(small_config(100));
    bool different = false;
    for (std::size_t u = 0; u < a.users.size() && !different; ++u)
        different = a.users[u].items != c.users[u].items;
    CHECK(different);
}

TEST_CASE("the first task covers every user, later tasks their fractions") {
    const DatasetBundle bundle = generate_bundle(small_config());
    CHECK(bundle.roster(0).size() == bundle.users.size());
    CHECK(bundle.roster(1).size() == 420);  // 0.7 of 600
    CHECK(bundle.roster(2).size() == 300);  // 0.5 of 600
    CHECK(bundle.roster(3).size() == 420);  // 0.7 of 600
}

TEST_CASE("tasks sharing a latent factor carry mutual information") {
    const DatasetBundle bundle = generate_bundle(small_config());
    // t2 and t3 both derive from factor 0.
    const TaskSpec& a = bundle.tasks[1];
    const TaskSpec& b = bundle.tasks[2];
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pa, pb;
    double n = 0;
    for (std::size_t u = 0; u < bundle.users.size(); ++u) {
        if (a.labels[u] < 0 || b.labels[u] < 0) continue;
        joint[{a.labels[u], b.labels[u]}] += 1;
        pa[a.labels[u]] += 1;
        pb[b.labels[u]] += 1;
        n += 1;
    }
    REQUIRE(n > 100);
    double mi = 0.0;
    for (const auto& [key, c] : joint) {
        const double pxy = c / n, px = pa[key.first] / n, py = pb[key.second] / n;
        mi += pxy * std::log(pxy / (px * py));
    }
    CHECK(mi > 0.05);
}

TEST_CASE("noisy task labels are uniform and cover half the users") {
    DatasetBundle bundle = generate_bundle(small_config());
    const std::size_t before = bundle.tasks.size();
    inject_noisy_task(bundle, 0.5, 50, before - 1, 123);
    REQUIRE(bundle.tasks.size() == before + 1);
    const TaskSpec& noisy = bundle.tasks[before - 1];
    CHECK(noisy.name == "noisy");
    const auto roster = bundle.roster(before - 1);
    CHECK(roster.size() == (bundle.users.size() + 1) / 2);

    std::vector<std::size_t> counts(50, 0);
    for (std::size_t u : roster) ++counts[noisy.labels[u]];
    const double expected = static_cast<double>(roster.size()) / 50.0;
    // Chi-square with 49 degrees of freedom; 85 is past the 99.9th percentile.
    CHECK(oracle::chi_square_uniform(counts, expected) < 85.0);
}

TEST_CASE("noisy task sits between the third and fourth tasks") {
    DatasetBundle bundle = generate_bundle(small_config());
    inject_noisy_task(bundle, 0.5, 50, 3, 5);
    CHECK(bundle.tasks[2].name == "t3");
    CHECK(bundle.tasks[3].name == "noisy");
    CHECK(bundle.tasks[4].name == "t4");
}

TEST_CASE("bundle files round-trip losslessly") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        GeneratorConfig g = small_config(seed);
        g.users = 40;
        DatasetBundle a = generate_bundle(g);
        if (seed == 2) inject_noisy_task(a, 0.5, 50, 2, seed);
        const std::string path = "/tmp/bundle_roundtrip.txt";
        save_bundle(a, path);
        const DatasetBundle b = load_bundle(path);
        CHECK(a.vocab == b.vocab);
        CHECK(a.seq_len == b.seq_len);
        CHECK(a.split_seed == b.split_seed);
        REQUIRE(a.users.size() == b.users.size());
        for (std::size_t u = 0; u < a.users.size(); ++u) {
            CHECK(a.users[u].user_id == b.users[u].user_id);
            CHECK(a.users[u].items == b.users[u].items);
        }
        REQUIRE(a.tasks.size() == b.tasks.size());
        for (std::size_t t = 0; t < a.tasks.size(); ++t) {
            CHECK(a.tasks[t].name == b.tasks[t].name);
            CHECK(a.tasks[t].kind == b.tasks[t].kind);
            CHECK(a.tasks[t].cardinality == b.tasks[t].cardinality);
            CHECK(a.tasks[t].metric == b.tasks[t].metric);
            CHECK(a.tasks[t].labels == b.tasks[t].labels);
        }
        // Identical derived splits.
        for (std::size_t t = 0; t < a.tasks.size(); ++t)
            CHECK(a.split_users(t, Split::kTest) == b.split_users(t, Split::kTest));
        std::remove(path.c_str());
    }
}

TEST_CASE("truncated files report the failing line") {
    GeneratorConfig g = small_config();
    g.users = 25;
    const DatasetBundle bundle = generate_bundle(g);
    const std::string path = "/tmp/bundle_truncated.txt";
    save_bundle(bundle, path);
    std::ifstream in(path);
    std::string all, line;
    int keep = 0;
    while (std::getline(in, line) && keep < 15) {
        all += line + "\n";
        ++keep;
    }
    in.close();
    std::ofstream out(path);
    out << all;
    out.close();
    CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains(":16"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("version mismatches are rejected") {
    const std::string path = "/tmp/bundle_version.txt";
    std::ofstream out(path);
    out << "teracon-bundle v9\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains("version"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("a hand-written two-user fixture parses as expected") {
    const std::string path = "/tmp/bundle_fixture.txt";
    std::ofstream out(path);
    out << "teracon-bundle v1\n"
        << "vocab 10\n"
        << "seqlen 3\n"
        << "split_seed 5\n"
        << "users 2\n"
        << "task t1 next-item 10 mrr5\n"
        << "task age classification 4 acc\n"
        << "data\n"
        << "alice\t1 2 3\tt1=_ age=2\n"
        << "bob\t4 5 6\tt1=_ age=_\n";
    out.close();
    const DatasetBundle b = load_bundle(path);
    CHECK(b.vocab == 10);
    CHECK(b.users[0].user_id == "alice");
    CHECK(b.users[1].items == std::vector<int>{4, 5, 6});
    CHECK(b.tasks[1].labels[0] == 2);
    CHECK(b.tasks[1].labels[1] == -1);
    CHECK(b.roster(0).size() == 2);
    CHECK(b.roster(1) == std::vector<std::size_t>{0});
    std::remove(path.c_str());
}

TEST_CASE("split sizing follows the stated rounding rule") {
    CHECK(split_counts(100).train == 80);
    CHECK(split_counts(100).valid == 5);
    CHECK(split_counts(100).test == 15);
    CHECK(split_counts(20).train == 16);
    CHECK(split_counts(20).valid == 1);
    CHECK(split_counts(20).test == 3);
    CHECK_THROWS_AS(split_counts(2), std::invalid_argument);
}

TEST_CASE("splits are disjoint, exhaustive and keyed on user ids") {
    DatasetBundle bundle = generate_bundle(small_config());
    const auto train = bundle.split_users(1, Split::kTrain);
    const auto valid = bundle.split_users(1, Split::kValid);
    const auto test = bundle.split_users(1, Split::kTest);
    const auto roster = bundle.roster(1);
    CHECK(train.size() + valid.size() + test.size() == roster.size());
    for (std::size_t u : valid) CHECK(bundle.split_of(1, u) == Split::kValid);
    for (std::size_t u : test) CHECK(bundle.split_of(1, u) == Split::kTest);

    // Reordering the user table must not move anyone between splits.
    std::map<std::string, Split> before;
    for (std::size_t u : roster) before[bundle.users[u].user_id] = bundle.split_of(1, u);
    DatasetBundle shuffled = bundle;
    std::reverse(shuffled.users.begin(), shuffled.users.end());
    for (auto& t : shuffled.tasks) std::reverse(t.labels.begin(), t.labels.end());
    for (std::size_t u : shuffled.roster(1))
        CHECK(before.at(shuffled.users[u].user_id) == shuffled.split_of(1, u));
}

TEST_CASE("generator warns when cardinality exceeds the latent states") {
    GeneratorConfig g = small_config();
    TaskDescriptor wide;
    wide.name = "wide";
    wide.kind = TaskKind::kClassification;
    wide.cardinality = 40;
    wide.roster_fraction = 1.0;
    wide.label_dependence = 1.0;
    wide.metric = TaskMetric::kMrr5;
    g.tasks.push_back(wide);
    const DatasetBundle bundle = generate_bundle(g);
    REQUIRE(!bundle.generation_warnings.empty());
    CHECK(bundle.generation_warnings[0].find("wide") != std::string::npos);
}

TEST_SUITE_END();
