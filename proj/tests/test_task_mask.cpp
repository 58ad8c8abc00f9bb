#include <cmath>

#include "doctest.h"
#include "teracon/task_mask.hpp"
#include "testutil.hpp"

using namespace teracon;

namespace {

TaskMaskBank make_bank(std::size_t tasks = 3, std::size_t slots = 4, std::size_t dim = 6,
                       MaskMode mode = MaskMode::kRelation, double s_max = 50.0) {
    MaskBankConfig cfg;
    cfg.num_tasks = tasks;
    cfg.slots = slots;
    cfg.dim = dim;
    cfg.mode = mode;
    cfg.s_max = s_max;
    return TaskMaskBank(cfg);
}

void assign_ids(TaskMaskBank& bank) {
    int id = 0;
    bank.for_each_param([&](ad::Param& p) { p.id = id++; });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE_BEGIN("task_mask");

TEST_CASE("annealing hits both endpoints exactly") {
    for (long B : {2L, 10L, 1000L}) {
        CHECK(anneal_scale(1, B, 50.0) == 1.0 / 50.0);
        CHECK(anneal_scale(B, B, 50.0) == 50.0);
    }
    CHECK(anneal_scale(1, 1, 50.0) == 50.0);
}

TEST_CASE("annealing midpoint matches the direct formula") {
    CHECK(anneal_scale(2, 3, 50.0) == doctest::Approx(25.01).epsilon(1e-12));
}

TEST_CASE("annealing rejects out-of-range batch indices") {
    CHECK_THROWS_AS(anneal_scale(0, 5, 50.0), std::out_of_range);
    CHECK_THROWS_AS(anneal_scale(6, 5, 50.0), std::out_of_range);
    CHECK_THROWS_AS(anneal_scale(1, 5, 0.5), std::invalid_argument);
}

TEST_CASE("base mask of a zero embedding is one half") {
    const DenseArray m = base_mask_value(DenseArray({4}), 50.0);
    for (double v : m.data) CHECK(v == 0.5);
}

TEST_CASE("base mask saturates for large scaled entries") {
    DenseArray e({1}, {30.0 / 7.0});
    const DenseArray m = base_mask_value(e, 7.0);
    CHECK(m.data[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("base mask matches the scalar sigmoid") {
    DenseArray e({2}, {0.1, -0.1});
    const DenseArray m = base_mask_value(e, 50.0);
    CHECK(m.data[0] == doctest::Approx(sigmoid(5.0)).epsilon(1e-10));
    CHECK(m.data[1] == doctest::Approx(sigmoid(-5.0)).epsilon(1e-10));
    CHECK(m.data[0] == doctest::Approx(0.99331).epsilon(1e-4));
    CHECK(m.data[1] == doctest::Approx(0.00669).epsilon(1e-3));
}

TEST_CASE("opposite pair negates its second row") {
    const DenseArray zero = opposite_pair_value(DenseArray({3}), 50.0);
    for (double v : zero.data) CHECK(v == 0.0);

    Rng rng(3);
    DenseArray e = testutil::random_array({5}, rng);
    const DenseArray p = opposite_pair_value(e, 4.0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(p.at(1, i) == doctest::Approx(-p.at(0, i)));

    const DenseArray q = opposite_pair_value(DenseArray({1}, {0.02}), 50.0);
    CHECK(q.at(0, 0) == doctest::Approx(0.76159).epsilon(1e-4));
    CHECK(q.at(1, 0) == doctest::Approx(-0.76159).epsilon(1e-4));
}

TEST_CASE("aggregate sets hold every trained task except the target") {
    CHECK(aggregate_set(1, 3) == std::vector<std::size_t>{2, 3});
    CHECK(aggregate_set(2, 3) == std::vector<std::size_t>{1, 3});
    CHECK(aggregate_set(3, 3) == std::vector<std::size_t>{1, 2});
    CHECK(aggregate_set(1, 1).empty());
    CHECK(aggregate_set(2, 2) == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(aggregate_set(3, 2), std::out_of_range);
    CHECK_THROWS_AS(aggregate_set(0, 2), std::out_of_range);
}

TEST_CASE("relation mask of all-zero state is exactly one half") {
    TaskMaskBank bank = make_bank();
    Rng rng(4);
    bank.activate_next(rng);
    // Task 0 keeps zero embeddings; identity mixer passes tanh(0) through.
    for (double s : {0.02, 1.0, 50.0}) {
        const DenseArray m = bank.mask_value(0, 2, s);
        for (double v : m.data) CHECK(v == 0.5);
    }
}

TEST_CASE("identity mixer reduces to the composed base form") {
    TaskMaskBank bank = make_bank(2, 2, 4);
    Rng rng(5);
    bank.activate_next(rng);
    bank.activate_next(rng);
    auto& e = bank.embedding(1, 0);
    e.value.fill(0.01);
    // Other task's embedding is zero, so only the own tanh block feeds the
    // identity mixer: mask = sigmoid(s * tanh(s * e)).
    const DenseArray m = bank.mask_value(1, 0, 50.0);
    const double want = sigmoid(50.0 * std::tanh(0.5));
    for (double v : m.data) {
        CHECK(v == doctest::Approx(want).epsilon(1e-12));
        CHECK(std::abs(v - 1.0) < 1e-9);
    }
}

TEST_CASE("zeroing the other task reduces to the own-column mixer") {
    TaskMaskBank bank = make_bank(2, 2, 4);
    Rng rng(6);
    bank.activate_next(rng);
    bank.activate_next(rng);
    auto& own = bank.embedding(1, 1);
    Rng vals(7);
    for (double& v : own.value.data) v = vals.uniform(-0.02, 0.02);
    auto& w = bank.mixer_weight(1, 1);
    for (double& v : w.value.data) v = vals.uniform(-0.3, 0.3);
    bank.embedding(0, 1).value.fill(0.0);

    const double s = 10.0;
    const DenseArray got = bank.mask_value(1, 1, s);
    // Restricted mixer: only rows 0..dim-1 (the own tanh block) can act.
    for (std::size_t j = 0; j < 4; ++j) {
        double acc = bank.mixer_bias(1, 1).value.data[j];
        for (std::size_t i = 0; i < 4; ++i)
            acc += std::tanh(s * own.value.data[i]) * w.value.at(i, j);
        CHECK(got.data[j] == doctest::Approx(sigmoid(s * acc)).epsilon(1e-12));
    }
}

TEST_CASE("inactive tasks contribute nothing to relation masks") {
    TaskMaskBank bank = make_bank(4, 2, 4);
    Rng rng(8);
    bank.activate_next(rng);
    bank.activate_next(rng);
    const DenseArray before = bank.mask_value(1, 0, 50.0);
    // Tamper with an inactive task's (pre-allocated) embedding directly;
    // its slots enter as zero constants, not as this parameter.
    bank.embedding(3, 0).value.fill(123.0);
    const DenseArray after = bank.mask_value(1, 0, 50.0);
    CHECK(before.data == after.data);
}

TEST_CASE("mask entries stay strictly inside the unit interval") {
    TaskMaskBank bank = make_bank(3, 3, 5);
    Rng rng(9);
    bank.activate_next(rng);
    bank.activate_next(rng);
    bank.activate_next(rng);
    for (double& v : bank.embedding(2, 1).value.data) v = rng.uniform(-3, 3);
    for (std::size_t task = 0; task < 3; ++task)
        for (std::size_t slot = 0; slot < 3; ++slot)
            for (double s : {0.02, 5.0, 50.0})
                for (double v : bank.mask_value(task, slot, s).data) {
                    CHECK(v > 0.0);
                    CHECK(v < 1.0);
                }
}

TEST_CASE("larger s sharpens base masks monotonically") {
    DenseArray e({2}, {0.04, -0.03});
    double prev_hi = 0.5, prev_lo = 0.5;
    for (double s : {1.0, 5.0, 20.0, 50.0, 200.0}) {
        const DenseArray m = base_mask_value(e, s);
        CHECK(m.data[0] >= prev_hi);
        CHECK(m.data[1] <= prev_lo);
        prev_hi = m.data[0];
        prev_lo = m.data[1];
    }
}

TEST_CASE("unactivated tasks have no usable mask parameters") {
    TaskMaskBank bank = make_bank();
    Rng rng(10);
    bank.activate_next(rng);
    ad::Tape tape;
    CHECK_THROWS_WITH_AS(bank.mask_node(tape, 1, 0, 50.0),
                         doctest::Contains("no allocated mask"), std::runtime_error);
    CHECK_THROWS_AS(bank.snapshot(2), std::runtime_error);
}

TEST_CASE("snapshots are immutable deep copies at full sharpness") {
    TaskMaskBank bank = make_bank(2, 2, 4);
    Rng rng(11);
    bank.activate_next(rng);
    bank.activate_next(rng);
    for (double& v : bank.embedding(1, 0).value.data) v = rng.uniform(-0.05, 0.05);

    const auto snap1 = bank.snapshot(1);
    const auto snap2 = bank.snapshot(1);
    for (std::size_t slot = 0; slot < snap1.size(); ++slot) {
        CHECK(snap1[slot].data == snap2[slot].data);
        CHECK(snap1[slot].data == bank.mask_value(1, slot, 50.0).data);
    }
    // Continue "training": snapshot values must not move even though the
    // live mask does (compared at a sharpness that cannot saturate).
    const DenseArray live_before = bank.mask_value(1, 0, 1.0);
    const auto frozen = snap1;
    for (double& v : bank.embedding(1, 0).value.data) v += 0.5;
    for (std::size_t slot = 0; slot < frozen.size(); ++slot)
        CHECK(frozen[slot].data == snap1[slot].data);
    CHECK(bank.mask_value(1, 0, 1.0).data != live_before.data);
}

TEST_CASE("relation-mask gradients pass finite differences") {
    TaskMaskBank bank = make_bank(2, 1, 4);
    Rng rng(12);
    bank.activate_next(rng);
    bank.activate_next(rng);
    assign_ids(bank);
    for (double& v : bank.embedding(0, 0).value.data) v = rng.uniform(-0.05, 0.05);

    auto build = [&](ad::Tape& t) { return t.sum(bank.mask_node(t, 1, 0, 3.0)); };
    const double e_own = testutil::grad_check(bank.embedding(1, 0), build);
    const double e_other = testutil::grad_check(bank.embedding(0, 0), build);
    const double e_mixer = testutil::grad_check(bank.mixer_weight(1, 0), build);
    CHECK(e_own < 1e-4);
    CHECK(e_other < 1e-4);
    CHECK(e_mixer < 1e-4);
}

TEST_CASE("only-positive mode narrows the mixer input") {
    TaskMaskBank rel = make_bank(3, 2, 4, MaskMode::kRelation);
    TaskMaskBank pos = make_bank(3, 2, 4, MaskMode::kOnlyPositive);
    CHECK(rel.mixer_input_dim() == (2 * 2 + 1) * 4);
    CHECK(pos.mixer_input_dim() == (2 + 1) * 4);
}

TEST_SUITE_END();
