#include <cmath>

#include "doctest.h"
#include "teracon/baselines.hpp"
#include "testutil.hpp"

using namespace teracon;

namespace {

GeneratorConfig small_gen(std::uint64_t seed = 7) {
    GeneratorConfig g;
    g.seed = seed;
    g.vocab = 24;
    g.users = 120;
    g.seq_len = 10;
    g.latent_states = 4;
    g.tasks = preset_tasks("3task", g.vocab);
    return g;
}

ModelConfig small_model(const DatasetBundle& bundle, MaskMode mode = MaskMode::kNone) {
    ModelConfig mc;
    mc.backbone.vocab = bundle.vocab;
    mc.backbone.dim = 16;
    mc.backbone.blocks = 2;
    mc.backbone.kernel_width = 3;
    mc.backbone.dilations = {1, 2};
    mc.mask_mode = mode;
    mc.s_max = 50.0;
    for (const auto& t : bundle.tasks) mc.cardinalities.push_back(t.cardinality);
    return mc;
}

TrainConfig small_train(std::uint64_t seed = 7) {
    TrainConfig tc;
    tc.lr_first = 0.01;
    tc.lr = 0.003;
    tc.batch = 16;
    tc.epochs_first = 4;
    tc.epochs = 3;
    tc.patience = 10;
    tc.seed = seed;
    return tc;
}

}  // namespace

TEST_SUITE_BEGIN("baselines");

TEST_CASE("gradient gating freezes exactly the covered coordinates") {
    Rng rng(3);
    ad::Param p;
    p.name = "w";
    p.id = 0;
    p.value = testutil::random_array({4, 3}, rng);
    const DenseArray before = p.value;

    SUBCASE("no prior masks leaves everything trainable") {
        DenseArray cover({4, 3}, 0.0);
        ad::Tape tape;
        ad::Node* eff = conure_effective_params(tape, p, cover);
        ad::Node* loss = tape.sum(tape.mul(eff, eff));
        tape.forward(loss);
        tape.backward(loss);
        for (double gradv : tape.param_grads().at(0)->data) CHECK(gradv != 0.0);
    }
    SUBCASE("full coverage keeps parameters bit-identical after a step") {
        DenseArray cover({4, 3}, 1.0);
        ad::Tape tape;
        ad::Node* eff = conure_effective_params(tape, p, cover);
        ad::Node* loss = tape.sum(tape.mul(eff, eff));
        tape.forward(loss);
        tape.backward(loss);
        AdamState st;
        adam_update(p.value, *tape.param_grads().at(0), st, 0.1);
        CHECK(p.value.data == before.data);
    }
    SUBCASE("half coverage moves only the uncovered half") {
        DenseArray cover({4, 3}, 0.0);
        for (std::size_t i = 0; i < cover.size(); i += 2) cover.data[i] = 1.0;
        ad::Tape tape;
        ad::Node* eff = conure_effective_params(tape, p, cover);
        ad::Node* loss = tape.sum(tape.mul(eff, eff));
        tape.forward(loss);
        tape.backward(loss);
        AdamState st;
        adam_update(p.value, *tape.param_grads().at(0), st, 0.1);
        for (std::size_t i = 0; i < cover.size(); ++i) {
            if (cover.data[i] == 1.0)
                CHECK(p.value.data[i] == before.data[i]);
            else
                CHECK(p.value.data[i] != before.data[i]);
        }
    }
    SUBCASE("overlapping coverage is rejected") {
        DenseArray cover({4, 3}, 2.0);
        ad::Tape tape;
        CHECK_THROWS_AS(conure_effective_params(tape, p, cover), std::runtime_error);
    }
}

TEST_CASE("pruning keeps the largest free coordinates") {
    DenseArray value({6}, {0.5, -0.1, 0.9, 0.2, -0.7, 0.05});
    DenseArray cover({6}, 0.0);
    SUBCASE("simple threshold") {
        const DenseArray mask = conure_prune_mask(value, cover, 0.5);
        CHECK(mask.data == std::vector<double>{1, 0, 1, 0, 1, 0});
    }
    SUBCASE("covered coordinates are never re-claimed") {
        cover.data[2] = 1.0;  // the largest entry is already owned
        const DenseArray mask = conure_prune_mask(value, cover, 0.4);
        CHECK(mask.data[2] == 0.0);
        CHECK(mask.data == std::vector<double>{1, 0, 0, 0, 1, 0});
    }
    SUBCASE("kept fraction is exact within one coordinate") {
        Rng rng(5);
        DenseArray big = testutil::random_array({400}, rng);
        DenseArray none({400}, 0.0);
        const DenseArray mask = conure_prune_mask(big, none, 0.3);
        double kept = 0;
        for (double v : mask.data) kept += v;
        CHECK(std::abs(kept / 400.0 - 0.3) <= 1.0 / 400.0);
    }
}

TEST_CASE("inference parameters zero everything unclaimed") {
    Rng rng(6);
    DenseArray value = testutil::random_array({5}, rng);
    IsolationMasks masks;
    masks.masks.resize(2);
    masks.masks[0].emplace(0, DenseArray({5}, {1, 0, 0, 1, 0}));
    masks.masks[1].emplace(0, DenseArray({5}, {0, 1, 0, 0, 0}));

    const DenseArray t0 = conure_inference_params(value, masks, 0, 0);
    for (std::size_t i = 0; i < 5; ++i) {
        const bool claimed = i == 0 || i == 3;
        CHECK(t0.data[i] == (claimed ? value.data[i] : 0.0));
    }
    const DenseArray t1 = conure_inference_params(value, masks, 0, 1);
    for (std::size_t i = 0; i < 5; ++i) {
        const bool claimed = i == 0 || i == 1 || i == 3;
        CHECK(t1.data[i] == (claimed ? value.data[i] : 0.0));
    }
    CHECK_THROWS_AS(conure_inference_params(value, masks, 0, 2), std::out_of_range);
}

TEST_CASE("isolation masks stay disjoint across a full run") {
    const DatasetBundle bundle = generate_bundle(small_gen());
    Model model(small_model(bundle));
    ConureConfig cc;
    cc.keep_fractions = {0.3, 0.2, 0.3};
    ConureTrainer trainer(model, bundle, small_train(), cc);
    for (std::size_t t = 0; t < 3; ++t) {
        trainer.train_task(t);
        CHECK_NOTHROW(trainer.isolation().check_disjoint());
    }
    CHECK(trainer.isolation().masks.size() == 3);
}

TEST_CASE("parameter isolation never forgets, bit for bit") {
    const DatasetBundle bundle = generate_bundle(small_gen(9));
    Model model(small_model(bundle));
    ConureConfig cc;
    cc.keep_fractions = {0.3, 0.2, 0.3};
    ConureTrainer trainer(model, bundle, small_train(9), cc);

    trainer.train_task(0);
    const double score_after_own = trainer.evaluate(0, Split::kTest);
    const auto params_after_own = trainer.inference_params(0);

    trainer.train_task(1);
    trainer.train_task(2);
    const double score_at_end = trainer.evaluate(0, Split::kTest);
    const auto params_at_end = trainer.inference_params(0);

    CHECK(score_after_own == score_at_end);  // backward transfer exactly zero
    REQUIRE(params_after_own.size() == params_at_end.size());
    for (std::size_t i = 0; i < params_after_own.size(); ++i)
        CHECK(params_after_own[i].data == params_at_end[i].data);
}

TEST_CASE("exhausted capacity trains only the classifier") {
    const DatasetBundle bundle = generate_bundle(small_gen(4));
    Model model(small_model(bundle));
    ConureConfig cc;
    cc.keep_fractions = {1.0, 0.5, 0.5};  // the first task claims everything
    cc.finetune_epochs = 0;
    ConureTrainer trainer(model, bundle, small_train(4), cc);
    trainer.train_task(0);

    std::vector<DenseArray> backbone_before;
    model.net().for_each_param(
        [&](ad::Param& p) { backbone_before.push_back(p.value); });

    trainer.train_task(1);
    const auto warnings = trainer.take_warnings();
    REQUIRE(!warnings.empty());
    CHECK(warnings[0].find("capacity exhausted") != std::string::npos);

    std::size_t idx = 0;
    model.net().for_each_param([&](ad::Param& p) {
        CHECK(p.value.data == backbone_before[idx].data);
        ++idx;
    });
    // The classifier still learned something.
    CHECK(trainer.evaluate(1, Split::kTest) > 0.0);
}

TEST_CASE("variant masks: base form ignores other tasks entirely") {
    MaskBankConfig mc;
    mc.num_tasks = 3;
    mc.slots = 2;
    mc.dim = 4;
    mc.mode = MaskMode::kBase;
    mc.s_max = 50.0;
    TaskMaskBank bank(mc);
    Rng rng(8);
    bank.activate_next(rng);
    bank.activate_next(rng);
    const DenseArray before = bank.mask_value(1, 0, 5.0);
    bank.embedding(0, 0).value.fill(3.0);  // train "another task"
    CHECK(bank.mask_value(1, 0, 5.0).data == before.data);
}

TEST_CASE("only-positive equals the full form when negatives are inert") {
    // Same embeddings, non-negative everywhere; the full mixer's columns for
    // the negated rows are zero, so both forms compute the same mask.
    const std::size_t dim = 4;
    MaskBankConfig rel_cfg{2, 1, dim, MaskMode::kRelation, 50.0};
    MaskBankConfig pos_cfg{2, 1, dim, MaskMode::kOnlyPositive, 50.0};
    TaskMaskBank rel(rel_cfg), pos(pos_cfg);
    Rng rng(10);
    rel.activate_next(rng);
    rel.activate_next(rng);
    Rng rng2(10);
    pos.activate_next(rng2);
    pos.activate_next(rng2);

    Rng vals(11);
    for (std::size_t task = 0; task < 2; ++task) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double v = vals.uniform(0.0, 0.04);
            rel.embedding(task, 0).value.data[i] = v;
            pos.embedding(task, 0).value.data[i] = v;
        }
    }
    // Shared cross-task weights on the positive rows; layout for task 1:
    // [own | pos(other) | neg(other)] vs [own | pos(other)].
    Rng w(12);
    for (std::size_t task = 0; task < 2; ++task) {
        auto& wr = rel.mixer_weight(task, 0).value;
        auto& wp = pos.mixer_weight(task, 0).value;
        for (std::size_t r = 0; r < 2 * dim; ++r)
            for (std::size_t c2 = 0; c2 < dim; ++c2) {
                const double v = r < dim ? wr.at(r, c2) : w.uniform(-0.5, 0.5);
                wr.at(r, c2) = v;
                wp.at(r, c2) = v;
            }
        for (std::size_t r = 2 * dim; r < 3 * dim; ++r)
            for (std::size_t c2 = 0; c2 < dim; ++c2) wr.at(r, c2) = 0.0;
    }
    for (std::size_t task = 0; task < 2; ++task)
        CHECK(rel.mask_value(task, 0, 7.0).data == pos.mask_value(task, 0, 7.0).data);
}

TEST_CASE("method names round-trip") {
    for (const char* name :
         {"teracon", "conure", "no-relation", "only-positive", "sinmo", "fineall"})
        CHECK(method_name(method_from_name(name)) == std::string(name));
    CHECK_THROWS_AS(method_from_name("nope"), std::invalid_argument);
}

TEST_SUITE_END();
