#include <doctest.h>

#include <cmath>
#include <limits>

#include "hacl/objective.hpp"
#include "hacl/rng.hpp"
#include "oracles.hpp"

using namespace hacl;
using diff::Graph;
using diff::Tensor;
using diff::Var;
using objective::ContrastiveBatch;
using objective::Mode;
using objective::NegativeQueue;
using objective::SimilarityConfig;

namespace {

ContrastiveBatch make_batch(Graph& g, const oracle::Vecs& images, const oracle::Vecs& texts,
                            const oracle::Vecs& hall = {}, bool requires_grad = false) {
    ContrastiveBatch b;
    for (const auto& v : images)
        b.image_reps.push_back(g.leaf(Tensor({static_cast<int>(v.size())}, v), requires_grad));
    for (const auto& v : texts)
        b.text_reps.push_back(g.leaf(Tensor({static_cast<int>(v.size())}, v), requires_grad));
    for (const auto& v : hall)
        b.hallucinated_reps.push_back(
            g.leaf(Tensor({static_cast<int>(v.size())}, v), requires_grad));
    return b;
}

oracle::Vecs random_vecs(Rng& rng, int n, int d) {
    oracle::Vecs out;
    for (int i = 0; i < n; ++i) out.push_back(oracle::random_vec(rng, d));
    return out;
}

}  // namespace

TEST_CASE("similarity matches hand-computed values") {
    SimilarityConfig tau1{1.0};
    const std::vector<double> a = {1.0, 0.0, 0.0};
    CHECK(objective::similarity(a, a, tau1) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    const std::vector<double> b = {0.0, 2.0, 0.0};
    CHECK(objective::similarity(a, b, tau1) == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<double> p = {3.0, 4.0, 0.0};
    const std::vector<double> q = {4.0, 3.0, 0.0};
    SimilarityConfig tau_half{0.5};
    CHECK(objective::similarity(p, q, tau_half) ==
          doctest::Approx(std::exp((24.0 / 25.0) / 0.5)).epsilon(1e-12));
    CHECK(objective::similarity(p, q, tau_half) ==
          doctest::Approx(objective::similarity(q, p, tau_half)).epsilon(1e-15));

    const std::vector<double> zero = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(objective::similarity(a, zero, tau1), std::invalid_argument);
    CHECK_THROWS_AS(objective::similarity(a, b, SimilarityConfig{0.0}), std::invalid_argument);
}

TEST_CASE("single-pair batch with an empty queue has exactly zero loss") {
    Rng rng(2);
    Graph g;
    const auto batch = make_batch(g, random_vecs(rng, 1, 8), random_vecs(rng, 1, 8));
    NegativeQueue queue(16);
    SimilarityConfig cfg;
    CHECK(g.value(objective::loss_t2i(g, batch, queue, cfg)).data[0] == 0.0);
    CHECK(g.value(objective::loss_i2t(g, batch, queue, cfg)).data[0] == 0.0);
}

TEST_CASE("uniform similarities give ln B") {
    Graph g;
    const std::vector<double> u = {0.3, -0.7, 0.1, 2.0};
    const auto batch = make_batch(g, {u, u, u, u}, {u, u, u, u});
    NegativeQueue queue(0);
    SimilarityConfig cfg;
    CHECK(g.value(objective::loss_t2i(g, batch, queue, cfg)).data[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("symmetric batches make both loss directions identical") {
    Rng rng(3);
    Graph g;
    const auto reps = random_vecs(rng, 4, 6);
    const auto batch = make_batch(g, reps, reps);
    NegativeQueue queue(0);
    SimilarityConfig cfg;
    CHECK(g.value(objective::loss_t2i(g, batch, queue, cfg)).data[0] ==
          g.value(objective::loss_i2t(g, batch, queue, cfg)).data[0]);
}

TEST_CASE("losses match the direct-summation oracle with a populated queue") {
    Rng rng(5);
    SimilarityConfig cfg{0.07};
    for (int rep = 0; rep < 20; ++rep) {
        const int b = rng.next_int(1, 8);
        const int d = rng.next_int(2, 16);
        const int qn = rng.next_int(0, 16);
        const auto images = random_vecs(rng, b, d);
        const auto texts = random_vecs(rng, b, d);
        const auto hall = random_vecs(rng, b, d);
        NegativeQueue queue(64);
        oracle::Vecs image_q, text_q;
        for (int i = 0; i < qn; ++i) {
            image_q.push_back(oracle::random_vec(rng, d));
            text_q.push_back(oracle::random_vec(rng, d));
            queue.push_image(image_q.back());
            queue.push_text(text_q.back());
        }
        Graph g;
        const auto batch = make_batch(g, images, texts, hall);
        CHECK(g.value(objective::loss_t2i(g, batch, queue, cfg)).data[0] ==
              doctest::Approx(oracle::infonce_direct(texts, images, image_q, cfg.temperature))
                  .epsilon(1e-10));
        CHECK(g.value(objective::loss_i2t(g, batch, queue, cfg)).data[0] ==
              doctest::Approx(oracle::infonce_direct(images, texts, text_q, cfg.temperature))
                  .epsilon(1e-10));
        CHECK(g.value(objective::loss_i2t_hacl(g, batch, queue, cfg)).data[0] ==
              doctest::Approx(
                  oracle::infonce_direct(images, texts, text_q, cfg.temperature, &hall))
                  .epsilon(1e-10));
    }
}

TEST_CASE("hacl loss reduces exactly to i2t when hard similarities are zeroed") {
    Rng rng(7);
    Graph g;
    const int b = 4, d = 8;
    const auto images = random_vecs(rng, b, d);
    const auto texts = random_vecs(rng, b, d);
    const auto batch = make_batch(g, images, texts);
    NegativeQueue queue(8);
    queue.push_text(oracle::random_vec(rng, d));
    SimilarityConfig cfg;

    // a -inf extra logit is an exp term of exactly zero
    Var zeroed = g.constant(Tensor::full({b, 1}, -std::numeric_limits<double>::infinity()));
    Var masked = objective::detail::infonce(g, batch.image_reps, batch.text_reps,
                                            queue.text_view(), cfg.temperature, zeroed);
    Var plain = objective::loss_i2t(g, batch, queue, cfg);
    CHECK(g.value(masked).data[0] == g.value(plain).data[0]);
}

TEST_CASE("hacl loss is ln 2 when the hard negative ties the positive") {
    Graph g;
    const std::vector<double> v = {0.6, -0.2, 1.1};
    const std::vector<double> t = {0.4, 0.9, -0.3};
    const auto batch = make_batch(g, {v}, {t}, {t});  // hallucination equals the truth
    NegativeQueue queue(0);
    SimilarityConfig cfg;
    CHECK(g.value(objective::loss_i2t_hacl(g, batch, queue, cfg)).data[0] == std::log(2.0));
}

TEST_CASE("hacl loss strictly exceeds i2t and grows with hard-negative similarity") {
    Rng rng(11);
    SimilarityConfig cfg;
    NegativeQueue queue(0);
    const int b = 3, d = 8;
    const auto images = random_vecs(rng, b, d);
    const auto texts = random_vecs(rng, b, d);

    // hall_close[i] has a higher cosine to image i than hall_far[i]
    oracle::Vecs hall_far, hall_close;
    for (int i = 0; i < b; ++i) {
        auto far = oracle::random_vec(rng, d);
        hall_far.push_back(far);
        std::vector<double> close(d);
        for (int j = 0; j < d; ++j) close[j] = far[j] + 4.0 * images[i][j];
        hall_close.push_back(close);
    }
    for (int i = 0; i < b; ++i)
        REQUIRE(oracle::cosine(images[i], hall_close[i]) > oracle::cosine(images[i], hall_far[i]));

    Graph g;
    const auto batch_far = make_batch(g, images, texts, hall_far);
    const auto batch_close = make_batch(g, images, texts, hall_close);
    const double plain = g.value(objective::loss_i2t(g, batch_far, queue, cfg)).data[0];
    const double far = g.value(objective::loss_i2t_hacl(g, batch_far, queue, cfg)).data[0];
    const double close = g.value(objective::loss_i2t_hacl(g, batch_close, queue, cfg)).data[0];
    CHECK(far > plain);
    CHECK(close > far);
}

TEST_CASE("contrastive losses are nonnegative and permutation invariant") {
    Rng rng(13);
    SimilarityConfig cfg;
    NegativeQueue queue(4);
    queue.push_text(oracle::random_vec(rng, 6));
    queue.push_image(oracle::random_vec(rng, 6));
    const int b = 5;
    const auto images = random_vecs(rng, b, 6);
    const auto texts = random_vecs(rng, b, 6);
    const auto hall = random_vecs(rng, b, 6);

    Graph g;
    const auto batch = make_batch(g, images, texts, hall);
    const double t2i = g.value(objective::loss_t2i(g, batch, queue, cfg)).data[0];
    const double i2t = g.value(objective::loss_i2t(g, batch, queue, cfg)).data[0];
    const double hacl = g.value(objective::loss_i2t_hacl(g, batch, queue, cfg)).data[0];
    CHECK(t2i >= 0.0);
    CHECK(i2t >= 0.0);
    CHECK(hacl >= 0.0);

    const std::vector<int> perm = {3, 0, 4, 1, 2};
    oracle::Vecs pi, pt, ph;
    for (int i : perm) {
        pi.push_back(images[i]);
        pt.push_back(texts[i]);
        ph.push_back(hall[i]);
    }
    Graph g2;
    const auto permuted = make_batch(g2, pi, pt, ph);
    CHECK(g2.value(objective::loss_t2i(g2, permuted, queue, cfg)).data[0] ==
          doctest::Approx(t2i).epsilon(1e-12));
    CHECK(g2.value(objective::loss_i2t_hacl(g2, permuted, queue, cfg)).data[0] ==
          doctest::Approx(hacl).epsilon(1e-12));
}

TEST_CASE("loss_gen matches its trivial and hand-computed cases") {
    Graph g;
    const int v = 6;
    SUBCASE("probability one on each true token gives zero") {
        Tensor z({2, v});
        const double neg = -std::numeric_limits<double>::infinity();
        for (double& x : z.data) x = neg;
        z.at(0, 3) = 0.0;
        z.at(1, 1) = 0.0;
        const std::vector<int> targets = {3, 1};
        CHECK(g.value(objective::loss_gen(g, g.leaf(z), targets)).data[0] == 0.0);
    }
    SUBCASE("uniform logits give ln V") {
        Tensor z({3, v});
        const std::vector<int> targets = {0, 2, 5};
        CHECK(g.value(objective::loss_gen(g, g.leaf(z), targets)).data[0] ==
              doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
    }
    SUBCASE("fixed two-token case matches the written-out cross entropy") {
        Tensor z({2, 3}, {1.0, 2.0, 0.5, -0.5, 0.0, 1.5});
        const std::vector<int> targets = {1, 0};
        const double row0 = -std::log(std::exp(2.0) /
                                      (std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
        const double row1 = -std::log(std::exp(-0.5) /
                                      (std::exp(-0.5) + std::exp(0.0) + std::exp(1.5)));
        CHECK(g.value(objective::loss_gen(g, g.leaf(z), targets)).data[0] ==
              doctest::Approx((row0 + row1) / 2.0).epsilon(1e-12));
    }
    SUBCASE("length mismatch is rejected") {
        Tensor z({2, v});
        const std::vector<int> targets = {0};
        CHECK_THROWS_AS(objective::loss_gen(g, g.leaf(z), targets), std::invalid_argument);
    }
}

TEST_CASE("stage1 objective composes per mode") {
    CHECK(objective::combine_stage1(1.0, 0.4, 0.6, Mode::cl) ==
          doctest::Approx(1.5).epsilon(1e-15));
    CHECK(objective::combine_stage1(2.5, 9.0, 9.0, Mode::no_cl) == 2.5);

    Rng rng(17);
    Graph g;
    NegativeQueue queue(0);
    SimilarityConfig cfg;
    const auto images = random_vecs(rng, 3, 6);
    const auto texts = random_vecs(rng, 3, 6);
    const auto hall = random_vecs(rng, 3, 6);
    const auto batch = make_batch(g, images, texts, hall);
    Var gen = g.leaf(Tensor::scalar(0.75));

    const auto no_cl = objective::stage1_objective(g, gen, batch, queue, cfg, Mode::no_cl);
    CHECK(no_cl.total.id == gen.id);  // exact reduction: same node

    const auto cl = objective::stage1_objective(g, gen, batch, queue, cfg, Mode::cl);
    CHECK(g.value(cl.total).data[0] ==
          doctest::Approx(0.75 + (g.value(cl.i2t).data[0] + g.value(cl.t2i).data[0]) / 2.0)
              .epsilon(1e-15));

    const auto hacl = objective::stage1_objective(g, gen, batch, queue, cfg, Mode::hacl);
    CHECK(g.value(hacl.total).data[0] > g.value(cl.total).data[0]);  // extra denominator term

    ContrastiveBatch no_hall = batch;
    no_hall.hallucinated_reps.clear();
    CHECK_THROWS_AS(objective::stage1_objective(g, gen, no_hall, queue, cfg, Mode::hacl),
                    std::invalid_argument);
}

TEST_CASE("queue evicts FIFO and capacity zero disables it") {
    NegativeQueue q(3);
    for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) q.push_text({v});
    REQUIRE(q.text_size() == 3);
    CHECK(q.text_view()[0][0] == 3.0);
    CHECK(q.text_view()[1][0] == 4.0);
    CHECK(q.text_view()[2][0] == 5.0);

    NegativeQueue disabled(0);
    disabled.push_text({1.0});
    disabled.push_image({1.0});
    CHECK(disabled.text_size() == 0);
    CHECK(disabled.image_size() == 0);

    // empty queue: losses equal their queue-free values exactly
    Rng rng(19);
    Graph g;
    const auto batch = make_batch(g, random_vecs(rng, 3, 4), random_vecs(rng, 3, 4));
    SimilarityConfig cfg;
    NegativeQueue empty(8);
    CHECK(g.value(objective::loss_i2t(g, batch, empty, cfg)).data[0] ==
          g.value(objective::loss_i2t(g, batch, disabled, cfg)).data[0]);
}

TEST_CASE("no gradient reaches parameters that only feed the queue") {
    Rng rng(23);
    Graph g;
    Var param = g.leaf(oracle::random_tensor(rng, {4}), true);
    Var queued_rep = g.exp(param);  // contributes to the queue only

    NegativeQueue queue(4);
    queue.push_text(g.value(queued_rep).data);  // detached values

    const auto batch = make_batch(g, random_vecs(rng, 2, 4), random_vecs(rng, 2, 4),
                                  random_vecs(rng, 2, 4), /*requires_grad=*/true);
    SimilarityConfig cfg;
    Var loss = objective::loss_i2t_hacl(g, batch, queue, cfg);
    g.backward(loss);
    for (double gv : g.grad(param).data) CHECK(gv == 0.0);
    // while batch reps do receive gradient
    double batch_grad = 0.0;
    for (Var v : batch.image_reps)
        for (double gv : g.grad(v).data) batch_grad += std::abs(gv);
    CHECK(batch_grad > 0.0);
}

TEST_CASE("temperature never changes the similarity ranking") {
    Rng rng(29);
    for (int rep = 0; rep < 10; ++rep) {
        const auto v = oracle::random_vec(rng, 8);
        const auto cands = random_vecs(rng, 6, 8);
        std::vector<int> winners;
        for (double tau : {0.01, 0.07, 0.5, 1.0, 5.0}) {
            SimilarityConfig cfg{tau};
            int best = 0;
            for (int j = 1; j < 6; ++j)
                if (objective::similarity(v, cands[j], cfg) >
                    objective::similarity(v, cands[best], cfg))
                    best = j;
            winners.push_back(best);
        }
        for (int w : winners) CHECK(w == winners[0]);
    }
}

TEST_CASE("gradients of every contrastive composite pass grad_check") {
    Rng rng(31);
    SimilarityConfig cfg;
    const int b = 3, d = 5;

    auto tensors_of = [&](int n) {
        std::vector<Tensor> out;
        for (int i = 0; i < n; ++i) out.push_back(oracle::random_tensor(rng, {d}));
        return out;
    };
    auto split_batch = [&](Graph& g, std::span<const Var> in, bool hall) {
        ContrastiveBatch batch;
        for (int i = 0; i < b; ++i) batch.image_reps.push_back(in[i]);
        for (int i = 0; i < b; ++i) batch.text_reps.push_back(in[b + i]);
        if (hall)
            for (int i = 0; i < b; ++i) batch.hallucinated_reps.push_back(in[2 * b + i]);
        return batch;
    };
    NegativeQueue queue(4);
    queue.push_text(oracle::random_vec(rng, d));
    queue.push_image(oracle::random_vec(rng, d));

    SUBCASE("text-to-image") {
        const auto rep = hacl::diff::grad_check(
            [&](Graph& g, std::span<const Var> in) {
                return objective::loss_t2i(g, split_batch(g, in, false), queue, cfg);
            },
            tensors_of(2 * b));
        CHECK_MESSAGE(rep.passed, "max rel error ", rep.max_rel_error);
    }
    SUBCASE("image-to-text") {
        const auto rep = hacl::diff::grad_check(
            [&](Graph& g, std::span<const Var> in) {
                return objective::loss_i2t(g, split_batch(g, in, false), queue, cfg);
            },
            tensors_of(2 * b));
        CHECK_MESSAGE(rep.passed, "max rel error ", rep.max_rel_error);
    }
    SUBCASE("image-to-text with hard negatives") {
        const auto rep = hacl::diff::grad_check(
            [&](Graph& g, std::span<const Var> in) {
                return objective::loss_i2t_hacl(g, split_batch(g, in, true), queue, cfg);
            },
            tensors_of(3 * b));
        CHECK_MESSAGE(rep.passed, "max rel error ", rep.max_rel_error);
    }
    SUBCASE("full stage-1 objective") {
        const int len = 2, v = 4;
        std::vector<Tensor> inputs = tensors_of(3 * b);
        inputs.push_back(oracle::random_tensor(rng, {len, v}));
        const std::vector<int> targets = {1, 3};
        const auto rep = hacl::diff::grad_check(
            [&](Graph& g, std::span<const Var> in) {
                ContrastiveBatch batch = split_batch(g, in, true);
                Var gen = objective::loss_gen(g, in[3 * b], targets);
                return objective::stage1_objective(g, gen, batch, queue, cfg, Mode::hacl).total;
            },
            inputs);
        CHECK_MESSAGE(rep.passed, "max rel error ", rep.max_rel_error);
    }
}
