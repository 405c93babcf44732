#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/metrics.hpp"

using namespace oltqa;

TEST_CASE("serialization")
{
    auto yn = fixtures::make_instance("a", "t", "Is water wet?", "...", "Yes", Format::yes_no);
    auto p = serialize_instance(yn);
    CHECK(p.target_text == "yes");
    CHECK(p.source_text == "is water wet?\n...");

    auto mc = fixtures::make_instance("b", "t", "Pick", "ctx", "y", Format::multiple_choice);
    mc.options = {"x", "y"};
    auto q = serialize_instance(mc);
    CHECK(q.source_text.find("(a) x (b) y") != std::string::npos);
    auto q2 = serialize_instance(mc);
    CHECK(q.source_text == q2.source_text);
    CHECK(q.target_text == q2.target_text);
}

TEST_CASE("token f1")
{
    CHECK(f1_token_overlap("the cat", "the cat") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(f1_token_overlap("a cat sat", "the cat") - 0.4) < 1e-9);
    CHECK(f1_token_overlap("", "yes") == 0.0);
    CHECK(f1_token_overlap("dog", "cat") == 0.0);
}

TEST_CASE("token f1 is symmetric")
{
    std::mt19937_64 rng(3);
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string p, g;
        for (int i = 0, n = 1 + static_cast<int>(rng() % 5); i < n; ++i) p += words[rng() % 5] + " ";
        for (int i = 0, n = 1 + static_cast<int>(rng() % 5); i < n; ++i) g += words[rng() % 5] + " ";
        CHECK(f1_token_overlap(p, g) == doctest::Approx(f1_token_overlap(g, p)).epsilon(1e-12));
    }
}

TEST_CASE("rouge-l, bleu, accuracy fixtures")
{
    CHECK(std::abs(rouge_l("a b c", "a c") - 0.8) < 1e-9);
    CHECK(std::abs(rouge_l("x", "y")) < 1e-9);
    CHECK(std::abs(bleu("the quick brown fox jumps", "the quick brown fox jumps") - 1.0) < 1e-9);
    CHECK(bleu("completely different words here", "the quick brown fox") < 0.5);
    CHECK(score_prediction(MetricKind::accuracy, "b", "b") == 1.0);
    CHECK(score_prediction(MetricKind::accuracy, "a", "b") == 0.0);
    CHECK(score_prediction("rouge_l", "a b c", "a c") == doctest::Approx(0.8));
    CHECK_THROWS_AS(score_prediction("meteor", "a", "b"), InvalidArgument);
}

TEST_CASE("accuracy ignores case and whitespace")
{
    CHECK(score_prediction(MetricKind::accuracy, "  Paris ", "paris") == 1.0);
    CHECK(score_prediction(MetricKind::accuracy, "NEW   york", "new york") == 1.0);
}

TEST_CASE("accuracy with options maps to the closest option")
{
    std::vector<std::string> options{"red apple", "green pear"};
    CHECK(closest_option("a green thing", options) == 1);
    CHECK(score_prediction(MetricKind::accuracy, "green", "green pear", options) == 1.0);
    CHECK(score_prediction(MetricKind::accuracy, "apple", "green pear", options) == 0.0);
}

TEST_CASE("scores stay in [0, 1]")
{
    std::mt19937_64 rng(5);
    const std::vector<std::string> words{"x", "y", "z", "w"};
    for (int trial = 0; trial < 100; ++trial) {
        std::string p, g;
        for (int i = 0, n = static_cast<int>(rng() % 6); i < n; ++i) p += words[rng() % 4] + " ";
        for (int i = 0, n = 1 + static_cast<int>(rng() % 6); i < n; ++i) g += words[rng() % 4] + " ";
        for (auto m : {MetricKind::f1_overlap, MetricKind::accuracy, MetricKind::rouge_l, MetricKind::bleu}) {
            double s = score_prediction(m, p, g);
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
        }
    }
}

namespace {

LongTailManifest two_seen_one_unseen()
{
    std::vector<TaskSpec> reg(3);
    reg[0].task_id = "t1";
    reg[0].original_train_size = 100;
    reg[1].task_id = "t2";
    reg[1].original_train_size = 100;
    reg[2].task_id = "u";
    reg[2].original_train_size = 100;
    return curate(reg, {"u"}, 2.0, 100, 0);
}

}  // namespace

TEST_CASE("aggregate")
{
    auto m = two_seen_one_unseen();
    auto s = aggregate({{"t1", 60}, {"t2", 40}, {"u", 10}}, m, 1, 1);
    CHECK(s.head_at_m == 60);
    CHECK(s.tail_at_n == 40);
    CHECK(s.a_seen == 50);
    CHECK(s.a_unseen == 10);

    auto c = aggregate({{"t1", 50}, {"t2", 50}, {"u", 50}}, m, 2, 2);
    CHECK(c.a_seen == 50);
    CHECK(c.a_unseen == 50);
    CHECK(c.head_at_m == 50);
    CHECK(c.tail_at_n == 50);

    CHECK_THROWS_AS(aggregate({{"t1", 1}}, m, 1, 1), InvalidArgument);
    CHECK_THROWS_AS(aggregate({{"t1", 1}, {"t2", 1}, {"u", 1}}, m, 3, 1), InvalidArgument);
}

TEST_CASE("aggregate with three head and four tail tasks out of 21")
{
    std::vector<TaskSpec> reg;
    for (int i = 0; i < 21; ++i) {
        TaskSpec t;
        t.task_id = "t" + std::to_string(i);
        t.original_train_size = 1000;
        reg.push_back(t);
    }
    auto m = downsample_tasks(reg, 2.0, 1000, 0);
    std::map<std::string, double> scores;
    for (int i = 0; i < 21; ++i) {
        scores["t" + std::to_string(i)] = static_cast<double>(i);
    }
    auto s = aggregate(scores, m, 3, 4);
    CHECK(s.head_at_m == doctest::Approx((0 + 1 + 2) / 3.0));
    std::vector<std::pair<std::size_t, std::string>> by_size;
    for (const auto& [id, n] : m.sampled_train_sizes) {
        by_size.emplace_back(n, id);
    }
    std::sort(by_size.begin(), by_size.end());
    double tail = 0.0;
    for (int i = 0; i < 4; ++i) {
        tail += scores[by_size[i].second];
    }
    CHECK(s.tail_at_n == doctest::Approx(tail / 4.0));
    CHECK(std::isnan(s.a_unseen));
}

TEST_CASE("summary csv lists every task")
{
    auto m = two_seen_one_unseen();
    auto s = aggregate({{"t1", 60}, {"t2", 40}, {"u", 10}}, m, 1, 1);
    auto csv = summary_csv(s, m, {{"t1", MetricKind::f1_overlap}});
    CHECK(csv.find("t1,f1_overlap,60.000000,seen,100") != std::string::npos);
    CHECK(csv.find("u,f1_overlap,10.000000,unseen,0") != std::string::npos);
    CHECK(csv.find("summary,Tail@1,40.000000") != std::string::npos);
}
