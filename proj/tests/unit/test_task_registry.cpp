#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/task_registry.hpp"

using namespace oltqa;

namespace {

std::vector<TaskSpec> specs(const std::vector<std::size_t>& sizes)
{
    std::vector<TaskSpec> out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        TaskSpec t;
        t.task_id = "t" + std::to_string(i + 1);
        t.original_train_size = sizes[i];
        t.val_size = 10;
        t.test_size = 10;
        out.push_back(t);
    }
    return out;
}

std::vector<std::size_t> sampled(const LongTailManifest& m)
{
    std::vector<std::size_t> out;
    for (const auto& id : m.seen_task_ids) {
        out.push_back(m.sampled_train_sizes.at(id));
    }
    return out;
}

}  // namespace

TEST_CASE("zipf weights")
{
    auto w = zipf_weights(3, 0.0);
    CHECK(w == std::vector<double>{1, 1, 1});
    w = zipf_weights(3, 2.0);
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(0.25));
    CHECK(w[2] == doctest::Approx(1.0 / 9.0));
    CHECK(zipf_weights(1, 2.0) == std::vector<double>{1.0});
}

TEST_CASE("downsample: three equal tasks give 1000, 250, 111")
{
    auto m = downsample_tasks(specs({1000, 1000, 1000}), 2.0, 1000, 0);
    CHECK(sampled(m) == std::vector<std::size_t>{1000, 250, 111});
    for (const auto& id : m.seen_task_ids) {
        CHECK(m.train_indices.at(id).size() == m.sampled_train_sizes.at(id));
    }
}

TEST_CASE("downsample: head budget caps rank one")
{
    auto m = downsample_tasks(specs({100, 5000}), 2.0, 100, 0);
    CHECK(sampled(m) == std::vector<std::size_t>{100, 25});
}

TEST_CASE("downsample: alpha zero with a large budget keeps originals")
{
    // rank 1 is the largest task, so uniform weights never exceed a later task's size
    auto m = downsample_tasks(specs({70, 40, 9}), 0.0, 1000, 3);
    CHECK(m.sampled_train_sizes.at("t1") == 70);
    CHECK(m.sampled_train_sizes.at("t2") == 40);
    CHECK(m.sampled_train_sizes.at("t3") == 9);
}

TEST_CASE("downsample: ratio of the first two ranks is four when uncapped")
{
    for (std::size_t budget : {400, 1000, 2000}) {
        auto m = downsample_tasks(specs({5000, 5000, 5000}), 2.0, budget, 1);
        auto s = sampled(m);
        CHECK(static_cast<double>(s[0]) / static_cast<double>(s[1]) == doctest::Approx(4.0));
    }
}

TEST_CASE("downsample: reruns are identical and sizes add up")
{
    auto reg = specs({300, 200, 150, 90, 60});
    auto a = downsample_tasks(reg, 2.0, 250, 11);
    auto b = downsample_tasks(reg, 2.0, 250, 11);
    CHECK(a.dump() == b.dump());
    CHECK(a.fingerprint() == b.fingerprint());
    std::size_t total = 0;
    for (const auto& [id, n] : a.sampled_train_sizes) {
        total += n;
    }
    CHECK(total == a.training_size());
    auto c = downsample_tasks(reg, 2.0, 250, 12);
    CHECK(c.train_indices != a.train_indices);
}

TEST_CASE("downsample: validation indices are disjoint from train indices when drawn from train")
{
    auto reg = specs({80, 40});
    reg[0].val_size = 0;
    reg[1].val_size = 0;
    auto m = downsample_tasks(reg, 1.0, 40, 5);
    for (const auto& id : m.seen_task_ids) {
        REQUIRE(m.val_from_train.at(id));
        std::set<std::size_t> train(m.train_indices.at(id).begin(), m.train_indices.at(id).end());
        for (auto v : m.val_indices.at(id)) {
            CHECK(train.count(v) == 0);
        }
        CHECK(!m.val_indices.at(id).empty());
    }
}

TEST_CASE("downsample rejects bad arguments")
{
    CHECK_THROWS_AS(downsample_tasks(specs({10}), -1.0, 10, 0), InvalidArgument);
    CHECK_THROWS_AS(downsample_tasks(specs({10}), 2.0, 0, 0), InvalidArgument);
}

TEST_CASE("split seen/unseen")
{
    std::vector<std::size_t> sizes(43, 50);
    auto reg = specs(sizes);
    auto s = split_seen_unseen(reg, 22, 0);
    CHECK(s.seen.size() == 21);
    CHECK(s.unseen.size() == 22);

    auto two = specs({5, 5});
    auto all = split_seen_unseen(two, 0, 0);
    CHECK(all.seen.size() == 2);
    CHECK(all.unseen.empty());

    for (std::uint64_t seed : {1, 2, 3, 4}) {
        auto p = split_seen_unseen(two, 1, seed);
        REQUIRE(p.seen.size() == 1);
        REQUIRE(p.unseen.size() == 1);
        CHECK(p.seen[0] != p.unseen[0]);
    }
    CHECK_THROWS_AS(split_seen_unseen(two, 3, 0), InvalidArgument);
}

TEST_CASE("curate gives unseen tasks size zero")
{
    auto reg = specs({100, 100, 100});
    auto m = curate(reg, {"t2"}, 2.0, 100, 0);
    CHECK(m.seen_task_ids == std::vector<std::string>{"t1", "t3"});
    CHECK(m.unseen_task_ids == std::vector<std::string>{"t2"});
    CHECK(m.sampled_train_sizes.at("t2") == 0);
    CHECK(m.is_seen("t1"));
    CHECK_FALSE(m.is_seen("t2"));
    CHECK_THROWS_AS(curate(reg, {"nope"}, 2.0, 100, 0), InvalidArgument);
}

TEST_CASE("manifest json round trip")
{
    auto m = curate(specs({60, 30, 20}), {"t3"}, 2.0, 40, 9);
    auto back = LongTailManifest::from_json(m.to_json());
    CHECK(back.dump() == m.dump());
}

TEST_CASE("instances validate and round trip through jsonl")
{
    auto inst = fixtures::make_instance("q1", "mc", "pick one", "ctx", "y", Format::multiple_choice);
    inst.options = {"x", "y"};
    CHECK_NOTHROW(inst.validate());
    auto bad = inst;
    bad.answer = "z";
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    auto empty = inst;
    empty.answer = "";
    CHECK_THROWS_AS(empty.validate(), InvalidArgument);

    auto dir = fixtures::scratch_dir("jsonl");
    auto path = (dir / "d.jsonl").string();
    write_jsonl(path, {inst});
    auto ds = read_jsonl(path);
    REQUIRE(ds.size() == 1);
    const auto& got = ds.split("mc", Split::train).at(0);
    CHECK(got.options == inst.options);
    CHECK(got.answer == "y");
}

TEST_CASE("read_jsonl names the failing line")
{
    auto dir = fixtures::scratch_dir("jsonl_bad");
    auto path = (dir / "bad.jsonl").string();
    {
        std::ofstream out(path);
        out << R"({"task_id":"a","format":"abstractive","context":"c","question":"q","answer":"x"})" << "\n";
        out << "{not json\n";
    }
    try {
        read_jsonl(path);
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("bad.jsonl:2:") != std::string::npos);
    }
}
