#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "fixtures.hpp"
#include "oltqa/errors.hpp"
#include "oltqa/lm_oracle.hpp"

// after Eigen: <resolv.h> defines a _res macro that clashes with Eigen parameter names
#include <httplib.h>

using namespace oltqa;
using fixtures::make_instance;

TEST_CASE("softmax examples")
{
    auto p = softmax({0.0, -std::log(3.0)});
    CHECK(p[0] == doctest::Approx(0.75));
    CHECK(p[1] == doctest::Approx(0.25));
    CHECK(softmax({4.2}) == std::vector<double>{1.0});
    auto u = softmax({2.0, 2.0, 2.0, 2.0});
    for (double v : u) CHECK(v == doctest::Approx(0.25));
    CHECK_THROWS_AS(softmax({}), InvalidArgument);
}

TEST_CASE("softmax is normalized and shift invariant")
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(1 + rng() % 9);
        for (auto& v : s) v = n(rng);
        auto p = softmax(s);
        double total = 0.0;
        for (double v : p) total += v;
        CHECK(std::abs(total - 1.0) < 1e-9);
        double shift = n(rng) * 100.0;
        auto shifted = s;
        for (auto& v : shifted) v += shift;
        auto q = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-9);
    }
}

TEST_CASE("mock oracle copy rule")
{
    MockOracle g;
    auto ex = make_instance("e1", "t", "what color is the sky", "sky facts", "blue");
    CHECK(g.generate(ex, "ctx", "what color is grass") == "blue");
    auto noise = g.generate(ex, "ctx", "who wrote hamlet");
    const auto& words = MockOracle::noise_words();
    CHECK(std::find(words.begin(), words.end(), noise) != words.end());
    CHECK(g.generate(ex, "ctx", "who wrote hamlet") == noise);
}

TEST_CASE("mock oracle uses the lexicon for synonyms")
{
    MockOracleConfig cfg;
    cfg.lexicon = {{"hue", "color_noun"}, {"shade", "color_noun"}};
    MockOracle g(cfg);
    auto ex = make_instance("e1", "t", "which hue", "c", "red");
    CHECK(g.generate(ex, "c", "which shade") == "red");
    MockOracle plain;
    CHECK(plain.generate(ex, "c", "which shade") != "red");
}

TEST_CASE("mock oracle scores")
{
    MockOracle g;
    auto ex = make_instance("e1", "t", "color of sky", "sky", "blue");
    auto q = make_instance("q1", "t", "color of sky", "sky", "blue");
    CHECK(g.score(ex, q.context, q.question, "blue") == 0.0);
    CHECK(g.score(ex, q.context, q.question, "green") < 0.0);

    auto close = make_instance("e2", "t", "color of sea", "sea water", "blue");
    auto far = make_instance("e3", "t", "color of old cars", "garage", "blue");
    auto query = make_instance("q2", "t", "color of sea", "sea", "blue");
    CHECK(g.score(close, query.context, query.question, "blue") > g.score(far, query.context, query.question, "blue"));

    std::mt19937_64 rng(2);
    const std::vector<std::string> words{"red", "sky", "of", "color", "blue", "zebra"};
    for (int trial = 0; trial < 100; ++trial) {
        auto a = make_instance("x" + std::to_string(trial), "t", words[rng() % 6] + " " + words[rng() % 6],
                               words[rng() % 6], words[rng() % 6]);
        CHECK(g.score(a, words[rng() % 6], words[rng() % 6], words[rng() % 6]) <= 0.0);
    }
}

TEST_CASE("mock oracle is pure across instances with the same seed")
{
    MockOracleConfig cfg;
    cfg.seed = 77;
    MockOracle a(cfg), b(cfg);
    auto ex = make_instance("e", "t", "alpha beta", "c", "gamma");
    for (const char* q : {"alpha", "delta", "epsilon zeta"}) {
        CHECK(a.generate(ex, "c", q) == b.generate(ex, "c", q));
        CHECK(a.score(ex, "c", q, "gamma") == b.score(ex, "c", q, "gamma"));
    }
}

TEST_CASE("cached oracle calls the backend once per pair")
{
    MockOracle g;
    OracleCache cache;
    CachedOracle cached(g, cache);
    auto ex = make_instance("e", "t", "alpha beta", "c", "gamma");
    auto q = make_instance("q", "t", "alpha", "c", "gamma");
    auto h1 = cached.hint(ex, q);
    auto h2 = cached.hint(ex, q);
    CHECK(h1.text == h2.text);
    CHECK(h1.source_example_id == "e");
    CHECK(g.generate_calls() == 1);
    cached.score(ex, q);
    cached.score(ex, q);
    CHECK(g.score_calls() == 1);

    auto empty = make_instance("q2", "t", " ", "c", "x");
    CHECK_THROWS_AS(cached.hint(ex, empty), InvalidArgument);
}

TEST_CASE("cache misses are reported when calls are disabled")
{
    MockOracle g;
    OracleCache cache;
    CachedOracle cached(g, cache);
    cached.set_allow_calls(false);
    auto ex = make_instance("e", "t", "alpha", "c", "gamma");
    auto q = make_instance("q", "t", "alpha", "c", "gamma");
    cached.hint(ex, q);
    CHECK(g.generate_calls() == 0);
    CHECK_THROWS_AS(cached.require_complete(), PreconditionError);
}

TEST_CASE("cache file persists and never overwrites")
{
    auto dir = fixtures::scratch_dir("cache");
    auto path = (dir / "cache.jsonl").string();
    auto ex = make_instance("e", "t", "alpha beta", "c", "gamma");
    auto q = make_instance("q", "t", "alpha", "c", "gamma");
    std::string hint;
    {
        MockOracle g;
        OracleCache cache(path);
        CachedOracle cached(g, cache);
        hint = cached.hint(ex, q).text;
        cached.score(ex, q);
        auto key = OracleCache::key_for(g.name(), ex, q);
        CHECK_FALSE(cache.insert_if_absent({key, "e", "q", std::string("other"), std::nullopt}));
    }
    MockOracle g2;
    OracleCache reloaded(path);
    CachedOracle cached2(g2, reloaded);
    CHECK(cached2.hint(ex, q).text == hint);
    cached2.score(ex, q);
    CHECK(g2.generate_calls() == 0);
    CHECK(g2.score_calls() == 0);
}

TEST_CASE("hints are capped in length")
{
    MockOracle g;
    OracleCache cache;
    CachedOracle cached(g, cache, 2);
    auto ex = make_instance("e", "t", "alpha", "c", "one two three four");
    auto q = make_instance("q", "t", "alpha", "c", "x");
    CHECK(cached.hint(ex, q).text == "one two");
}

TEST_CASE("lm distribution")
{
    MockOracle g;
    OracleCache cache;
    CachedOracle cached(g, cache);
    auto q = make_instance("q", "t", "alpha", "c", "gamma");
    std::vector<QAInstance> same{make_instance("a", "t", "alpha", "c", "gamma"),
                                 make_instance("b", "t", "alpha", "c", "gamma")};
    auto d = lm_distribution(same, q, cached);
    CHECK(d.model_tag == ModelTag::lm);
    CHECK(d.probabilities[0] == doctest::Approx(0.5));
    auto single = lm_distribution({same[0]}, q, cached);
    CHECK(single.probabilities == std::vector<double>{1.0});
    CHECK_THROWS_AS(lm_distribution({}, q, cached), InvalidArgument);
}

TEST_CASE("remote oracle against a local server")
{
    httplib::Server server;
    std::string seen_prompt;
    server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        seen_prompt = body.at("prompt").get<std::string>();
        CHECK(body.at("model") == "toy");
        res.set_content(R"({"text": "paris"})", "application/json");
    });
    server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        double lp = body.at("target") == "paris" ? -0.25 : 0.5;
        res.set_content(nlohmann::json{{"logprob", lp}}.dump(), "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteOracle remote({"http://127.0.0.1:" + std::to_string(port), "toy", 5, 8});
    auto ex = make_instance("e", "t", "capital of france", "europe", "paris");
    CHECK(remote.generate(ex, "ctx", "capital of france ?") == "paris");
    CHECK(seen_prompt == RemoteOracle::render_prompt(ex, "ctx", "capital of france ?"));
    CHECK(remote.score(ex, "ctx", "q", "paris") == doctest::Approx(-0.25));
    CHECK_THROWS_AS(remote.score(ex, "ctx", "q", "rome"), OracleError);

    server.stop();
    th.join();

    RemoteOracle dead({"http://127.0.0.1:" + std::to_string(port), "toy", 1, 8});
    try {
        dead.generate(ex, "ctx", "q");
        FAIL("expected an oracle error");
    } catch (const OracleError& e) {
        CHECK(e.retryable());
    }
    CHECK_THROWS_AS(RemoteOracle({"", "toy", 1, 8}), InvalidArgument);
}
