#include <catch_amalgamated.hpp>

#include <fstream>
#include <memory>
#include <string>

#include "helpers.hpp"
#include "ladder/backend.hpp"
#include "ladder/cache.hpp"
#include "ladder/io.hpp"

using namespace ladder;
using ladder::testing::CountingBackend;
using ladder::testing::ScriptedBackend;
using ladder::testing::TempDir;

namespace {

GenerationRequest gen_request(const std::string& id, uint64_t seed) {
    GenerationRequest req;
    req.template_name = "math";
    req.system = "sys";
    req.user = "solve " + id;
    req.problem_id = id;
    req.n = 2;
    req.seed = seed;
    return req;
}

}  // namespace

TEST_CASE("record mode calls the inner backend once per distinct request") {
    TempDir dir("cache");
    auto scripted = std::make_shared<ScriptedBackend>();
    auto counter = std::make_shared<CountingBackend>(scripted);
    CachedBackend cache(counter, dir / "c.jsonl", CacheMode::record);

    auto first = cache.generate(gen_request("p1", 1));
    CHECK(counter->generate_calls == 1);
    CHECK(cache.generate(gen_request("p1", 1)) == first);
    CHECK(counter->generate_calls == 1);  // served from cache

    cache.generate(gen_request("p1", 2));  // different seed, different key
    CHECK(counter->generate_calls == 2);
    CHECK(cache.size() == 2);
}

TEST_CASE("problem_id is routing metadata, not cache identity") {
    TempDir dir("cache");
    auto scripted = std::make_shared<ScriptedBackend>();
    scripted->on_generate = [](const GenerationRequest& req) {
        return std::vector<std::string>(static_cast<size_t>(req.n), "\\boxed{" + req.user + "}");
    };
    auto counter = std::make_shared<CountingBackend>(scripted);
    CachedBackend cache(counter, dir / "c.jsonl", CacheMode::record);

    auto req_a = gen_request("p1", 1);
    auto req_b = gen_request("p1", 1);
    req_b.problem_id = "renamed";
    CHECK(cache.generate(req_a) == cache.generate(req_b));
    CHECK(counter->generate_calls == 1);
}

TEST_CASE("replay mode serves recorded completions and hard-fails on misses") {
    TempDir dir("cache");
    auto path = dir / "c.jsonl";
    std::vector<std::string> recorded;
    {
        CachedBackend cache(std::make_shared<ScriptedBackend>(), path, CacheMode::record);
        recorded = cache.generate(gen_request("p1", 1));

        ReflectionRequest refl;
        refl.question = "q";
        refl.proposals = {"7", "9"};
        refl.problem_id = "p1";
        refl.seed = 4;
        cache.reflect(refl);
    }

    CachedBackend replay(nullptr, path, CacheMode::replay);
    CHECK(replay.generate(gen_request("p1", 1)) == recorded);

    ReflectionRequest refl;
    refl.question = "q";
    refl.proposals = {"7", "9"};
    refl.problem_id = "p1";
    refl.seed = 4;
    CHECK(replay.reflect(refl) == "\\boxed{7}");

    CHECK_THROWS_AS(replay.generate(gen_request("p2", 1)), CacheError);
    refl.seed = 5;
    CHECK_THROWS_AS(replay.reflect(refl), CacheError);
    CHECK(replay.version() == "replay-v0");
}

TEST_CASE("replay without a cache file is an error, record creates one") {
    TempDir dir("cache");
    CHECK_THROWS_AS(CachedBackend(nullptr, dir / "missing.jsonl", CacheMode::replay), CacheError);
    CHECK_THROWS_AS(CachedBackend(nullptr, dir / "x.jsonl", CacheMode::record), ValidationError);
    CachedBackend cache(std::make_shared<ScriptedBackend>(), dir / "new.jsonl", CacheMode::record);
    cache.generate(gen_request("p", 0));
    CHECK(std::filesystem::exists(dir / "new.jsonl"));
}

TEST_CASE("corrupted cache lines are rejected") {
    TempDir dir("cache");
    auto path = dir / "c.jsonl";
    {
        CachedBackend cache(std::make_shared<ScriptedBackend>(), path, CacheMode::record);
        cache.generate(gen_request("p1", 1));
    }

    auto pristine = read_file(path);
    auto reload = [&](const std::string& content) {
        atomic_write_file(path, content);
        return std::make_unique<CachedBackend>(nullptr, path, CacheMode::replay);
    };

    // Flipping completion bytes breaks the checksum.
    auto tampered = pristine;
    auto at = tampered.find("p1");
    REQUIRE(at != std::string::npos);
    tampered[at] = 'q';
    CHECK_THROWS_AS(reload(tampered), CacheError);

    CHECK_THROWS_AS(reload("{oops\n"), CacheError);
    CHECK_THROWS_AS(reload("{\"key\": \"ab\", \"digest\": \"cd\"}\n"), CacheError);

    // The pristine file still loads.
    CHECK(reload(pristine)->size() == 1);
}

TEST_CASE("snapshot nests the inner backend state") {
    TempDir dir("cache");
    auto scripted = std::make_shared<ScriptedBackend>();
    CachedBackend cache(scripted, dir / "c.jsonl", CacheMode::record);
    cache.notify_trained({5, 0.5});
    CHECK(scripted->train_calls == 1);
    CHECK(cache.version() == "scripted-v1");

    auto snap = cache.snapshot();
    CHECK(snap.at("kind") == "cached");

    auto scripted2 = std::make_shared<ScriptedBackend>();
    CachedBackend other(scripted2, dir / "c.jsonl", CacheMode::record);
    other.restore(snap);
    CHECK(scripted2->train_calls == 1);
    CHECK_THROWS_AS(other.restore(nlohmann::json{{"kind", "simulated"}}), StateError);
}
