#include <catch_amalgamated.hpp>

#include <random>

#include "pmdedup/client.hpp"

using namespace pmdedup;

namespace {

Bytes random_bytes(std::size_t n, std::uint64_t seed) {
    Bytes b(n);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

const ChunkerConfig kCfg{.min_size = 2048, .avg_size = 8192, .max_size = 32768};

struct Rig {
    Chunker chunker{kCfg};
    KeyServer keys{sha256(Bytes{0x55})};
    CloudServer cloud;
    EdgeServer edge;
    VirtualTime clock{};

    Rig()
        : cloud(CloudConfig{.share_spec = {64, 0.9, 0.5}}, sha256(Bytes{0xAA})),
          edge(EdgeConfig{.id = 1}, EnclaveStore(sha256(Bytes{1}), sha256(Bytes{2}), 1 << 22),
               &cloud, LatencyModel{}) {}
};

}  // namespace

TEST_CASE("upload plans are convergent across clients") {
    Rig rig;
    Bytes file = random_bytes(200000, 1);
    UploadPlan p1 = prepare_upload(file, rig.chunker, rig.keys, 1, rig.clock);
    UploadPlan p2 = prepare_upload(file, rig.chunker, rig.keys, 2, rig.clock);
    REQUIRE(p1.chunks.size() == p2.chunks.size());
    for (std::size_t i = 0; i < p1.chunks.size(); ++i) {
        CHECK(p1.chunks[i].cipher.data == p2.chunks[i].cipher.data);
        CHECK(p1.chunks[i].fingerprint == p2.chunks[i].fingerprint);
        CHECK(p1.chunks[i].fingerprint == fingerprint_of(p1.chunks[i].cipher.data));
    }
    CHECK(p1.file_hash == fingerprint_of(file));
    CHECK_THROWS_AS(prepare_upload(Bytes{}, rig.chunker, rig.keys, 1, rig.clock),
                    EmptyDataError);
}

TEST_CASE("challenge answers address the right object") {
    Rig rig;
    Bytes file = random_bytes(60000, 2);
    UploadPlan plan = prepare_upload(file, rig.chunker, rig.keys, 1, rig.clock);
    Digest seed = sha256(Bytes{3});
    Challenge chal{seed, 64};

    CHECK(answer_challenge(plan, chal, std::nullopt) == gen_response(seed, file, 64));
    CHECK(answer_challenge(plan, chal, 0) == gen_response(seed, plan.chunks[0].cipher.data, 64));
    CHECK_THROWS_AS(answer_challenge(plan, chal, plan.chunks.size()), UnknownScopeError);
}

TEST_CASE("key fetch backs off under rate limiting in virtual time") {
    Chunker chunker(kCfg);
    // One token, refilling fast enough that one backoff round suffices.
    KeyServer keys(sha256(Bytes{0x56}), RateLimit{1.0, 200.0});
    VirtualTime clock{};
    Bytes file = random_bytes(100000, 3);
    UploadPlan plan = prepare_upload(file, chunker, keys, 1, clock);
    CHECK(plan.chunks.size() > 1);
    CHECK(clock.nanos > 0);  // backoff advanced the clock

    // With no refill at all, retries exhaust and the error surfaces.
    KeyServer dry(sha256(Bytes{0x57}), RateLimit{1.0, 0.0});
    VirtualTime clock2{};
    CHECK_THROWS_AS(prepare_upload(file, chunker, dry, 1, clock2), RateLimitedError);
}

TEST_CASE("second upload of the same file transfers no chunk bytes") {
    Rig rig;
    Bytes file = random_bytes(300000, 4);
    LatencyModel model;

    UploadPlan plan = prepare_upload(file, rig.chunker, rig.keys, 1, rig.clock);
    UploadReport first = upload(plan, 1, rig.edge, rig.cloud, model);
    CHECK(first.bytes_sent > 0);
    CHECK(first.unique > 0);
    rig.cloud.register_file_pow(plan.file_hash, file, plan.fingerprints());

    UploadPlan plan2 = prepare_upload(file, rig.chunker, rig.keys, 2, rig.clock);
    UploadReport second = upload(plan2, 2, rig.edge, rig.cloud, model);
    CHECK(second.bytes_sent == 0);
    CHECK(second.unique == 0);
    CHECK(second.hit_local + second.hit_share + second.hit_cloud == plan2.chunks.size());
    // Duplicate uploads still pay for PoW and the recipe.
    CHECK(second.ledger.pow.nanos > 0);
    CHECK(second.recipe_bytes > 0);

    // Restore: every chunk in the recipe decrypts back to the original bytes
    // under the keys the owner kept from its plan.
    std::map<Fingerprint, MleKey> keyring;
    for (const auto& c : plan.chunks) keyring[c.fingerprint] = c.key;
    const FileRecipe* recipe = rig.cloud.recipe(plan.file_hash);
    REQUIRE(recipe != nullptr);
    Bytes restored;
    for (const auto& e : recipe->chunks) {
        CipherChunk c = rig.cloud.fetch_chunk(e.chunk_fp);
        PlainChunk p = decrypt_chunk(c, keyring.at(e.chunk_fp));
        restored.insert(restored.end(), p.data.begin(), p.data.end());
    }
    CHECK(restored == file);
}

TEST_CASE("file-level pow settles every chunk in one round") {
    Rig rig;
    Bytes file = random_bytes(150000, 5);
    LatencyModel model;
    UploadPlan plan = prepare_upload(file, rig.chunker, rig.keys, 1, rig.clock);
    upload(plan, 1, rig.edge, rig.cloud, model);
    rig.cloud.register_file_pow(plan.file_hash, file, plan.fingerprints());

    // Rebuild an epoch so the edge holds file-level pools for its local files.
    Digest meas = sha256(Bytes{1});
    SecureChannel cloud_side = SecureChannel::establish(meas, meas, 1, 1);
    SecureChannel edge_side = SecureChannel::establish(meas, meas, 1, 1);
    auto deltas = rig.cloud.epoch_rebuild({rig.edge.report()});
    rig.edge.apply_epoch_delta(edge_side, cloud_side.seal(wire::serialize_delta(deltas[0])));

    UploadPlan plan2 = prepare_upload(file, rig.chunker, rig.keys, 2, rig.clock);
    auto session = rig.edge.pow_session(
        2, plan2.file_hash, plan2.fingerprints(),
        [&](const Challenge& chal) { return answer_challenge(plan2, chal, std::nullopt); },
        [&](const Fingerprint&) -> Responder {
            FAIL("chunk responder must not be consulted when the file pair verifies");
            return nullptr;
        });
    CHECK(session.file_verified);
    CHECK(session.cloud_round_trips == 0);
    for (const auto& [fp, status] : session.chunk_status)
        CHECK(status == OwnershipStatus::Verified);
}
