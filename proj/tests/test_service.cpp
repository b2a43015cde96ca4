#include <set>
#include <thread>

#include "httplib.h"
#include "vitclick/annotation_service.hpp"
#include "vitclick/data_io.hpp"
#include "doctest.h"

using namespace vitclick;

namespace {

std::shared_ptr<ModelRegistry> registry() {
    static auto reg = [] {
        auto r = std::make_shared<ModelRegistry>();
        r->add("default", build_model(ModelConfig::preset("xtiny_desk"), 3));
        return r;
    }();
    return reg;
}

RgbImage picture(int h, int w) {
    RgbImage im(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const bool inside = r > h / 4 && r < 3 * h / 4 && c > w / 4 && c < 3 * w / 4;
            for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = inside ? 220 : static_cast<std::uint8_t>(20 + ch * 10);
        }
    return im;
}

int status_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ServiceError& e) {
        return e.status;
    }
    return 0;
}

}  // namespace

TEST_CASE("session creation errors carry HTTP statuses") {
    ServiceLimits limits;
    limits.max_pixels = 100 * 100;
    limits.max_upload_bytes = 1 << 20;
    SessionManager mgr(registry(), limits);
    const auto png = encode_png(picture(40, 50));
    const auto id = mgr.create_session(png, "default");
    CHECK((mgr.image_size(id) == ImageSize{40, 50}));
    CHECK(mgr.clicks(id).empty());
    CHECK_FALSE(mgr.mask(id).any());

    CHECK((status_of([&] { (void)mgr.create_session(png, "nope"); }) == 404));
    CHECK((status_of([&] { (void)mgr.create_session(std::vector<std::uint8_t>{1, 2, 3, 4}, "default"); }) == 400));
    CHECK((status_of([&] { (void)mgr.create_session(picture(101, 100), "default"); }) == 413));
    CHECK((status_of([&] { (void)mgr.create_session(std::vector<std::uint8_t>((1 << 20) + 1), "default"); }) == 413));
    CHECK((status_of([&] { (void)mgr.add_click(id, 40, 0, Polarity::positive); }) == 422));
    CHECK((status_of([&] { (void)mgr.add_click(id, 0, -1, Polarity::negative); }) == 422));
    CHECK(status_of([&] { (void)mgr.mask("deadbeef"); }) == 404);
    CHECK(mgr.clicks(id).empty());
}

TEST_CASE("concurrent sessions get distinct ids") {
    SessionManager mgr(registry());
    const auto image = picture(16, 16);
    std::vector<std::string> ids(64);
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < 64; i += 4) ids[i] = mgr.create_session(image, "default");
        });
    }
    for (auto& th : pool) th.join();
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 64);
    CHECK(mgr.session_count() == 64);
    CHECK(mgr.close(ids[0]));
    CHECK_FALSE(mgr.close(ids[0]));
}

TEST_CASE("undo, duplicates and reset") {
    SessionManager mgr(registry());
    const auto id = mgr.create_session(picture(48, 48), "default");
    CHECK_FALSE(mgr.undo(id));

    const auto first = mgr.add_click(id, 24, 24, Polarity::positive);
    CHECK(first.click_count == 1);
    CHECK((first.mask.size() == ImageSize{48, 48}));
    const auto second = mgr.add_click(id, 5, 5, Polarity::negative);
    CHECK(second.click_count == 2);

    const auto dup = mgr.add_click(id, 24, 24, Polarity::positive);
    CHECK(dup.click_count == 3);
    CHECK(dup.mask == second.mask);
    CHECK(dup.probabilities.data() == second.probabilities.data());
    CHECK(dup.iou_vs_prev == 1.0);

    CHECK(mgr.undo(id));
    CHECK(mgr.undo(id));
    CHECK(mgr.mask(id) == first.mask);
    CHECK(mgr.clicks(id).size() == 1);

    mgr.reset(id);
    CHECK(mgr.clicks(id).empty());
    CHECK_FALSE(mgr.mask(id).any());
}

TEST_CASE("recomputing history matches stored history") {
    ServiceLimits recompute;
    recompute.recompute_history = true;
    SessionManager stored(registry());
    SessionManager replay(registry(), recompute);
    const auto image = picture(40, 40);
    const auto a = stored.create_session(image, "default");
    const auto b = replay.create_session(image, "default");
    const std::vector<Click> script{{20, 20, Polarity::positive, 0},
                                    {2, 3, Polarity::negative, 1},
                                    {12, 25, Polarity::positive, 2},
                                    {30, 30, Polarity::negative, 3}};
    for (const auto& c : script) {
        const auto ra = stored.add_click(a, c.row, c.col, c.polarity);
        const auto rb = replay.add_click(b, c.row, c.col, c.polarity);
        CHECK(ra.mask == rb.mask);
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(stored.undo(a));
        CHECK(replay.undo(b));
        CHECK(stored.mask(a) == replay.mask(b));
    }
}

TEST_CASE("export and encodings") {
    SessionManager mgr(registry());
    const auto id = mgr.create_session(picture(32, 32), "default");
    (void)mgr.add_click(id, 16, 16, Polarity::positive);
    (void)mgr.add_click(id, 1, 1, Polarity::negative);
    const auto ex = mgr.export_session(id);
    CHECK(ex.at("model_id") == "default");
    REQUIRE(ex.at("clicks").size() == 2);
    CHECK(ex.at("clicks")[1].at("ordinal") == 1);
    CHECK(decode_mask_png(base64_decode(ex.at("mask_png").get<std::string>())) == mgr.mask(id));

    BinaryMask m(5, 7);
    m.set(0, 0, true);
    m.set(2, 3, true);
    m.set(4, 6, true);
    const auto rle = encode_rle(m);
    CHECK(rle.at("counts")[0] == 0);
    CHECK(decode_rle(rle) == m);
    CHECK((encode_rle(BinaryMask(2, 2)).at("counts") == nlohmann::json::array({4})));
    CHECK_THROWS(decode_rle({{"size", {2, 2}}, {"counts", {1, 1}}}));

    for (std::size_t n = 0; n < 8; ++n) {
        std::vector<std::uint8_t> bytes(n);
        for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 250);
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK((base64_encode({'M', 'a'}) == "TWE="));
}

TEST_CASE("http routes") {
    auto mgr = std::make_shared<SessionManager>(registry());
    ServerOptions opts;
    opts.host = "127.0.0.1";
    opts.port = 0;
    AnnotationServer server(mgr, opts);
    const int port = server.bind();
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body).at("status") == "ok");

    auto models = client.Get("/models");
    REQUIRE(models);
    CHECK(nlohmann::json::parse(models->body).at("models")[0].at("id") == "default");

    const auto png = encode_png(picture(30, 40));
    auto created = client.Post("/sessions", std::string(png.begin(), png.end()), "image/png");
    REQUIRE(created);
    CHECK(created->status == 201);
    const auto sid = nlohmann::json::parse(created->body).at("session_id").get<std::string>();

    auto bad = client.Post("/sessions", "garbage", "image/png");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    auto unknown = client.Post("/sessions?model=zzz", std::string(png.begin(), png.end()), "image/png");
    REQUIRE(unknown);
    CHECK(unknown->status == 404);

    const auto base = "/sessions/" + sid;
    auto click = client.Post(base + "/clicks", R"({"row": 15, "col": 20})", "application/json");
    REQUIRE(click);
    CHECK(click->status == 200);
    const auto state = nlohmann::json::parse(click->body);
    CHECK(state.at("click_count") == 1);
    CHECK(decode_rle(state.at("mask")) == mgr->mask(sid));

    auto outside = client.Post(base + "/clicks", R"({"row": 99, "col": 0})", "application/json");
    REQUIRE(outside);
    CHECK(outside->status == 422);
    auto malformed = client.Post(base + "/clicks", "{", "application/json");
    REQUIRE(malformed);
    CHECK(malformed->status == 400);

    auto rle = client.Get(base + "/mask?format=rle");
    REQUIRE(rle);
    CHECK(decode_rle(nlohmann::json::parse(rle->body)) == mgr->mask(sid));
    auto mask_png = client.Get(base + "/mask");
    REQUIRE(mask_png);
    CHECK((decode_mask_png({mask_png->body.begin(), mask_png->body.end()}) == mgr->mask(sid)));

    auto undo = client.Post(base + "/undo", "", "application/json");
    REQUIRE(undo);
    CHECK(nlohmann::json::parse(undo->body).at("status") == "undone");
    auto undo_again = client.Post(base + "/undo", "", "application/json");
    CHECK(nlohmann::json::parse(undo_again->body).at("status") == "nothing_to_undo");

    auto exported = client.Get(base + "/export");
    REQUIRE(exported);
    CHECK(exported->status == 200);

    auto gone = client.Delete(base);
    REQUIRE(gone);
    CHECK(gone->status == 200);
    auto missing = client.Get(base);
    REQUIRE(missing);
    CHECK(missing->status == 404);

    server.stop();
    worker.join();
}
