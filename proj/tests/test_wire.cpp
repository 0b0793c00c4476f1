#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <thread>

#include "tvlab/wire.hpp"

using namespace tvlab;

namespace {

Model tiny_model() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.context_len = 32;
    cfg.vocab_size = 20;
    return init_model(cfg, 5);
}

struct ServedModel {
    Model model = tiny_model();
    int client_fd = -1;
    std::thread server;

    ServedModel() {
        int fds[2];
        REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
        client_fd = fds[0];
        const int server_fd = fds[1];
        server = std::thread([this, server_fd] {
            serve_model(server_fd, model);
            ::close(server_fd);
        });
    }
    ~ServedModel() {
        ::close(client_fd);
        server.join();
    }
};

}  // namespace

TEST_CASE("request/response JSON round trip") {
    WireRequest req;
    req.tokens = {1, 2, 3};
    req.taps = {{0, 1}, {2, 2}};
    PatchEntry patch;
    patch.at = {1, 2};
    patch.values = Eigen::VectorXf::Constant(16, 0.25f);
    patch.mode = PatchMode::add;
    req.patches.entries.push_back(patch);
    req.topk = 3;
    auto back = WireRequest::from_json(req.to_json());
    CHECK(back.tokens == req.tokens);
    CHECK(back.taps.size() == 2);
    CHECK(back.taps[1].layer == 2);
    REQUIRE(back.patches.entries.size() == 1);
    CHECK(back.patches.entries[0].mode == PatchMode::add);
    CHECK(back.patches.entries[0].values == patch.values);
    CHECK(back.topk == 3);
}

TEST_CASE("served model answers with taps and top-k logits matching direct forward") {
    ServedModel served;
    WireClient client(served.client_fd);

    WireRequest req;
    req.tokens = {3, 1, 4, 1, 5};
    req.taps = {{0, 2}, {2, 4}};
    req.topk = 5;
    auto resp = client.request(req);
    REQUIRE(resp.error.empty());
    REQUIRE(resp.tapped.size() == 2);
    REQUIRE(resp.logits_topk.size() == 5);

    auto direct = forward(served.model, req.tokens, req.taps, {}, false);
    for (size_t t = 0; t < 2; ++t) {
        for (size_t i = 0; i < resp.tapped[t].size(); ++i) {
            CHECK(resp.tapped[t][i] == direct.tapped[t](static_cast<Eigen::Index>(i)));
        }
    }
    // top-k ordering by descending logit
    for (size_t i = 1; i < resp.logits_topk.size(); ++i) {
        CHECK(resp.logits_topk[i - 1].second >= resp.logits_topk[i].second);
    }
    CHECK(resp.logits_topk[0].second == direct.last_logits.maxCoeff());
}

TEST_CASE("patched request behaves like a local patched forward") {
    ServedModel served;
    WireClient client(served.client_fd);

    WireRequest req;
    req.tokens = {2, 7, 9};
    PatchEntry patch;
    patch.at = {1, 2};
    patch.values = Eigen::VectorXf::LinSpaced(16, -0.5f, 0.5f);
    patch.mode = PatchMode::overwrite;
    req.patches.entries.push_back(patch);
    req.taps = {{1, 2}};
    req.topk = 1;
    auto resp = client.request(req);
    REQUIRE(resp.error.empty());
    // tapping the patched locus returns the patch vector itself
    for (size_t i = 0; i < resp.tapped[0].size(); ++i) {
        CHECK(resp.tapped[0][i] == patch.values(static_cast<Eigen::Index>(i)));
    }
    InterventionPlan plan;
    plan.entries.push_back(patch);
    auto direct = forward(served.model, req.tokens, {}, plan, false);
    Eigen::Index best = 0;
    direct.last_logits.maxCoeff(&best);
    CHECK(resp.logits_topk[0].first == static_cast<TokenId>(best));
}

TEST_CASE("malformed and invalid requests produce error responses, not disconnects") {
    ServedModel served;

    write_frame(served.client_fd, "this is not json");
    std::string payload;
    REQUIRE(read_frame(served.client_fd, payload));
    auto resp = WireResponse::from_json(payload);
    CHECK_FALSE(resp.error.empty());

    // out-of-range tap: server survives and reports the error
    WireClient client(served.client_fd);
    WireRequest req;
    req.tokens = {1, 2};
    req.taps = {{9, 0}};
    auto resp2 = client.request(req);
    CHECK_FALSE(resp2.error.empty());
    CHECK(resp2.error.find("layer") != std::string::npos);

    // the stream still works afterwards
    WireRequest ok;
    ok.tokens = {1, 2};
    ok.topk = 1;
    auto resp3 = client.request(ok);
    CHECK(resp3.error.empty());
}
