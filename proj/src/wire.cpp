#include "tvlab/wire.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

namespace {
constexpr size_t kMaxFrame = 64u << 20;
}

std::string WireRequest::to_json() const {
    json j;
    j["tokens"] = tokens;
    json taps_j = json::array();
    for (const auto& t : taps) taps_j.push_back({t.layer, t.pos});
    j["taps"] = taps_j;
    json patches_j = json::array();
    for (const auto& p : patches.entries) {
        json pj;
        pj["layer"] = p.at.layer;
        pj["pos"] = p.at.pos;
        pj["mode"] = p.mode == PatchMode::overwrite ? "overwrite" : "add";
        pj["values"] = std::vector<float>(p.values.data(), p.values.data() + p.values.size());
        patches_j.push_back(pj);
    }
    j["patches"] = patches_j;
    j["topk"] = topk;
    return j.dump();
}

WireRequest WireRequest::from_json(const std::string& text) {
    json j = json::parse(text);
    WireRequest r;
    r.tokens = j.at("tokens").get<std::vector<TokenId>>();
    for (const auto& t : j.value("taps", json::array())) {
        r.taps.push_back({t.at(0).get<int>(), t.at(1).get<int>()});
    }
    for (const auto& p : j.value("patches", json::array())) {
        PatchEntry e;
        e.at.layer = p.at("layer").get<int>();
        e.at.pos = p.at("pos").get<int>();
        const std::string mode = p.value("mode", "overwrite");
        check(mode == "overwrite" || mode == "add", "unknown patch mode '" + mode + "'");
        e.mode = mode == "add" ? PatchMode::add : PatchMode::overwrite;
        auto values = p.at("values").get<std::vector<float>>();
        e.values = Eigen::Map<Eigen::VectorXf>(values.data(), static_cast<Eigen::Index>(values.size()));
        r.patches.entries.push_back(std::move(e));
    }
    r.topk = j.value("topk", 0);
    return r;
}

std::string WireResponse::to_json() const {
    json j;
    if (!error.empty()) {
        j["error"] = error;
        return j.dump();
    }
    json topk_j = json::array();
    for (const auto& [tok, logit] : logits_topk) topk_j.push_back({tok, logit});
    j["logits_topk"] = topk_j;
    j["tapped"] = tapped;
    return j.dump();
}

WireResponse WireResponse::from_json(const std::string& text) {
    json j = json::parse(text);
    WireResponse r;
    if (j.contains("error")) {
        r.error = j.at("error").get<std::string>();
        return r;
    }
    for (const auto& pair : j.value("logits_topk", json::array())) {
        r.logits_topk.emplace_back(pair.at(0).get<TokenId>(), pair.at(1).get<float>());
    }
    r.tapped = j.value("tapped", std::vector<std::vector<float>>{});
    return r;
}

void write_frame(int fd, const std::string& payload) {
    check(payload.size() <= kMaxFrame, "wire frame too large");
    unsigned char header[4];
    const auto n = static_cast<uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) header[i] = static_cast<unsigned char>((n >> (8 * i)) & 0xff);
    std::string buf(reinterpret_cast<char*>(header), 4);
    buf += payload;
    size_t off = 0;
    while (off < buf.size()) {
        const ssize_t w = ::write(fd, buf.data() + off, buf.size() - off);
        if (w < 0) {
            if (errno == EINTR) continue;
            fail(std::string("wire write failed: ") + std::strerror(errno));
        }
        off += static_cast<size_t>(w);
    }
}

namespace {

// 0 = clean EOF at a frame boundary, 1 = got data, throws mid-frame
size_t read_exact(int fd, char* dst, size_t n, bool allow_eof) {
    size_t off = 0;
    while (off < n) {
        const ssize_t r = ::read(fd, dst + off, n - off);
        if (r < 0) {
            if (errno == EINTR) continue;
            fail(std::string("wire read failed: ") + std::strerror(errno));
        }
        if (r == 0) {
            if (allow_eof && off == 0) return 0;
            fail("wire stream truncated mid-frame");
        }
        off += static_cast<size_t>(r);
    }
    return off;
}

}  // namespace

bool read_frame(int fd, std::string& payload) {
    unsigned char header[4];
    if (read_exact(fd, reinterpret_cast<char*>(header), 4, true) == 0) return false;
    uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<uint32_t>(header[i]) << (8 * i);
    check(n <= kMaxFrame, "wire frame too large");
    payload.resize(n);
    if (n > 0) read_exact(fd, payload.data(), n, false);
    return true;
}

WireResponse answer_request(const Model& model, const WireRequest& request) {
    WireResponse resp;
    try {
        auto out = forward(model, request.tokens, request.taps, request.patches, false);
        const int topk = std::clamp(request.topk, 0, model.config.vocab_size);
        std::vector<TokenId> order(static_cast<size_t>(model.config.vocab_size));
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<TokenId>(i);
        std::partial_sort(order.begin(), order.begin() + topk, order.end(),
                          [&](TokenId a, TokenId b) {
                              const float la = out.last_logits(a), lb = out.last_logits(b);
                              return la > lb || (la == lb && a < b);
                          });
        for (int i = 0; i < topk; ++i) {
            resp.logits_topk.emplace_back(order[static_cast<size_t>(i)],
                                          out.last_logits(order[static_cast<size_t>(i)]));
        }
        for (const auto& v : out.tapped) {
            resp.tapped.emplace_back(v.data(), v.data() + v.size());
        }
    } catch (const std::exception& e) {
        resp = WireResponse{};
        resp.error = e.what();
    }
    return resp;
}

void serve_model(int fd, const Model& model) {
    std::string payload;
    while (read_frame(fd, payload)) {
        WireResponse resp;
        try {
            resp = answer_request(model, WireRequest::from_json(payload));
        } catch (const std::exception& e) {
            resp.error = e.what();
        }
        write_frame(fd, resp.to_json());
    }
}

WireResponse WireClient::request(const WireRequest& req) {
    write_frame(fd_, req.to_json());
    std::string payload;
    check(read_frame(fd_, payload), "wire server closed the stream");
    return WireResponse::from_json(payload);
}

}  // namespace tvlab
