#pragma once

#include <string>
#include <vector>

#include "tvlab/model.hpp"

namespace tvlab {

// Backend wire protocol: length-prefixed (u32 little-endian) JSON frames over
// a local byte stream. One request produces one response. This is the
// extension surface for plugging a different model backend behind the lab;
// no external adapter ships with it.
//
// request:  {"tokens":[..], "taps":[[layer,pos],..],
//            "patches":[{"layer":l,"pos":p,"mode":"overwrite"|"add",
//                        "values":[f32..]}], "topk":n}
// response: {"logits_topk":[[token,logit],..], "tapped":[[f32..],..]}
//           or {"error": "..."}

struct WireRequest {
    std::vector<TokenId> tokens;
    std::vector<TapPoint> taps;
    InterventionPlan patches;
    int topk = 0;

    std::string to_json() const;
    static WireRequest from_json(const std::string& text);
};

struct WireResponse {
    std::vector<std::pair<TokenId, float>> logits_topk;  // final position, by logit desc
    std::vector<std::vector<float>> tapped;              // aligned with taps
    std::string error;

    std::string to_json() const;
    static WireResponse from_json(const std::string& text);
};

// Framing over a file descriptor (socket, socketpair, pipe).
void write_frame(int fd, const std::string& payload);
// Empty optional on clean EOF before a frame starts.
bool read_frame(int fd, std::string& payload);

// Answers requests on fd until the peer closes. Malformed requests produce
// error responses rather than terminating the loop.
void serve_model(int fd, const Model& model);

// Synchronous client half.
class WireClient {
public:
    explicit WireClient(int fd) : fd_(fd) {}
    WireResponse request(const WireRequest& request);

private:
    int fd_;
};

WireResponse answer_request(const Model& model, const WireRequest& request);

}  // namespace tvlab
