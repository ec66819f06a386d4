#include "doctest.h"

#include <random>

#include "qfed/wire.hpp"

using namespace qfed;

namespace {

Metrics random_metrics(std::mt19937_64 &rng) {
    Metrics m;
    for (auto &row : m.confusion) {
        for (auto &c : row) {
            c = rng() % 100000;
        }
    }
    m.mean_loss = std::uniform_real_distribution<double>(0, 10)(rng);
    return m;
}

std::vector<double> random_params(std::mt19937_64 &rng) {
    std::normal_distribution<double> g(0.0, 1e3);
    std::vector<double> p(rng() % 64);
    for (auto &x : p) {
        x = g(rng);
    }
    return p;
}

Message random_message(std::mt19937_64 &rng) {
    switch (rng() % 5) {
    case 0:
        return JoinMsg{static_cast<std::uint32_t>(rng())};
    case 1:
        return GlobalModelMsg{static_cast<std::uint32_t>(rng()), random_params(rng)};
    case 2: {
        LocalUpdateMsg m;
        m.update.client_id = static_cast<std::uint32_t>(rng());
        m.update.n_samples = rng();
        m.update.local_metrics = random_metrics(rng);
        m.update.params = random_params(rng);
        return m;
    }
    case 3:
        return MetricsMsg{static_cast<std::uint32_t>(rng()), random_metrics(rng)};
    default:
        return ShutdownMsg{};
    }
}

CodecError::Kind decode_error(const std::vector<std::uint8_t> &bytes, std::size_t max_frame = default_max_frame) {
    try {
        (void)decode_message(bytes, max_frame);
    } catch (const CodecError &e) {
        return e.kind();
    }
    FAIL("decode unexpectedly succeeded");
    return CodecError::Kind::malformed;
}

} // namespace

TEST_CASE("shutdown frame bytes") {
    CHECK(encode_message(ShutdownMsg{}) == std::vector<std::uint8_t>{0, 0, 0, 1, 5});
}

TEST_CASE("join frame layout") {
    CHECK(encode_message(JoinMsg{0x01020304}) ==
          std::vector<std::uint8_t>{0, 0, 0, 5, 1, 4, 3, 2, 1});
}

TEST_CASE("property: 10^4 random messages round-trip") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10000; ++i) {
        const Message m = random_message(rng);
        const auto bytes = encode_message(m);
        CHECK(decode_message(bytes) == m);
        CHECK(static_cast<std::uint8_t>(message_type(m)) == bytes[4]);
    }
}

TEST_CASE("property: truncating a frame by one byte is a truncated error") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 2000; ++i) {
        auto bytes = encode_message(random_message(rng));
        bytes.pop_back();
        CHECK(decode_error(bytes) == CodecError::Kind::truncated);
    }
    CHECK(decode_error({0, 0}) == CodecError::Kind::truncated);
}

TEST_CASE("distinct error kinds") {
    CHECK(decode_error({0, 0, 0, 1, 9}) == CodecError::Kind::unknown_type);
    CHECK(decode_error({0, 0, 0, 1, 0}) == CodecError::Kind::unknown_type);
    auto big = encode_message(GlobalModelMsg{1, std::vector<double>(100, 1.0)});
    CHECK(decode_error(big, 64) == CodecError::Kind::too_large);
    CHECK(decode_error({0, 0, 0, 0}) == CodecError::Kind::malformed);
    auto trailing = encode_message(ShutdownMsg{});
    trailing.push_back(0);
    CHECK(decode_error(trailing) == CodecError::Kind::malformed);
    // JOIN declared with a 2-byte payload: length consistent, fields short.
    CHECK(decode_error({0, 0, 0, 3, 1, 7, 7}) == CodecError::Kind::malformed);
    // GLOBAL_MODEL whose parameter count exceeds the payload.
    CHECK(decode_error({0, 0, 0, 13, 2, 0, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0}) ==
          CodecError::Kind::malformed);
    const std::array<std::uint8_t, 4> header{0x7F, 0xFF, 0xFF, 0xFF};
    CHECK_THROWS_AS(frame_length(header, default_max_frame), CodecError);
}
