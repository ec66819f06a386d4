#include "qfed/wire.hpp"

#include "qfed/io.hpp"

namespace qfed {

MessageType message_type(const Message &msg) {
    struct Visitor {
        MessageType operator()(const JoinMsg &) const { return MessageType::join; }
        MessageType operator()(const GlobalModelMsg &) const { return MessageType::global_model; }
        MessageType operator()(const LocalUpdateMsg &) const { return MessageType::local_update; }
        MessageType operator()(const MetricsMsg &) const { return MessageType::metrics; }
        MessageType operator()(const ShutdownMsg &) const { return MessageType::shutdown; }
    };
    return std::visit(Visitor{}, msg);
}

namespace {

void put_metrics(std::vector<std::uint8_t> &out, const Metrics &m) {
    for (const auto &row : m.confusion) {
        for (auto v : row) {
            put_u64(out, v);
        }
    }
    put_f64(out, m.mean_loss);
}

void put_params(std::vector<std::uint8_t> &out, const std::vector<double> &params) {
    put_u64(out, params.size());
    for (double v : params) {
        put_f64(out, v);
    }
}

class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    const std::uint8_t *take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw CodecError(CodecError::Kind::malformed,
                             "payload too short: need " + std::to_string(n) +
                                 " more bytes at offset " + std::to_string(pos_));
        }
        const std::uint8_t *p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() { return get_u32(take(4)); }
    std::uint64_t u64() { return get_u64(take(8)); }
    double f64() { return get_f64(take(8)); }

    Metrics metrics() {
        Metrics m;
        for (auto &row : m.confusion) {
            for (auto &v : row) {
                v = u64();
            }
        }
        m.mean_loss = f64();
        return m;
    }

    std::vector<double> params() {
        const std::uint64_t n = u64();
        if (n > (bytes_.size() - pos_) / 8) {
            throw CodecError(CodecError::Kind::malformed,
                             "parameter vector of " + std::to_string(n) +
                                 " values exceeds the remaining payload");
        }
        std::vector<double> out(n);
        for (auto &v : out) {
            v = f64();
        }
        return out;
    }

    void finish() const {
        if (pos_ != bytes_.size()) {
            throw CodecError(CodecError::Kind::malformed,
                             std::to_string(bytes_.size() - pos_) +
                                 " trailing bytes after message payload");
        }
    }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_message(const Message &msg) {
    std::vector<std::uint8_t> out(4, 0);
    out.push_back(static_cast<std::uint8_t>(message_type(msg)));
    if (const auto *m = std::get_if<JoinMsg>(&msg)) {
        put_u32(out, m->client_id);
    } else if (const auto *m = std::get_if<GlobalModelMsg>(&msg)) {
        put_u32(out, m->round);
        put_params(out, m->params);
    } else if (const auto *m = std::get_if<LocalUpdateMsg>(&msg)) {
        put_u32(out, m->update.client_id);
        put_u64(out, m->update.n_samples);
        put_metrics(out, m->update.local_metrics);
        put_params(out, m->update.params);
    } else if (const auto *m = std::get_if<MetricsMsg>(&msg)) {
        put_u32(out, m->round);
        put_metrics(out, m->metrics);
    }
    const std::size_t len = out.size() - 4;
    if (len > 0xFFFFFFFFu) {
        throw CodecError(CodecError::Kind::too_large, "message exceeds 4 GiB frame limit");
    }
    out[0] = static_cast<std::uint8_t>(len >> 24);
    out[1] = static_cast<std::uint8_t>(len >> 16);
    out[2] = static_cast<std::uint8_t>(len >> 8);
    out[3] = static_cast<std::uint8_t>(len);
    return out;
}

std::uint32_t frame_length(std::span<const std::uint8_t, 4> header, std::size_t max_frame) {
    const std::uint32_t len = (std::uint32_t(header[0]) << 24) | (std::uint32_t(header[1]) << 16) |
                              (std::uint32_t(header[2]) << 8) | std::uint32_t(header[3]);
    if (len > max_frame) {
        throw CodecError(CodecError::Kind::too_large,
                         "frame length " + std::to_string(len) + " exceeds maximum " +
                             std::to_string(max_frame));
    }
    if (len == 0) {
        throw CodecError(CodecError::Kind::malformed, "frame has no type byte");
    }
    return len;
}

Message decode_message(std::span<const std::uint8_t> bytes, std::size_t max_frame) {
    if (bytes.size() < 4) {
        throw CodecError(CodecError::Kind::truncated, "frame header truncated");
    }
    const std::uint32_t len = frame_length(bytes.first<4>(), max_frame);
    if (bytes.size() - 4 < len) {
        throw CodecError(CodecError::Kind::truncated,
                         "frame truncated: header declares " + std::to_string(len) +
                             " bytes, " + std::to_string(bytes.size() - 4) + " present");
    }
    if (bytes.size() - 4 > len) {
        throw CodecError(CodecError::Kind::malformed, "bytes after end of frame");
    }
    const std::uint8_t type = bytes[4];
    Reader r(bytes.subspan(5));
    Message msg;
    switch (type) {
    case static_cast<std::uint8_t>(MessageType::join):
        msg = JoinMsg{r.u32()};
        break;
    case static_cast<std::uint8_t>(MessageType::global_model): {
        GlobalModelMsg m;
        m.round = r.u32();
        m.params = r.params();
        msg = std::move(m);
        break;
    }
    case static_cast<std::uint8_t>(MessageType::local_update): {
        LocalUpdateMsg m;
        m.update.client_id = r.u32();
        m.update.n_samples = r.u64();
        m.update.local_metrics = r.metrics();
        m.update.params = r.params();
        msg = std::move(m);
        break;
    }
    case static_cast<std::uint8_t>(MessageType::metrics): {
        MetricsMsg m;
        m.round = r.u32();
        m.metrics = r.metrics();
        msg = m;
        break;
    }
    case static_cast<std::uint8_t>(MessageType::shutdown):
        msg = ShutdownMsg{};
        break;
    default:
        throw CodecError(CodecError::Kind::unknown_type,
                         "unknown message type byte " + std::to_string(type));
    }
    r.finish();
    return msg;
}

} // namespace qfed
