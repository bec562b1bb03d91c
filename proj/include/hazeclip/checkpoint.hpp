#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "hazeclip/backbone.hpp"
#include "hazeclip/errors.hpp"
#include "hazeclip/linalg.hpp"

namespace hazeclip {

enum class Stage { pretrained, finetuned };

inline std::string stage_name(Stage s) { return s == Stage::pretrained ? "pretrained" : "finetuned"; }

inline Stage parse_stage(std::string_view s) {
    if (s == "pretrained") return Stage::pretrained;
    if (s == "finetuned") return Stage::finetuned;
    throw FormatError("unknown checkpoint stage: " + std::string(s));
}

template <typename T>
struct Checkpoint {
    std::unique_ptr<DehazeModel<T>> model;
    Stage stage = Stage::pretrained;
    nlohmann::json config = nlohmann::json::object();   // training config snapshot
    nlohmann::json encoder = nlohmann::json::object();  // encoder / preprocessing metadata

    Checkpoint() = default;
    Checkpoint(std::unique_ptr<DehazeModel<T>> m, Stage s, nlohmann::json cfg = nlohmann::json::object(),
               nlohmann::json enc = nlohmann::json::object())
        : model(std::move(m)), stage(s), config(std::move(cfg)), encoder(std::move(enc)) {}
    Checkpoint(const Checkpoint& o)
        : model(o.model ? o.model->clone() : nullptr), stage(o.stage), config(o.config), encoder(o.encoder) {}
    Checkpoint& operator=(const Checkpoint& o) {
        if (this != &o) *this = Checkpoint(o);
        return *this;
    }
    Checkpoint(Checkpoint&&) noexcept = default;
    Checkpoint& operator=(Checkpoint&&) noexcept = default;
};

// Container layout (little-endian):
//   "HZCK" | u32 version | u64 header bytes | JSON header |
//   u64 blob bytes | parameter blob | u64 FNV-1a of everything before.
inline constexpr char kCheckpointMagic[4] = {'H', 'Z', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void put(std::string& out, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(const std::string& in, std::size_t& pos, const std::string& what) {
    if (pos + sizeof(U) > in.size()) throw FormatError("checkpoint truncated while reading " + what);
    U v;
    std::memcpy(&v, in.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
}

template <typename T>
constexpr const char* dtype_name() {
    return std::is_same_v<T, double> ? "float64" : "float32";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
    if (!ckpt.model) throw ArgumentError("save_checkpoint: checkpoint has no model");
    const nlohmann::json header{{"backbone", ckpt.model->name()},
                                {"hyperparameters", ckpt.model->hyperparameters()},
                                {"stage", stage_name(ckpt.stage)},
                                {"config", ckpt.config},
                                {"encoder", ckpt.encoder},
                                {"dtype", detail::dtype_name<T>()},
                                {"parameter_count", ckpt.model->parameter_count()}};
    const std::string hdr = header.dump();
    const auto params = ckpt.model->parameters();

    std::string buf(kCheckpointMagic, 4);
    detail::put(buf, kCheckpointVersion);
    detail::put(buf, static_cast<std::uint64_t>(hdr.size()));
    buf += hdr;
    detail::put(buf, static_cast<std::uint64_t>(params.size_bytes()));
    buf.append(reinterpret_cast<const char*>(params.data()), params.size_bytes());
    detail::put(buf, linalg::fnv1a(buf));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw NotFoundError("cannot open checkpoint for writing: " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("failed writing checkpoint: " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path,
                              const BackboneRegistry<T>& registry = BackboneRegistry<T>::global()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw NotFoundError("checkpoint not found: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("not a checkpoint file: " + path.string());
    std::size_t pos = 4;
    const auto version = detail::take<std::uint32_t>(buf, pos, "version");
    if (version != kCheckpointVersion)
        throw IncompatibleVersionError("checkpoint version " + std::to_string(version) + " (supported: " +
                                       std::to_string(kCheckpointVersion) + ")");
    if (buf.size() < pos + 8) throw FormatError("checkpoint truncated");
    const std::size_t body_end = buf.size() - 8;
    std::size_t cpos = body_end;
    if (detail::take<std::uint64_t>(buf, cpos, "checksum") != linalg::fnv1a(std::string_view(buf).substr(0, body_end)))
        throw FormatError("checkpoint checksum mismatch: " + path.string());

    const auto hlen = detail::take<std::uint64_t>(buf, pos, "header length");
    if (pos + hlen > body_end) throw FormatError("checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(pos, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    pos += hlen;
    const auto blen = detail::take<std::uint64_t>(buf, pos, "blob length");
    if (pos + blen != body_end) throw FormatError("checkpoint blob size mismatch");

    Checkpoint<T> ck;
    try {
        ck.model = registry.create(header.at("backbone").get<std::string>(), header.at("hyperparameters"));
        ck.stage = parse_stage(header.at("stage").get<std::string>());
        ck.config = header.value("config", nlohmann::json::object());
        ck.encoder = header.value("encoder", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    const std::string dtype = header.value("dtype", "");
    auto params = ck.model->parameters();
    auto copy_as = [&]<typename S>(S) {
        if (blen != params.size() * sizeof(S)) throw FormatError("checkpoint parameter count mismatch");
        std::vector<S> raw(params.size());
        std::memcpy(raw.data(), buf.data() + pos, blen);
        for (std::size_t i = 0; i < raw.size(); ++i) params[i] = static_cast<T>(raw[i]);
    };
    if (dtype == "float64") copy_as(double{});
    else if (dtype == "float32") copy_as(float{});
    else throw FormatError("unknown checkpoint dtype: " + dtype);
    return ck;
}

}  // namespace hazeclip
