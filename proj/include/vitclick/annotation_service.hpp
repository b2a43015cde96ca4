#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitclick/model.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

/// Error with the HTTP status it maps to (400, 404, 409, 413, 422).
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& message) : std::runtime_error(message), status(status) {}
    int status;
};

/// Row-major run lengths, alternating, starting with a (possibly empty) run of
/// zeros: {"size": [h, w], "counts": [...]}.
[[nodiscard]] nlohmann::json encode_rle(const BinaryMask& mask);
[[nodiscard]] BinaryMask decode_rle(const nlohmann::json& rle);

[[nodiscard]] std::string base64_encode(const std::vector<std::uint8_t>& bytes);
[[nodiscard]] std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Shared read-only predictors keyed by id.
class ModelRegistry {
public:
    void add(const std::string& id, ClickSegModel model);
    [[nodiscard]] std::shared_ptr<const Predictor> get(const std::string& id) const;
    [[nodiscard]] std::vector<std::string> ids() const;
    [[nodiscard]] nlohmann::json describe() const;
    [[nodiscard]] bool empty() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<const Predictor>> models_;
};

struct ServiceLimits {
    std::int64_t max_pixels = 4096LL * 4096;
    std::size_t max_upload_bytes = 32U << 20;
    int thumbnail_size = 128;
    /// Keep only the click list and recompute masks on undo instead of storing
    /// one mask per click.
    bool recompute_history = false;
};

struct ClickResult {
    BinaryMask mask;
    ProbabilityMap probabilities;
    double iou_vs_prev = 0.0;
    int click_count = 0;
};

/// Per-session state; only reachable through SessionManager.
struct Session;

/// Session store. Operations on one session are serialised by that
/// session's mutex; different sessions run concurrently.
class SessionManager {
public:
    SessionManager(std::shared_ptr<ModelRegistry> models, ServiceLimits limits = {});
    ~SessionManager();

    /// Decodes the upload and opens a session with no clicks and a zero mask.
    /// Throws ServiceError 404 for an unknown model, 413 for an oversize
    /// image, 400 for an undecodable one.
    std::string create_session(const std::vector<std::uint8_t>& image_bytes, const std::string& model_id);
    std::string create_session(const RgbImage& image, const std::string& model_id);

    /// Runs one forward pass with the new click and the last binarized mask.
    /// A click repeating an earlier (row, col, polarity) leaves the guidance
    /// unchanged, so the previous result is reused.
    ClickResult add_click(const std::string& id, int row, int col, Polarity polarity);

    /// Pops one click; false when there was nothing to undo.
    bool undo(const std::string& id);
    void reset(const std::string& id);
    bool close(const std::string& id);

    [[nodiscard]] BinaryMask mask(const std::string& id) const;
    [[nodiscard]] std::vector<Click> clicks(const std::string& id) const;
    [[nodiscard]] ImageSize image_size(const std::string& id) const;
    [[nodiscard]] std::string model_id(const std::string& id) const;
    /// {"clicks": [...], "width", "height", "model_id", "mask_png": base64}.
    [[nodiscard]] nlohmann::json export_session(const std::string& id) const;
    [[nodiscard]] std::size_t session_count() const;

    [[nodiscard]] const ServiceLimits& limits() const { return limits_; }
    [[nodiscard]] const ModelRegistry& models() const { return *models_; }

    /// Response body shared by the click, undo and reset routes.
    [[nodiscard]] nlohmann::json state_json(const std::string& id, const std::optional<ClickResult>& result = {}) const;

private:
    std::shared_ptr<Session> find(const std::string& id) const;

    std::shared_ptr<ModelRegistry> models_;
    ServiceLimits limits_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t counter_ = 0;
};

struct ServerOptions {
    std::string host = "0.0.0.0";
    int port = 8080;
    std::filesystem::path static_dir;  // UI bundle, mounted at / when it exists
};

/// HTTP+JSON front end over a SessionManager:
///   POST /sessions                 image upload (raw body or multipart "image"), ?model=<id>
///   POST /sessions/{id}/clicks     {"row", "col", "polarity"}
///   POST /sessions/{id}/undo | /reset
///   GET  /sessions/{id}/mask       1-bit PNG, or RLE JSON with ?format=rle
///   GET  /sessions/{id}/export     clicks + base64 mask PNG
///   DELETE /sessions/{id}
///   GET  /models, GET /healthz
class AnnotationServer {
public:
    AnnotationServer(std::shared_ptr<SessionManager> sessions, ServerOptions options);
    ~AnnotationServer();

    /// Binds and serves until stop(); returns false when binding fails.
    bool listen();
    /// Binds first (port 0 picks a free port) so the caller can learn the
    /// port before serving. Returns the bound port or -1.
    int bind();
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace vitclick
