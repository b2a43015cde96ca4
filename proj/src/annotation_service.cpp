#include "vitclick/annotation_service.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "httplib.h"
#include "vitclick/data_io.hpp"
#include "vitclick/seg_head.hpp"

namespace vitclick {

nlohmann::json encode_rle(const BinaryMask& mask) {
    std::vector<std::int64_t> counts;
    std::uint8_t current = 0;
    std::int64_t run = 0;
    for (auto v : mask.data()) {
        if (v != current) {
            counts.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    counts.push_back(run);
    return {{"size", {mask.height(), mask.width()}}, {"counts", counts}};
}

BinaryMask decode_rle(const nlohmann::json& rle) {
    const int h = rle.at("size").at(0).get<int>();
    const int w = rle.at("size").at(1).get<int>();
    BinaryMask mask(h, w);
    std::int64_t pos = 0;
    std::uint8_t value = 0;
    for (const auto& c : rle.at("counts")) {
        const auto n = c.get<std::int64_t>();
        if (n < 0 || pos + n > mask.size().area()) throw std::invalid_argument("RLE runs exceed the mask area");
        std::fill_n(mask.data().begin() + pos, n, value);
        pos += n;
        value ^= 1;
    }
    if (pos != mask.size().area()) throw std::invalid_argument("RLE runs do not cover the mask");
    return mask;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const std::uint32_t b0 = bytes[i];
        const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
        const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
        out += kB64[(triple >> 18) & 63];
        out += kB64[(triple >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(triple >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kB64[triple & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> lut{};
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (unsigned char c : text) {
        if (c == '=' || std::isspace(c)) continue;
        if (lut[c] < 0) throw std::invalid_argument("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(lut[c]);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

void ModelRegistry::add(const std::string& id, ClickSegModel model) {
    auto predictor = std::make_shared<const Predictor>(std::move(model));
    std::unique_lock lock(mutex_);
    models_[id] = std::move(predictor);
}

std::shared_ptr<const Predictor> ModelRegistry::get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = models_.find(id);
    return it == models_.end() ? nullptr : it->second;
}

std::vector<std::string> ModelRegistry::ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, p] : models_) out.push_back(id);
    return out;
}

nlohmann::json ModelRegistry::describe() const {
    std::shared_lock lock(mutex_);
    auto out = nlohmann::json::array();
    for (const auto& [id, p] : models_) {
        const auto& cfg = p->config();
        out.push_back({{"id", id},
                       {"architecture", cfg.name},
                       {"input_size", {cfg.input_size().height, cfg.input_size().width}},
                       {"neck", to_string(cfg.neck)}});
    }
    return out;
}

bool ModelRegistry::empty() const {
    std::shared_lock lock(mutex_);
    return models_.empty();
}

struct Session {
    std::mutex mutex;
    std::string model_id;
    std::shared_ptr<const Predictor> predictor;
    RgbImage image;
    std::vector<Click> clicks;
    std::vector<BinaryMask> masks;           // mask after each click (unless recomputing)
    std::vector<ProbabilityMap> probabilities;
    BinaryMask mask;                          // latest binarized prediction
    ProbabilityMap probs;
};

namespace {

bool repeats_earlier(const std::vector<Click>& clicks, const Click& c) {
    return std::any_of(clicks.begin(), clicks.end(), [&](const Click& o) {
        return o.row == c.row && o.col == c.col && o.polarity == c.polarity;
    });
}

// Applies clicks[k] on top of (mask, probs) and returns the new pair.
std::pair<BinaryMask, ProbabilityMap> advance(const Session& s, std::size_t k, const BinaryMask& mask,
                                              const ProbabilityMap& probs) {
    const std::vector<Click> prefix(s.clicks.begin(), s.clicks.begin() + static_cast<std::ptrdiff_t>(k) + 1);
    const std::vector<Click> earlier(s.clicks.begin(), s.clicks.begin() + static_cast<std::ptrdiff_t>(k));
    if (k > 0 && repeats_earlier(earlier, s.clicks[k])) return {mask, probs};
    auto p = s.predictor->predict(s.image, prefix, mask);
    return {binarize(p), std::move(p)};
}

void restore_initial(Session& s) {
    s.mask = BinaryMask(s.image.size());
    s.probs = ProbabilityMap(s.image.height(), s.image.width());
}

std::string thumbnail_png(const ProbabilityMap& probs, int max_side) {
    const double scale = std::min(1.0, static_cast<double>(max_side) / std::max(probs.height(), probs.width()));
    const int h = std::max(1, static_cast<int>(std::lround(probs.height() * scale)));
    const int w = std::max(1, static_cast<int>(std::lround(probs.width() * scale)));
    cv::Mat src(probs.height(), probs.width(), CV_32FC1, const_cast<float*>(probs.data().data()));
    cv::Mat small;
    cv::resize(src, small, cv::Size(w, h), 0, 0, cv::INTER_AREA);
    cv::Mat gray;
    small.convertTo(gray, CV_8UC1, 255.0);
    std::vector<std::uint8_t> buf;
    cv::imencode(".png", gray, buf);
    return base64_encode(buf);
}

}  // namespace

SessionManager::SessionManager(std::shared_ptr<ModelRegistry> models, ServiceLimits limits)
    : models_(std::move(models)), limits_(limits) {
    if (!models_) throw std::invalid_argument("SessionManager: model registry required");
}

SessionManager::~SessionManager() = default;

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "session '" + id + "' not found");
    return it->second;
}

std::string SessionManager::create_session(const std::vector<std::uint8_t>& image_bytes, const std::string& model_id) {
    if (image_bytes.size() > limits_.max_upload_bytes) {
        throw ServiceError(413, "upload exceeds " + std::to_string(limits_.max_upload_bytes) + " bytes");
    }
    if (!models_->get(model_id)) throw ServiceError(404, "model '" + model_id + "' not found");
    RgbImage image;
    try {
        image = decode_rgb(image_bytes);
    } catch (const std::exception& e) {
        throw ServiceError(400, std::string("cannot decode image: ") + e.what());
    }
    return create_session(image, model_id);
}

std::string SessionManager::create_session(const RgbImage& image, const std::string& model_id) {
    auto predictor = models_->get(model_id);
    if (!predictor) throw ServiceError(404, "model '" + model_id + "' not found");
    if (image.empty()) throw ServiceError(400, "image is empty");
    if (image.size().area() > limits_.max_pixels) {
        throw ServiceError(413, "image has " + std::to_string(image.size().area()) + " pixels, limit is " +
                                    std::to_string(limits_.max_pixels));
    }
    auto s = std::make_shared<Session>();
    s->model_id = model_id;
    s->predictor = std::move(predictor);
    s->image = image;
    restore_initial(*s);

    static thread_local std::mt19937_64 rng(std::random_device{}());
    std::lock_guard lock(mutex_);
    std::string id;
    do {
        std::ostringstream os;
        os << std::hex << rng() << std::hex << ++counter_;
        id = os.str();
    } while (sessions_.count(id) != 0);
    sessions_[id] = std::move(s);
    return id;
}

ClickResult SessionManager::add_click(const std::string& id, int row, int col, Polarity polarity) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (!s->image.size().area() || row < 0 || col < 0 || row >= s->image.height() || col >= s->image.width()) {
        throw ServiceError(422, "click (" + std::to_string(row) + ", " + std::to_string(col) + ") lies outside the " +
                                    std::to_string(s->image.height()) + "x" + std::to_string(s->image.width()) +
                                    " image");
    }
    const BinaryMask before = s->mask;
    s->clicks.push_back({row, col, polarity, static_cast<int>(s->clicks.size())});
    try {
        auto [mask, probs] = advance(*s, s->clicks.size() - 1, s->mask, s->probs);
        s->mask = std::move(mask);
        s->probs = std::move(probs);
    } catch (...) {
        s->clicks.pop_back();
        throw;
    }
    if (!limits_.recompute_history) {
        s->masks.push_back(s->mask);
        s->probabilities.push_back(s->probs);
    }
    return {s->mask, s->probs, iou(s->mask, before), static_cast<int>(s->clicks.size())};
}

bool SessionManager::undo(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    if (s->clicks.empty()) return false;
    s->clicks.pop_back();
    if (!limits_.recompute_history) {
        s->masks.pop_back();
        s->probabilities.pop_back();
        if (s->masks.empty()) {
            restore_initial(*s);
        } else {
            s->mask = s->masks.back();
            s->probs = s->probabilities.back();
        }
        return true;
    }
    restore_initial(*s);
    for (std::size_t k = 0; k < s->clicks.size(); ++k) {
        auto [mask, probs] = advance(*s, k, s->mask, s->probs);
        s->mask = std::move(mask);
        s->probs = std::move(probs);
    }
    return true;
}

void SessionManager::reset(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    s->clicks.clear();
    s->masks.clear();
    s->probabilities.clear();
    restore_initial(*s);
}

bool SessionManager::close(const std::string& id) {
    std::lock_guard lock(mutex_);
    return sessions_.erase(id) > 0;
}

BinaryMask SessionManager::mask(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->mask;
}

std::vector<Click> SessionManager::clicks(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->clicks;
}

ImageSize SessionManager::image_size(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->image.size();
}

std::string SessionManager::model_id(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->model_id;
}

nlohmann::json SessionManager::export_session(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return {{"session_id", id},
            {"model_id", s->model_id},
            {"width", s->image.width()},
            {"height", s->image.height()},
            {"clicks", clicks_to_json(s->clicks)},
            {"mask_png", base64_encode(encode_mask_png(s->mask))}};
}

std::size_t SessionManager::session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

nlohmann::json SessionManager::state_json(const std::string& id, const std::optional<ClickResult>& result) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    nlohmann::json j = {{"session_id", id},
                        {"click_count", s->clicks.size()},
                        {"clicks", clicks_to_json(s->clicks)},
                        {"width", s->image.width()},
                        {"height", s->image.height()}};
    if (result) {
        j["mask"] = encode_rle(result->mask);
        j["probability_thumbnail"] = thumbnail_png(result->probabilities, limits_.thumbnail_size);
        j["iou_vs_prev"] = result->iou_vs_prev;
        j["click_count"] = result->click_count;
    } else {
        j["mask"] = encode_rle(s->mask);
    }
    return j;
}

struct AnnotationServer::Impl {
    std::shared_ptr<SessionManager> sessions;
    ServerOptions options;
    httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const ServiceError& e) {
        send_json(res, e.status, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
        send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
    }
}

}  // namespace

AnnotationServer::AnnotationServer(std::shared_ptr<SessionManager> sessions, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
    impl_->sessions = std::move(sessions);
    impl_->options = std::move(options);
    auto& svr = impl_->server;
    auto mgr = impl_->sessions;
    svr.set_payload_max_length(mgr->limits().max_upload_bytes);

    svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

    svr.Get("/models", [mgr](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, {{"models", mgr->models().describe()}}); });
    });

    svr.Post("/sessions", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string model = req.has_param("model") ? req.get_param_value("model") : "";
            std::string body;
            if (req.is_multipart_form_data()) {
                if (!req.has_file("image")) throw ServiceError(400, "multipart upload needs an 'image' part");
                body = req.get_file_value("image").content;
                if (req.has_file("model")) model = req.get_file_value("model").content;
            } else {
                body = req.body;
            }
            if (model.empty()) {
                const auto ids = mgr->models().ids();
                if (ids.size() != 1) throw ServiceError(400, "specify ?model=<id>");
                model = ids.front();
            }
            const auto id = mgr->create_session(std::vector<std::uint8_t>(body.begin(), body.end()), model);
            const auto size = mgr->image_size(id);
            send_json(res, 201, {{"session_id", id}, {"model_id", model}, {"width", size.width}, {"height", size.height},
                                 {"click_count", 0}});
        });
    });

    svr.Post(R"(/sessions/([0-9a-f]+)/clicks)", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const auto body = nlohmann::json::parse(req.body);
            if (!body.contains("row") || !body.contains("col")) throw ServiceError(400, "click needs row and col");
            if (!body.at("row").is_number_integer() || !body.at("col").is_number_integer()) {
                throw ServiceError(422, "row and col must be integers");
            }
            Polarity polarity;
            try {
                polarity = polarity_from_string(body.value("polarity", std::string("positive")));
            } catch (const std::exception& e) {
                throw ServiceError(422, e.what());
            }
            auto result = mgr->add_click(id, body.at("row").get<int>(), body.at("col").get<int>(), polarity);
            send_json(res, 200, mgr->state_json(id, result));
        });
    });

    svr.Post(R"(/sessions/([0-9a-f]+)/undo)", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const bool undone = mgr->undo(id);
            auto j = mgr->state_json(id);
            j["status"] = undone ? "undone" : "nothing_to_undo";
            send_json(res, 200, j);
        });
    });

    svr.Post(R"(/sessions/([0-9a-f]+)/reset)", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            mgr->reset(id);
            auto j = mgr->state_json(id);
            j["status"] = "reset";
            send_json(res, 200, j);
        });
    });

    svr.Get(R"(/sessions/([0-9a-f]+)/mask)", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = req.matches[1].str();
            const auto m = mgr->mask(id);
            if (req.has_param("format") && req.get_param_value("format") == "rle") {
                send_json(res, 200, encode_rle(m));
                return;
            }
            const auto png = encode_mask_png(m);
            res.status = 200;
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
    });

    svr.Get(R"(/sessions/([0-9a-f]+)/export)", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, mgr->export_session(req.matches[1].str())); });
    });

    svr.Get(R"(/sessions/([0-9a-f]+))", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, mgr->state_json(req.matches[1].str())); });
    });

    svr.Delete(R"(/sessions/([0-9a-f]+))", [mgr](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (!mgr->close(req.matches[1].str())) throw ServiceError(404, "session not found");
            send_json(res, 200, {{"status", "closed"}});
        });
    });

    if (!impl_->options.static_dir.empty() && std::filesystem::is_directory(impl_->options.static_dir)) {
        svr.set_mount_point("/", impl_->options.static_dir.string());
    }
}

AnnotationServer::~AnnotationServer() { stop(); }

bool AnnotationServer::listen() { return impl_->server.listen(impl_->options.host, impl_->options.port); }

int AnnotationServer::bind() {
    if (impl_->options.port == 0) return impl_->server.bind_to_any_port(impl_->options.host);
    return impl_->server.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
}

bool AnnotationServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void AnnotationServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace vitclick
