#include "vfiqa/server.h"

#include <fstream>
#include <iterator>

#include "httplib.h"
#include "json.hpp"

namespace vfiqa {

using nlohmann::json;

namespace {

void send_error(httplib::Response& res, int status, const std::string& msg) {
  res.status = status;
  res.set_content(json{{"error", msg}}.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const AuthError& e) {
    send_error(res, 401, e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const DatasetError& e) {
    send_error(res, 400, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace

std::string descriptor_json(const TripletDescriptor& d) {
  json j;
  j["none_remaining"] = false;
  j["id"] = d.id;
  j["clips"] = {{"a", {{"id", d.clip_a}, {"frames", d.urls_a}}},
                {"b", {{"id", d.clip_b}, {"frames", d.urls_b}}},
                {"ref", {{"id", d.clip_ref}, {"frames", d.urls_ref}}}};
  j["playback"] = {{"fps", d.playback.fps}, {"frames", d.playback.frames}};
  return j.dump();
}

void install_routes(httplib::Server& server, AnnotationService& service) {
  server.Get(R"(/api/session/([^/]+)/next)",
             [&service](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 auto d = service.next_triplet(req.matches[1]);
                 if (!d) {
                   res.set_content(json{{"none_remaining", true}}.dump(),
                                   "application/json");
                   return;
                 }
                 res.set_content(descriptor_json(*d), "application/json");
               });
             });

  server.Post("/api/judgment",
              [&service](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  const json body = json::parse(req.body);
                  const JudgmentAck ack = service.record_judgment(
                      body.at("session").get<std::string>(),
                      body.at("triplet_id").get<std::string>(),
                      parse_choice(body.at("choice").get<std::string>()));
                  json out{{"finalized", ack.finalized}};
                  if (ack.h) out["h"] = *ack.h;
                  res.set_content(out.dump(), "application/json");
                });
              });

  server.Get(R"(/clips/([A-Za-z0-9_-]+)/frame_(\d{1,6})\.png)",
             [&service](const httplib::Request& req, httplib::Response& res) {
               guarded(res, [&] {
                 const auto path = service.frame_path(
                     req.matches[1], std::stoll(req.matches[2]));
                 std::ifstream in(path, std::ios::binary);
                 if (!in) throw NotFoundError("cannot read " + path.string());
                 std::string bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
                 res.set_content(std::move(bytes), "image/png");
               });
             });
}

}  // namespace vfiqa
